#pragma once

// Dense kernels shared by the autodiff ops. Row-major throughout.

#include <cstddef>

#include <Eigen/Core>

namespace funmatch::kernels {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// c[m,n] = a[m,k] * b[k,n]
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  MatrixMap<T> out(c, m, n);
  if (k == 0) {
    out.setZero();
    return;
  }
  out.noalias() = ConstMatrixMap<T>(a, m, k) * ConstMatrixMap<T>(b, k, n);
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_at_b_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  if (m == 0) return;
  MatrixMap<T>(c, k, n).noalias() += ConstMatrixMap<T>(a, m, k).transpose() * ConstMatrixMap<T>(b, m, n);
}

// c[m,k] += a[m,n] * b[k,n]^T
template <typename T>
void gemm_a_bt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  if (m == 0 || k == 0) return;
  MatrixMap<T>(c, m, k).noalias() += ConstMatrixMap<T>(a, m, n) * ConstMatrixMap<T>(b, k, n).transpose();
}

struct ConvGeometry {
  std::size_t batch = 0, height = 0, width = 0, channels = 0;
  std::size_t out_height = 0, out_width = 0, out_channels = 0;
  std::size_t stride = 1;
  std::ptrdiff_t pad_top = 0, pad_left = 0;
  static constexpr std::size_t kernel = 3;

  std::size_t patch_size() const { return kernel * kernel * channels; }
  std::size_t rows() const { return batch * out_height * out_width; }
};

// cols[(b,oy,ox), (ky,kx,ci)], zero outside the input.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t patch = g.patch_size();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_height; ++oy) {
      for (std::size_t ox = 0; ox < g.out_width; ++ox) {
        T* row = cols + ((b * g.out_height + oy) * g.out_width + ox) * patch;
        for (std::size_t ky = 0; ky < ConvGeometry::kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
          for (std::size_t kx = 0; kx < ConvGeometry::kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
            T* dst = row + (ky * ConvGeometry::kernel + kx) * g.channels;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.height) ||
                ix >= static_cast<std::ptrdiff_t>(g.width)) {
              for (std::size_t c = 0; c < g.channels; ++c) dst[c] = T{0};
            } else {
              const T* src = x + ((b * g.height + static_cast<std::size_t>(iy)) * g.width +
                                  static_cast<std::size_t>(ix)) * g.channels;
              for (std::size_t c = 0; c < g.channels; ++c) dst[c] = src[c];
            }
          }
        }
      }
    }
  }
}

// Scatter-add of im2col's adjoint.
template <typename T>
void col2im_acc(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t patch = g.patch_size();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oy = 0; oy < g.out_height; ++oy) {
      for (std::size_t ox = 0; ox < g.out_width; ++ox) {
        const T* row = cols + ((b * g.out_height + oy) * g.out_width + ox) * patch;
        for (std::size_t ky = 0; ky < ConvGeometry::kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t kx = 0; kx < ConvGeometry::kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            const T* src = row + (ky * ConvGeometry::kernel + kx) * g.channels;
            T* dst = dx + ((b * g.height + static_cast<std::size_t>(iy)) * g.width +
                           static_cast<std::size_t>(ix)) * g.channels;
            for (std::size_t c = 0; c < g.channels; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace funmatch::kernels
