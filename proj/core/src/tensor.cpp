#include "funmatch/tensor.hpp"

#include <cmath>
#include <sstream>

namespace funmatch {

std::size_t element_count(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  for (T v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace funmatch
