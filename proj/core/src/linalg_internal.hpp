#pragma once

#include <Eigen/Core>

namespace funmatch::linalg {

Eigen::MatrixXd inverse_pth_root(const Eigen::MatrixXd& a, int p, double eps);

}  // namespace funmatch::linalg
