#pragma once

#include <Eigen/Dense>

namespace cider {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

} // namespace cider
