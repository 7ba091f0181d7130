#pragma once

#include <Eigen/Dense>

namespace portopt {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

} // namespace portopt
