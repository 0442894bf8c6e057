#pragma once

#include <Eigen/Core>

namespace stratgrad {

/// Samples are rows.
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace stratgrad
