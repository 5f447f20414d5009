#pragma once

#include <Eigen/Dense>

namespace dmden {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Batches are stored column-wise: one sample per column.
using Batch = Eigen::MatrixXd;

}  // namespace dmden
