#pragma once

#include <Eigen/Dense>

namespace modest {

using Index = Eigen::Index;

// Embedding batches are row-per-item, so the canonical dense type keeps
// row-major storage to match the on-disk layout.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using RowMatrixXf = RowMatrix<float>;
using RowMatrixXd = RowMatrix<double>;
using VectorXd = Vector<double>;
using VectorXf = Vector<float>;

}  // namespace modest
