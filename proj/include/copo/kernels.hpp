#pragma once

#include <Eigen/Cholesky>

#include "copo/core.hpp"

// Data-parallel reductions over preference data. Each kernel has a serial
// reference and an OpenMP version. The OpenMP versions reduce over a fixed
// chunk partition and combine partials in chunk order, so their output does
// not depend on the number of threads; with a single chunk they match the
// serial reference bit for bit.
namespace copo::kernels {

// Row i of `rows` is a feature-difference vector carried with weight[i].
struct DeltaBatch {
    Matrix rows;
    Vector weights;

    Eigen::Index size() const { return rows.rows(); }
    int dim() const { return static_cast<int>(rows.cols()); }
    double total_weight() const { return weights.sum(); }
};

inline constexpr Eigen::Index kChunkRows = 256;

struct LossGrad {
    double loss = 0.0;
    Vector grad;
};

namespace serial {
// sum_i w_i * -log sigmoid(<theta, d_i>) and its gradient.
LossGrad logistic_nll(const Vector& theta, const DeltaBatch& batch);
// sum_i w_i d_i d_i^T
Matrix weighted_gram(const DeltaBatch& batch);
// d_i^T (L L^T)^{-1} d_i for every row.
Vector quadratic_forms(const Matrix& rows, const Eigen::LLT<Matrix>& factor);
}  // namespace serial

namespace parallel {
LossGrad logistic_nll(const Vector& theta, const DeltaBatch& batch);
Matrix weighted_gram(const DeltaBatch& batch);
Vector quadratic_forms(const Matrix& rows, const Eigen::LLT<Matrix>& factor);
}  // namespace parallel

// Threads used by the parallel kernels and by seed sweeps. Reads
// COPO_LAB_THREADS when set, else the OpenMP default.
int max_threads();

}  // namespace copo::kernels
