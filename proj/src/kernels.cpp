#include "copo/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

#include <omp.h>

namespace copo::kernels {

namespace {

struct Chunk {
    Eigen::Index begin;
    Eigen::Index end;
};

Eigen::Index chunk_count(Eigen::Index n) {
    return std::max<Eigen::Index>(1, (n + kChunkRows - 1) / kChunkRows);
}

Chunk chunk_at(Eigen::Index c, Eigen::Index n) {
    return {c * kChunkRows, std::min(n, (c + 1) * kChunkRows)};
}

void nll_range(const Vector& theta, const DeltaBatch& batch, Chunk range, double& loss, Vector& grad) {
    for (Eigen::Index i = range.begin; i < range.end; ++i) {
        const double margin = batch.rows.row(i).dot(theta);
        const double w = batch.weights[i];
        loss -= w * log_sigmoid(margin);
        grad.noalias() -= (w * sigmoid(-margin)) * batch.rows.row(i).transpose();
    }
}

void gram_range(const DeltaBatch& batch, Chunk range, Matrix& out) {
    for (Eigen::Index i = range.begin; i < range.end; ++i) {
        const auto row = batch.rows.row(i);
        out.noalias() += batch.weights[i] * row.transpose() * row;
    }
}

}  // namespace

int max_threads() {
    if (const char* env = std::getenv("COPO_LAB_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) return n;
        } catch (const std::exception&) {
        }
    }
    return omp_get_max_threads();
}

namespace serial {

LossGrad logistic_nll(const Vector& theta, const DeltaBatch& batch) {
    LossGrad out{0.0, Vector::Zero(batch.dim())};
    nll_range(theta, batch, {0, batch.size()}, out.loss, out.grad);
    return out;
}

Matrix weighted_gram(const DeltaBatch& batch) {
    Matrix out = Matrix::Zero(batch.dim(), batch.dim());
    gram_range(batch, {0, batch.size()}, out);
    return out;
}

Vector quadratic_forms(const Matrix& rows, const Eigen::LLT<Matrix>& factor) {
    Vector out(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const Vector r = rows.row(i).transpose();
        out[i] = r.dot(factor.solve(r));
    }
    return out;
}

}  // namespace serial

namespace parallel {

LossGrad logistic_nll(const Vector& theta, const DeltaBatch& batch) {
    const Eigen::Index n = batch.size();
    const Eigen::Index chunks = chunk_count(n);
    std::vector<double> losses(static_cast<std::size_t>(chunks), 0.0);
    std::vector<Vector> grads(static_cast<std::size_t>(chunks), Vector::Zero(batch.dim()));
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (chunks > 1)
    for (Eigen::Index c = 0; c < chunks; ++c) {
        const auto k = static_cast<std::size_t>(c);
        nll_range(theta, batch, chunk_at(c, n), losses[k], grads[k]);
    }
    LossGrad out{0.0, Vector::Zero(batch.dim())};
    for (std::size_t k = 0; k < losses.size(); ++k) {
        out.loss += losses[k];
        out.grad += grads[k];
    }
    return out;
}

Matrix weighted_gram(const DeltaBatch& batch) {
    const Eigen::Index n = batch.size();
    const Eigen::Index chunks = chunk_count(n);
    std::vector<Matrix> parts(static_cast<std::size_t>(chunks), Matrix::Zero(batch.dim(), batch.dim()));
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (chunks > 1)
    for (Eigen::Index c = 0; c < chunks; ++c) gram_range(batch, chunk_at(c, n), parts[static_cast<std::size_t>(c)]);
    Matrix out = Matrix::Zero(batch.dim(), batch.dim());
    for (const auto& p : parts) out += p;
    return out;
}

Vector quadratic_forms(const Matrix& rows, const Eigen::LLT<Matrix>& factor) {
    const Eigen::Index n = rows.rows();
    Vector out(n);
    // Rows are independent, so there is no reduction order to fix.
#pragma omp parallel for schedule(static) num_threads(max_threads()) if (n > kChunkRows)
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector r = rows.row(i).transpose();
        out[i] = r.dot(factor.solve(r));
    }
    return out;
}

}  // namespace parallel

}  // namespace copo::kernels
