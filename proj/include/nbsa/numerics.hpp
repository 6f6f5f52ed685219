#pragma once

// Dense row-major arithmetic with paired vector-Jacobian products.
//
// Every forward op `f` has a companion `f_vjp` that maps an upstream
// cotangent (same shape as the output) to cotangents of the inputs.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>

#include "nbsa/errors.hpp"

namespace nbsa {

template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatX<double>;

namespace detail {

template <typename A, typename B>
void require_same_shape(const char* op, const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
    }
}

}  // namespace detail

template <typename A, typename B>
MatX<typename A::Scalar> matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.rows(), a.cols()) + " * " +
                         shape_str(b.rows(), b.cols()));
    }
    return a * b;
}

/// Returns (upstream * b^T, a^T * upstream).
template <typename A, typename B, typename G>
std::pair<MatX<typename A::Scalar>, MatX<typename A::Scalar>> matmul_vjp(const Eigen::MatrixBase<A>& a,
                                                                         const Eigen::MatrixBase<B>& b,
                                                                         const Eigen::MatrixBase<G>& upstream) {
    return {upstream * b.transpose(), a.transpose() * upstream};
}

/// Row-wise softmax with per-row max subtraction.
template <typename Derived>
MatX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    MatX<Scalar> out(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const Scalar top = m.row(r).maxCoeff();
        out.row(r) = (m.row(r).array() - top).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

/// Takes the softmax output, not its input.
template <typename S, typename G>
MatX<typename S::Scalar> softmax_rows_vjp(const Eigen::MatrixBase<S>& out, const Eigen::MatrixBase<G>& upstream) {
    using Scalar = typename S::Scalar;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = (out.array() * upstream.array()).rowwise().sum();
    return (out.array() * (upstream.array().colwise() - dots.array())).matrix();
}

template <typename Scalar>
Scalar logistic(Scalar x) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
}

/// log(1 + exp(x)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar x) {
    return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar softplus_inverse(Scalar y) {
    return y + std::log(-std::expm1(-y));
}

template <typename Derived>
MatX<typename Derived::Scalar> sigmoid(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    return m.unaryExpr([](Scalar v) { return logistic(v); });
}

/// Takes the sigmoid output.
template <typename S, typename G>
MatX<typename S::Scalar> sigmoid_vjp(const Eigen::MatrixBase<S>& out, const Eigen::MatrixBase<G>& upstream) {
    return (upstream.array() * out.array() * (1 - out.array())).matrix();
}

template <typename Derived>
MatX<typename Derived::Scalar> transpose(const Eigen::MatrixBase<Derived>& m) {
    return m.transpose();
}

template <typename A, typename B>
MatX<typename A::Scalar> hadamard(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    detail::require_same_shape("hadamard", a, b);
    return a.cwiseProduct(b);
}

template <typename A, typename B, typename G>
std::pair<MatX<typename A::Scalar>, MatX<typename A::Scalar>> hadamard_vjp(const Eigen::MatrixBase<A>& a,
                                                                           const Eigen::MatrixBase<B>& b,
                                                                           const Eigen::MatrixBase<G>& upstream) {
    return {upstream.cwiseProduct(b), upstream.cwiseProduct(a)};
}

/// Column mean as a rows x 1 matrix.
template <typename Derived>
MatX<typename Derived::Scalar> mean_cols(const Eigen::MatrixBase<Derived>& m) {
    if (m.cols() == 0) {
        throw ArgumentError("mean_cols: matrix has no columns");
    }
    return m.rowwise().sum() / static_cast<typename Derived::Scalar>(m.cols());
}

template <typename G>
MatX<typename G::Scalar> mean_cols_vjp(Eigen::Index cols, const Eigen::MatrixBase<G>& upstream) {
    using Scalar = typename G::Scalar;
    return upstream.col(0).replicate(1, cols) / static_cast<Scalar>(cols);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

/// Entries uniform in [-half_width, half_width].
template <typename Scalar, typename Rng>
MatX<Scalar> uniform_matrix(Eigen::Index rows, Eigen::Index cols, Scalar half_width, Rng& rng) {
    std::uniform_real_distribution<Scalar> dist(-half_width, half_width);
    MatX<Scalar> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
    return m;
}

template <typename Scalar, typename Rng>
MatX<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<Scalar> dist(0, 1);
    MatX<Scalar> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
    return m;
}

/// splitmix64 finalizer; derives independent stream seeds from (seed, index).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace nbsa
