#pragma once

// Neural Bag-of-Features: RBF soft quantization against a learnable codebook
// followed by temporal averaging.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "nbsa/numerics.hpp"

namespace nbsa {

/// K codewords of dimension D. Kernel-shape weights are stored unconstrained
/// and mapped through softplus, so the effective weights are always positive.
template <typename Scalar = double>
struct Codebook {
    MatX<Scalar> v;      // K x D codewords
    MatX<Scalar> w_raw;  // K x D, weights() = softplus(w_raw)

    Eigen::Index codewords() const { return v.rows(); }
    Eigen::Index dim() const { return v.cols(); }

    MatX<Scalar> weights() const {
        return w_raw.unaryExpr([](Scalar s) { return softplus(s); });
    }
};

template <typename Scalar = double>
struct CodebookGrads {
    MatX<Scalar> x;
    MatX<Scalar> v;
    MatX<Scalar> w_raw;
};

namespace detail {

template <typename Scalar>
void check_quantize_shapes(const MatX<Scalar>& x, const Codebook<Scalar>& cb) {
    if (cb.v.rows() < 1 || cb.v.cols() < 1) {
        throw ShapeError("quantize: empty codebook " + shape_str(cb.v.rows(), cb.v.cols()));
    }
    if (cb.w_raw.rows() != cb.v.rows() || cb.w_raw.cols() != cb.v.cols()) {
        throw ShapeError("quantize: codebook weights " + shape_str(cb.w_raw.rows(), cb.w_raw.cols()) +
                         " do not match codewords " + shape_str(cb.v.rows(), cb.v.cols()));
    }
    if (x.rows() != cb.v.cols()) {
        throw ShapeError("quantize: features " + shape_str(x.rows(), x.cols()) + " vs codebook dimension " +
                         std::to_string(cb.v.cols()));
    }
}

/// K x N matrix of weighted Euclidean distances ||(x_n - v_k) * w_k||.
template <typename Scalar>
MatX<Scalar> weighted_distances(const MatX<Scalar>& x, const MatX<Scalar>& v, const MatX<Scalar>& w) {
    const Eigen::Index K = v.rows(), D = v.cols(), N = x.cols();
    MatX<Scalar> dist(K, N);
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index n = 0; n < N; ++n) {
            Scalar acc = 0;
            for (Eigen::Index j = 0; j < D; ++j) {
                const Scalar r = (x(j, n) - v(k, j)) * w(k, j);
                acc += r * r;
            }
            dist(k, n) = std::sqrt(acc);
        }
    }
    return dist;
}

}  // namespace detail

/// Soft codeword memberships, K x N; every column lies on the probability simplex.
template <typename Scalar>
MatX<Scalar> quantize(const MatX<Scalar>& x, const Codebook<Scalar>& cb) {
    detail::check_quantize_shapes(x, cb);
    const MatX<Scalar> dist = detail::weighted_distances(x, cb.v, cb.weights());
    MatX<Scalar> phi(dist.rows(), dist.cols());
    for (Eigen::Index n = 0; n < dist.cols(); ++n) {
        const Scalar nearest = dist.col(n).minCoeff();
        Scalar total = 0;
        for (Eigen::Index k = 0; k < dist.rows(); ++k) {
            phi(k, n) = std::exp(nearest - dist(k, n));
            total += phi(k, n);
        }
        for (Eigen::Index k = 0; k < dist.rows(); ++k) {
            phi(k, n) /= total;
        }
    }
    return phi;
}

/// Cotangents w.r.t. features, codewords and raw kernel weights. A zero
/// distance (feature exactly on a codeword) contributes the zero subgradient.
template <typename Scalar>
CodebookGrads<Scalar> quantize_vjp(const MatX<Scalar>& x, const Codebook<Scalar>& cb, const MatX<Scalar>& phi,
                                   const MatX<Scalar>& upstream) {
    detail::check_quantize_shapes(x, cb);
    const Eigen::Index K = cb.v.rows(), D = cb.v.cols(), N = x.cols();
    const MatX<Scalar> w = cb.weights();
    const MatX<Scalar> dist = detail::weighted_distances(x, cb.v, w);

    // d loss / d dist = -(softmax vjp) along each column.
    MatX<Scalar> ddist(K, N);
    for (Eigen::Index n = 0; n < N; ++n) {
        Scalar dot = 0;
        for (Eigen::Index k = 0; k < K; ++k) dot += phi(k, n) * upstream(k, n);
        for (Eigen::Index k = 0; k < K; ++k) ddist(k, n) = -phi(k, n) * (upstream(k, n) - dot);
    }

    CodebookGrads<Scalar> g{MatX<Scalar>::Zero(D, N), MatX<Scalar>::Zero(K, D), MatX<Scalar>::Zero(K, D)};
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index n = 0; n < N; ++n) {
            if (dist(k, n) <= Scalar(0)) continue;
            const Scalar scale = ddist(k, n) / dist(k, n);
            for (Eigen::Index j = 0; j < D; ++j) {
                const Scalar diff = x(j, n) - cb.v(k, j);
                const Scalar t = scale * diff * w(k, j);
                g.x(j, n) += t * w(k, j);
                g.v(k, j) -= t * w(k, j);
                g.w_raw(k, j) += t * diff;
            }
        }
    }
    // chain through softplus
    g.w_raw.array() *= cb.w_raw.unaryExpr([](Scalar s) { return logistic(s); }).array();
    return g;
}

/// Temporal average of the quantized columns, K x 1.
template <typename Scalar>
MatX<Scalar> aggregate(const MatX<Scalar>& phi) {
    if (phi.cols() < 1) {
        throw ArgumentError("aggregate: empty sequence (N = 0)");
    }
    return mean_cols(phi);
}

template <typename Scalar>
MatX<Scalar> aggregate_vjp(Eigen::Index length, const MatX<Scalar>& upstream) {
    return mean_cols_vjp(length, upstream);
}

/// Codewords sampled without replacement from the pooled feature columns;
/// kernel weights start at exactly one.
template <typename Scalar>
Codebook<Scalar> init_codebook(std::span<const MatX<Scalar>> samples, Eigen::Index codewords, std::uint64_t seed) {
    if (codewords < 1) {
        throw ArgumentError("init_codebook: K must be at least 1");
    }
    if (samples.empty()) {
        throw ArgumentError("init_codebook: no samples");
    }
    const Eigen::Index D = samples.front().rows();
    std::vector<std::pair<std::size_t, Eigen::Index>> pool;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        if (samples[s].rows() != D) {
            throw ShapeError("init_codebook: sample " + std::to_string(s) + " has " +
                             std::to_string(samples[s].rows()) + " features, expected " + std::to_string(D));
        }
        for (Eigen::Index n = 0; n < samples[s].cols(); ++n) pool.emplace_back(s, n);
    }
    if (static_cast<Eigen::Index>(pool.size()) < codewords) {
        throw ArgumentError("init_codebook: " + std::to_string(pool.size()) + " pooled columns, need K = " +
                            std::to_string(codewords));
    }
    std::mt19937_64 rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);

    Codebook<Scalar> cb;
    cb.v.resize(codewords, D);
    for (Eigen::Index k = 0; k < codewords; ++k) {
        const auto [s, n] = pool[static_cast<std::size_t>(k)];
        cb.v.row(k) = samples[s].col(n).transpose();
    }
    cb.w_raw = MatX<Scalar>::Constant(codewords, D, softplus_inverse(Scalar(1)));
    return cb;
}

}  // namespace nbsa
