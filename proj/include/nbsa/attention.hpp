#pragma once

// Attention over quantized sequences.
//
// att_2da:  learned-matrix attention A = softmax(Psi W), mixed as
//           alpha * (Psi .* A) + (1 - alpha) * Psi, where Psi is Phi (temporal
//           mode) or its transpose (codeword and input modes).
// att_ctsa: joint codeword-temporal mask sigmoid(q k^T / sqrt(d)), K x N,
//           mixed elementwise as alpha * Phi + (1 - alpha) * (A .* Phi).
// att_csa:  K x K softmax attention between codewords, mixed by matrix product.
// att_tsa:  N x N softmax attention between timestamps, computed on Phi^T.
//
// Self-attention heads are stacked along the codeword axis: h heads produce an
// (h K) x N result.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nbsa/numerics.hpp"

namespace nbsa {

enum class Att2DAMode { input, codeword, temporal };
enum class SelfAttVariant { ctsa, csa, tsa };

inline std::string_view to_string(Att2DAMode mode) {
    switch (mode) {
        case Att2DAMode::input: return "input";
        case Att2DAMode::codeword: return "codeword";
        case Att2DAMode::temporal: return "temporal";
    }
    return "?";
}

inline std::string_view to_string(SelfAttVariant variant) {
    switch (variant) {
        case SelfAttVariant::ctsa: return "ctsa";
        case SelfAttVariant::csa: return "csa";
        case SelfAttVariant::tsa: return "tsa";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted-dropout scale matrix: entries are 0 with probability `rate`,
/// otherwise 1 / (1 - rate).
template <typename Scalar>
MatX<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ArgumentError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Scalar keep = Scalar(1) / Scalar(1 - rate);
    MatX<Scalar> mask(rows, cols);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = unit(rng) < rate ? Scalar(0) : keep;
    }
    return mask;
}

template <typename Scalar>
MatX<Scalar> attention_dropout(const MatX<Scalar>& a, double rate, bool training, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ArgumentError("attention_dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return a;
    return a.cwiseProduct(dropout_mask<Scalar>(a.rows(), a.cols(), rate, seed));
}

// ---------------------------------------------------------------------------
// 2D-Attention baseline

template <typename Scalar = double>
struct Att2DAParams {
    Att2DAMode mode = Att2DAMode::temporal;
    MatX<Scalar> W;  // L x L, L = length of the softmax axis; diagonal frozen at 1/L
    Scalar alpha_raw = 0;

    Scalar alpha() const { return logistic(alpha_raw); }

    void restore_diagonal() { W.diagonal().setConstant(Scalar(1) / static_cast<Scalar>(W.rows())); }

    template <typename Rng>
    static Att2DAParams init(Att2DAMode mode, Eigen::Index axis_length, Rng& rng) {
        Att2DAParams p;
        p.mode = mode;
        p.W = uniform_matrix<Scalar>(axis_length, axis_length, Scalar(1) / std::sqrt(Scalar(axis_length)), rng);
        p.restore_diagonal();
        return p;
    }
};

template <typename Scalar = double>
struct Att2DAForward {
    MatX<Scalar> out;
    MatX<Scalar> attention;  // in the working orientation (Phi^T for codeword/input modes)
};

template <typename Scalar = double>
struct Att2DAGrads {
    MatX<Scalar> phi;
    MatX<Scalar> W;  // zero on the diagonal
    Scalar alpha_raw = 0;
};

namespace detail {

inline bool transposes(Att2DAMode mode) { return mode != Att2DAMode::temporal; }

template <typename Scalar>
void check_2da_shapes(const MatX<Scalar>& phi, const Att2DAParams<Scalar>& p) {
    const Eigen::Index axis = transposes(p.mode) ? phi.rows() : phi.cols();
    if (p.W.rows() != p.W.cols() || p.W.rows() != axis) {
        throw ShapeError("att_2da(" + std::string(to_string(p.mode)) + "): W is " + shape_str(p.W.rows(), p.W.cols()) +
                         ", input is " + shape_str(phi.rows(), phi.cols()) + ", expected W " + shape_str(axis, axis));
    }
}

}  // namespace detail

template <typename Scalar>
Att2DAForward<Scalar> att_2da_forward(const MatX<Scalar>& phi, const Att2DAParams<Scalar>& p) {
    detail::check_2da_shapes(phi, p);
    const bool flip = detail::transposes(p.mode);
    const MatX<Scalar> psi = flip ? MatX<Scalar>(phi.transpose()) : phi;
    const Scalar alpha = p.alpha();

    Att2DAForward<Scalar> f;
    f.attention = softmax_rows(MatX<Scalar>(psi * p.W));
    const MatX<Scalar> mixed = alpha * psi.cwiseProduct(f.attention) + (Scalar(1) - alpha) * psi;
    f.out = flip ? MatX<Scalar>(mixed.transpose()) : mixed;
    return f;
}

template <typename Scalar>
MatX<Scalar> att_2da(const MatX<Scalar>& phi, const Att2DAParams<Scalar>& p) {
    return att_2da_forward(phi, p).out;
}

template <typename Scalar>
Att2DAGrads<Scalar> att_2da_vjp(const MatX<Scalar>& phi, const Att2DAParams<Scalar>& p,
                                const Att2DAForward<Scalar>& fwd, const MatX<Scalar>& upstream) {
    const bool flip = detail::transposes(p.mode);
    const MatX<Scalar> psi = flip ? MatX<Scalar>(phi.transpose()) : phi;
    const MatX<Scalar> g = flip ? MatX<Scalar>(upstream.transpose()) : upstream;
    const MatX<Scalar>& A = fwd.attention;
    const Scalar alpha = p.alpha();

    MatX<Scalar> dpsi = alpha * g.cwiseProduct(A) + (Scalar(1) - alpha) * g;
    const MatX<Scalar> dscores = softmax_rows_vjp(A, MatX<Scalar>(alpha * g.cwiseProduct(psi)));
    dpsi += dscores * p.W.transpose();

    Att2DAGrads<Scalar> grads;
    grads.W = psi.transpose() * dscores;
    grads.W.diagonal().setZero();
    const Scalar dalpha = g.cwiseProduct(psi.cwiseProduct(A) - psi).sum();
    grads.alpha_raw = dalpha * alpha * (Scalar(1) - alpha);
    grads.phi = flip ? MatX<Scalar>(dpsi.transpose()) : dpsi;
    return grads;
}

// ---------------------------------------------------------------------------
// Self-attention variants

template <typename Scalar = double>
struct AttentionHead {
    MatX<Scalar> Wq;
    MatX<Scalar> Wk;
    Scalar alpha_raw = 0;

    Scalar alpha() const { return logistic(alpha_raw); }
};

template <typename Scalar = double>
struct SelfAttParams {
    SelfAttVariant variant = SelfAttVariant::tsa;
    Eigen::Index latent_dim = 1;
    double dropout_rate = 0.0;
    std::vector<AttentionHead<Scalar>> heads;

    /// (rows, cols) of Wq and Wk for codebook size K and sequence length N.
    static std::pair<Eigen::Index, Eigen::Index> query_shape(SelfAttVariant v, Eigen::Index d, Eigen::Index K,
                                                             Eigen::Index N) {
        return {d, v == SelfAttVariant::tsa ? K : N};
    }
    static std::pair<Eigen::Index, Eigen::Index> key_shape(SelfAttVariant v, Eigen::Index d, Eigen::Index K,
                                                           Eigen::Index N) {
        return {d, v == SelfAttVariant::csa ? N : K};
    }

    /// Projections uniform in +-1/sqrt(fan_in); every alpha starts at 0.5.
    template <typename Rng>
    static SelfAttParams init(SelfAttVariant variant, Eigen::Index K, Eigen::Index N, Eigen::Index d,
                              Eigen::Index heads, double dropout_rate, Rng& rng) {
        if (d < 1) throw ArgumentError("self-attention: latent dimension d must be at least 1");
        if (heads < 1) throw ArgumentError("self-attention: need at least one head");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
            throw ArgumentError("self-attention: dropout rate must lie in [0, 1)");
        }
        SelfAttParams p;
        p.variant = variant;
        p.latent_dim = d;
        p.dropout_rate = dropout_rate;
        const auto [qr, qc] = query_shape(variant, d, K, N);
        const auto [kr, kc] = key_shape(variant, d, K, N);
        for (Eigen::Index h = 0; h < heads; ++h) {
            AttentionHead<Scalar> head;
            head.Wq = uniform_matrix<Scalar>(qr, qc, Scalar(1) / std::sqrt(Scalar(qc)), rng);
            head.Wk = uniform_matrix<Scalar>(kr, kc, Scalar(1) / std::sqrt(Scalar(kc)), rng);
            p.heads.push_back(std::move(head));
        }
        return p;
    }
};

template <typename Scalar = double>
struct HeadCache {
    MatX<Scalar> q;
    MatX<Scalar> k;
    MatX<Scalar> attention;  // before dropout
    MatX<Scalar> mask;       // dropout scale; empty when dropout is inactive
};

template <typename Scalar = double>
struct SelfAttForward {
    MatX<Scalar> out;
    std::vector<HeadCache<Scalar>> heads;
};

template <typename Scalar = double>
struct HeadGrads {
    MatX<Scalar> Wq;
    MatX<Scalar> Wk;
    Scalar alpha_raw = 0;
};

template <typename Scalar = double>
struct SelfAttGrads {
    MatX<Scalar> phi;
    std::vector<HeadGrads<Scalar>> heads;
};

namespace detail {

template <typename Scalar>
void check_self_shapes(const MatX<Scalar>& phi, const SelfAttParams<Scalar>& p) {
    const std::string name(to_string(p.variant));
    if (p.latent_dim < 1) throw ShapeError("att_" + name + ": latent dimension d = 0");
    if (p.heads.empty()) throw ShapeError("att_" + name + ": no heads");
    const auto [qr, qc] = SelfAttParams<Scalar>::query_shape(p.variant, p.latent_dim, phi.rows(), phi.cols());
    const auto [kr, kc] = SelfAttParams<Scalar>::key_shape(p.variant, p.latent_dim, phi.rows(), phi.cols());
    for (std::size_t h = 0; h < p.heads.size(); ++h) {
        const auto& head = p.heads[h];
        if (head.Wq.rows() != qr || head.Wq.cols() != qc || head.Wk.rows() != kr || head.Wk.cols() != kc) {
            throw ShapeError("att_" + name + ": head " + std::to_string(h) + " has Wq " +
                             shape_str(head.Wq.rows(), head.Wq.cols()) + ", Wk " +
                             shape_str(head.Wk.rows(), head.Wk.cols()) + " for input " +
                             shape_str(phi.rows(), phi.cols()) + "; expected Wq " + shape_str(qr, qc) + ", Wk " +
                             shape_str(kr, kc));
        }
    }
}

/// Softmax attention among the rows of m (R x C), mixed by matrix product.
template <typename Scalar>
MatX<Scalar> softmax_attention_head(const MatX<Scalar>& m, const AttentionHead<Scalar>& head, Eigen::Index d,
                                    HeadCache<Scalar>& cache) {
    const Scalar alpha = head.alpha();
    cache.q = m * head.Wq.transpose();
    cache.k = m * head.Wk.transpose();
    cache.attention = softmax_rows(MatX<Scalar>(cache.q * cache.k.transpose() / std::sqrt(Scalar(d))));
    const MatX<Scalar> applied = cache.mask.size() ? cache.attention.cwiseProduct(cache.mask) : cache.attention;
    return alpha * m + (Scalar(1) - alpha) * (applied * m);
}

template <typename Scalar>
MatX<Scalar> softmax_attention_head_vjp(const MatX<Scalar>& m, const AttentionHead<Scalar>& head, Eigen::Index d,
                                        const HeadCache<Scalar>& cache, const MatX<Scalar>& g,
                                        HeadGrads<Scalar>& grads) {
    const Scalar alpha = head.alpha();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));
    const MatX<Scalar> applied = cache.mask.size() ? cache.attention.cwiseProduct(cache.mask) : cache.attention;

    MatX<Scalar> dm = alpha * g + (Scalar(1) - alpha) * (applied.transpose() * g);
    MatX<Scalar> dattn = (Scalar(1) - alpha) * (g * m.transpose());
    if (cache.mask.size()) dattn = dattn.cwiseProduct(cache.mask);
    const MatX<Scalar> dscores = softmax_rows_vjp(cache.attention, dattn) * scale;
    const MatX<Scalar> dq = dscores * cache.k;
    const MatX<Scalar> dk = dscores.transpose() * cache.q;
    dm += dq * head.Wq + dk * head.Wk;

    grads.Wq = dq.transpose() * m;
    grads.Wk = dk.transpose() * m;
    grads.alpha_raw = g.cwiseProduct(m - applied * m).sum() * alpha * (Scalar(1) - alpha);
    return dm;
}

template <typename Scalar>
MatX<Scalar> ctsa_head(const MatX<Scalar>& phi, const AttentionHead<Scalar>& head, Eigen::Index d,
                       HeadCache<Scalar>& cache) {
    const Scalar alpha = head.alpha();
    cache.q = phi * head.Wq.transpose();              // K x d
    cache.k = phi.transpose() * head.Wk.transpose();  // N x d
    cache.attention = sigmoid(MatX<Scalar>(cache.q * cache.k.transpose() / std::sqrt(Scalar(d))));
    const MatX<Scalar> applied = cache.mask.size() ? cache.attention.cwiseProduct(cache.mask) : cache.attention;
    return alpha * phi + (Scalar(1) - alpha) * applied.cwiseProduct(phi);
}

template <typename Scalar>
MatX<Scalar> ctsa_head_vjp(const MatX<Scalar>& phi, const AttentionHead<Scalar>& head, Eigen::Index d,
                           const HeadCache<Scalar>& cache, const MatX<Scalar>& g, HeadGrads<Scalar>& grads) {
    const Scalar alpha = head.alpha();
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));
    const MatX<Scalar> applied = cache.mask.size() ? cache.attention.cwiseProduct(cache.mask) : cache.attention;

    MatX<Scalar> dphi = alpha * g + (Scalar(1) - alpha) * applied.cwiseProduct(g);
    MatX<Scalar> dattn = (Scalar(1) - alpha) * g.cwiseProduct(phi);
    if (cache.mask.size()) dattn = dattn.cwiseProduct(cache.mask);
    const MatX<Scalar> dscores = sigmoid_vjp(cache.attention, dattn) * scale;
    const MatX<Scalar> dq = dscores * cache.k;              // K x d
    const MatX<Scalar> dk = dscores.transpose() * cache.q;  // N x d
    dphi += dq * head.Wq;
    dphi += (dk * head.Wk).transpose();

    grads.Wq = dq.transpose() * phi;
    grads.Wk = dk.transpose() * phi.transpose();
    grads.alpha_raw = g.cwiseProduct(phi - applied.cwiseProduct(phi)).sum() * alpha * (Scalar(1) - alpha);
    return dphi;
}

}  // namespace detail

/// Runs every head of `p` on phi (K x N). In training mode with a non-zero
/// rate, each head's attention matrix is dropped out with a stream derived
/// from (seed, head index).
template <typename Scalar>
SelfAttForward<Scalar> self_attention_forward(const MatX<Scalar>& phi, const SelfAttParams<Scalar>& p,
                                              bool training = false, std::uint64_t seed = 0) {
    detail::check_self_shapes(phi, p);
    if (!(p.dropout_rate >= 0.0 && p.dropout_rate < 1.0)) {
        throw ArgumentError("self-attention: dropout rate must lie in [0, 1)");
    }
    const Eigen::Index K = phi.rows(), N = phi.cols();
    const bool drop = training && p.dropout_rate > 0.0;
    const MatX<Scalar> phi_t = p.variant == SelfAttVariant::tsa ? MatX<Scalar>(phi.transpose()) : MatX<Scalar>();

    SelfAttForward<Scalar> f;
    f.out.resize(K * static_cast<Eigen::Index>(p.heads.size()), N);
    f.heads.resize(p.heads.size());
    for (std::size_t h = 0; h < p.heads.size(); ++h) {
        auto& cache = f.heads[h];
        if (drop) {
            const Eigen::Index side = p.variant == SelfAttVariant::csa ? K : N;
            const Eigen::Index rows = p.variant == SelfAttVariant::tsa ? N : K;
            cache.mask = dropout_mask<Scalar>(rows, side, p.dropout_rate, mix_seed(seed, h));
        }
        auto block = f.out.middleRows(static_cast<Eigen::Index>(h) * K, K);
        switch (p.variant) {
            case SelfAttVariant::ctsa: block = detail::ctsa_head(phi, p.heads[h], p.latent_dim, cache); break;
            case SelfAttVariant::csa:
                block = detail::softmax_attention_head(phi, p.heads[h], p.latent_dim, cache);
                break;
            case SelfAttVariant::tsa:
                block = detail::softmax_attention_head(phi_t, p.heads[h], p.latent_dim, cache).transpose();
                break;
        }
    }
    return f;
}

template <typename Scalar>
SelfAttGrads<Scalar> self_attention_vjp(const MatX<Scalar>& phi, const SelfAttParams<Scalar>& p,
                                        const SelfAttForward<Scalar>& fwd, const MatX<Scalar>& upstream) {
    const Eigen::Index K = phi.rows();
    if (upstream.rows() != K * static_cast<Eigen::Index>(p.heads.size()) || upstream.cols() != phi.cols()) {
        throw ShapeError("self_attention_vjp: upstream " + shape_str(upstream.rows(), upstream.cols()) +
                         " does not match output of " + std::to_string(p.heads.size()) + " heads over " +
                         shape_str(phi.rows(), phi.cols()));
    }
    const MatX<Scalar> phi_t = p.variant == SelfAttVariant::tsa ? MatX<Scalar>(phi.transpose()) : MatX<Scalar>();

    SelfAttGrads<Scalar> grads;
    grads.phi = MatX<Scalar>::Zero(phi.rows(), phi.cols());
    grads.heads.resize(p.heads.size());
    for (std::size_t h = 0; h < p.heads.size(); ++h) {
        const MatX<Scalar> g = upstream.middleRows(static_cast<Eigen::Index>(h) * K, K);
        switch (p.variant) {
            case SelfAttVariant::ctsa:
                grads.phi += detail::ctsa_head_vjp(phi, p.heads[h], p.latent_dim, fwd.heads[h], g, grads.heads[h]);
                break;
            case SelfAttVariant::csa:
                grads.phi += detail::softmax_attention_head_vjp(phi, p.heads[h], p.latent_dim, fwd.heads[h], g,
                                                                grads.heads[h]);
                break;
            case SelfAttVariant::tsa:
                grads.phi += detail::softmax_attention_head_vjp(phi_t, p.heads[h], p.latent_dim, fwd.heads[h],
                                                                MatX<Scalar>(g.transpose()), grads.heads[h])
                                 .transpose();
                break;
        }
    }
    return grads;
}

namespace detail {

template <typename Scalar>
MatX<Scalar> run_variant(SelfAttVariant expected, const MatX<Scalar>& phi, const SelfAttParams<Scalar>& p,
                         bool training, std::uint64_t seed) {
    if (p.variant != expected) {
        throw ArgumentError("att_" + std::string(to_string(expected)) + ": parameters are for variant " +
                            std::string(to_string(p.variant)));
    }
    return self_attention_forward(phi, p, training, seed).out;
}

}  // namespace detail

/// Codeword-temporal self-attention; (h K) x N.
template <typename Scalar>
MatX<Scalar> att_ctsa(const MatX<Scalar>& phi, const SelfAttParams<Scalar>& p, bool training = false,
                      std::uint64_t seed = 0) {
    return detail::run_variant(SelfAttVariant::ctsa, phi, p, training, seed);
}

/// Codeword self-attention; (h K) x N.
template <typename Scalar>
MatX<Scalar> att_csa(const MatX<Scalar>& phi, const SelfAttParams<Scalar>& p, bool training = false,
                     std::uint64_t seed = 0) {
    return detail::run_variant(SelfAttVariant::csa, phi, p, training, seed);
}

/// Temporal self-attention; (h K) x N.
template <typename Scalar>
MatX<Scalar> att_tsa(const MatX<Scalar>& phi, const SelfAttParams<Scalar>& p, bool training = false,
                     std::uint64_t seed = 0) {
    return detail::run_variant(SelfAttVariant::tsa, phi, p, training, seed);
}

}  // namespace nbsa
