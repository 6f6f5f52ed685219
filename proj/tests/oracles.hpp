#pragma once

// Naive loop references for the library ops. These deliberately avoid every
// library routine (and Eigen products) so they stay independent of the code
// they check.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "nbsa/numerics.hpp"

namespace oracle {

using nbsa::Matrix;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
            c(i, j) = acc;
        }
    }
    return c;
}

inline Matrix softmax_rows(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double top = m(i, 0);
        for (Eigen::Index j = 1; j < m.cols(); ++j) top = std::max(top, m(i, j));
        double total = 0.0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) total += std::exp(m(i, j) - top);
        for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = std::exp(m(i, j) - top) / total;
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// alpha * (psi .* softmax(psi W)) + (1 - alpha) * psi, psi in working orientation.
inline Matrix two_da(const Matrix& psi, const Matrix& W, double alpha, Matrix* attention = nullptr) {
    const Matrix A = softmax_rows(matmul(psi, W));
    Matrix out(psi.rows(), psi.cols());
    for (Eigen::Index i = 0; i < psi.rows(); ++i)
        for (Eigen::Index j = 0; j < psi.cols(); ++j)
            out(i, j) = alpha * psi(i, j) * A(i, j) + (1.0 - alpha) * psi(i, j);
    if (attention) *attention = A;
    return out;
}

struct Head {
    Matrix Wq, Wk;
    double alpha;
};

/// Codeword-temporal head on phi (K x N): sigmoid mask, elementwise mixing.
inline Matrix ctsa_head(const Matrix& phi, const Head& h, Matrix* attention = nullptr) {
    const Eigen::Index K = phi.rows(), N = phi.cols(), d = h.Wq.rows();
    Matrix A(K, N), out(K, N);
    for (Eigen::Index k = 0; k < K; ++k) {
        for (Eigen::Index n = 0; n < N; ++n) {
            double s = 0.0;
            for (Eigen::Index e = 0; e < d; ++e) {
                double q = 0.0, key = 0.0;
                for (Eigen::Index t = 0; t < N; ++t) q += phi(k, t) * h.Wq(e, t);
                for (Eigen::Index c = 0; c < K; ++c) key += phi(c, n) * h.Wk(e, c);
                s += q * key;
            }
            A(k, n) = logistic(s / std::sqrt(double(d)));
            out(k, n) = h.alpha * phi(k, n) + (1.0 - h.alpha) * A(k, n) * phi(k, n);
        }
    }
    if (attention) *attention = A;
    return out;
}

/// Softmax attention among the rows of m (R x C); projections are d x C.
inline Matrix row_attention(const Matrix& m, const Head& h, Matrix* attention = nullptr) {
    const Eigen::Index R = m.rows(), C = m.cols(), d = h.Wq.rows();
    Matrix S(R, R);
    for (Eigen::Index i = 0; i < R; ++i) {
        for (Eigen::Index j = 0; j < R; ++j) {
            double s = 0.0;
            for (Eigen::Index e = 0; e < d; ++e) {
                double q = 0.0, key = 0.0;
                for (Eigen::Index c = 0; c < C; ++c) {
                    q += m(i, c) * h.Wq(e, c);
                    key += m(j, c) * h.Wk(e, c);
                }
                s += q * key;
            }
            S(i, j) = s / std::sqrt(double(d));
        }
    }
    const Matrix A = softmax_rows(S);
    Matrix out(R, C);
    for (Eigen::Index i = 0; i < R; ++i) {
        for (Eigen::Index c = 0; c < C; ++c) {
            double mixed = 0.0;
            for (Eigen::Index j = 0; j < R; ++j) mixed += A(i, j) * m(j, c);
            out(i, c) = h.alpha * m(i, c) + (1.0 - h.alpha) * mixed;
        }
    }
    if (attention) *attention = A;
    return out;
}

inline Matrix csa_head(const Matrix& phi, const Head& h, Matrix* attention = nullptr) {
    return row_attention(phi, h, attention);
}

inline Matrix tsa_head(const Matrix& phi, const Head& h, Matrix* attention = nullptr) {
    return transpose(row_attention(transpose(phi), h, attention));
}

template <typename HeadFn>
Matrix stack_heads(const Matrix& phi, const std::vector<Head>& heads, HeadFn fn) {
    const Eigen::Index K = phi.rows(), N = phi.cols();
    Matrix out(K * static_cast<Eigen::Index>(heads.size()), N);
    for (std::size_t h = 0; h < heads.size(); ++h) {
        const Matrix one = fn(phi, heads[h], nullptr);
        for (Eigen::Index k = 0; k < K; ++k)
            for (Eigen::Index n = 0; n < N; ++n) out(static_cast<Eigen::Index>(h) * K + k, n) = one(k, n);
    }
    return out;
}

/// RBF memberships computed directly, without stabilization.
inline Matrix quantize(const Matrix& x, const Matrix& v, const Matrix& w) {
    const Eigen::Index K = v.rows(), N = x.cols(), D = x.rows();
    Matrix phi(K, N);
    for (Eigen::Index n = 0; n < N; ++n) {
        double total = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) {
            double acc = 0.0;
            for (Eigen::Index j = 0; j < D; ++j) {
                const double r = (x(j, n) - v(k, j)) * w(k, j);
                acc += r * r;
            }
            phi(k, n) = std::exp(-std::sqrt(acc));
            total += phi(k, n);
        }
        for (Eigen::Index k = 0; k < K; ++k) phi(k, n) /= total;
    }
    return phi;
}

inline Matrix mean_cols(const Matrix& m) {
    Matrix y(m.rows(), 1);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) acc += m(i, j);
        y(i, 0) = acc / double(m.cols());
    }
    return y;
}

/// Same-length zero-padded convolution + ReLU; kernel is C x (D * width).
inline Matrix conv(const Matrix& x, const Matrix& kernel, const Matrix& bias, int width) {
    const Eigen::Index C = kernel.rows(), D = x.rows(), N = x.cols();
    Matrix out(C, N);
    for (Eigen::Index c = 0; c < C; ++c) {
        for (Eigen::Index n = 0; n < N; ++n) {
            double acc = bias(c, 0);
            for (int t = 0; t < width; ++t) {
                const Eigen::Index src = n - width / 2 + t;
                if (src < 0 || src >= N) continue;
                for (Eigen::Index i = 0; i < D; ++i) acc += kernel(c, i * width + t) * x(i, src);
            }
            out(c, n) = acc > 0.0 ? acc : 0.0;
        }
    }
    return out;
}

inline double cross_entropy(const Matrix& logits, int label) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) total += std::exp(logits(i, 0));
    return -std::log(std::exp(logits(label, 0)) / total);
}

inline Matrix random(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

/// Columns on the probability simplex.
inline Matrix random_simplex(Eigen::Index K, Eigen::Index N, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    Matrix m(K, N);
    for (Eigen::Index n = 0; n < N; ++n) {
        double total = 0.0;
        for (Eigen::Index k = 0; k < K; ++k) total += (m(k, n) = u(rng));
        for (Eigen::Index k = 0; k < K; ++k) m(k, n) /= total;
    }
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

inline Matrix permute_cols(const Matrix& m, const std::vector<int>& perm) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.col(j) = m.col(perm[static_cast<std::size_t>(j)]);
    return out;
}

inline Matrix permute_rows(const Matrix& m, const std::vector<int>& perm) {
    Matrix out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[static_cast<std::size_t>(i)]);
    return out;
}

inline std::vector<int> random_permutation(int n, std::mt19937_64& rng) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

}  // namespace oracle
