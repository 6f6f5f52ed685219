#include "nbsa/registry.hpp"

#include "nbsa/attention.hpp"
#include "nbsa/model.hpp"
#include "nbsa/nbof.hpp"

namespace nbsa {

namespace {

using Inputs = std::span<const Matrix>;

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

Matrix random_simplex_columns(Eigen::Index K, Eigen::Index N, std::mt19937_64& rng) {
    return softmax_rows(Matrix(normal_matrix<double>(N, K, rng))).transpose();
}

RegisteredOp two_da(Att2DAMode mode) {
    constexpr Eigen::Index K = 4, N = 6;
    const Eigen::Index axis = mode == Att2DAMode::temporal ? N : K;
    auto params = [mode](Inputs in) {
        Att2DAParams<double> p;
        p.mode = mode;
        p.W = in[1];
        p.restore_diagonal();
        p.alpha_raw = in[2](0, 0);
        return p;
    };
    return {"att_2da_" + std::string(to_string(mode)),
            {[params](Inputs in) { return att_2da(in[0], params(in)); },
             [params](Inputs in, const Matrix&, const Matrix& g) {
                 const auto p = params(in);
                 const auto f = att_2da_forward(in[0], p);
                 auto d = att_2da_vjp(in[0], p, f, g);
                 return std::vector<Matrix>{d.phi, d.W, scalar(d.alpha_raw)};
             }},
            [axis](std::mt19937_64& rng) {
                return std::vector<Matrix>{random_simplex_columns(K, N, rng), normal_matrix<double>(axis, axis, rng),
                                           normal_matrix<double>(1, 1, rng)};
            }};
}

RegisteredOp self_attention(SelfAttVariant variant, Eigen::Index heads) {
    constexpr Eigen::Index K = 4, N = 6, d = 3;
    auto params = [variant, heads](Inputs in) {
        SelfAttParams<double> p;
        p.variant = variant;
        p.latent_dim = d;
        for (Eigen::Index h = 0; h < heads; ++h) {
            p.heads.push_back({in[1 + 3 * h], in[2 + 3 * h], in[3 + 3 * h](0, 0)});
        }
        return p;
    };
    return {"att_" + std::string(to_string(variant)) + "_h" + std::to_string(heads),
            {[params](Inputs in) { return self_attention_forward(in[0], params(in)).out; },
             [params](Inputs in, const Matrix&, const Matrix& g) {
                 const auto p = params(in);
                 const auto f = self_attention_forward(in[0], p);
                 auto grads = self_attention_vjp(in[0], p, f, g);
                 std::vector<Matrix> out{grads.phi};
                 for (auto& h : grads.heads) {
                     out.push_back(h.Wq);
                     out.push_back(h.Wk);
                     out.push_back(scalar(h.alpha_raw));
                 }
                 return out;
             }},
            [variant, heads](std::mt19937_64& rng) {
                const auto [qr, qc] = SelfAttParams<double>::query_shape(variant, d, K, N);
                const auto [kr, kc] = SelfAttParams<double>::key_shape(variant, d, K, N);
                std::vector<Matrix> in{random_simplex_columns(K, N, rng)};
                for (Eigen::Index h = 0; h < heads; ++h) {
                    in.push_back(normal_matrix<double>(qr, qc, rng));
                    in.push_back(normal_matrix<double>(kr, kc, rng));
                    in.push_back(normal_matrix<double>(1, 1, rng));
                }
                return in;
            }};
}

}  // namespace

std::vector<RegisteredOp> registered_ops() {
    std::vector<RegisteredOp> ops;

    ops.push_back({"matmul",
                   {[](Inputs in) { return matmul(in[0], in[1]); },
                    [](Inputs in, const Matrix&, const Matrix& g) {
                        auto [da, db] = matmul_vjp(in[0], in[1], g);
                        return std::vector<Matrix>{da, db};
                    }},
                   [](std::mt19937_64& rng) {
                       return std::vector<Matrix>{normal_matrix<double>(5, 7, rng), normal_matrix<double>(7, 3, rng)};
                   }});

    ops.push_back({"softmax_rows",
                   {[](Inputs in) { return softmax_rows(in[0]); },
                    [](Inputs, const Matrix& out, const Matrix& g) {
                        return std::vector<Matrix>{softmax_rows_vjp(out, g)};
                    }},
                   [](std::mt19937_64& rng) { return std::vector<Matrix>{normal_matrix<double>(4, 6, rng)}; }});

    ops.push_back({"sigmoid",
                   {[](Inputs in) { return sigmoid(in[0]); },
                    [](Inputs, const Matrix& out, const Matrix& g) {
                        return std::vector<Matrix>{sigmoid_vjp(out, g)};
                    }},
                   [](std::mt19937_64& rng) { return std::vector<Matrix>{normal_matrix<double>(4, 6, rng)}; }});

    ops.push_back({"transpose",
                   {[](Inputs in) { return transpose(in[0]); },
                    [](Inputs, const Matrix&, const Matrix& g) { return std::vector<Matrix>{transpose(g)}; }},
                   [](std::mt19937_64& rng) { return std::vector<Matrix>{normal_matrix<double>(3, 5, rng)}; }});

    ops.push_back({"hadamard",
                   {[](Inputs in) { return hadamard(in[0], in[1]); },
                    [](Inputs in, const Matrix&, const Matrix& g) {
                        auto [da, db] = hadamard_vjp(in[0], in[1], g);
                        return std::vector<Matrix>{da, db};
                    }},
                   [](std::mt19937_64& rng) {
                       return std::vector<Matrix>{normal_matrix<double>(4, 4, rng), normal_matrix<double>(4, 4, rng)};
                   }});

    ops.push_back({"mean_cols",
                   {[](Inputs in) { return mean_cols(in[0]); },
                    [](Inputs in, const Matrix&, const Matrix& g) {
                        return std::vector<Matrix>{mean_cols_vjp(in[0].cols(), g)};
                    }},
                   [](std::mt19937_64& rng) { return std::vector<Matrix>{normal_matrix<double>(4, 6, rng)}; }});

    ops.push_back({"quantize",
                   {[](Inputs in) { return quantize(in[0], Codebook<double>{in[1], in[2]}); },
                    [](Inputs in, const Matrix& out, const Matrix& g) {
                        auto d = quantize_vjp(in[0], Codebook<double>{in[1], in[2]}, out, g);
                        return std::vector<Matrix>{d.x, d.v, d.w_raw};
                    }},
                   [](std::mt19937_64& rng) {
                       return std::vector<Matrix>{normal_matrix<double>(3, 6, rng), normal_matrix<double>(4, 3, rng),
                                                  normal_matrix<double>(4, 3, rng)};
                   }});

    ops.push_back({"aggregate",
                   {[](Inputs in) { return aggregate(in[0]); },
                    [](Inputs in, const Matrix&, const Matrix& g) {
                        return std::vector<Matrix>{aggregate_vjp(in[0].cols(), g)};
                    }},
                   [](std::mt19937_64& rng) { return std::vector<Matrix>{random_simplex_columns(4, 6, rng)}; }});

    for (auto mode : {Att2DAMode::input, Att2DAMode::codeword, Att2DAMode::temporal}) ops.push_back(two_da(mode));
    for (auto variant : {SelfAttVariant::ctsa, SelfAttVariant::csa, SelfAttVariant::tsa}) {
        ops.push_back(self_attention(variant, 1));
        ops.push_back(self_attention(variant, 2));
    }

    constexpr int kWidth = 3;
    ops.push_back({"frontend_conv",
                   {[](Inputs in) { return frontend_conv(in[0], in[1], in[2], kWidth); },
                    [](Inputs in, const Matrix&, const Matrix& g) {
                        const Matrix pre = frontend_conv_preactivation(in[0], in[1], in[2], kWidth);
                        auto d = frontend_conv_vjp(in[0], in[1], kWidth, pre, g);
                        return std::vector<Matrix>{d.x, d.kernel, d.bias};
                    }},
                   [](std::mt19937_64& rng) {
                       return std::vector<Matrix>{normal_matrix<double>(3, 7, rng),
                                                  normal_matrix<double>(4, 3 * kWidth, rng),
                                                  normal_matrix<double>(4, 1, rng)};
                   }});

    constexpr int kLabel = 2;
    ops.push_back({"cross_entropy",
                   {[](Inputs in) { return scalar(cross_entropy(in[0], kLabel)); },
                    [](Inputs in, const Matrix&, const Matrix& g) {
                        return std::vector<Matrix>{Matrix(cross_entropy_vjp(in[0], kLabel) * g(0, 0))};
                    }},
                   [](std::mt19937_64& rng) { return std::vector<Matrix>{normal_matrix<double>(4, 1, rng)}; }});

    return ops;
}

}  // namespace nbsa
