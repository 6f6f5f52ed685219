#include "nbsa/model.hpp"

#include <cmath>
#include <random>

namespace nbsa {

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ShapeError& e) {
        throw ShapeError(std::string("stage '") + name + "': " + e.what());
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ArgumentError("invalid model config: " + what);
    };
    require(features >= 1, "features (D) must be >= 1, got " + std::to_string(features));
    require(codewords >= 1, "codewords (K) must be >= 1, got " + std::to_string(codewords));
    require(classes >= 1, "classes must be >= 1, got " + std::to_string(classes));
    require(heads >= 1, "heads must be >= 1, got " + std::to_string(heads));
    require(latent_dim >= 1, "latent_dim (d) must be >= 1, got " + std::to_string(latent_dim));
    require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1), got " + std::to_string(dropout));
    require(length >= 0, "length must be >= 0");
    if (frontend == FrontendKind::conv) {
        require(conv_width >= 1 && conv_width % 2 == 1,
                "conv_width must be odd and >= 1, got " + std::to_string(conv_width));
        require(conv_channels >= 0, "conv_channels must be >= 0");
    }
    if (needs_fixed_length()) {
        require(length >= 1, "attention '" + attention_name() + "' needs a fixed sequence length (length >= 1)");
    }
}

int ModelConfig::quantizer_dim() const {
    return frontend == FrontendKind::conv && conv_channels > 0 ? conv_channels : features;
}

int ModelConfig::histogram_width() const {
    switch (attention) {
        case AttentionKind::ctsa:
        case AttentionKind::csa:
        case AttentionKind::tsa: return heads * codewords;
        default: return codewords;
    }
}

bool ModelConfig::needs_fixed_length() const {
    return attention == AttentionKind::ctsa || attention == AttentionKind::csa ||
           (attention == AttentionKind::att2da && att2da_mode == Att2DAMode::temporal);
}

std::string ModelConfig::attention_name() const {
    switch (attention) {
        case AttentionKind::none: return "none";
        case AttentionKind::att2da: return "2da-" + std::string(to_string(att2da_mode));
        case AttentionKind::ctsa: return "ctsa";
        case AttentionKind::csa: return "csa";
        case AttentionKind::tsa: return "tsa";
    }
    return "?";
}

void ModelConfig::set_attention(std::string_view name) {
    if (name == "none") {
        attention = AttentionKind::none;
    } else if (name == "2da-input") {
        attention = AttentionKind::att2da;
        att2da_mode = Att2DAMode::input;
    } else if (name == "2da-codeword") {
        attention = AttentionKind::att2da;
        att2da_mode = Att2DAMode::codeword;
    } else if (name == "2da-temporal") {
        attention = AttentionKind::att2da;
        att2da_mode = Att2DAMode::temporal;
    } else if (name == "ctsa") {
        attention = AttentionKind::ctsa;
    } else if (name == "csa") {
        attention = AttentionKind::csa;
    } else if (name == "tsa") {
        attention = AttentionKind::tsa;
    } else {
        throw ArgumentError("unknown attention '" + std::string(name) +
                            "' (expected none, 2da-input, 2da-codeword, 2da-temporal, ctsa, csa, tsa)");
    }
}

// ---------------------------------------------------------------------------
// Parameters

std::string_view param_group(std::string_view name) {
    if (name.starts_with("frontend.")) return "frontend";
    if (name.starts_with("codebook.")) return "codebook";
    if (name.starts_with("att.")) return "attention";
    return "classifier";
}

ModelParams allocate_params(const ModelConfig& c) {
    c.validate();
    ModelParams p;
    const int D = c.features, Dq = c.quantizer_dim(), K = c.codewords;
    if (c.frontend == FrontendKind::conv) {
        p.conv_kernel = Matrix::Zero(Dq, D * c.conv_width);
        p.conv_bias = Matrix::Zero(Dq, 1);
    }
    p.codebook.v = Matrix::Zero(K, Dq);
    p.codebook.w_raw = Matrix::Zero(K, Dq);
    if (c.attention == AttentionKind::att2da) {
        const int axis = c.att2da_mode == Att2DAMode::input      ? Dq
                         : c.att2da_mode == Att2DAMode::codeword ? K
                                                                 : c.length;
        p.att2da.mode = c.att2da_mode;
        p.att2da.W = Matrix::Zero(axis, axis);
    }
    if (c.attention == AttentionKind::ctsa || c.attention == AttentionKind::csa ||
        c.attention == AttentionKind::tsa) {
        const auto variant = c.attention == AttentionKind::ctsa  ? SelfAttVariant::ctsa
                             : c.attention == AttentionKind::csa ? SelfAttVariant::csa
                                                                 : SelfAttVariant::tsa;
        p.selfatt.variant = variant;
        p.selfatt.latent_dim = c.latent_dim;
        p.selfatt.dropout_rate = c.dropout;
        const auto [qr, qc] = SelfAttParams<double>::query_shape(variant, c.latent_dim, K, c.length);
        const auto [kr, kc] = SelfAttParams<double>::key_shape(variant, c.latent_dim, K, c.length);
        for (int h = 0; h < c.heads; ++h) {
            p.selfatt.heads.push_back({Matrix::Zero(qr, qc), Matrix::Zero(kr, kc), 0.0});
        }
    }
    p.classifier_weight = Matrix::Zero(c.classes, c.histogram_width());
    p.classifier_bias = Matrix::Zero(c.classes, 1);
    return p;
}

Model init_model(const ModelConfig& config, std::span<const Matrix> samples) {
    Model m{config, allocate_params(config)};
    std::mt19937_64 rng(config.seed);
    auto& p = m.params;

    std::vector<Matrix> features;
    features.reserve(samples.size());
    if (config.frontend == FrontendKind::conv) {
        p.conv_kernel = uniform_matrix<double>(p.conv_kernel.rows(), p.conv_kernel.cols(),
                                               1.0 / std::sqrt(double(p.conv_kernel.cols())), rng);
        for (const auto& s : samples) {
            features.push_back(frontend_conv(s, p.conv_kernel, p.conv_bias, config.conv_width));
        }
    } else {
        features.assign(samples.begin(), samples.end());
    }
    p.codebook = init_codebook<double>(features, config.codewords, mix_seed(config.seed, 1));

    if (config.attention == AttentionKind::att2da) {
        p.att2da = Att2DAParams<double>::init(config.att2da_mode, p.att2da.W.rows(), rng);
    } else if (!p.selfatt.heads.empty()) {
        p.selfatt = SelfAttParams<double>::init(p.selfatt.variant, config.codewords, config.length,
                                                config.latent_dim, config.heads, config.dropout, rng);
    }
    const double bound = 1.0 / std::sqrt(double(config.histogram_width()));
    p.classifier_weight = uniform_matrix<double>(config.classes, config.histogram_width(), bound, rng);
    return m;
}

// ---------------------------------------------------------------------------
// Frontend

template <typename Scalar>
MatX<Scalar> frontend_conv_preactivation(const MatIn<Scalar>& x, const MatIn<Scalar>& kernel,
                                         const MatIn<Scalar>& bias, int width) {
    if (width < 1 || width % 2 == 0) {
        throw ArgumentError("frontend_conv: kernel width must be odd, got " + std::to_string(width));
    }
    if (kernel.cols() != x.rows() * width || bias.rows() != kernel.rows() || bias.cols() != 1) {
        throw ShapeError("frontend_conv: kernel " + shape_str(kernel.rows(), kernel.cols()) + ", bias " +
                         shape_str(bias.rows(), bias.cols()) + " for input " + shape_str(x.rows(), x.cols()) +
                         " and width " + std::to_string(width));
    }
    const Eigen::Index C = kernel.rows(), D = x.rows(), N = x.cols(), half = width / 2;
    MatX<Scalar> pre(C, N);
    for (Eigen::Index c = 0; c < C; ++c) {
        for (Eigen::Index n = 0; n < N; ++n) {
            Scalar acc = bias(c, 0);
            for (Eigen::Index i = 0; i < D; ++i) {
                for (Eigen::Index t = 0; t < width; ++t) {
                    const Eigen::Index src = n + t - half;
                    if (src >= 0 && src < N) acc += kernel(c, i * width + t) * x(i, src);
                }
            }
            pre(c, n) = acc;
        }
    }
    return pre;
}

template <typename Scalar>
MatX<Scalar> frontend_conv(const MatIn<Scalar>& x, const MatIn<Scalar>& kernel, const MatIn<Scalar>& bias,
                           int width) {
    return frontend_conv_preactivation<Scalar>(x, kernel, bias, width).cwiseMax(Scalar(0));
}

template <typename Scalar>
ConvGrads<Scalar> frontend_conv_vjp(const MatIn<Scalar>& x, const MatIn<Scalar>& kernel, int width,
                                    const MatIn<Scalar>& pre, const MatIn<Scalar>& upstream) {
    const Eigen::Index C = kernel.rows(), D = x.rows(), N = x.cols(), half = width / 2;
    using M = MatX<Scalar>;
    const M dpre = (pre.array() > Scalar(0)).select(upstream, Scalar(0));
    ConvGrads<Scalar> g{M::Zero(D, N), M::Zero(C, D * width), dpre.rowwise().sum()};
    for (Eigen::Index c = 0; c < C; ++c) {
        for (Eigen::Index n = 0; n < N; ++n) {
            const Scalar up = dpre(c, n);
            if (up == Scalar(0)) continue;
            for (Eigen::Index i = 0; i < D; ++i) {
                for (Eigen::Index t = 0; t < width; ++t) {
                    const Eigen::Index src = n + t - half;
                    if (src < 0 || src >= N) continue;
                    g.kernel(c, i * width + t) += up * x(i, src);
                    g.x(i, src) += up * kernel(c, i * width + t);
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Loss

namespace {

template <typename Scalar>
void check_label(const MatX<Scalar>& logits, int label) {
    if (logits.cols() != 1 || logits.rows() < 1) {
        throw ShapeError("cross_entropy: logits must be a column, got " + shape_str(logits.rows(), logits.cols()));
    }
    if (label < 0 || label >= logits.rows()) {
        throw ArgumentError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(logits.rows()) + ")");
    }
}

}  // namespace

template <typename Scalar>
Scalar cross_entropy(const MatIn<Scalar>& logits, int label) {
    check_label(logits, label);
    const Scalar top = logits.maxCoeff();
    const Scalar lse = top + std::log((logits.array() - top).exp().sum());
    return lse - logits(label, 0);
}

template <typename Scalar>
MatX<Scalar> cross_entropy_vjp(const MatIn<Scalar>& logits, int label) {
    check_label(logits, label);
    MatX<Scalar> g = softmax_rows(MatX<Scalar>(logits.transpose())).transpose();
    g(label, 0) -= 1.0;
    return g;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename Scalar>
ForwardTrace<Scalar> forward(const BasicModel<Scalar>& m, const MatIn<Scalar>& x, bool training, std::uint64_t seed) {
    const ModelConfig& c = m.config;
    const auto& p = m.params;
    ForwardTrace<Scalar> t;
    t.input = x;
    if (x.rows() != c.features) {
        throw ShapeError("stage 'input': sequence has " + std::to_string(x.rows()) + " features, model expects " +
                         std::to_string(c.features));
    }
    if (c.needs_fixed_length() && x.cols() != c.length) {
        throw ShapeError("stage 'input': sequence length " + std::to_string(x.cols()) + ", model '" +
                         c.attention_name() + "' expects " + std::to_string(c.length));
    }

    if (c.frontend == FrontendKind::conv) {
        t.conv_pre = stage("frontend", [&] {
            return frontend_conv_preactivation<Scalar>(x, p.conv_kernel, p.conv_bias, c.conv_width);
        });
        t.features = t.conv_pre.cwiseMax(Scalar(0));
    } else {
        t.features = x;
    }

    const bool input_att = c.attention == AttentionKind::att2da && c.att2da_mode == Att2DAMode::input;
    if (input_att) {
        t.input_attention = stage("input-attention", [&] { return att_2da_forward(t.features, p.att2da); });
        t.quantizer_input = t.input_attention.out;
    } else {
        t.quantizer_input = t.features;
    }

    t.phi = stage("quantize", [&] { return quantize(t.quantizer_input, p.codebook); });

    switch (c.attention) {
        case AttentionKind::att2da:
            if (!input_att) {
                t.att2da = stage("attention", [&] { return att_2da_forward(t.phi, p.att2da); });
                t.attended = t.att2da.out;
            } else {
                t.attended = t.phi;
            }
            break;
        case AttentionKind::ctsa:
        case AttentionKind::csa:
        case AttentionKind::tsa:
            t.selfatt = stage("attention", [&] { return self_attention_forward(t.phi, p.selfatt, training, seed); });
            t.attended = t.selfatt.out;
            break;
        case AttentionKind::none: t.attended = t.phi; break;
    }

    t.histogram = stage("aggregate", [&] { return aggregate(t.attended); });
    t.logits = stage("classifier", [&] {
        return MatX<Scalar>(matmul(p.classifier_weight, t.histogram) + p.classifier_bias);
    });
    return t;
}

template <typename Scalar>
MatX<Scalar> logits(const BasicModel<Scalar>& m, const MatIn<Scalar>& x) {
    return forward(m, x).logits;
}

template <typename Scalar>
int predict(const BasicModel<Scalar>& m, const MatIn<Scalar>& x) {
    Eigen::Index best;
    logits(m, x).col(0).maxCoeff(&best);
    return static_cast<int>(best);
}

template <typename Scalar>
BasicModelParams<Scalar> backward(const BasicModel<Scalar>& m, const ForwardTrace<Scalar>& t,
                                  const MatIn<Scalar>& dlogits) {
    using M = MatX<Scalar>;
    const ModelConfig& c = m.config;
    const auto& p = m.params;
    BasicModelParams<Scalar> g = zeros_like(p);

    g.classifier_weight = dlogits * t.histogram.transpose();
    g.classifier_bias = dlogits;
    const M dhist = p.classifier_weight.transpose() * dlogits;
    const M dattended = aggregate_vjp(t.attended.cols(), dhist);

    const bool input_att = c.attention == AttentionKind::att2da && c.att2da_mode == Att2DAMode::input;
    M dphi;
    switch (c.attention) {
        case AttentionKind::att2da:
            if (!input_att) {
                auto ga = att_2da_vjp(t.phi, p.att2da, t.att2da, dattended);
                g.att2da.W = std::move(ga.W);
                g.att2da.alpha_raw = ga.alpha_raw;
                dphi = std::move(ga.phi);
            } else {
                dphi = dattended;
            }
            break;
        case AttentionKind::ctsa:
        case AttentionKind::csa:
        case AttentionKind::tsa: {
            auto gs = self_attention_vjp(t.phi, p.selfatt, t.selfatt, dattended);
            for (std::size_t h = 0; h < gs.heads.size(); ++h) {
                g.selfatt.heads[h].Wq = std::move(gs.heads[h].Wq);
                g.selfatt.heads[h].Wk = std::move(gs.heads[h].Wk);
                g.selfatt.heads[h].alpha_raw = gs.heads[h].alpha_raw;
            }
            dphi = std::move(gs.phi);
            break;
        }
        case AttentionKind::none: dphi = dattended; break;
    }

    auto gq = quantize_vjp(t.quantizer_input, p.codebook, t.phi, dphi);
    g.codebook.v = std::move(gq.v);
    g.codebook.w_raw = std::move(gq.w_raw);

    M dfeatures = std::move(gq.x);
    if (input_att) {
        auto ga = att_2da_vjp(t.features, p.att2da, t.input_attention, dfeatures);
        g.att2da.W = std::move(ga.W);
        g.att2da.alpha_raw = ga.alpha_raw;
        dfeatures = std::move(ga.phi);
    }
    if (c.frontend == FrontendKind::conv) {
        auto gc = frontend_conv_vjp<Scalar>(t.input, p.conv_kernel, c.conv_width, t.conv_pre, dfeatures);
        g.conv_kernel = std::move(gc.kernel);
        g.conv_bias = std::move(gc.bias);
    }
    return g;
}

template <typename Scalar>
LossAndGrad<Scalar> loss_and_grad(const BasicModel<Scalar>& m, const MatIn<Scalar>& x, int label, bool training,
                                  std::uint64_t seed) {
    const ForwardTrace<Scalar> t = forward(m, x, training, seed);
    LossAndGrad<Scalar> out;
    out.loss = cross_entropy<Scalar>(t.logits, label);
    out.grads = backward(m, t, cross_entropy_vjp<Scalar>(t.logits, label));
    return out;
}

// ---------------------------------------------------------------------------

#define NBSA_INSTANTIATE_MODEL(S)                                                                                  \
    template MatX<S> frontend_conv<S>(const MatIn<S>&, const MatIn<S>&, const MatIn<S>&, int);                    \
    template MatX<S> frontend_conv_preactivation<S>(const MatIn<S>&, const MatIn<S>&, const MatIn<S>&, int);      \
    template ConvGrads<S> frontend_conv_vjp<S>(const MatIn<S>&, const MatIn<S>&, int, const MatIn<S>&,            \
                                               const MatIn<S>&);                                                  \
    template S cross_entropy<S>(const MatIn<S>&, int);                                                            \
    template MatX<S> cross_entropy_vjp<S>(const MatIn<S>&, int);                                                  \
    template ForwardTrace<S> forward<S>(const BasicModel<S>&, const MatIn<S>&, bool, std::uint64_t);              \
    template MatX<S> logits<S>(const BasicModel<S>&, const MatIn<S>&);                                            \
    template int predict<S>(const BasicModel<S>&, const MatIn<S>&);                                               \
    template BasicModelParams<S> backward<S>(const BasicModel<S>&, const ForwardTrace<S>&, const MatIn<S>&);      \
    template LossAndGrad<S> loss_and_grad<S>(const BasicModel<S>&, const MatIn<S>&, int, bool, std::uint64_t);

NBSA_INSTANTIATE_MODEL(double)
NBSA_INSTANTIATE_MODEL(long double)

#undef NBSA_INSTANTIATE_MODEL

}  // namespace nbsa
