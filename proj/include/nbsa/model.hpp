#pragma once

// End-to-end classifier: optional temporal-conv frontend -> NBoF quantization
// -> attention variant -> temporal average -> affine classifier.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "nbsa/attention.hpp"
#include "nbsa/nbof.hpp"
#include "nbsa/numerics.hpp"

namespace nbsa {

enum class FrontendKind { none, conv };
enum class AttentionKind { none, att2da, ctsa, csa, tsa };

struct ModelConfig {
    FrontendKind frontend = FrontendKind::none;
    int conv_width = 3;
    int conv_channels = 0;  // 0: same as features
    int features = 0;       // D
    int length = 0;         // N; required by attention variants whose weights span time
    int codewords = 32;     // K
    AttentionKind attention = AttentionKind::none;
    Att2DAMode att2da_mode = Att2DAMode::temporal;
    int latent_dim = 32;  // d
    int heads = 1;
    double dropout = 0.0;
    int classes = 0;
    std::uint64_t seed = 0;

    /// Throws ArgumentError naming the first violated constraint.
    void validate() const;

    /// Feature dimension seen by the quantizer.
    int quantizer_dim() const;
    /// Width of the aggregated histogram (K, or h K for self-attention).
    int histogram_width() const;
    bool needs_fixed_length() const;

    /// "none", "2da-input", "2da-codeword", "2da-temporal", "ctsa", "csa", "tsa".
    std::string attention_name() const;
    void set_attention(std::string_view name);
};

/// Every learnable tensor of a model. Components a config does not use stay empty.
template <typename Scalar_ = double>
struct BasicModelParams {
    using Scalar = Scalar_;
    MatX<Scalar> conv_kernel;  // channels x (D * width); tap t of input row i is column i * width + t
    MatX<Scalar> conv_bias;    // channels x 1
    Codebook<Scalar> codebook;
    Att2DAParams<Scalar> att2da;
    SelfAttParams<Scalar> selfatt;
    MatX<Scalar> classifier_weight;  // classes x histogram_width
    MatX<Scalar> classifier_bias;    // classes x 1
};

using ModelParams = BasicModelParams<double>;
using ParamView = Eigen::Map<Matrix>;

/// Visits every active tensor in a stable order with its registry name
/// (e.g. "codebook.v", "att.head0.Wq"). Scalars are presented as 1x1 views.
template <typename Params, typename F>
void for_each_param(Params& p, F&& f) {
    using Scalar = typename std::remove_const_t<Params>::Scalar;
    using View = Eigen::Map<MatX<Scalar>>;
    auto view = [](auto& m) { return View(const_cast<Scalar*>(m.data()), m.rows(), m.cols()); };
    auto scalar = [](auto& s) { return View(const_cast<Scalar*>(&s), 1, 1); };
    if (p.conv_kernel.size()) {
        f("frontend.kernel", view(p.conv_kernel));
        f("frontend.bias", view(p.conv_bias));
    }
    f("codebook.v", view(p.codebook.v));
    f("codebook.w", view(p.codebook.w_raw));
    if (p.att2da.W.size()) {
        f("att.W", view(p.att2da.W));
        f("att.alpha", scalar(p.att2da.alpha_raw));
    }
    for (std::size_t h = 0; h < p.selfatt.heads.size(); ++h) {
        const std::string prefix = "att.head" + std::to_string(h) + ".";
        f(prefix + "Wq", view(p.selfatt.heads[h].Wq));
        f(prefix + "Wk", view(p.selfatt.heads[h].Wk));
        f(prefix + "alpha", scalar(p.selfatt.heads[h].alpha_raw));
    }
    f("classifier.weight", view(p.classifier_weight));
    f("classifier.bias", view(p.classifier_bias));
}

template <typename Scalar = double>
struct BasicNamedView {
    std::string name;
    Eigen::Map<MatX<Scalar>> view;
};

using NamedView = BasicNamedView<double>;

template <typename Scalar>
std::vector<BasicNamedView<Scalar>> param_views(BasicModelParams<Scalar>& p) {
    std::vector<BasicNamedView<Scalar>> out;
    for_each_param(p, [&](const std::string& name, Eigen::Map<MatX<Scalar>> v) { out.push_back({name, v}); });
    return out;
}

/// Parameter group of a registry name: frontend, codebook, attention or classifier.
std::string_view param_group(std::string_view name);

/// Same structure as `p`, all entries zero.
template <typename Scalar>
BasicModelParams<Scalar> zeros_like(const BasicModelParams<Scalar>& p) {
    BasicModelParams<Scalar> z = p;
    for_each_param(z, [](const std::string&, Eigen::Map<MatX<Scalar>> v) { v.setZero(); });
    return z;
}

/// Converts every tensor to another scalar type; structure is unchanged.
template <typename To, typename From>
BasicModelParams<To> cast_params(const BasicModelParams<From>& p) {
    auto cast = [](const MatX<From>& m) { return MatX<To>(m.template cast<To>()); };
    BasicModelParams<To> out;
    out.conv_kernel = cast(p.conv_kernel);
    out.conv_bias = cast(p.conv_bias);
    out.codebook.v = cast(p.codebook.v);
    out.codebook.w_raw = cast(p.codebook.w_raw);
    out.att2da.mode = p.att2da.mode;
    out.att2da.W = cast(p.att2da.W);
    out.att2da.alpha_raw = static_cast<To>(p.att2da.alpha_raw);
    out.selfatt.variant = p.selfatt.variant;
    out.selfatt.latent_dim = p.selfatt.latent_dim;
    out.selfatt.dropout_rate = p.selfatt.dropout_rate;
    for (const auto& h : p.selfatt.heads) {
        out.selfatt.heads.push_back({cast(h.Wq), cast(h.Wk), static_cast<To>(h.alpha_raw)});
    }
    out.classifier_weight = cast(p.classifier_weight);
    out.classifier_bias = cast(p.classifier_bias);
    return out;
}

template <typename Scalar = double>
struct BasicModel {
    ModelConfig config;
    BasicModelParams<Scalar> params;

    /// Rewrites constrained entries (the frozen 2DA diagonal) after an update.
    void restore_constraints() {
        if (params.att2da.W.size()) params.att2da.restore_diagonal();
    }

    template <typename To>
    BasicModel<To> cast() const {
        return {config, cast_params<To>(params)};
    }
};

using Model = BasicModel<double>;

/// Parameters of the right shapes, all zero.
ModelParams allocate_params(const ModelConfig& config);

/// Random initialization; the codebook is subsampled from the frontend output
/// of `samples`.
Model init_model(const ModelConfig& config, std::span<const Matrix> samples);

// ---------------------------------------------------------------------------
// The math below is instantiated for double and long double. Matrix arguments
// do not take part in deduction, so plain calls use double.

template <typename Scalar>
using MatIn = std::type_identity_t<MatX<Scalar>>;

/// Same-length zero-padded temporal convolution followed by ReLU.
template <typename Scalar = double>
MatX<Scalar> frontend_conv(const MatIn<Scalar>& x, const MatIn<Scalar>& kernel, const MatIn<Scalar>& bias,
                           int width);

template <typename Scalar = double>
struct ConvGrads {
    MatX<Scalar> x;
    MatX<Scalar> kernel;
    MatX<Scalar> bias;
};

/// `pre` is the pre-activation returned by frontend_conv_preactivation.
template <typename Scalar = double>
MatX<Scalar> frontend_conv_preactivation(const MatIn<Scalar>& x, const MatIn<Scalar>& kernel,
                                         const MatIn<Scalar>& bias, int width);
template <typename Scalar = double>
ConvGrads<Scalar> frontend_conv_vjp(const MatIn<Scalar>& x, const MatIn<Scalar>& kernel, int width,
                                    const MatIn<Scalar>& pre, const MatIn<Scalar>& upstream);

template <typename Scalar = double>
Scalar cross_entropy(const MatIn<Scalar>& logits, int label);
template <typename Scalar = double>
MatX<Scalar> cross_entropy_vjp(const MatIn<Scalar>& logits, int label);

template <typename Scalar = double>
struct ForwardTrace {
    MatX<Scalar> input;
    MatX<Scalar> conv_pre;  // empty without a frontend
    MatX<Scalar> features;  // quantizer input before input attention
    Att2DAForward<Scalar> input_attention;
    MatX<Scalar> quantizer_input;
    MatX<Scalar> phi;
    Att2DAForward<Scalar> att2da;
    SelfAttForward<Scalar> selfatt;
    MatX<Scalar> attended;
    MatX<Scalar> histogram;
    MatX<Scalar> logits;  // classes x 1
};

template <typename Scalar>
ForwardTrace<Scalar> forward(const BasicModel<Scalar>& m, const MatIn<Scalar>& x, bool training = false,
                             std::uint64_t seed = 0);
template <typename Scalar>
MatX<Scalar> logits(const BasicModel<Scalar>& m, const MatIn<Scalar>& x);
template <typename Scalar>
int predict(const BasicModel<Scalar>& m, const MatIn<Scalar>& x);

/// Gradients of the loss w.r.t. every parameter, given d loss / d logits.
template <typename Scalar>
BasicModelParams<Scalar> backward(const BasicModel<Scalar>& m, const ForwardTrace<Scalar>& trace,
                                  const MatIn<Scalar>& dlogits);

template <typename Scalar = double>
struct LossAndGrad {
    Scalar loss = 0;
    BasicModelParams<Scalar> grads;
};

template <typename Scalar>
LossAndGrad<Scalar> loss_and_grad(const BasicModel<Scalar>& m, const MatIn<Scalar>& x, int label,
                                  bool training = false, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Checkpoints: "NBAF" | u32 version | u32 header length | JSON header |
// f64 payload | u32 CRC32(payload), all little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_bytes(const Model& m);
Model checkpoint_from_bytes(std::string_view bytes);
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace nbsa
