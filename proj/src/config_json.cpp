#include "nbsa/config_json.hpp"

namespace nbsa {

nlohmann::json config_to_json(const ModelConfig& c) {
    return {
        {"frontend", c.frontend == FrontendKind::conv ? "conv" : "none"},
        {"conv_width", c.conv_width},
        {"conv_channels", c.conv_channels},
        {"features", c.features},
        {"length", c.length},
        {"codewords", c.codewords},
        {"attention", c.attention_name()},
        {"latent_dim", c.latent_dim},
        {"heads", c.heads},
        {"dropout", c.dropout},
        {"classes", c.classes},
        {"seed", c.seed},
    };
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    const std::string frontend = j.value("frontend", std::string("none"));
    if (frontend == "conv") {
        c.frontend = FrontendKind::conv;
    } else if (frontend != "none") {
        throw ArgumentError("unknown frontend '" + frontend + "' (expected none or conv)");
    }
    c.conv_width = j.value("conv_width", c.conv_width);
    c.conv_channels = j.value("conv_channels", c.conv_channels);
    c.features = j.value("features", c.features);
    c.length = j.value("length", c.length);
    c.codewords = j.value("codewords", c.codewords);
    c.set_attention(j.value("attention", std::string("none")));
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.heads = j.value("heads", c.heads);
    c.dropout = j.value("dropout", c.dropout);
    c.classes = j.value("classes", c.classes);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

}  // namespace nbsa
