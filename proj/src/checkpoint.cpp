#include <nlohmann/json.hpp>

#include "nbsa/config_json.hpp"
#include "nbsa/io.hpp"
#include "nbsa/model.hpp"

namespace nbsa {

namespace {

constexpr std::string_view kMagic = "NBAF";

}  // namespace

std::string checkpoint_bytes(const Model& m) {
    nlohmann::json manifest = nlohmann::json::array();
    std::string payload;
    for_each_param(m.params, [&](const std::string& name, ParamView v) {
        manifest.push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}, {"offset", payload.size()}});
        for (Eigen::Index i = 0; i < v.size(); ++i) io::put_f64(payload, v.data()[i]);
    });
    const nlohmann::json header = {{"config", config_to_json(m.config)}, {"parameters", manifest}};
    const std::string header_text = header.dump();

    std::string out(kMagic);
    io::put_u32(out, kCheckpointVersion);
    io::put_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out += header_text;
    out += payload;
    io::put_u32(out, io::crc32(payload));
    return out;
}

Model checkpoint_from_bytes(std::string_view bytes) {
    io::Reader r(bytes, "checkpoint");
    if (r.take(4) != kMagic) {
        throw FormatError("checkpoint: bad magic (expected \"NBAF\")");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw VersionError("checkpoint: format_version " + std::to_string(version) + " is not supported (reader is " +
                           std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t header_len = r.u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.take(header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }

    Model m;
    std::vector<NamedView> views;
    std::size_t payload_size = 0;
    try {
        m.config = config_from_json(header.at("config"));
        m.params = allocate_params(m.config);
        views = param_views(m.params);
        const auto& manifest = header.at("parameters");
        if (manifest.size() != views.size()) {
            throw FormatError("checkpoint: manifest lists " + std::to_string(manifest.size()) +
                              " parameters, config implies " + std::to_string(views.size()));
        }
        for (std::size_t i = 0; i < views.size(); ++i) {
            const auto& e = manifest[i];
            if (e.at("name").get<std::string>() != views[i].name ||
                e.at("rows").get<Eigen::Index>() != views[i].view.rows() ||
                e.at("cols").get<Eigen::Index>() != views[i].view.cols() ||
                e.at("offset").get<std::size_t>() != payload_size) {
                throw FormatError("checkpoint: manifest entry " + std::to_string(i) + " (" + e.dump() +
                                  ") does not match expected parameter " + views[i].name);
            }
            payload_size += static_cast<std::size_t>(views[i].view.size()) * 8;
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
    }

    const std::string_view payload = r.take(payload_size);
    const std::uint32_t stored = r.u32();
    if (r.remaining() != 0) {
        throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes");
    }
    if (io::crc32(payload) != stored) {
        throw ChecksumError("checkpoint: payload CRC32 mismatch");
    }
    std::size_t offset = 0;
    for (auto& v : views) {
        for (Eigen::Index i = 0; i < v.view.size(); ++i, offset += 8) v.view.data()[i] = io::f64_at(payload, offset);
    }
    return m;
}

void save_checkpoint(const Model& m, const std::filesystem::path& path) {
    io::write_file(path, checkpoint_bytes(m));
}

Model load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_bytes(io::read_file(path));
}

}  // namespace nbsa
