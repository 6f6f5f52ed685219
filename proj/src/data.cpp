#include "nbsa/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "nbsa/io.hpp"

namespace nbsa {

void LabeledSequenceSet::validate() const {
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].x.rows() != features) {
            throw ArgumentError("item " + std::to_string(i) + " has " + std::to_string(items[i].x.rows()) +
                                " features, set declares " + std::to_string(features));
        }
        if (items[i].label < 0 || items[i].label >= classes) {
            throw ArgumentError("item " + std::to_string(i) + " has label " + std::to_string(items[i].label) +
                                " outside [0, " + std::to_string(classes) + ")");
        }
    }
}

std::vector<Matrix> LabeledSequenceSet::sequences() const {
    std::vector<Matrix> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.x);
    return out;
}

std::vector<int> LabeledSequenceSet::labels() const {
    std::vector<int> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.label);
    return out;
}

LabeledSequenceSet LabeledSequenceSet::subset(std::span<const std::size_t> indices) const {
    LabeledSequenceSet out;
    out.classes = classes;
    out.features = features;
    out.metadata = metadata;
    out.items.reserve(indices.size());
    for (std::size_t i : indices) out.items.push_back(items.at(i));
    return out;
}

// ---------------------------------------------------------------------------
// Generators

LabeledSequenceSet gen_noisy_timestamps(int classes, int D, int N, double signal_fraction, double snr, int count,
                                        std::uint64_t seed) {
    if (!(signal_fraction > 0.0 && signal_fraction <= 1.0)) {
        throw ArgumentError("gen_noisy_timestamps: signal_fraction must lie in (0, 1], got " +
                            std::to_string(signal_fraction));
    }
    if (classes < 1 || D < classes) {
        throw ArgumentError("gen_noisy_timestamps: need 1 <= classes <= D for orthogonal prototypes");
    }
    if (N < 1 || count < 0 || !(snr >= 0.0)) {
        throw ArgumentError("gen_noisy_timestamps: need N >= 1, count >= 0, snr >= 0");
    }
    // guard against 0.1 * 20 = 2.0000000000000004 style rounding
    const int signal = std::min(N, static_cast<int>(std::ceil(signal_fraction * N - 1e-9)));

    std::mt19937_64 rng(seed);
    LabeledSequenceSet set;
    set.classes = classes;
    set.features = D;
    set.metadata = {{"generator", "noisy"}, {"seed", seed},      {"classes", classes},
                    {"D", D},               {"N", N},            {"signal_fraction", signal_fraction},
                    {"snr", snr},           {"count", count}};
    std::vector<int> steps(static_cast<std::size_t>(N));
    for (int i = 0; i < count; ++i) {
        LabeledSequence item{normal_matrix<double>(D, N, rng), i % classes};
        std::iota(steps.begin(), steps.end(), 0);
        std::shuffle(steps.begin(), steps.end(), rng);
        for (int s = 0; s < signal; ++s) item.x(item.label, steps[static_cast<std::size_t>(s)]) += snr;
        set.items.push_back(std::move(item));
    }
    return set;
}

LabeledSequenceSet gen_order_task(int D, int N, int count, std::uint64_t seed) {
    if (N < 2 || N % 2 != 0) {
        throw ArgumentError("gen_order_task: N must be even and >= 2, got " + std::to_string(N));
    }
    if (D < 2 || count < 0) {
        throw ArgumentError("gen_order_task: need D >= 2 and count >= 0");
    }
    constexpr double kSymbolScale = 2.0;
    constexpr double kNoise = 0.5;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, kNoise);
    LabeledSequenceSet set;
    set.classes = 2;
    set.features = D;
    set.metadata = {{"generator", "order"}, {"seed", seed}, {"D", D}, {"N", N}, {"count", count}};
    while (static_cast<int>(set.items.size()) < count) {
        Matrix x(D, N);
        for (int n = 0; n < N; ++n) {
            const int symbol = n < N / 2 ? 0 : 1;
            for (int j = 0; j < D; ++j) x(j, n) = (j == symbol ? kSymbolScale : 0.0) + noise(rng);
        }
        Matrix twin = x.rowwise().reverse();
        set.items.push_back({std::move(x), 0});
        if (static_cast<int>(set.items.size()) < count) set.items.push_back({std::move(twin), 1});
    }
    return set;
}

Matrix pad_or_clip(const Matrix& x, int target_n) {
    if (target_n < 1) {
        throw ArgumentError("pad_or_clip: target length must be >= 1, got " + std::to_string(target_n));
    }
    Matrix out = Matrix::Zero(x.rows(), target_n);
    const Eigen::Index keep = std::min<Eigen::Index>(x.cols(), target_n);
    out.leftCols(keep) = x.leftCols(keep);
    return out;
}

std::pair<LabeledSequenceSet, LabeledSequenceSet> split_tail(const LabeledSequenceSet& set, double test_fraction) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw ArgumentError("split_tail: test fraction must lie in [0, 1)");
    }
    const std::size_t n = set.items.size();
    const auto test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    std::vector<std::size_t> head(n - test), tail(test);
    std::iota(head.begin(), head.end(), 0);
    std::iota(tail.begin(), tail.end(), n - test);
    return {set.subset(head), set.subset(tail)};
}

std::uint32_t dataset_checksum(const LabeledSequenceSet& set) {
    std::string bytes;
    for (const auto& it : set.items) {
        io::put_u32(bytes, static_cast<std::uint32_t>(it.label));
        io::put_u32(bytes, static_cast<std::uint32_t>(it.x.rows()));
        io::put_u32(bytes, static_cast<std::uint32_t>(it.x.cols()));
        for (Eigen::Index i = 0; i < it.x.size(); ++i) io::put_f64(bytes, it.x.data()[i]);
    }
    return io::crc32(bytes);
}

// ---------------------------------------------------------------------------
// Feature files

namespace {

constexpr std::string_view kMagic = "FSEQ";

}  // namespace

std::string feature_bytes(const LabeledSequenceSet& set) {
    set.validate();
    nlohmann::json manifest = nlohmann::json::array();
    std::string payload;
    for (const auto& it : set.items) {
        manifest.push_back({{"label", it.label}, {"D", it.x.rows()}, {"N", it.x.cols()}, {"offset", payload.size()}});
        for (Eigen::Index i = 0; i < it.x.size(); ++i) io::put_f64(payload, it.x.data()[i]);
    }
    const nlohmann::json header = {
        {"classes", set.classes}, {"features", set.features}, {"metadata", set.metadata}, {"items", manifest}};
    const std::string text = header.dump();

    std::string out(kMagic);
    io::put_u32(out, kFeatureFileVersion);
    io::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out += payload;
    io::put_u32(out, io::crc32(payload));
    return out;
}

LabeledSequenceSet features_from_bytes(std::string_view bytes) {
    io::Reader r(bytes, "feature file");
    if (r.take(4) != kMagic) {
        throw FormatError("feature file: bad magic (expected \"FSEQ\")");
    }
    const std::uint32_t version = r.u32();
    if (version != kFeatureFileVersion) {
        throw VersionError("feature file: version " + std::to_string(version) + " is not supported (reader is " +
                           std::to_string(kFeatureFileVersion) + ")");
    }
    const std::uint32_t header_len = r.u32();

    LabeledSequenceSet set;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    std::size_t payload_size = 0;
    try {
        const auto header = nlohmann::json::parse(r.take(header_len));
        set.classes = header.at("classes").get<int>();
        set.features = header.at("features").get<int>();
        set.metadata = header.value("metadata", nlohmann::json::object());
        for (const auto& e : header.at("items")) {
            const auto D = e.at("D").get<Eigen::Index>();
            const auto N = e.at("N").get<Eigen::Index>();
            if (D != set.features) {
                throw FormatError("feature file: item " + std::to_string(shapes.size()) + " has D = " +
                                  std::to_string(D) + ", header declares " + std::to_string(set.features));
            }
            if (N < 0 || e.at("offset").get<std::size_t>() != payload_size) {
                throw FormatError("feature file: bad manifest entry " + e.dump());
            }
            set.items.push_back({Matrix(), e.at("label").get<int>()});
            shapes.emplace_back(D, N);
            payload_size += static_cast<std::size_t>(D * N) * 8;
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("feature file: malformed header: ") + e.what());
    }

    const std::string_view payload = r.take(payload_size);
    const std::uint32_t stored = r.u32();
    if (r.remaining() != 0) {
        throw FormatError("feature file: " + std::to_string(r.remaining()) + " trailing bytes");
    }
    if (io::crc32(payload) != stored) {
        throw ChecksumError("feature file: payload CRC32 mismatch");
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < set.items.size(); ++i) {
        Matrix& x = set.items[i].x;
        x.resize(shapes[i].first, shapes[i].second);
        for (Eigen::Index j = 0; j < x.size(); ++j, offset += 8) x.data()[j] = io::f64_at(payload, offset);
    }
    try {
        set.validate();
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("feature file: ") + e.what());
    }
    return set;
}

void save_features(const LabeledSequenceSet& set, const std::filesystem::path& path) {
    io::write_file(path, feature_bytes(set));
}

LabeledSequenceSet load_features(const std::filesystem::path& path) {
    return features_from_bytes(io::read_file(path));
}

// ---------------------------------------------------------------------------
// CSV import

LabeledSequence load_csv_item(const std::filesystem::path& path) {
    const std::string stem = path.stem().string();
    const auto cut = stem.rfind('_');
    int label = -1;
    if (cut != std::string::npos) {
        const char* first = stem.data() + cut + 1;
        const char* last = stem.data() + stem.size();
        const auto [ptr, ec] = std::from_chars(first, last, label);
        if (ec != std::errc() || ptr != last) label = -1;
    }
    if (label < 0) {
        throw FormatError("csv '" + path.string() + "': file name must end in _<label>");
    }

    const std::string text = io::read_file(path);
    std::vector<std::vector<double>> rows;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                throw FormatError("csv '" + path.string() + "': row " + std::to_string(rows.size() + 1) +
                                  ": not a number: '" + cell + "'");
            }
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw FormatError("csv '" + path.string() + "': row " + std::to_string(rows.size() + 1) + " has " +
                              std::to_string(row.size()) + " columns, expected " +
                              std::to_string(rows.front().size()));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw FormatError("csv '" + path.string() + "': no data");
    }
    LabeledSequence item{Matrix(rows.size(), rows.front().size()), label};
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) item.x(i, j) = rows[i][j];
    }
    return item;
}

LabeledSequenceSet import_csv(std::span<const std::filesystem::path> paths) {
    LabeledSequenceSet set;
    set.metadata = {{"generator", "csv"}};
    for (const auto& p : paths) {
        auto item = load_csv_item(p);
        if (set.items.empty()) set.features = static_cast<int>(item.x.rows());
        set.classes = std::max(set.classes, item.label + 1);
        set.items.push_back(std::move(item));
    }
    try {
        set.validate();
    } catch (const ArgumentError& e) {
        throw FormatError(std::string("csv import: ") + e.what());
    }
    return set;
}

}  // namespace nbsa
