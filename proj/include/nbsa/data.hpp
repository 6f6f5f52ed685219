#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "nbsa/numerics.hpp"

namespace nbsa {

struct LabeledSequence {
    Matrix x;  // D x N
    int label = 0;
};

struct LabeledSequenceSet {
    std::vector<LabeledSequence> items;
    int classes = 0;
    int features = 0;  // D; 0 only for an empty set
    nlohmann::json metadata = nlohmann::json::object();

    /// Throws ArgumentError if items disagree on D or carry out-of-range labels.
    void validate() const;

    std::vector<Matrix> sequences() const;
    std::vector<int> labels() const;
    LabeledSequenceSet subset(std::span<const std::size_t> indices) const;
};

/// Class-discriminative columns (snr * e_label plus unit Gaussian noise) at
/// ceil(signal_fraction * N) random timestamps; all other columns are pure
/// unit Gaussian noise. Labels cycle 0, 1, ..., classes - 1.
LabeledSequenceSet gen_noisy_timestamps(int classes, int D, int N, double signal_fraction, double snr, int count,
                                        std::uint64_t seed);

/// Two-class order task. Items come in adjacent pairs: a class-0 item shows
/// symbol A for the first N/2 steps then symbol B, and its class-1 twin is the
/// same matrix with columns reversed. Twins share their column multiset.
LabeledSequenceSet gen_order_task(int D, int N, int count, std::uint64_t seed);

/// Keeps the first target_n columns, or appends zero columns up to target_n.
Matrix pad_or_clip(const Matrix& x, int target_n);

/// First (1 - test_fraction) of the items for training, the rest for testing.
/// Order-task twins stay together when the split point is even.
std::pair<LabeledSequenceSet, LabeledSequenceSet> split_tail(const LabeledSequenceSet& set, double test_fraction);

/// CRC32 over (label, D, N, values) of every item in order.
std::uint32_t dataset_checksum(const LabeledSequenceSet& set);

// Feature files: "FSEQ" | u32 version | u32 header length | JSON header |
// f64 payload | u32 CRC32(payload), little-endian.
inline constexpr std::uint32_t kFeatureFileVersion = 1;

std::string feature_bytes(const LabeledSequenceSet& set);
LabeledSequenceSet features_from_bytes(std::string_view bytes);
void save_features(const LabeledSequenceSet& set, const std::filesystem::path& path);
LabeledSequenceSet load_features(const std::filesystem::path& path);

/// One item per CSV file: rows are features, columns are timestamps. The
/// label is the integer after the last '_' in the file stem ("walk_2.csv").
LabeledSequence load_csv_item(const std::filesystem::path& path);
LabeledSequenceSet import_csv(std::span<const std::filesystem::path> paths);

}  // namespace nbsa
