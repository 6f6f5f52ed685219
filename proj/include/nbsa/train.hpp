#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nbsa/data.hpp"
#include "nbsa/model.hpp"

namespace nbsa {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moments, one matrix per parameter view.
struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

/// One bias-corrected Adam update at step t (1-based). Moments are allocated
/// on first use.
void adam_step(std::vector<ParamView>& params, const std::vector<ParamView>& grads, AdamState& state, long t,
               const AdamConfig& cfg);

/// Adam on every model parameter, then re-applies model constraints.
void adam_step(Model& model, ModelParams& grads, AdamState& state, long t, const AdamConfig& cfg);

struct TrainConfig {
    int epochs = 90;
    int batch_size = 256;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int folds = 5;         // >= 2: stratified cross-validation; otherwise a tail holdout
    double holdout = 0.2;  // test fraction when folds < 2
    std::uint64_t seed = 0;

    void validate() const;
    AdamConfig adam() const { return {learning_rate, beta1, beta2, eps}; }
};

struct TrainResult {
    Model model;
    std::vector<double> loss_trace;  // mean training loss per epoch
};

/// Minibatch Adam on cross-entropy. Shuffling and dropout streams derive from
/// cfg.seed. Throws TrainingError naming epoch and batch on a non-finite loss.
TrainResult train(Model model, const LabeledSequenceSet& data, const TrainConfig& cfg);

/// init_model on the training items, then train.
TrainResult fit(const ModelConfig& model_cfg, const LabeledSequenceSet& data, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Metrics and folds

double accuracy(std::span<const int> preds, std::span<const int> labels);

/// Unweighted mean of per-class F1 over classes present in labels or preds.
double macro_f1(std::span<const int> preds, std::span<const int> labels);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

/// Stratified k-fold: each label's items are shuffled and dealt round-robin.
std::vector<Split> kfold(std::span<const int> labels, int folds, std::uint64_t seed);

struct Evaluation {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<int> predictions;
};

Evaluation evaluate(const Model& model, const LabeledSequenceSet& data);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

struct FoldResult {
    int fold = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<double> loss_trace;
};

struct TrainReport {
    std::string model;
    std::vector<double> loss_trace;
    std::vector<FoldResult> folds;
    MeanStd accuracy;
    MeanStd macro_f1;

    nlohmann::json to_json() const;
    /// One-row table in "mean + std" percent style.
    std::string to_markdown() const;
};

struct CrossValidation {
    TrainReport report;
    std::vector<Model> models;  // one per fold
};

/// Fold f trains with model and train seeds derived from (seed, f).
CrossValidation cross_validate(const ModelConfig& model_cfg, const LabeledSequenceSet& data, const TrainConfig& cfg);

struct HoldoutRun {
    TrainReport report;
    Model model;
};

/// Trains on the head of the items and evaluates on the tail (split_tail).
HoldoutRun holdout(const ModelConfig& model_cfg, const LabeledSequenceSet& data, const TrainConfig& cfg);

}  // namespace nbsa
