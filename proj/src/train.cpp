#include "nbsa/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace nbsa {

// ---------------------------------------------------------------------------
// Adam

void adam_step(std::vector<ParamView>& params, const std::vector<ParamView>& grads, AdamState& state, long t,
               const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (t < 1) throw ArgumentError("adam_step: step t must be >= 1");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.push_back(Matrix::Zero(p.rows(), p.cols()));
            state.v.push_back(Matrix::Zero(p.rows(), p.cols()));
        }
    }
    if (state.m.size() != params.size()) {
        throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const auto& g = grads[i];
        if (g.rows() != p.rows() || g.cols() != p.cols() || state.m[i].rows() != p.rows() ||
            state.m[i].cols() != p.cols()) {
            throw ShapeError("adam_step: parameter " + std::to_string(i) + " is " + shape_str(p.rows(), p.cols()) +
                             ", gradient " + shape_str(g.rows(), g.cols()));
        }
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
        p.array() -= cfg.learning_rate * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + cfg.eps);
    }
}

void adam_step(Model& model, ModelParams& grads, AdamState& state, long t, const AdamConfig& cfg) {
    std::vector<ParamView> p, g;
    for_each_param(model.params, [&](const std::string&, ParamView v) { p.push_back(v); });
    for_each_param(grads, [&](const std::string&, ParamView v) { g.push_back(v); });
    adam_step(p, g, state, t, cfg);
    model.restore_constraints();
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ArgumentError("invalid train config: " + what);
    };
    require(epochs >= 1, "epochs must be >= 1, got " + std::to_string(epochs));
    require(batch_size >= 1, "batch_size must be >= 1");
    require(learning_rate >= 0.0, "learning_rate must be >= 0");
    require(beta1 > 0.0 && beta1 < 1.0, "beta1 must lie in (0, 1)");
    require(beta2 > 0.0 && beta2 < 1.0, "beta2 must lie in (0, 1)");
    require(eps > 0.0, "eps must be > 0");
    require(folds >= 0, "folds must be >= 0");
    require(holdout >= 0.0 && holdout < 1.0, "holdout must lie in [0, 1)");
}

namespace {

void accumulate(ModelParams& into, ModelParams& g, double scale) {
    auto dst = param_views(into);
    auto src = param_views(g);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i].view += scale * src[i].view;
}

}  // namespace

TrainResult train(Model model, const LabeledSequenceSet& data, const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    if (data.items.empty()) throw ArgumentError("train: dataset is empty");
    if (data.classes > model.config.classes) {
        throw ArgumentError("train: dataset has " + std::to_string(data.classes) + " classes, model has " +
                            std::to_string(model.config.classes));
    }

    const AdamConfig adam = cfg.adam();
    AdamState state;
    std::mt19937_64 shuffler(mix_seed(cfg.seed, 0));
    std::vector<std::size_t> order(data.items.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result{std::move(model), {}};
    Model& m = result.model;
    long step = 0;
    std::uint64_t draw = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffler);
        double epoch_loss = 0.0;
        int batch = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size), ++batch) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const double scale = 1.0 / static_cast<double>(stop - start);
            ModelParams grads = zeros_like(m.params);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < stop; ++i) {
                const auto& item = data.items[order[i]];
                auto lg = loss_and_grad(m, item.x, item.label, true, mix_seed(cfg.seed ^ 0xd20f, ++draw));
                batch_loss += lg.loss;
                accumulate(grads, lg.grads, scale);
            }
            if (!std::isfinite(batch_loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                    std::to_string(batch + 1));
            }
            epoch_loss += batch_loss;
            adam_step(m, grads, state, ++step, adam);
        }
        result.loss_trace.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return result;
}

TrainResult fit(const ModelConfig& model_cfg, const LabeledSequenceSet& data, const TrainConfig& cfg) {
    const auto samples = data.sequences();
    return train(init_model(model_cfg, samples), data, cfg);
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

void check_pairs(std::span<const int> preds, std::span<const int> labels) {
    if (preds.size() != labels.size()) {
        throw ArgumentError("metrics: " + std::to_string(preds.size()) + " predictions for " +
                            std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) throw ArgumentError("metrics: no items");
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> labels) {
    check_pairs(preds, labels);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += preds[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double macro_f1(std::span<const int> preds, std::span<const int> labels) {
    check_pairs(preds, labels);
    std::set<int> classes(labels.begin(), labels.end());
    classes.insert(preds.begin(), preds.end());
    double total = 0.0;
    for (int c : classes) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            tp += preds[i] == c && labels[i] == c;
            fp += preds[i] == c && labels[i] != c;
            fn += preds[i] != c && labels[i] == c;
        }
        total += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    }
    return total / static_cast<double>(classes.size());
}

std::vector<Split> kfold(std::span<const int> labels, int folds, std::uint64_t seed) {
    if (folds < 2) throw ArgumentError("kfold: need at least 2 folds, got " + std::to_string(folds));
    if (static_cast<std::size_t>(folds) > labels.size()) {
        throw ArgumentError("kfold: " + std::to_string(folds) + " folds for " + std::to_string(labels.size()) +
                            " items");
    }
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);

    std::mt19937_64 rng(seed);
    std::vector<int> fold_of(labels.size());
    std::size_t dealt = 0;
    for (auto& [label, idx] : by_label) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i : idx) fold_of[i] = static_cast<int>(dealt++ % static_cast<std::size_t>(folds));
    }
    std::vector<Split> splits(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (int f = 0; f < folds; ++f) {
            (fold_of[i] == f ? splits[f].validation : splits[f].train).push_back(i);
        }
    }
    return splits;
}

Evaluation evaluate(const Model& model, const LabeledSequenceSet& data) {
    Evaluation e;
    e.predictions.reserve(data.items.size());
    for (const auto& item : data.items) e.predictions.push_back(predict(model, item.x));
    const auto labels = data.labels();
    e.accuracy = accuracy(e.predictions, labels);
    e.macro_f1 = macro_f1(e.predictions, labels);
    return e;
}

MeanStd mean_std(std::span<const double> values) {
    MeanStd out;
    if (values.empty()) return out;
    const double n = static_cast<double>(values.size());
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - out.mean) * (v - out.mean);
        out.std = std::sqrt(ss / (n - 1.0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json TrainReport::to_json() const {
    nlohmann::json folds_json = nlohmann::json::array();
    for (const auto& f : folds) {
        folds_json.push_back({{"fold", f.fold}, {"accuracy", f.accuracy}, {"macro_f1", f.macro_f1},
                              {"loss_trace", f.loss_trace}});
    }
    return {{"model", model},
            {"loss_trace", loss_trace},
            {"folds", folds_json},
            {"accuracy", {{"mean", accuracy.mean}, {"std", accuracy.std}}},
            {"macro_f1", {{"mean", macro_f1.mean}, {"std", macro_f1.std}}}};
}

std::string TrainReport::to_markdown() const {
    auto cell = [](const MeanStd& s) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f + %.2f", 100.0 * s.mean, 100.0 * s.std);
        return std::string(buf);
    };
    std::ostringstream out;
    out << "| Attention model | Accuracy | Macro-F1 |\n";
    out << "|---|---|---|\n";
    out << "| " << model << " | " << cell(accuracy) << " | " << cell(macro_f1) << " |\n";
    return out.str();
}

namespace {

void summarize(TrainReport& r) {
    std::vector<double> acc, f1;
    for (const auto& f : r.folds) {
        acc.push_back(f.accuracy);
        f1.push_back(f.macro_f1);
    }
    r.accuracy = mean_std(acc);
    r.macro_f1 = mean_std(f1);
}

}  // namespace

CrossValidation cross_validate(const ModelConfig& model_cfg, const LabeledSequenceSet& data, const TrainConfig& cfg) {
    cfg.validate();
    CrossValidation cv;
    cv.report.model = model_cfg.attention_name();
    const auto labels = data.labels();
    const auto splits = kfold(labels, cfg.folds, cfg.seed);
    for (std::size_t f = 0; f < splits.size(); ++f) {
        ModelConfig mc = model_cfg;
        mc.seed = mix_seed(model_cfg.seed, f);
        TrainConfig tc = cfg;
        tc.seed = mix_seed(cfg.seed, f);
        const auto train_set = data.subset(splits[f].train);
        const auto val_set = data.subset(splits[f].validation);
        auto run = fit(mc, train_set, tc);
        const auto e = evaluate(run.model, val_set);
        cv.report.folds.push_back({static_cast<int>(f), e.accuracy, e.macro_f1, run.loss_trace});
        cv.models.push_back(std::move(run.model));
    }
    cv.report.loss_trace = cv.report.folds.front().loss_trace;
    summarize(cv.report);
    return cv;
}

HoldoutRun holdout(const ModelConfig& model_cfg, const LabeledSequenceSet& data, const TrainConfig& cfg) {
    cfg.validate();
    const auto [train_set, test_set] = split_tail(data, cfg.holdout);
    if (test_set.items.empty()) throw ArgumentError("holdout: test split is empty");
    auto run = fit(model_cfg, train_set, cfg);
    const auto e = evaluate(run.model, test_set);
    HoldoutRun out{TrainReport{}, std::move(run.model)};
    out.report.model = model_cfg.attention_name();
    out.report.loss_trace = run.loss_trace;
    out.report.folds.push_back({0, e.accuracy, e.macro_f1, run.loss_trace});
    summarize(out.report);
    return out;
}

}  // namespace nbsa
