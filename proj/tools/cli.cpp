#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "nbsa/config_json.hpp"
#include "nbsa/data.hpp"
#include "nbsa/gradcheck.hpp"
#include "nbsa/io.hpp"

namespace nbsa::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const std::set<std::string> kModelKeys{"frontend", "conv_width", "conv_channels", "features", "length", "codewords",
                                       "attention", "latent_dim", "heads",        "dropout",  "classes", "seed"};
const std::set<std::string> kTrainKeys{"epochs", "batch_size", "learning_rate", "beta1", "beta2",
                                       "eps",    "folds",      "holdout",       "seed"};

/// Integers, then reals, then booleans; anything else stays a string.
json typed_value(const std::string& s) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    long long i = 0;
    if (auto [p, ec] = std::from_chars(first, last, i); ec == std::errc() && p == last) return i;
    double d = 0.0;
    if (auto [p, ec] = std::from_chars(first, last, d); ec == std::errc() && p == last) return d;
    if (s == "true") return true;
    if (s == "false") return false;
    return s;
}

template <typename F>
auto with_json_errors(const char* what, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw ArgumentError(std::string(what) + ": " + e.what());
    }
}

/// Fills in D, classes and (for fixed-length attention) N from the data when
/// the config leaves them out, then validates.
ModelConfig resolve_model(json m, const LabeledSequenceSet& data) {
    if (!m.contains("features")) m["features"] = data.features;
    if (!m.contains("classes")) m["classes"] = data.classes;
    if (!m.contains("length") && !data.items.empty()) {
        const auto n = data.items.front().x.cols();
        bool uniform = true;
        for (const auto& item : data.items) uniform = uniform && item.x.cols() == n;
        if (uniform) m["length"] = n;
    }
    const ModelConfig c = with_json_errors("model config", [&] { return config_from_json(m); });
    if (data.features != 0 && data.features != c.features) {
        throw ArgumentError("model expects " + std::to_string(c.features) + " features, data has " +
                            std::to_string(data.features));
    }
    if (data.classes > c.classes) {
        throw ArgumentError("model has " + std::to_string(c.classes) + " classes, data has " +
                            std::to_string(data.classes));
    }
    return c;
}

/// Clips or zero-pads every item to the model length when the attention
/// variant needs one.
LabeledSequenceSet fit_length(LabeledSequenceSet data, const ModelConfig& c) {
    if (c.needs_fixed_length()) {
        for (auto& item : data.items) item.x = pad_or_clip(item.x, c.length);
    }
    return data;
}

void apply_seed(RunConfig& rc, const std::optional<std::uint64_t>& seed) {
    if (!seed) return;
    rc.model["seed"] = *seed;
    rc.train["seed"] = *seed;
}

std::string format_csv(const Matrix& m) {
    std::string s;
    char buf[32];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
            if (j) s += ',';
            s += buf;
        }
        s += '\n';
    }
    return s;
}

/// Binary greymap, min-max normalized to 0..255 (all zero when constant).
std::string format_pgm(const Matrix& m) {
    std::string s = "P5\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n255\n";
    const double lo = m.minCoeff(), hi = m.maxCoeff();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double t = hi > lo ? (m(i, j) - lo) / (hi - lo) : 0.0;
            s += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t)));
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Commands

struct Options {
    fs::path config, data, out, checkpoint;
    std::optional<std::uint64_t> seed;
    // gen
    std::string generator;
    int classes = 3, features = 4, length = 20, count = 400;
    double signal_fraction = 0.1, snr = 2.0;
    // gradcheck
    double eps = 1e-5, tol = 1e-4;
    std::string inject_fault;
    // inspect-attention
    int item = 0;
};

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    RunConfig rc = load_config(o.config);
    apply_seed(rc, o.seed);
    const TrainConfig tc = train_config_from_json(rc.train);
    const LabeledSequenceSet raw = load_features(o.data);
    const ModelConfig mc = resolve_model(rc.model, raw);
    const LabeledSequenceSet data = fit_length(raw, mc);

    TrainReport report;
    Model model;
    if (tc.folds >= 2) {
        report = cross_validate(mc, data, tc).report;
        model = fit(mc, data, tc).model;  // the checkpoint is refit on every item
    } else {
        auto run = holdout(mc, data, tc);
        report = std::move(run.report);
        model = std::move(run.model);
    }
    if (!o.out.empty()) save_checkpoint(model, o.out);

    json j = report.to_json();
    j["config"] = {{"model", config_to_json(mc)}, {"train", train_config_to_json(tc)}};
    j["checkpoint"] = o.out.empty() ? json(nullptr) : json(o.out.string());
    out << j.dump(2) << "\n";
    err << report.to_markdown();
    return kOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
    const Model model = load_checkpoint(o.checkpoint);
    const LabeledSequenceSet data = fit_length(load_features(o.data), model.config);
    const Evaluation e = evaluate(model, data);
    const json j{{"model", model.config.attention_name()},
                 {"items", data.items.size()},
                 {"accuracy", e.accuracy},
                 {"macro_f1", e.macro_f1}};
    out << j.dump(2) << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "| %s | %zu items | acc %.2f | F1 %.2f |\n", model.config.attention_name().c_str(),
                  data.items.size(), 100.0 * e.accuracy, 100.0 * e.macro_f1);
    err << line;
    return kOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out, std::ostream& err) {
    RunConfig rc = o.config.empty() ? RunConfig{} : load_config(o.config);
    apply_seed(rc, o.seed);
    // Desk-scale defaults for anything the config leaves open.
    for (auto [key, value] : {std::pair{"features", 4}, {"length", 8}, {"classes", 3}}) {
        if (!rc.model.contains(key)) rc.model[key] = value;
    }
    const ModelConfig mc = with_json_errors("model config", [&] { return config_from_json(rc.model); });
    if (o.eps <= 0.0) throw ArgumentError("--eps must be > 0");
    if (!o.inject_fault.empty() && o.inject_fault != "frontend" && o.inject_fault != "codebook" &&
        o.inject_fault != "attention" && o.inject_fault != "classifier") {
        throw ArgumentError("unknown parameter group '" + o.inject_fault + "'");
    }

    std::mt19937_64 rng(mix_seed(mc.seed, 2));
    std::vector<Matrix> samples, xs;
    for (int i = 0; i < 4; ++i) samples.push_back(normal_matrix<double>(mc.features, mc.length, rng));
    Model base = init_model(mc, samples);
    // Check at a generic point rather than the near-symmetric initialization.
    std::normal_distribution<double> jitter(0.0, 0.5);
    for (auto& nv : param_views(base.params)) {
        if (nv.name == "codebook.v") continue;
        for (Eigen::Index i = 0; i < nv.view.size(); ++i) nv.view.data()[i] = jitter(rng);
    }
    base.restore_constraints();
    // Checked items are drawn apart from the codebook samples: a column lying
    // exactly on a codeword is a kink of the distance.
    for (int i = 0; i < 4; ++i) xs.push_back(normal_matrix<double>(mc.features, mc.length, rng));

    // Finite differences run in long double: in double their roundoff
    // (~1e-11 absolute) swamps gradient entries below ~1e-7.
    using Ext = long double;
    using M = MatX<Ext>;
    const BasicModel<Ext> ext = base.cast<Ext>();
    std::vector<M> inputs;
    for (const auto& x : xs) inputs.push_back(x.cast<Ext>());
    std::vector<std::string> names;
    std::vector<M> point;
    auto ext_params = ext.params;
    for (auto& nv : param_views(ext_params)) {
        names.push_back(nv.name);
        point.push_back(nv.view);
    }
    auto assemble = [&ext](std::span<const M> in) {
        BasicModel<Ext> m = ext;
        auto views = param_views(m.params);
        for (std::size_t i = 0; i < views.size(); ++i) views[i].view = in[i];
        m.restore_constraints();
        return m;
    };
    const Ext fault = o.inject_fault.empty() ? 1.0L : 1.01L;
    const Ext count = static_cast<Ext>(inputs.size());
    DiffOp<Ext> op{[&](std::span<const M> in) {
                       const auto m = assemble(in);
                       Ext loss = 0;
                       for (std::size_t i = 0; i < inputs.size(); ++i) {
                           loss += cross_entropy<Ext>(logits(m, inputs[i]), static_cast<int>(i) % mc.classes);
                       }
                       return M(M::Constant(1, 1, loss / count));
                   },
                   [&](std::span<const M> in, const M&, const M& g) {
                       const auto m = assemble(in);
                       std::vector<M> total;
                       for (std::size_t i = 0; i < inputs.size(); ++i) {
                           auto lg = loss_and_grad(m, inputs[i], static_cast<int>(i) % mc.classes);
                           auto views = param_views(lg.grads);
                           if (total.empty()) {
                               for (auto& nv : views) total.push_back(M::Zero(nv.view.rows(), nv.view.cols()));
                           }
                           for (std::size_t p = 0; p < views.size(); ++p) total[p] += views[p].view;
                       }
                       for (std::size_t p = 0; p < total.size(); ++p) {
                           const bool faulty = param_group(names[p]) == o.inject_fault;
                           total[p] *= g(0, 0) / count * (faulty ? fault : Ext(1));
                       }
                       return total;
                   }};
    const auto report = grad_check(op, point, static_cast<Ext>(o.eps), mix_seed(mc.seed, 3));

    std::map<std::string, double> groups;
    for (std::size_t p = 0; p < names.size(); ++p) {
        auto& worst = groups[std::string(param_group(names[p]))];
        worst = std::max(worst, report.per_input[p]);
    }
    bool passed = report.finite;
    json jg = json::object();
    err << "| group | max rel err | status |\n|---|---|---|\n";
    for (const auto& [group, e] : groups) {
        const bool ok = report.finite && e <= o.tol;
        passed = passed && ok;
        jg[group] = {{"max_rel_err", e}, {"passed", ok}};
        char line[128];
        std::snprintf(line, sizeof line, "| %s | %.3e | %s |\n", group.c_str(), e, ok ? "PASS" : "FAIL");
        err << line;
    }
    err << (report.finite ? "" : "non-finite values: ") << report.diagnostic << " (" << names[report.worst_input]
        << ")\n";
    const json j{{"model", mc.attention_name()},
                 {"eps", o.eps},
                 {"precision", "long double"},
                 {"tolerance", o.tol},
                 {"groups", jg},
                 {"finite", report.finite},
                 {"passed", passed}};
    out << j.dump(2) << "\n";
    return passed ? kOk : kCheckFailed;
}

int cmd_gen(const Options& o, std::ostream& out, std::ostream&) {
    const std::uint64_t seed = o.seed.value_or(0);
    const LabeledSequenceSet set =
        o.generator == "noisy"
            ? gen_noisy_timestamps(o.classes, o.features, o.length, o.signal_fraction, o.snr, o.count, seed)
            : gen_order_task(o.features, o.length, o.count, seed);
    save_features(set, o.out);
    const json j{{"generator", o.generator},    {"path", o.out.string()},  {"items", set.items.size()},
                 {"classes", set.classes},      {"features", set.features}, {"seed", seed},
                 {"checksum", dataset_checksum(set)}};
    out << j.dump(2) << "\n";
    return kOk;
}

int cmd_inspect(const Options& o, std::ostream& out, std::ostream& err) {
    const Model model = load_checkpoint(o.checkpoint);
    const ModelConfig& c = model.config;
    if (c.attention == AttentionKind::none) {
        throw ArgumentError("checkpoint '" + o.checkpoint.string() + "' has no attention to inspect");
    }
    const LabeledSequenceSet data = fit_length(load_features(o.data), c);
    if (o.item < 0 || static_cast<std::size_t>(o.item) >= data.items.size()) {
        throw ArgumentError("item " + std::to_string(o.item) + " out of range (data has " +
                            std::to_string(data.items.size()) + " items)");
    }
    const ForwardTrace t = forward(model, data.items[static_cast<std::size_t>(o.item)].x);

    std::vector<Matrix> maps;
    if (c.attention == AttentionKind::att2da) {
        const auto& f = c.att2da_mode == Att2DAMode::input ? t.input_attention : t.att2da;
        // 2DA works on the transposed map outside temporal mode; report it as rows x timestamps.
        maps.push_back(c.att2da_mode == Att2DAMode::temporal ? f.attention : Matrix(f.attention.transpose()));
    } else {
        for (const auto& h : t.selfatt.heads) maps.push_back(h.attention);
    }

    fs::create_directories(o.out);
    json heads = json::array();
    for (std::size_t n = 0; n < maps.size(); ++n) {
        const fs::path csv = o.out / ("head" + std::to_string(n) + ".csv");
        const fs::path pgm = o.out / ("head" + std::to_string(n) + ".pgm");
        io::write_file(csv, format_csv(maps[n]));
        io::write_file(pgm, format_pgm(maps[n]));
        heads.push_back({{"csv", csv.string()}, {"pgm", pgm.string()}, {"rows", maps[n].rows()},
                         {"cols", maps[n].cols()}});
    }
    const json j{{"model", c.attention_name()}, {"item", o.item}, {"heads", heads}};
    out << j.dump(2) << "\n";
    err << maps.size() << " attention map(s) written to " << o.out.string() << "\n";
    return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config files

RunConfig parse_config(std::istream& in) {
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_config(in);
    } catch (const CLI::Error& e) {
        throw ArgumentError(std::string("config: ") + e.what());
    }
    RunConfig rc;
    for (const auto& item : items) {
        if (item.name == "++" || item.name == "--") continue;  // section open/close markers
        if (item.parents.size() != 1 || (item.parents[0] != "model" && item.parents[0] != "train")) {
            throw ArgumentError("config: key '" + item.fullname() + "' must sit in a [model] or [train] section");
        }
        const bool is_model = item.parents[0] == "model";
        if (!(is_model ? kModelKeys : kTrainKeys).contains(item.name)) {
            throw ArgumentError("config: unknown key '" + item.fullname() + "'");
        }
        if (item.inputs.size() != 1) throw ArgumentError("config: key '" + item.fullname() + "' needs one value");
        (is_model ? rc.model : rc.train)[item.name] = typed_value(item.inputs[0]);
    }
    return rc;
}

RunConfig load_config(const fs::path& path) {
    std::istringstream in(io::read_file(path));
    try {
        return parse_config(in);
    } catch (const ArgumentError& e) {
        throw ArgumentError(path.string() + ": " + e.what());
    }
}

TrainConfig train_config_from_json(const json& j) {
    return with_json_errors("train config", [&] {
        TrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.eps = j.value("eps", c.eps);
        c.folds = j.value("folds", c.folds);
        c.holdout = j.value("holdout", c.holdout);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    });
}

json train_config_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
            {"beta1", c.beta1},   {"beta2", c.beta2},           {"eps", c.eps},
            {"folds", c.folds},   {"holdout", c.holdout},       {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Entry point

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural bag-of-features sequence classifiers with attention", "nbsa"};
    app.require_subcommand(1);
    Options o;

    auto* train = app.add_subcommand("train", "Train a model; JSON report on stdout, table on stderr");
    train->add_option("--config", o.config, "Config file with [model] and [train] sections")->required();
    train->add_option("--data", o.data, "Feature file (.fseq)")->required();
    train->add_option("--out", o.out, "Checkpoint to write");
    train->add_option("--seed", o.seed, "Overrides model and train seeds");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a feature file");
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint (.nbaf)")->required();
    eval->add_option("--data", o.data, "Feature file (.fseq)")->required();

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full model loss gradient");
    grad->add_option("--config", o.config, "Config file; only [model] is used");
    grad->add_option("--seed", o.seed, "Overrides the model seed");
    grad->add_option("--eps", o.eps, "Central-difference step")->capture_default_str();
    grad->add_option("--tol", o.tol, "Max relative error per parameter group")->capture_default_str();
    grad->add_option("--inject-fault", o.inject_fault)->group("");  // negative control: skews one group

    auto* gen = app.add_subcommand("gen", "Generate a synthetic feature file");
    gen->add_option("generator", o.generator, "noisy or order")->required()->check(CLI::IsMember({"noisy", "order"}));
    gen->add_option("--out", o.out, "Feature file to write")->required();
    gen->add_option("--seed", o.seed, "Generator seed (default 0)");
    gen->add_option("--classes", o.classes, "noisy: number of classes")->capture_default_str();
    gen->add_option("--features", o.features, "Feature dimension D")->capture_default_str();
    gen->add_option("--length", o.length, "Sequence length N")->capture_default_str();
    gen->add_option("--count", o.count, "Number of items")->capture_default_str();
    gen->add_option("--signal-fraction", o.signal_fraction, "noisy: fraction of informative timestamps")
        ->capture_default_str();
    gen->add_option("--snr", o.snr, "noisy: prototype scale")->capture_default_str();

    auto* inspect = app.add_subcommand("inspect-attention", "Export per-head attention maps as CSV and PGM");
    inspect->add_option("--checkpoint", o.checkpoint, "Checkpoint (.nbaf)")->required();
    inspect->add_option("--data", o.data, "Feature file (.fseq)")->required();
    inspect->add_option("--item", o.item, "Item index")->capture_default_str();
    inspect->add_option("--out", o.out, "Output directory")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        if (train->parsed()) return cmd_train(o, out, err);
        if (eval->parsed()) return cmd_eval(o, out, err);
        if (grad->parsed()) return cmd_gradcheck(o, out, err);
        if (gen->parsed()) return cmd_gen(o, out, err);
        return cmd_inspect(o, out, err);
    } catch (const TrainingError& e) {
        err << "error: " << e.what() << "\n";
        return kCheckFailed;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
}

}  // namespace nbsa::cli
