#pragma once

// Command implementations behind the `mumlp` executable. Each command takes
// already-parsed options and either returns normally or throws mumlp::Error;
// tools/mumlp.cpp maps errors to exit codes.

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "error.hpp"
#include "hsi_data.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "training.hpp"

namespace mumlp::app {

namespace fs = std::filesystem;
using nlohmann::json;

/// Exit-code taxonomy: 0 ok, 2 data, 3 config, 4 numeric, 1 anything else.
struct ErrorCategory {
    const char* name;
    int exit_code;
};

inline ErrorCategory categorize(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::DataNotFound: return {"DATA_NOT_FOUND", 2};
        case ErrorKind::HeaderMismatch: return {"DATA_HEADER_MISMATCH", 2};
        case ErrorKind::TruncatedFile: return {"DATA_TRUNCATED", 2};
        case ErrorKind::NonFiniteValue: return {"DATA_NON_FINITE", 2};
        case ErrorKind::LabelOutOfRange: return {"DATA_LABEL_OUT_OF_RANGE", 2};
        case ErrorKind::NonDivisibleDimensions: return {"DATA_NON_DIVISIBLE", 2};
        case ErrorKind::EmptyClass: return {"DATA_EMPTY_CLASS", 2};
        case ErrorKind::FormatVersionMismatch: return {"CHECKPOINT_VERSION", 2};
        case ErrorKind::CorruptManifest: return {"CHECKPOINT_CORRUPT", 2};
        case ErrorKind::ConfigError: return {"CONFIG_ERROR", 3};
        case ErrorKind::ConfigMismatch: return {"CONFIG_MISMATCH", 3};
        case ErrorKind::PaletteSizeMismatch: return {"PALETTE_SIZE_MISMATCH", 3};
        case ErrorKind::ShapeMismatch: return {"SHAPE_MISMATCH", 3};
        case ErrorKind::InvalidProbability: return {"CONFIG_ERROR", 3};
        case ErrorKind::NonFiniteLoss: return {"NON_FINITE_LOSS", 4};
        case ErrorKind::TooFewRuns: return {"TOO_FEW_RUNS", 3};
        case ErrorKind::NonScalarLoss:
        case ErrorKind::EmptyMatrix: return {"INTERNAL", 1};
    }
    return {"INTERNAL", 1};
}

/// Worker count for evaluation: MUMLP_THREADS when set, else the hardware count.
inline std::size_t thread_cap() {
    if (const char* env = std::getenv("MUMLP_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<std::size_t>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------
// Run configuration: a flat JSON object with dotted keys.

inline const json& config_defaults() {
    static const json defaults = [] {
        const ModelConfig m;
        const TrainConfig t;
        return json{{"data.cube", ""},
                    {"data.labels", ""},
                    {"data.label_factor", 1},
                    {"data.palette", ""},
                    {"split.train", 0.05},
                    {"split.val", 0.05},
                    {"model.bands", nullptr},
                    {"model.classes", nullptr},
                    {"model.pixel_c", m.pixel_c},
                    {"model.msc_hidden", m.msc_hidden},
                    {"model.gen_c", m.gen_c},
                    {"model.n_msc_stack", m.n_msc_stack},
                    {"model.n_umlp_stack", m.n_umlp_stack},
                    {"model.u_depth", m.u_depth},
                    {"model.dropout_p", m.dropout_p},
                    {"model.eps", m.eps},
                    {"model.enable_msc2", m.enable_msc2},
                    {"model.enable_umlp", m.enable_umlp},
                    {"model.mixer_residual", m.mixer_residual},
                    {"train.lr0", t.lr0},
                    {"train.weight_decay", t.weight_decay},
                    {"train.lr_gamma", t.lr_gamma},
                    {"train.beta1", t.beta1},
                    {"train.beta2", t.beta2},
                    {"train.adam_eps", t.adam_eps},
                    {"train.epochs", t.epochs},
                    {"train.batch_size", t.batch_size},
                    {"seed", t.seed}};
    }();
    return defaults;
}

struct RunConfig {
    json values = json::object();  // as written by the user, plus overrides
    fs::path base_dir;             // relative data paths resolve against this

    json get(const std::string& key) const {
        if (values.contains(key)) return values[key];
        return config_defaults().at(key);
    }

    template <class V>
    V get_as(const std::string& key) const {
        const json v = get(key);
        try {
            return v.get<V>();
        } catch (const json::exception&) {
            throw Error(ErrorKind::ConfigError, "config key '" + key + "' has invalid value " + v.dump());
        }
    }

    fs::path path(const std::string& key) const {
        const auto p = get_as<std::string>(key);
        if (p.empty()) throw Error(ErrorKind::ConfigError, "config key '" + key + "' is not set");
        const fs::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }

    void set(const std::string& key, json value) {
        if (!config_defaults().contains(key)) throw Error(ErrorKind::ConfigError, "unknown config key '" + key + "'");
        values[key] = std::move(value);
    }

    /// "key=value"; the value is parsed as JSON when possible, else taken as a string.
    void apply_override(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw Error(ErrorKind::ConfigError, "override '" + assignment + "' is not of the form key=value");
        }
        const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        set(key, std::move(value));
    }

    SplitFractions fractions() const { return {get_as<double>("split.train"), get_as<double>("split.val")}; }

    TrainConfig train_config() const {
        TrainConfig t;
        t.lr0 = get_as<double>("train.lr0");
        t.weight_decay = get_as<double>("train.weight_decay");
        t.lr_gamma = get_as<double>("train.lr_gamma");
        t.beta1 = get_as<double>("train.beta1");
        t.beta2 = get_as<double>("train.beta2");
        t.adam_eps = get_as<double>("train.adam_eps");
        t.epochs = get_as<std::size_t>("train.epochs");
        t.batch_size = get_as<std::size_t>("train.batch_size");
        t.seed = get_as<std::uint64_t>("seed");
        t.validate();
        return t;
    }

    /// Model config; bands/classes come from the data when given, and must
    /// agree with explicit model.bands / model.classes entries.
    ModelConfig model_config(std::optional<std::size_t> data_bands = {}, std::optional<std::size_t> data_classes = {}) const {
        ModelConfig m;
        auto resolve = [&](const char* key, std::optional<std::size_t> from_data) -> std::size_t {
            const json v = get(key);
            if (!v.is_null()) {
                const auto declared = get_as<std::size_t>(key);
                if (from_data && *from_data != declared) {
                    throw Error(ErrorKind::ConfigMismatch, std::string(key) + "=" + std::to_string(declared) +
                                                               " but the data has " + std::to_string(*from_data));
                }
                return declared;
            }
            if (!from_data) throw Error(ErrorKind::ConfigError, std::string(key) + " is unset and no dataset is available");
            return *from_data;
        };
        m.bands = resolve("model.bands", data_bands);
        m.classes = resolve("model.classes", data_classes);
        m.pixel_c = get_as<std::size_t>("model.pixel_c");
        m.msc_hidden = get_as<std::size_t>("model.msc_hidden");
        m.gen_c = get_as<std::size_t>("model.gen_c");
        m.n_msc_stack = get_as<std::size_t>("model.n_msc_stack");
        m.n_umlp_stack = get_as<std::size_t>("model.n_umlp_stack");
        m.u_depth = get_as<std::size_t>("model.u_depth");
        m.dropout_p = get_as<double>("model.dropout_p");
        m.eps = get_as<double>("model.eps");
        m.enable_msc2 = get_as<bool>("model.enable_msc2");
        m.enable_umlp = get_as<bool>("model.enable_umlp");
        m.mixer_residual = get_as<bool>("model.mixer_residual");
        m.validate();
        return m;
    }
};

inline RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorKind::ConfigError, path.string() + " is not a JSON object");
    RunConfig cfg;
    cfg.base_dir = path.parent_path();
    for (auto& [key, value] : j.items()) cfg.set(key, value);
    return cfg;
}

/// Rebuilds a run config stored in a checkpoint. Relative paths in it are
/// anchored at `base_dir` (stored alongside).
inline RunConfig run_config_from_json(const json& values, const fs::path& base_dir) {
    RunConfig cfg;
    cfg.base_dir = base_dir;
    for (auto& [key, value] : values.items()) cfg.set(key, value);
    return cfg;
}

// ---------------------------------------------------------------------------
// Dataset plumbing shared by the commands.

struct Dataset {
    HsiCube cube;  // as loaded
    LabelMap labels;  // resampled to the cube grid
};

inline Dataset load_dataset(const RunConfig& cfg) {
    const auto cube_header = cfg.path("data.cube");
    const auto label_header = cfg.path("data.labels");
    Dataset ds;
    ds.cube = load_cube(cube_header, raw_path_for(cube_header));
    ds.labels = load_labels(label_header, raw_path_for(label_header));
    const auto factor = cfg.get_as<std::size_t>("data.label_factor");
    if (factor != 1) ds.labels = resample_labels_nearest(ds.labels, factor);
    if (ds.labels.width != ds.cube.width || ds.labels.height != ds.cube.height) {
        throw Error(ErrorKind::HeaderMismatch, "label map is " + std::to_string(ds.labels.width) + "x" +
                                                   std::to_string(ds.labels.height) + " after resampling, cube is " +
                                                   std::to_string(ds.cube.width) + "x" + std::to_string(ds.cube.height));
    }
    return ds;
}

inline json stats_to_json(const BandStats& s) { return json{{"mean", s.mean}, {"stddev", s.stddev}}; }

inline BandStats stats_from_json(const json& j) {
    try {
        return {j.at("mean").get<std::vector<double>>(), j.at("stddev").get<std::vector<double>>()};
    } catch (const json::exception& e) {
        throw Error(ErrorKind::CorruptManifest, std::string("normalization stats: ") + e.what());
    }
}

inline json scores_json(const ClassificationScores& s, std::size_t n_pixels) {
    json recall = json::array();
    for (double r : s.per_class_recall) recall.push_back(std::isnan(r) ? json(nullptr) : json(r));
    return json{{"oa", s.oa}, {"aa", s.aa}, {"kappa", s.kappa}, {"per_class_recall", recall}, {"n_pixels", n_pixels}};
}

inline void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::DataNotFound, "cannot write " + path.string());
    out << j.dump(2) << "\n";
}

inline std::string split_part_name(SplitPart p) {
    switch (p) {
        case SplitPart::Train: return "train";
        case SplitPart::Val: return "val";
        case SplitPart::Test: return "test";
    }
    return "test";
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
    fs::path checkpoint_stem;
    ClassificationScores test_scores;
    std::size_t best_epoch = 0;
};

/// split -> normalize -> train -> evaluate(test) -> persist
/// checkpoint.{json,bin}, history.json and metrics.json in `out_dir`.
inline TrainOutcome cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log = std::cout) {
    const auto train_cfg = cfg.train_config();
    auto ds = load_dataset(cfg);
    const auto model_cfg = cfg.model_config(ds.cube.bands, ds.labels.classes);
    const auto split = split_pixels(ds.labels, cfg.fractions(), train_cfg.seed);
    const auto normalized = normalize_cube(ds.cube);
    for (auto b : normalized.zero_variance_bands) log << "warning: ZeroVarianceBand: band " << b << " is constant, passed as zeros\n";
    const HsiCube cube = apply_normalization(ds.cube, normalized.stats);

    log << "train: " << split.train.size() << " train / " << split.val.size() << " val / " << split.test.size()
        << " test pixels, " << count_parameters(model_cfg).total << " parameters\n";
    const Model<float> initial(model_cfg, train_cfg.seed);
    const auto threads = thread_cap();
    auto result = train_model(initial, cube, ds.labels, split, train_cfg, threads, [&log](const EpochRecord& r) {
        log << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.train_loss << " val_oa " << r.val_oa << "\n";
    });

    fs::create_directories(out_dir);
    const json run_config = cfg.values;
    json history{{"config", run_config}, {"records", result.history}};
    write_json(out_dir / "history.json", history);

    const fs::path stem = out_dir / "checkpoint";
    const json extra{{"run_config", run_config},
                     {"data_dir", fs::absolute(cfg.base_dir).lexically_normal().string()},
                     {"normalization", stats_to_json(normalized.stats)},
                     {"best_epoch", result.best_epoch}};
    save_checkpoint(result.best, stem, extra);

    // Scored from the reloaded checkpoint so eval of the same checkpoint
    // reproduces these numbers exactly.
    auto reloaded = load_checkpoint<float>(stem).model;
    const auto ev = evaluate_model(reloaded, cube, ds.labels, split.test, train_cfg.batch_size, threads);
    const auto scores = classification_scores(ev.confusion);
    json metrics = scores_json(scores, split.test.size());
    metrics["split_part"] = "test";
    metrics["config"] = run_config;
    write_json(out_dir / "metrics.json", metrics);
    log << "test: OA " << scores.oa << " AA " << scores.aa << " kappa " << scores.kappa << "\n";
    return {stem, scores, result.best_epoch};
}

// ---------------------------------------------------------------------------
// eval

struct LoadedRun {
    Model<float> model;
    RunConfig config;
    BandStats stats;
};

inline fs::path checkpoint_stem(fs::path p) {
    if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
    return p;
}

inline LoadedRun load_run(const fs::path& checkpoint, const std::optional<fs::path>& config_override) {
    auto loaded = load_checkpoint<float>(checkpoint_stem(checkpoint));
    RunConfig cfg = config_override ? load_run_config(*config_override)
                                    : run_config_from_json(loaded.extra.value("run_config", json::object()),
                                                           loaded.extra.value("data_dir", std::string{}));
    return {std::move(loaded.model), std::move(cfg), stats_from_json(loaded.extra.value("normalization", json::object()))};
}

struct PreparedData {
    HsiCube cube;  // normalized with the checkpoint's statistics
    LabelMap labels;
};

inline PreparedData prepare_for(const LoadedRun& run) {
    auto ds = load_dataset(run.config);
    if (ds.cube.bands != run.model.config().bands) {
        throw Error(ErrorKind::ConfigMismatch, "checkpoint expects " + std::to_string(run.model.config().bands) +
                                                   " bands, dataset has " + std::to_string(ds.cube.bands));
    }
    if (ds.labels.classes != run.model.config().classes) {
        throw Error(ErrorKind::ConfigMismatch, "checkpoint has " + std::to_string(run.model.config().classes) +
                                                   " classes, labels declare " + std::to_string(ds.labels.classes));
    }
    return {apply_normalization(ds.cube, run.stats), std::move(ds.labels)};
}

struct EvalOptions {
    std::vector<fs::path> checkpoints;
    std::vector<fs::path> baselines;  // optional comparison group for the p-value
    std::optional<fs::path> config;
    SplitPart part = SplitPart::Test;
    fs::path out = "metrics.json";
};

namespace detail {

struct RunScores {
    ClassificationScores scores;
    std::size_t n_pixels = 0;
    json config;
};

inline RunScores score_checkpoint(const fs::path& ckpt, const EvalOptions& opt) {
    const auto run = load_run(ckpt, opt.config);
    const auto data = prepare_for(run);
    const auto tc = run.config.train_config();
    const auto split = split_pixels(data.labels, run.config.fractions(), tc.seed);
    const auto& part = part_of(split, opt.part);
    const auto ev = evaluate_model(run.model, data.cube, data.labels, part, tc.batch_size, thread_cap());
    return {classification_scores(ev.confusion), part.size(), run.config.values};
}

inline std::vector<double> column(const std::vector<RunScores>& runs, double ClassificationScores::*field) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(r.scores.*field);
    return v;
}

}  // namespace detail

inline json cmd_eval(const EvalOptions& opt, std::ostream& log = std::cout) {
    if (opt.checkpoints.empty()) throw Error(ErrorKind::ConfigError, "eval needs at least one --checkpoint");
    std::vector<detail::RunScores> runs;
    for (const auto& c : opt.checkpoints) runs.push_back(detail::score_checkpoint(c, opt));

    json metrics;
    log << std::fixed << std::setprecision(4);
    log << "run        OA      AA      Kappa\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const auto& s = runs[i].scores;
        log << std::setw(4) << i << "   " << s.oa << "  " << s.aa << "  " << s.kappa << "\n";
    }
    if (runs.size() == 1) {
        metrics = scores_json(runs[0].scores, runs[0].n_pixels);
    } else {
        const auto oa = run_statistics(detail::column(runs, &ClassificationScores::oa));
        const auto aa = run_statistics(detail::column(runs, &ClassificationScores::aa));
        const auto kappa = run_statistics(detail::column(runs, &ClassificationScores::kappa));
        const std::size_t K = runs[0].scores.per_class_recall.size();
        json recall = json::array();
        for (std::size_t c = 0; c < K; ++c) {
            double s = 0.0;
            std::size_t n = 0;
            for (const auto& r : runs)
                if (!std::isnan(r.scores.per_class_recall[c])) s += r.scores.per_class_recall[c], ++n;
            recall.push_back(n ? json(s / static_cast<double>(n)) : json(nullptr));
        }
        json per_run = json::array();
        for (const auto& r : runs) per_run.push_back({{"oa", r.scores.oa}, {"aa", r.scores.aa}, {"kappa", r.scores.kappa}});
        metrics = json{{"oa", oa.mean},
                       {"aa", aa.mean},
                       {"kappa", kappa.mean},
                       {"per_class_recall", recall},
                       {"n_pixels", runs[0].n_pixels},
                       {"runs", per_run},
                       {"std", {{"oa", oa.sample_std}, {"aa", aa.sample_std}, {"kappa", kappa.sample_std}}}};
        log << "mean   " << oa.mean << "  " << aa.mean << "  " << kappa.mean << "\n";
        log << "std    " << oa.sample_std << "  " << aa.sample_std << "  " << kappa.sample_std << "\n";
    }
    if (!opt.baselines.empty()) {
        if (runs.size() < 2 || opt.baselines.size() < 2) {
            throw Error(ErrorKind::TooFewRuns, "a p-value needs >= 2 checkpoints and >= 2 baselines");
        }
        std::vector<detail::RunScores> base;
        for (const auto& c : opt.baselines) base.push_back(detail::score_checkpoint(c, opt));
        const auto w = welch_t_test(detail::column(runs, &ClassificationScores::oa), detail::column(base, &ClassificationScores::oa));
        metrics["p_value"] = w.p_two_sided;
        metrics["welch"] = {{"t", w.t}, {"dof", w.dof}, {"zero_variance_pair", w.zero_variance_pair}};
        log << "welch  t " << w.t << " dof " << w.dof << " p " << w.p_two_sided << "\n";
    }
    metrics["split_part"] = split_part_name(opt.part);
    metrics["config"] = runs[0].config;
    write_json(opt.out, metrics);
    return metrics;
}

// ---------------------------------------------------------------------------
// map

using Rgb = std::array<std::uint8_t, 3>;

inline std::vector<Rgb> load_palette(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::DataNotFound, "cannot open palette " + path.string());
    const json j = json::parse(in, nullptr, false);
    if (!j.is_array()) throw Error(ErrorKind::ConfigError, path.string() + " must be an array of [r, g, b] triples");
    std::vector<Rgb> palette;
    for (const auto& e : j) {
        if (!e.is_array() || e.size() != 3) throw Error(ErrorKind::ConfigError, "palette entries must be [r, g, b]");
        Rgb rgb{};
        for (int k = 0; k < 3; ++k) {
            const int v = e[k].get<int>();
            if (v < 0 || v > 255) throw Error(ErrorKind::ConfigError, "palette component out of 0..255");
            rgb[k] = static_cast<std::uint8_t>(v);
        }
        palette.push_back(rgb);
    }
    return palette;
}

inline void write_ppm(const fs::path& path, std::size_t width, std::size_t height, const std::vector<Rgb>& pixels) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::DataNotFound, "cannot write " + path.string());
    out << "P6\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size() * 3));
}

struct MapOptions {
    fs::path checkpoint;
    std::optional<fs::path> config;
    std::optional<fs::path> palette;  // defaults to the run config's data.palette
    fs::path out = "map.ppm";
};

/// Classification map: every labelled pixel is painted with the colour of its
/// predicted class, background with palette[0].
inline void cmd_map(const MapOptions& opt) {
    const auto run = load_run(opt.checkpoint, opt.config);
    const auto palette = load_palette(opt.palette ? *opt.palette : run.config.path("data.palette"));
    const std::size_t K = run.model.config().classes;
    if (palette.size() != K + 1) {
        throw Error(ErrorKind::PaletteSizeMismatch, "palette has " + std::to_string(palette.size()) + " entries, need " +
                                                        std::to_string(K + 1));
    }
    const auto data = prepare_for(run);
    std::vector<std::size_t> foreground;
    for (std::size_t i = 0; i < data.labels.labels.size(); ++i)
        if (data.labels.labels[i] != 0) foreground.push_back(i);
    const auto tc = run.config.train_config();
    const auto predictions = predict_pixels(run.model, data.cube, foreground, tc.batch_size, thread_cap());
    std::vector<Rgb> image(data.labels.labels.size(), palette[0]);
    for (std::size_t i = 0; i < foreground.size(); ++i) image[foreground[i]] = palette[predictions[i] + 1];
    write_ppm(opt.out, data.labels.width, data.labels.height, image);
}

// ---------------------------------------------------------------------------
// inspect

struct InspectOptions {
    fs::path source;  // run config or checkpoint manifest
    std::vector<std::string> overrides;
    std::optional<std::string> ablate;  // "msc2" or "umlp"
    std::uint64_t batch = 1000;
    std::optional<fs::path> out;
};

inline ModelConfig apply_ablation(ModelConfig cfg, const std::optional<std::string>& ablate) {
    if (!ablate) return cfg;
    if (*ablate == "msc2") cfg.enable_msc2 = false;
    else if (*ablate == "umlp") cfg.enable_umlp = false;
    else throw Error(ErrorKind::ConfigError, "--ablate expects msc2 or umlp, got '" + *ablate + "'");
    return cfg;
}

/// Model config for inspection: from a checkpoint manifest, or from a run
/// config (bands/classes taken from model.* keys, else from data headers).
inline ModelConfig inspect_config(const fs::path& source, const std::vector<std::string>& overrides) {
    std::ifstream in(source);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open " + source.string());
    const json j = json::parse(in, nullptr, false);
    if (j.is_object() && j.contains("format_version")) {
        if (!overrides.empty()) throw Error(ErrorKind::ConfigError, "--set does not apply to a checkpoint");
        return load_checkpoint<float>(checkpoint_stem(source)).model.config();
    }
    auto cfg = load_run_config(source);
    for (const auto& o : overrides) cfg.apply_override(o);
    std::optional<std::size_t> bands, classes;
    if (cfg.get("model.bands").is_null()) {
        const auto h = mumlp::detail::read_header(cfg.path("data.cube"));
        bands = mumlp::detail::header_dim(h, "bands", cfg.path("data.cube"));
    }
    if (cfg.get("model.classes").is_null()) {
        const auto h = mumlp::detail::read_header(cfg.path("data.labels"));
        classes = mumlp::detail::header_dim(h, "classes", cfg.path("data.labels"));
    }
    return cfg.model_config(bands, classes);
}

inline json cmd_inspect(const InspectOptions& opt, std::ostream& log = std::cout) {
    if (opt.batch == 0) throw Error(ErrorKind::ConfigError, "--batch must be >= 1");
    const auto cfg = apply_ablation(inspect_config(opt.source, opt.overrides), opt.ablate);
    const auto count = count_parameters(cfg);
    const auto flops = estimate_flops(cfg, opt.batch);
    log << "block        parameters\n";
    for (const auto& [block, n] : count.breakdown) log << std::left << std::setw(12) << block << " " << n << "\n";
    log << std::left << std::setw(12) << "(norms)" << " " << count.norms << "\n";
    log << std::left << std::setw(12) << "total" << " " << count.total << "\n";
    log << "flops @ batch " << opt.batch << ": " << flops << " (estimate)\n";
    json report{{"config", cfg},
                {"breakdown", count.breakdown},
                {"norms", count.norms},
                {"total", count.total},
                {"batch", opt.batch},
                {"flops", flops}};
    if (opt.out) write_json(*opt.out, report);
    return report;
}

// ---------------------------------------------------------------------------
// split

inline json cmd_split(const RunConfig& cfg, const fs::path& out) {
    auto ds = load_dataset(cfg);
    const auto seed = cfg.get_as<std::uint64_t>("seed");
    const auto split = split_pixels(ds.labels, cfg.fractions(), seed);
    json j{{"seed", seed},
           {"fractions", {{"train", split.fractions.train}, {"val", split.fractions.val}}},
           {"width", ds.labels.width},
           {"height", ds.labels.height},
           {"train", split.train},
           {"val", split.val},
           {"test", split.test}};
    write_json(out, j);
    return j;
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
    fs::path out_dir;
    std::size_t width = 16, height = 16, bands = 8, classes = 4;
    double separation = 3.0;  // class means drawn N(0, separation^2) per band
    double noise = 0.5;
    std::uint64_t seed = 7;
};

/// Writes a small labelled cube with Gaussian class clusters: the four
/// quadrants carry classes 1..4 and every pixel with (x + y) % 7 == 0 is
/// background. Also writes palette.json and a ready-to-train config.json.
inline void cmd_synth(const SynthOptions& opt) {
    if (opt.classes != 4) throw Error(ErrorKind::ConfigError, "synth lays out exactly 4 quadrant classes");
    fs::create_directories(opt.out_dir);
    const RngStream root(opt.seed);
    RngStream mean_rng = root.split("means");
    std::vector<double> means(opt.classes * opt.bands);
    for (auto& m : means) m = opt.separation * mean_rng.normal();
    RngStream noise_rng = root.split("noise");

    HsiCube cube{opt.width, opt.height, opt.bands, std::vector<float>(opt.width * opt.height * opt.bands)};
    LabelMap labels{opt.width, opt.height, opt.classes, std::vector<std::uint16_t>(opt.width * opt.height)};
    for (std::size_t y = 0; y < opt.height; ++y) {
        for (std::size_t x = 0; x < opt.width; ++x) {
            const std::size_t idx = y * opt.width + x;
            const std::size_t cls = (y >= opt.height / 2 ? 2 : 0) + (x >= opt.width / 2 ? 1 : 0);
            const bool background = (x + y) % 7 == 0;
            labels.labels[idx] = background ? 0 : static_cast<std::uint16_t>(cls + 1);
            for (std::size_t b = 0; b < opt.bands; ++b) {
                const double centre = background ? 0.0 : means[cls * opt.bands + b];
                cube.data[idx * opt.bands + b] = static_cast<float>(centre + opt.noise * noise_rng.normal());
            }
        }
    }
    save_cube(cube, opt.out_dir / "cube.json", opt.out_dir / "cube.raw");
    save_labels(labels, opt.out_dir / "labels.json", opt.out_dir / "labels.raw");
    write_json(opt.out_dir / "palette.json", json::array({{0, 0, 0}, {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200}}));
    write_json(opt.out_dir / "config.json", json{{"data.cube", "cube.json"},
                                                 {"data.labels", "labels.json"},
                                                 {"data.palette", "palette.json"},
                                                 {"split.train", 0.5},
                                                 {"split.val", 0.1},
                                                 {"model.pixel_c", 32},
                                                 {"model.msc_hidden", 32},
                                                 {"model.n_msc_stack", 1},
                                                 {"model.n_umlp_stack", 1},
                                                 {"model.u_depth", 2},
                                                 {"train.epochs", 300},
                                                 {"train.batch_size", 16},
                                                 {"seed", 42}});
}

}  // namespace mumlp::app
