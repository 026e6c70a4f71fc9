#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mumlp/app.hpp"

namespace {

using namespace mumlp;
namespace fs = std::filesystem;

app::RunConfig run_config(const std::string& path, const std::vector<std::string>& overrides,
                          const std::optional<std::uint64_t>& seed) {
    auto cfg = app::load_run_config(path);
    for (const auto& o : overrides) cfg.apply_override(o);
    if (seed) cfg.set("seed", *seed);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App cli{"MUMLP hyperspectral pixel classifier"};
    cli.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::uint64_t batch = 1000;
    std::optional<std::string> ablate;
    std::string split_part = "test";
    std::vector<std::string> checkpoints, baselines;
    std::string palette;
    std::string metrics_out = "metrics.json";

    auto* train = cli.add_subcommand("train", "Train a model and write checkpoint, history.json and metrics.json");
    train->add_option("--config", config_path, "Run config (flat JSON)")->required();
    train->add_option("--set", overrides, "Override a config key: key=value");
    train->add_option("--seed", seed, "Seed for split, init, shuffling and dropout");
    train->add_option("--ablate", ablate, "Disable a block")->check(CLI::IsMember({"msc2", "umlp"}));
    train->add_option("--out", out, "Output directory")->required();

    auto* eval = cli.add_subcommand("eval", "Score checkpoints on a split part and write metrics.json");
    eval->add_option("--checkpoint", checkpoints, "Checkpoint manifest or stem (repeat for multi-seed runs)")->required();
    eval->add_option("--baseline", baselines, "Comparison checkpoints for the Welch p-value (repeatable)");
    eval->add_option("--config", config_path, "Run config overriding the one stored in the checkpoint");
    eval->add_option("--split-part", split_part, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    eval->add_option("--out", metrics_out, "metrics.json path")->capture_default_str();

    auto* map = cli.add_subcommand("map", "Render a classification map as binary PPM");
    map->add_option("--checkpoint", checkpoints, "Checkpoint manifest or stem")->required()->expected(1);
    map->add_option("--config", config_path, "Run config overriding the one stored in the checkpoint");
    map->add_option("--palette", palette, "palette.json (defaults to data.palette)");
    map->add_option("--out", out, "Output .ppm")->required();

    auto* inspect = cli.add_subcommand("inspect", "Parameter breakdown and FLOP estimate");
    inspect->add_option("--config", config_path, "Run config or checkpoint manifest")->required();
    inspect->add_option("--set", overrides, "Override a config key: key=value");
    inspect->add_option("--batch", batch, "Pixels per batch for the FLOP estimate")->default_val(1000);
    inspect->add_option("--ablate", ablate, "Disable a block")->check(CLI::IsMember({"msc2", "umlp"}));
    inspect->add_option("--out", out, "Optional JSON report path");

    auto* split = cli.add_subcommand("split", "Write the seeded train/val/test pixel split");
    split->add_option("--config", config_path, "Run config (flat JSON)")->required();
    split->add_option("--set", overrides, "Override a config key: key=value");
    split->add_option("--seed", seed, "Split seed");
    split->add_option("--out", out, "split.json path")->required();

    app::SynthOptions synth_opt;
    auto* synth = cli.add_subcommand("synth", "Generate the synthetic 4-class test dataset");
    synth->add_option("--out", out, "Output directory")->required();
    synth->add_option("--seed", synth_opt.seed, "Generator seed")->default_val(synth_opt.seed);

    CLI11_PARSE(cli, argc, argv);

    try {
        if (*train) {
            auto cfg = run_config(config_path, overrides, seed);
            if (ablate) cfg.set(*ablate == "msc2" ? "model.enable_msc2" : "model.enable_umlp", false);
            app::cmd_train(cfg, out);
        } else if (*eval) {
            app::EvalOptions opt;
            for (const auto& c : checkpoints) opt.checkpoints.emplace_back(c);
            for (const auto& b : baselines) opt.baselines.emplace_back(b);
            if (!config_path.empty()) opt.config = config_path;
            opt.part = parse_split_part(split_part);
            opt.out = metrics_out;
            app::cmd_eval(opt);
        } else if (*map) {
            app::MapOptions opt;
            opt.checkpoint = checkpoints.front();
            if (!config_path.empty()) opt.config = config_path;
            if (!palette.empty()) opt.palette = palette;
            opt.out = out;
            app::cmd_map(opt);
        } else if (*inspect) {
            app::InspectOptions opt;
            opt.source = config_path;
            opt.overrides = overrides;
            opt.ablate = ablate;
            opt.batch = batch;
            if (!out.empty()) opt.out = out;
            app::cmd_inspect(opt);
        } else if (*split) {
            app::cmd_split(run_config(config_path, overrides, seed), out);
        } else if (*synth) {
            synth_opt.out_dir = out;
            app::cmd_synth(synth_opt);
        }
    } catch (const Error& e) {
        const auto cat = app::categorize(e.kind());
        std::cerr << "error: " << cat.name << ": " << e.what() << "\n";
        return cat.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: INTERNAL: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
