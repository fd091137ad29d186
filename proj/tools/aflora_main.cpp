#include <string>

#include <CLI11.hpp>

#include "aflora/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Low-rank adapter training with adaptive projection-matrix freezing"};
    app.require_subcommand(1);

    std::string config_path;
    std::string ablation_kind;
    std::string run_dir;
    aflora::RunOptions options;

    CLI::App* train = app.add_subcommand("train", "Train one configuration and write artifacts");
    train->add_option("config", config_path, "experiment config file")->required();

    CLI::App* compare =
        app.add_subcommand("compare", "Run every compare.modes entry on shared data");
    compare->add_option("config", config_path, "experiment config file")->required();
    compare->add_flag("--parallel-arms", options.parallel_arms, "run arms on separate threads");

    CLI::App* ablate = app.add_subcommand("ablate", "Run one ablation family");
    ablate->add_option("kind", ablation_kind, "score-variant | placement | pairing")->required();
    ablate->add_option("config", config_path, "experiment config file")->required();
    ablate->add_flag("--parallel-arms", options.parallel_arms, "run arms on separate threads");

    CLI::App* heatmap =
        app.add_subcommand("heatmap", "Rebuild heatmap.csv from a finished run directory");
    heatmap->add_option("run_dir", run_dir, "directory containing report.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    if (train->parsed()) return aflora::run_train_command(config_path);
    if (compare->parsed()) return aflora::run_compare_command(config_path, options);
    if (ablate->parsed()) return aflora::run_ablation_command(ablation_kind, config_path, options);
    return aflora::run_heatmap_command(run_dir);
}
