#pragma once

#include <string>
#include <vector>

#include "aflora/config.hpp"
#include "aflora/report.hpp"

namespace aflora {

struct RunOptions {
    bool parallel_arms = false;  // compare/ablation arms share nothing
};

// One finished training run, still in memory.
struct RunResult {
    ExperimentConfig config;
    std::string hash;
    ExperimentReport report;
    TransformerModel model;
};

// Build data + model from the config and train with the given seed. Pure
// except for wall-time measurement; no file IO.
RunResult execute_run(const ExperimentConfig& config, uint64_t seed);

// report.json, steps.csv, freeze_events.csv, heatmap.csv, checkpoint.json.
void write_run_artifacts(const RunResult& result, const std::string& dir);

// Applies the AFLORA_OUTPUT_ROOT override to relative output directories.
std::string resolve_output_dir(const std::string& configured);

// The labeled configurations an ablation of this kind runs. Kinds:
// score-variant, placement, pairing.
struct AblationArm {
    std::string label;
    ExperimentConfig config;
};
std::vector<AblationArm> ablation_arms(const std::string& kind, const ExperimentConfig& base);

// CLI entry points. Exit codes: 0 ok, 2 config/usage error, 3 infeasible
// freeze schedule, 4 runtime failure.
int run_train_command(const std::string& config_path);
int run_compare_command(const std::string& config_path, const RunOptions& opts = {});
int run_ablation_command(const std::string& kind, const std::string& config_path,
                         const RunOptions& opts = {});
int run_heatmap_command(const std::string& run_dir);

}  // namespace aflora
