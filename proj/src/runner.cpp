#include "aflora/runner.hpp"

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "aflora/checkpoint.hpp"
#include "aflora/errors.hpp"
#include "aflora/trainer.hpp"

namespace aflora {

namespace fs = std::filesystem;

RunResult execute_run(const ExperimentConfig& config, uint64_t seed) {
    const SplitDataset data = build_dataset(task_spec(config), config.n_classes);

    SeededRng rng(seed);
    RunResult result;
    result.config = config;
    result.hash = config_hash(config);
    result.model = build_model(model_config(config), rng);

    TrainConfig tc;
    tc.epochs = config.epochs;
    tc.batch_size = config.batch_size;
    tc.seed = seed;
    tc.lr = config.lr;
    tc.clf_lr = config.clf_lr;
    tc.weight_decay = config.weight_decay;
    tc.warmup_fraction = config.warmup_fraction;
    tc.adam_beta1 = config.adam_beta1;
    tc.adam_beta2 = config.adam_beta2;
    tc.adam_eps = config.adam_eps;
    tc.t_i_epochs = config.t_i_epochs;
    tc.t_f_epochs = config.resolved_t_f_epochs();
    tc.score_beta1 = config.score_beta1;
    tc.score_beta2 = config.score_beta2;
    tc.score_variant = config.score_variant;
    tc.pairing = config.pairing;

    result.report = train(result.model, data.train, data.eval, tc);
    return result;
}

void write_run_artifacts(const RunResult& result, const std::string& dir) {
    fs::create_directories(dir);
    const fs::path root(dir);
    write_report_json((root / "report.json").string(), result.config, result.hash, result.report);
    write_steps_csv((root / "steps.csv").string(), result.hash, result.report.records);
    write_freeze_events_csv((root / "freeze_events.csv").string(), result.hash,
                            result.report.events);
    const ShapeSpec spec = shape_from_model_config(model_config(result.config),
                                                   result.config.task_seq_len,
                                                   result.config.batch_size);
    write_heatmap_csv((root / "heatmap.csv").string(), result.hash,
                      freeze_heatmap(result.report.events, spec));
    save_checkpoint(result.model, (root / "checkpoint.json").string(), result.hash);
}

std::string resolve_output_dir(const std::string& configured) {
    const char* override_root = std::getenv("AFLORA_OUTPUT_ROOT");
    if (override_root == nullptr || *override_root == '\0') return configured;
    const fs::path p(configured);
    if (p.is_absolute()) return configured;
    return (fs::path(override_root) / p).string();
}

namespace {

int exit_code_for_current_exception() {
    try {
        throw;
    } catch (const ScheduleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}

// Runs every arm, sequentially by default. Arms share nothing, so the
// parallel path just gives each one a thread.
std::vector<RunResult> run_arms(const std::vector<AblationArm>& arms, uint64_t seed,
                                bool parallel) {
    std::vector<RunResult> results(arms.size());
    if (!parallel) {
        for (size_t i = 0; i < arms.size(); ++i) results[i] = execute_run(arms[i].config, seed);
        return results;
    }
    std::vector<std::exception_ptr> errors(arms.size());
    std::vector<std::thread> threads;
    threads.reserve(arms.size());
    for (size_t i = 0; i < arms.size(); ++i) {
        threads.emplace_back([&, i] {
            try {
                results[i] = execute_run(arms[i].config, seed);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    }
    for (std::thread& t : threads) t.join();
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

}  // namespace

std::vector<AblationArm> ablation_arms(const std::string& kind, const ExperimentConfig& base) {
    if (base.mode != ModeKind::AFLoRA)
        throw ConfigError("ablation kinds operate on adaptive freezing; set mode=aflora");

    std::vector<AblationArm> arms;
    if (kind == "score-variant") {
        for (ScoreVariant v : {ScoreVariant::AbsGrad, ScoreVariant::AbsParamTimesGrad,
                               ScoreVariant::AbsGradOverParam}) {
            AblationArm arm{score_variant_name(v), base};
            arm.config.score_variant = v;
            arms.push_back(std::move(arm));
        }
    } else if (kind == "placement") {
        const std::pair<std::string, SiteMask> placements[] = {
            {"ffn", {false, true}}, {"attn", {true, false}}, {"both", {true, true}}};
        for (const auto& [label, mask] : placements) {
            AblationArm arm{label, base};
            arm.config.pm_trainable_sites = mask;
            arms.push_back(std::move(arm));
        }
    } else if (kind == "pairing") {
        for (PairingMode p : {PairingMode::Independent, PairingMode::Simultaneous}) {
            AblationArm arm{pairing_name(p), base};
            arm.config.pairing = p;
            arms.push_back(std::move(arm));
        }
    } else {
        throw ConfigError("unknown ablation kind '" + kind +
                          "' (expected score-variant|placement|pairing)");
    }
    return arms;
}

int run_train_command(const std::string& config_path) {
    try {
        const ExperimentConfig config = parse_config_file(config_path);
        const std::string root = resolve_output_dir(config.output_dir);
        for (uint64_t seed : config.seeds) {
            RunResult result = execute_run(config, seed);
            const std::string dir =
                config.seeds.size() == 1 ? root
                                         : (fs::path(root) / ("seed" + std::to_string(seed)))
                                               .string();
            write_run_artifacts(result, dir);
            std::cout << "seed " << seed << ": eval_accuracy=" << result.report.eval_accuracy
                      << " artifacts in " << dir << "\n";
        }
        return 0;
    } catch (...) {
        return exit_code_for_current_exception();
    }
}

int run_compare_command(const std::string& config_path, const RunOptions& opts) {
    try {
        const ExperimentConfig base = parse_config_file(config_path);
        const auto modes = parse_compare_modes(base.compare_modes);
        if (modes.size() < 2) throw ConfigError("compare needs at least two compare.modes");

        std::vector<AblationArm> arms;
        for (const auto& [kind, rank] : modes) {
            AblationArm arm{mode_name(kind) + "_r" + std::to_string(rank), base};
            arm.config.mode = kind;
            arm.config.rank = rank;
            arms.push_back(std::move(arm));
        }

        const std::string root = resolve_output_dir(base.output_dir);
        const std::vector<RunResult> results =
            run_arms(arms, base.seeds.front(), opts.parallel_arms);

        std::vector<CompareRow> rows;
        for (size_t i = 0; i < arms.size(); ++i) {
            write_run_artifacts(results[i], (fs::path(root) / arms[i].label).string());
            rows.push_back({arms[i].label, results[i].report.cost.avg_trainable_params,
                            results[i].report.cost.adapter_training_flops,
                            results[i].report.cost.wall_time_seconds});
        }
        fs::create_directories(root);
        write_comparison_csv((fs::path(root) / "comparison.csv").string(), config_hash(base),
                             rows);
        for (const CompareRow& row : rows) {
            std::cout << row.method << ": avg_params=" << row.avg_params
                      << " total_flops=" << row.total_flops << "\n";
        }
        std::cout << "wrote " << (fs::path(root) / "comparison.csv").string() << "\n";
        return 0;
    } catch (...) {
        return exit_code_for_current_exception();
    }
}

int run_ablation_command(const std::string& kind, const std::string& config_path,
                         const RunOptions& opts) {
    try {
        const ExperimentConfig base = parse_config_file(config_path);
        const std::vector<AblationArm> arms = ablation_arms(kind, base);
        const std::string root =
            (fs::path(resolve_output_dir(base.output_dir)) / kind).string();
        const std::vector<RunResult> results =
            run_arms(arms, base.seeds.front(), opts.parallel_arms);

        fs::create_directories(root);
        std::ofstream summary(fs::path(root) / "ablation_summary.csv", std::ios::binary);
        summary << "# config_hash=" << config_hash(base) << "\n";
        summary << "arm,eval_accuracy,avg_trainable_params,n_freeze_events\n";
        for (size_t i = 0; i < arms.size(); ++i) {
            write_run_artifacts(results[i], (fs::path(root) / arms[i].label).string());
            summary << arms[i].label << ',' << results[i].report.eval_accuracy << ','
                    << results[i].report.cost.avg_trainable_params << ','
                    << results[i].report.events.size() << "\n";
            std::cout << arms[i].label << ": eval_accuracy=" << results[i].report.eval_accuracy
                      << "\n";
        }
        std::cout << "wrote " << (fs::path(root) / "ablation_summary.csv").string() << "\n";
        return 0;
    } catch (...) {
        return exit_code_for_current_exception();
    }
}

int run_heatmap_command(const std::string& run_dir) {
    try {
        const fs::path dir(run_dir);
        const LoadedReport loaded = read_report_json((dir / "report.json").string());
        const ShapeSpec spec = shape_from_model_config(model_config(loaded.config),
                                                       loaded.config.task_seq_len,
                                                       loaded.config.batch_size);
        write_heatmap_csv((dir / "heatmap.csv").string(), loaded.config_hash,
                          freeze_heatmap(loaded.events, spec));
        std::cout << "wrote " << (dir / "heatmap.csv").string() << "\n";
        return 0;
    } catch (...) {
        return exit_code_for_current_exception();
    }
}

}  // namespace aflora
