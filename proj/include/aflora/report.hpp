#pragma once

#include <string>
#include <vector>

#include "aflora/accounting.hpp"
#include "aflora/config.hpp"
#include "aflora/trainer.hpp"

namespace aflora {

// Artifact writers. Every file starts with (or embeds) the config hash so
// artifacts from different configurations cannot be mixed silently. All
// output is UTF-8 with LF line endings and full-precision doubles, and
// contains nothing nondeterministic (wall time stays out of report.json; the
// comparison table is the one place it appears).

void write_report_json(const std::string& path, const ExperimentConfig& config,
                       const std::string& hash, const ExperimentReport& report);

void write_steps_csv(const std::string& path, const std::string& hash,
                     const std::vector<StepRecord>& records);

void write_freeze_events_csv(const std::string& path, const std::string& hash,
                             const std::vector<FreezeEvent>& events);

void write_heatmap_csv(const std::string& path, const std::string& hash,
                       const HeatmapGrid& grid);

struct CompareRow {
    std::string method;
    double avg_params = 0.0;
    double total_flops = 0.0;
    double wall_seconds = 0.0;
};

// First row is the reference: its normalized columns are 1 by construction.
void write_comparison_csv(const std::string& path, const std::string& hash,
                          const std::vector<CompareRow>& rows);

// Enough of report.json to rebuild derived artifacts (the heatmap command).
struct LoadedReport {
    ExperimentConfig config;
    std::string config_hash;
    std::vector<FreezeEvent> events;
};

LoadedReport read_report_json(const std::string& path);

}  // namespace aflora
