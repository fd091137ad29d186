#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aflora/adapter.hpp"
#include "aflora/dataset.hpp"
#include "aflora/freezing.hpp"
#include "aflora/model.hpp"

namespace aflora {

// Complete description of an experiment. A run is reproducible from this
// struct alone; every field has a flat key=value spelling documented in the
// README and round-trips through serialize_config/parse_config.
struct ExperimentConfig {
    int64_t version = 1;
    std::vector<uint64_t> seeds{42};
    std::string output_dir = "runs/default";

    ModeKind mode = ModeKind::AFLoRA;
    int64_t rank = 4;
    SiteMask pm_trainable_sites{false, true};  // ffn only by default

    // model geometry
    int64_t n_blocks = 2;
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t d_ffn = 256;
    int64_t vocab_size = 32;
    int64_t max_seq_len = 16;
    int64_t n_classes = 2;

    // optimization
    int64_t epochs = 10;
    int64_t batch_size = 4;
    double lr = 1e-2;
    double clf_lr = 5e-3;
    double weight_decay = 0.0;
    double warmup_fraction = 0.06;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // freezing
    double t_i_epochs = 1.0;
    double t_f_epochs = -1.0;  // auto: 0.7 * epochs
    double score_beta1 = 0.85;
    double score_beta2 = 0.95;
    ScoreVariant score_variant = ScoreVariant::AbsGrad;
    PairingMode pairing = PairingMode::Independent;

    // data
    TaskKind task_kind = TaskKind::Parity;
    int64_t task_n_train = 2000;
    int64_t task_n_eval = 128;
    int64_t task_seq_len = 2;
    int64_t task_vocab = 32;
    uint64_t task_seed = 1234;
    std::string task_csv_path;
    std::string task_eval_csv_path;

    // comparison runs ("kind:rank" entries, first is the reference)
    std::string compare_modes = "lora:8,elora:64,aflora:4";

    double resolved_t_f_epochs() const {
        return t_f_epochs >= 0.0 ? t_f_epochs : 0.7 * static_cast<double>(epochs);
    }

    bool operator==(const ExperimentConfig&) const = default;
};

// key=value lines, '#' comments, unknown keys rejected. Errors carry the
// 1-based line (and file name for the file variant).
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Canonical form: every key in a fixed order, doubles at full precision.
// parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

// FNV-1a over the canonical serialization, as 16 hex digits. Stamped into
// every artifact so mixed outputs are detectable.
std::string config_hash(const ExperimentConfig& config);

// Views into the config for the library modules.
AdapterMode adapter_mode(const ExperimentConfig& config);
ModelConfig model_config(const ExperimentConfig& config);
TaskSpec task_spec(const ExperimentConfig& config);

// "lora:8,elora:64,aflora:4" -> ordered (kind, rank) list; rejects empty or
// malformed entries.
std::vector<std::pair<ModeKind, int64_t>> parse_compare_modes(const std::string& value);

}  // namespace aflora
