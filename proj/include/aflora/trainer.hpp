#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "aflora/accounting.hpp"
#include "aflora/dataset.hpp"
#include "aflora/freezing.hpp"
#include "aflora/model.hpp"

namespace aflora {

struct TrainConfig {
    int64_t epochs = 10;
    int64_t batch_size = 4;
    uint64_t seed = 42;

    double lr = 1e-2;       // adapters
    double clf_lr = 5e-3;   // classification head
    double weight_decay = 0.0;
    double warmup_fraction = 0.06;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    // converted to steps with the run's steps-per-epoch
    double t_i_epochs = 1.0;
    double t_f_epochs = 7.0;

    double score_beta1 = 0.85;
    double score_beta2 = 0.95;
    ScoreVariant score_variant = ScoreVariant::AbsGrad;
    PairingMode pairing = PairingMode::Independent;

    // Observation hook, called after each optimizer step. Used by invariant
    // checks (e.g. frozen weights never move); never part of any artifact.
    std::function<void(const TransformerModel& model, int64_t step)> on_step;
};

// One optimizer step. trainable_param_count covers the adapters only (the
// head is accounted separately); n_frozen_pms counts individual matrices.
struct StepRecord {
    int64_t step = 0;
    int64_t epoch = 0;
    double loss = 0.0;
    int64_t trainable_param_count = 0;
    int64_t n_frozen_pms = 0;
    double adapter_flops_this_step = 0.0;
};

struct ExperimentReport {
    int64_t total_steps = 0;
    int64_t steps_per_epoch = 0;
    int64_t t_i_steps = 0;
    int64_t t_f_steps = 0;
    int64_t n_eligible_pms = 0;
    std::vector<StepRecord> records;
    std::vector<FreezeEvent> events;
    double final_loss = 0.0;
    double train_accuracy = 0.0;
    double eval_accuracy = 0.0;
    CostReport cost;
};

// Runs epochs * ceil(n/batch) steps, each one forward -> loss -> backward ->
// score update -> freeze application -> optimizer step. Throws ScheduleError
// when the freeze window cannot fit the run.
ExperimentReport train(TransformerModel& model, const Dataset& train_data,
                       const Dataset& eval_data, const TrainConfig& config);

// Argmax accuracy over the dataset, batched in natural order. Pure: no
// gradient or parameter side effects.
double evaluate(const TransformerModel& model, const Dataset& data, int64_t batch_size);

}  // namespace aflora
