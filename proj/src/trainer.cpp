#include "aflora/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "aflora/errors.hpp"
#include "aflora/optim.hpp"

namespace aflora {

namespace {

struct Batch {
    std::vector<int> tokens;
    std::vector<int> labels;
    int64_t size = 0;
};

Batch gather_batch(const Dataset& data, const std::vector<int64_t>& order, int64_t begin,
                   int64_t end) {
    Batch b;
    b.size = end - begin;
    b.tokens.reserve(static_cast<size_t>(b.size * data.seq_len));
    b.labels.reserve(static_cast<size_t>(b.size));
    for (int64_t i = begin; i < end; ++i) {
        const auto& seq = data.tokens[static_cast<size_t>(order[static_cast<size_t>(i)])];
        b.tokens.insert(b.tokens.end(), seq.begin(), seq.end());
        b.labels.push_back(data.labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);
    }
    return b;
}

FrozenFractions current_frozen_fractions(const ShapeSpec& spec, const FreezeController& ctl) {
    FrozenFractions frozen = initial_frozen_fractions(spec);
    const auto ctl_a = ctl.frozen_fraction_by_site(PmMatrix::A);
    const auto ctl_b = ctl.frozen_fraction_by_site(PmMatrix::B);
    for (size_t i = 0; i < 6; ++i) {
        frozen.a[i] = std::max(frozen.a[i], ctl_a[i]);
        frozen.b[i] = std::max(frozen.b[i], ctl_b[i]);
    }
    return frozen;
}

}  // namespace

ExperimentReport train(TransformerModel& model, const Dataset& train_data,
                       const Dataset& eval_data, const TrainConfig& config) {
    if (train_data.size() == 0) throw ConfigError("training dataset is empty");
    if (train_data.seq_len > model.config.max_seq_len)
        throw ConfigError("task seq_len " + std::to_string(train_data.seq_len) +
                          " exceeds model.max_seq_len " +
                          std::to_string(model.config.max_seq_len));

    const int64_t n = train_data.size();
    const int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const int64_t total_steps = config.epochs * steps_per_epoch;
    const int64_t t_i = std::llround(config.t_i_epochs * static_cast<double>(steps_per_epoch));
    const int64_t t_f = std::llround(config.t_f_epochs * static_cast<double>(steps_per_epoch));
    FreezeSchedule schedule(t_i, t_f, total_steps);

    FreezeController controller(eligible_tracked_pms(model), schedule, config.score_variant,
                                config.pairing, config.score_beta1, config.score_beta2);

    AdamW optimizer({{adapter_parameters(model), config.lr},
                     {head_parameters(model), config.clf_lr}},
                    config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay);

    const ShapeSpec spec = shape_from_model_config(model.config, train_data.seq_len,
                                                   config.batch_size);
    const double fwd_per_token = forward_flops_per_token(spec);

    ExperimentReport report;
    report.total_steps = total_steps;
    report.steps_per_epoch = steps_per_epoch;
    report.t_i_steps = t_i;
    report.t_f_steps = t_f;
    for (const PmRef& ref : enumerate_pms(model))
        if (ref.eligible) ++report.n_eligible_pms;
    report.records.reserve(static_cast<size_t>(total_steps));

    SeededRng base_rng(config.seed);
    SeededRng order_rng = base_rng.fork(1);
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    const auto started = std::chrono::steady_clock::now();
    double adapter_flops_total = 0.0;
    double tokens_total = 0.0;

    int64_t step = 0;
    for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (int64_t begin = 0; begin < n; begin += config.batch_size, ++step) {
            const int64_t end = std::min(n, begin + config.batch_size);
            const Batch batch = gather_batch(train_data, order, begin, end);

            optimizer.zero_grad();
            Tensor logits = model_forward(model, batch.tokens, batch.size, train_data.seq_len);
            Tensor loss = softmax_cross_entropy(logits, batch.labels);
            loss.backward();

            controller.update_scores();
            controller.apply_freezing(step);
            optimizer.step(lr_at(step, total_steps, 1.0, config.warmup_fraction));

            const double tokens = static_cast<double>(batch.size * train_data.seq_len);
            const FrozenFractions frozen = current_frozen_fractions(spec, controller);
            const double step_flops =
                tokens * (fwd_per_token + backward_flops_per_token(spec, frozen));
            adapter_flops_total += step_flops;
            tokens_total += tokens;

            report.records.push_back({step, epoch, loss.item(),
                                      adapter_trainable_param_count(model),
                                      controller.frozen_pm_count(), step_flops});
            if (config.on_step) config.on_step(model, step);
        }
    }
    const auto finished = std::chrono::steady_clock::now();

    report.events = controller.events();
    report.final_loss = report.records.empty() ? 0.0 : report.records.back().loss;
    report.train_accuracy = evaluate(model, train_data, config.batch_size);
    report.eval_accuracy = evaluate(model, eval_data, config.batch_size);

    std::vector<int64_t> counts;
    counts.reserve(report.records.size());
    for (const StepRecord& r : report.records) counts.push_back(r.trainable_param_count);

    report.cost.trainable_params_now = static_cast<double>(adapter_trainable_param_count(model));
    report.cost.avg_trainable_params = average_trainable_params(counts);
    report.cost.fwd_flops_per_token = fwd_per_token;
    report.cost.bwd_flops_per_token_initial =
        backward_flops_per_token(spec, initial_frozen_fractions(spec));
    report.cost.bwd_flops_per_token_final =
        backward_flops_per_token(spec, current_frozen_fractions(spec, controller));
    report.cost.adapter_training_flops = adapter_flops_total;
    report.cost.aux_training_flops = aux_flops_per_token(spec) * tokens_total;
    report.cost.wall_time_seconds =
        std::chrono::duration<double>(finished - started).count();
    return report;
}

double evaluate(const TransformerModel& model, const Dataset& data, int64_t batch_size) {
    if (data.size() == 0) throw ContractError("evaluate: empty dataset");
    std::vector<int64_t> order(static_cast<size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);

    int64_t correct = 0;
    for (int64_t begin = 0; begin < data.size(); begin += batch_size) {
        const int64_t end = std::min(data.size(), begin + batch_size);
        const Batch batch = gather_batch(data, order, begin, end);
        Tensor logits = model_forward(model, batch.tokens, batch.size, data.seq_len);
        for (int64_t row = 0; row < batch.size; ++row) {
            int64_t best = 0;
            for (int64_t c = 1; c < logits.cols(); ++c)
                if (logits.at(row, c) > logits.at(row, best)) best = c;
            if (static_cast<int>(best) == batch.labels[static_cast<size_t>(row)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace aflora
