#include "aflora/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "aflora/errors.hpp"

namespace aflora {

namespace {

bool pms_trainable_at(const ShapeSpec& spec, Site s) {
    switch (spec.mode.kind) {
        case ModeKind::LoRA: return true;
        case ModeKind::ELoRA: return false;
        case ModeKind::AFLoRA: return spec.mode.pm_trainable.contains(site_kind(s));
    }
    throw ContractError("pms_trainable_at: bad mode");
}

bool has_vectors(const ShapeSpec& spec) { return spec.mode.kind != ModeKind::LoRA; }

}  // namespace

ShapeSpec base_encoder_shape(AdapterMode mode) {
    ShapeSpec spec;
    spec.mode = mode;
    return spec;
}

ShapeSpec shape_from_model_config(const ModelConfig& config, int64_t seq_len, int64_t batch) {
    ShapeSpec spec;
    spec.n_blocks = config.n_blocks;
    spec.d_model = config.d_model;
    spec.d_ffn = config.d_ffn;
    spec.mode = config.mode;
    spec.adapted = {true, true};
    spec.seq_len = seq_len;
    spec.batch = batch;
    return spec;
}

FrozenFractions initial_frozen_fractions(const ShapeSpec& spec) {
    FrozenFractions frozen;
    for (Site s : kAllSites) {
        if (!spec.site_adapted(s)) continue;
        const double f = pms_trainable_at(spec, s) ? 0.0 : 1.0;
        frozen.a[static_cast<size_t>(s)] = f;
        frozen.b[static_cast<size_t>(s)] = f;
    }
    return frozen;
}

int64_t analytic_param_count(const ShapeSpec& spec) {
    int64_t per_block = 0;
    for (Site s : kAllSites) {
        if (!spec.site_adapted(s)) continue;
        if (pms_trainable_at(spec, s))
            per_block += spec.mode.rank * (spec.d_in(s) + spec.d_out(s));
        if (has_vectors(spec)) per_block += spec.mode.rank + spec.d_out(s);
    }
    return spec.n_blocks * per_block;
}

double analytic_param_count_with_frozen(const ShapeSpec& spec, const FrozenFractions& frozen) {
    double per_block = 0.0;
    for (Site s : kAllSites) {
        if (!spec.site_adapted(s)) continue;
        const size_t i = static_cast<size_t>(s);
        if (pms_trainable_at(spec, s)) {
            per_block += (1.0 - frozen.a[i]) * static_cast<double>(spec.mode.rank * spec.d_in(s));
            per_block += (1.0 - frozen.b[i]) * static_cast<double>(spec.mode.rank * spec.d_out(s));
        }
        if (has_vectors(spec)) per_block += static_cast<double>(spec.mode.rank + spec.d_out(s));
    }
    return static_cast<double>(spec.n_blocks) * per_block;
}

int64_t vector_param_count(const ShapeSpec& spec) {
    if (!has_vectors(spec)) return 0;
    int64_t per_block = 0;
    for (Site s : kAllSites)
        if (spec.site_adapted(s)) per_block += spec.mode.rank + spec.d_out(s);
    return spec.n_blocks * per_block;
}

int64_t trainable_pm_param_count(const ShapeSpec& spec) {
    int64_t per_block = 0;
    for (Site s : kAllSites)
        if (spec.site_adapted(s) && pms_trainable_at(spec, s))
            per_block += spec.mode.rank * (spec.d_in(s) + spec.d_out(s));
    return spec.n_blocks * per_block;
}

int64_t eligible_pm_count(const ShapeSpec& spec) {
    if (spec.mode.kind != ModeKind::AFLoRA) return 0;
    int64_t per_block = 0;
    for (Site s : kAllSites)
        if (spec.site_adapted(s) && pms_trainable_at(spec, s)) per_block += 2;
    return spec.n_blocks * per_block;
}

double site_forward_flops(int64_t d_in, int64_t d_out, int64_t r, bool vectors) {
    const double backbone = 2.0 * static_cast<double>(d_in) * static_cast<double>(d_out);
    if (r == 0) return backbone;
    const double pm_path = 2.0 * static_cast<double>(r) * static_cast<double>(d_in + d_out);
    const double tail = vectors ? static_cast<double>(r + 2 * d_out)  // two scalings + add
                                : static_cast<double>(d_out);         // add only
    return backbone + pm_path + tail;
}

double site_backward_flops(int64_t d_in, int64_t d_out, int64_t r, bool vectors, double frozen_a,
                           double frozen_b) {
    const double backbone_dx = 2.0 * static_cast<double>(d_in) * static_cast<double>(d_out);
    if (r == 0) return backbone_dx;
    const double input_grads = 2.0 * static_cast<double>(r) * static_cast<double>(d_in + d_out);
    const double vector_terms = vectors ? static_cast<double>(3 * r + 3 * d_out) : 0.0;
    const double weight_grads =
        (1.0 - frozen_a) * 2.0 * static_cast<double>(r) * static_cast<double>(d_in) +
        (1.0 - frozen_b) * 2.0 * static_cast<double>(r) * static_cast<double>(d_out);
    return backbone_dx + input_grads + vector_terms + weight_grads;
}

double forward_flops_per_token(const ShapeSpec& spec) {
    double per_block = 0.0;
    for (Site s : kAllSites)
        if (spec.site_adapted(s))
            per_block += site_forward_flops(spec.d_in(s), spec.d_out(s), spec.mode.rank,
                                            has_vectors(spec));
    return static_cast<double>(spec.n_blocks) * per_block;
}

double backward_flops_per_token(const ShapeSpec& spec, const FrozenFractions& frozen) {
    double per_block = 0.0;
    for (Site s : kAllSites) {
        if (!spec.site_adapted(s)) continue;
        const size_t i = static_cast<size_t>(s);
        per_block += site_backward_flops(spec.d_in(s), spec.d_out(s), spec.mode.rank,
                                         has_vectors(spec), frozen.a[i], frozen.b[i]);
    }
    return static_cast<double>(spec.n_blocks) * per_block;
}

double aux_flops_per_token(const ShapeSpec& spec) {
    // Coarse linear-term model: two layer norms (~8 flops/element), the FFN
    // activation (~8), two residual adds, and the attention mixing GEMMs plus
    // softmax (~5/score). Reported for completeness only.
    const double d = static_cast<double>(spec.d_model);
    const double ffn = static_cast<double>(spec.d_ffn);
    const double seq = static_cast<double>(spec.seq_len);
    const double per_block = 16.0 * d + 8.0 * ffn + 2.0 * d + 4.0 * d * seq + 5.0 * seq;
    return static_cast<double>(spec.n_blocks) * per_block + d;  // + embedding/position add
}

namespace {

// Shared accumulation: fractions(t) must yield the frozen state in effect
// for step t (events applied through t, matching the trainer's records).
template <typename FracFn>
double accumulate_training_flops(const ShapeSpec& spec, const FreezeSchedule& schedule,
                                 FracFn&& fractions) {
    const double tokens = static_cast<double>(spec.batch) * static_cast<double>(spec.seq_len);
    const double fwd = forward_flops_per_token(spec);
    double total = 0.0;
    for (int64_t t = 0; t < schedule.total_steps(); ++t)
        total += tokens * (fwd + backward_flops_per_token(spec, fractions(t)));
    return total;
}

}  // namespace

double total_training_flops(const ShapeSpec& spec, const FreezeSchedule& schedule) {
    const int64_t n_eligible = eligible_pm_count(spec);
    const FrozenFractions init = initial_frozen_fractions(spec);
    return accumulate_training_flops(spec, schedule, [&](int64_t t) {
        FrozenFractions frozen = init;
        if (n_eligible > 0) {
            const double f =
                std::floor(schedule.fraction(t) * static_cast<double>(n_eligible)) /
                static_cast<double>(n_eligible);
            for (Site s : kAllSites) {
                if (!spec.site_adapted(s) || !pms_trainable_at(spec, s)) continue;
                frozen.a[static_cast<size_t>(s)] = f;
                frozen.b[static_cast<size_t>(s)] = f;
            }
        }
        return frozen;
    });
}

double total_training_flops(const ShapeSpec& spec, const FreezeSchedule& schedule,
                            const std::vector<FreezeEvent>& trace) {
    const int64_t n_eligible = eligible_pm_count(spec);
    if (static_cast<int64_t>(trace.size()) > n_eligible)
        throw ContractError("freeze trace has more events than eligible PMs");

    std::set<PmId> seen;
    for (const FreezeEvent& ev : trace) {
        if (ev.step < schedule.t_i() || ev.step > schedule.plateau_start())
            throw ContractError("freeze event at step " + std::to_string(ev.step) +
                                " outside the schedule window");
        if (ev.id.block < 0 || ev.id.block >= spec.n_blocks || !spec.site_adapted(ev.id.site) ||
            !pms_trainable_at(spec, ev.id.site))
            throw ContractError("freeze event for ineligible PM " + pm_id_str(ev.id));
        if (!seen.insert(ev.id).second)
            throw ContractError("duplicate freeze event for " + pm_id_str(ev.id));
    }

    std::vector<FreezeEvent> events = trace;
    std::stable_sort(events.begin(), events.end(),
                     [](const FreezeEvent& l, const FreezeEvent& r) { return l.step < r.step; });

    // Integer counts per (site, matrix) keep the fractions exact: a fully
    // frozen site reads 1.0 bit for bit, so an all-frozen trace reproduces
    // the frozen-mode total with no rounding drift.
    const FrozenFractions init = initial_frozen_fractions(spec);
    std::array<int64_t, 6> count_a{}, count_b{};
    size_t next = 0;
    return accumulate_training_flops(spec, schedule, [&](int64_t t) {
        while (next < events.size() && events[next].step == t) {
            auto& side = events[next].id.matrix == PmMatrix::A ? count_a : count_b;
            ++side[static_cast<size_t>(events[next].id.site)];
            ++next;
        }
        FrozenFractions frozen = init;
        for (size_t s = 0; s < 6; ++s) {
            if (count_a[s] > 0)
                frozen.a[s] = static_cast<double>(count_a[s]) / static_cast<double>(spec.n_blocks);
            if (count_b[s] > 0)
                frozen.b[s] = static_cast<double>(count_b[s]) / static_cast<double>(spec.n_blocks);
        }
        return frozen;
    });
}

double average_trainable_params(std::span<const int64_t> per_step_counts) {
    if (per_step_counts.empty())
        throw ContractError("average_trainable_params: empty record stream");
    double acc = 0.0;
    for (int64_t c : per_step_counts) acc += static_cast<double>(c);
    return acc / static_cast<double>(per_step_counts.size());
}

double mapped_average_params(const ShapeSpec& target, std::span<const double> frozen_fraction) {
    if (frozen_fraction.empty())
        throw ContractError("mapped_average_params: empty fraction sequence");
    const double vectors = static_cast<double>(vector_param_count(target));
    const double pms = static_cast<double>(trainable_pm_param_count(target));
    double acc = 0.0;
    for (double f : frozen_fraction) acc += vectors + (1.0 - f) * pms;
    return acc / static_cast<double>(frozen_fraction.size());
}

HeatmapGrid freeze_heatmap(const std::vector<FreezeEvent>& events, const ShapeSpec& spec) {
    HeatmapGrid grid;
    std::vector<Site> sites;
    for (Site s : kAllSites) {
        if (!spec.site_adapted(s)) continue;
        sites.push_back(s);
        for (PmMatrix m : {PmMatrix::A, PmMatrix::B})
            grid.row_labels.push_back(site_name(s) + "." + pm_matrix_name(m));
    }

    const int64_t init_sentinel = 0, never_sentinel = -1;
    for (Site s : sites) {
        const bool init_frozen =
            spec.mode.kind == ModeKind::ELoRA ||
            (spec.mode.kind == ModeKind::AFLoRA && !pms_trainable_at(spec, s));
        for (int rep = 0; rep < 2; ++rep)
            grid.cells.emplace_back(static_cast<size_t>(spec.n_blocks),
                                    init_frozen ? init_sentinel : never_sentinel);
    }

    for (const FreezeEvent& ev : events) {
        if (ev.id.block < 0 || ev.id.block >= spec.n_blocks || !spec.site_adapted(ev.id.site))
            throw ContractError("freeze event outside model structure: " + pm_id_str(ev.id));
        const auto row_it = std::find(sites.begin(), sites.end(), ev.id.site);
        const size_t row = 2 * static_cast<size_t>(row_it - sites.begin()) +
                           (ev.id.matrix == PmMatrix::B ? 1 : 0);
        grid.cells[row][static_cast<size_t>(ev.id.block)] = ev.step;
    }
    return grid;
}

}  // namespace aflora
