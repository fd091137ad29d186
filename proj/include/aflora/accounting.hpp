#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aflora/adapter.hpp"
#include "aflora/freezing.hpp"
#include "aflora/model.hpp"

namespace aflora {

// Transformer geometry plus adapter mode, enough to cost a configuration
// without constructing any tensors. Ranks larger than the model width are
// allowed here (frozen high-rank adapters are costed, never trained).
struct ShapeSpec {
    int64_t n_blocks = 12;
    int64_t d_model = 768;
    int64_t d_ffn = 3072;
    AdapterMode mode;
    SiteMask adapted{true, true};  // site kinds that carry adapters at all
    int64_t seq_len = 256;
    int64_t batch = 64;

    bool site_adapted(Site s) const { return adapted.contains(site_kind(s)); }
    int64_t d_in(Site s) const { return s == Site::FfnOut ? d_ffn : d_model; }
    int64_t d_out(Site s) const { return s == Site::FfnInter ? d_ffn : d_model; }
};

// 12-block, 768-wide, 3072-ffn encoder geometry (BERT-base class models).
ShapeSpec base_encoder_shape(AdapterMode mode);

ShapeSpec shape_from_model_config(const ModelConfig& config, int64_t seq_len, int64_t batch);

// Fraction of PMs currently frozen at each site, split by matrix; index by
// static_cast<size_t>(Site).
struct FrozenFractions {
    std::array<double, 6> a{};
    std::array<double, 6> b{};
};

// Frozen state right after initialization: LoRA nothing, ELoRA everything,
// AFLoRA the sites whose PMs are configured untrainable.
FrozenFractions initial_frozen_fractions(const ShapeSpec& spec);

// Trainable parameters of the adapter stack (head excluded): per adapted
// site, r*(d_in+d_out) for trainable PMs plus (r+d_out) for the vectors in
// vector-bearing modes.
int64_t analytic_param_count(const ShapeSpec& spec);

// Same sum with partially frozen PMs: each site's A/B terms are scaled by
// the unfrozen fraction. Fractions apply only to sites whose PMs start
// trainable.
double analytic_param_count_with_frozen(const ShapeSpec& spec, const FrozenFractions& frozen);

// Split of the analytic count, used for schedule mapping and reports.
int64_t vector_param_count(const ShapeSpec& spec);
int64_t trainable_pm_param_count(const ShapeSpec& spec);

// Number of PMs subject to adaptive freezing (AFLoRA sites with trainable
// PMs; zero in other modes).
int64_t eligible_pm_count(const ShapeSpec& spec);

// FLOPs per token for one adapted site, 2 per multiply-add. Forward:
// backbone GEMM + both PM GEMMs + the two diagonal scalings + the residual
// add (vector-free modes pay only the add). r = 0 degenerates to the bare
// backbone GEMM.
double site_forward_flops(int64_t d_in, int64_t d_out, int64_t r, bool has_vectors);

// Backward per token: input-gradient GEMMs always (backbone + both PM
// chains), vector terms in vector-bearing modes, weight-gradient GEMMs only
// for unfrozen PMs.
double site_backward_flops(int64_t d_in, int64_t d_out, int64_t r, bool has_vectors,
                           double frozen_a, double frozen_b);

// Per-token totals over all blocks and adapted sites.
double forward_flops_per_token(const ShapeSpec& spec);
double backward_flops_per_token(const ShapeSpec& spec, const FrozenFractions& frozen);

// Layer norms, activations, residual adds and attention mixing, as a coarse
// linear-term model. Reported separately; never part of the method ratios.
double aux_flops_per_token(const ShapeSpec& spec);

// Total adapter-path training FLOPs over schedule.total_steps() steps of
// spec.batch * spec.seq_len tokens. The frozen set at step t is the
// schedule's own target floor(r(t) * N) spread uniformly over eligible PMs.
double total_training_flops(const ShapeSpec& spec, const FreezeSchedule& schedule);

// Exact variant replaying a recorded freeze trace. Throws ContractError when
// the trace contradicts the schedule (event outside [t_i, T - t_f], duplicate
// PM, or a PM that is not eligible under the shape's mode and placement).
double total_training_flops(const ShapeSpec& spec, const FreezeSchedule& schedule,
                            const std::vector<FreezeEvent>& trace);

// Mean of the per-step trainable-parameter counts of a finished run.
double average_trainable_params(std::span<const int64_t> per_step_counts);

// Average trainable parameters the target shape would have had under a
// measured per-step frozen-unit-fraction sequence (vectors stay trainable,
// PM terms scale by the unfrozen fraction).
double mapped_average_params(const ShapeSpec& target, std::span<const double> frozen_fraction);

// Freeze-step grid: one row per adapted (site, matrix) labeled like
// "inter.A", one column per block. Cells hold the freeze step, 0 for
// frozen-at-init PMs and -1 for PMs that never froze.
struct HeatmapGrid {
    std::vector<std::string> row_labels;
    std::vector<std::vector<int64_t>> cells;  // [row][block]
};

HeatmapGrid freeze_heatmap(const std::vector<FreezeEvent>& events, const ShapeSpec& spec);

// Cost summary of one run or one analytic configuration. wall_time_seconds
// is measured when a real run backs the report and is excluded from the
// deterministic JSON artifact.
struct CostReport {
    double trainable_params_now = 0.0;
    double avg_trainable_params = 0.0;
    double fwd_flops_per_token = 0.0;
    double bwd_flops_per_token_initial = 0.0;
    double bwd_flops_per_token_final = 0.0;
    double adapter_training_flops = 0.0;
    double aux_training_flops = 0.0;
    double wall_time_seconds = 0.0;
};

}  // namespace aflora
