#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aflora/ids.hpp"
#include "aflora/tensor.hpp"

namespace aflora {

enum class ScoreVariant { AbsGrad, AbsParamTimesGrad, AbsGradOverParam };

std::string score_variant_name(ScoreVariant v);
ScoreVariant score_variant_from_name(const std::string& name);

enum class PairingMode { Independent, Simultaneous };

std::string pairing_name(PairingMode p);
PairingMode pairing_from_name(const std::string& name);

// Per-projection-matrix EMA pair: smoothed gradient magnitude and smoothed
// uncertainty, both tracked elementwise over the matrix.
struct ScoreState {
    std::vector<double> ema_i;
    std::vector<double> ema_u;
    double beta1 = 0.85;
    double beta2 = 0.95;
    int64_t step = 0;

    static ScoreState zeros(size_t n, double beta1, double beta2);
};

// Elementwise sensitivity: |g|, |p*g|, or |g| / (|p| + 1e-8).
void score_variant_eval(std::span<const double> param, std::span<const double> grad,
                        ScoreVariant variant, std::span<double> out);

// One smoothing step:
//   I      = variant(param, grad)
//   ema_i <- beta1 * ema_i + (1 - beta1) * I
//   U      = |I - ema_i|
//   ema_u <- beta2 * ema_u + (1 - beta2) * U
void update_score_state(ScoreState& state, std::span<const double> grad,
                        std::span<const double> param, ScoreVariant variant);

// Scalar freezing score: mean(ema_i o ema_u). Requires at least one update.
double freezing_score(const ScoreState& state);

// Cubic freezing-fraction schedule over optimizer steps.
class FreezeSchedule {
  public:
    // Requires 0 <= t_i < total - t_f <= total.
    FreezeSchedule(int64_t t_i, int64_t t_f, int64_t total_steps);

    int64_t t_i() const { return t_i_; }
    int64_t t_f() const { return t_f_; }
    int64_t total_steps() const { return total_; }
    int64_t plateau_start() const { return total_ - t_f_; }

    // 0 before t_i, 1 - (1 - (t - t_i)/(T - t_i - t_f))^3 on the ramp,
    // 1 from T - t_f on.
    double fraction(int64_t t) const;

  private:
    int64_t t_i_;
    int64_t t_f_;
    int64_t total_;
};

struct FreezeEvent {
    int64_t step = 0;
    PmId id;
    double score_at_freeze = 0.0;
};

// One projection matrix under the controller's watch. `param` shares storage
// with the owning adapter layer; `on_freeze` flips the layer's trainability.
struct TrackedPm {
    PmId id;
    Tensor param;
    std::function<void(int64_t step)> on_freeze;
};

// Rank-and-freeze policy: every step, freeze the lowest-scored unfrozen PMs
// until floor(r(t) * N_eligible) are frozen. Ties break on structural id.
// In simultaneous pairing, each adapter's A/B pair freezes as one unit and
// both the target and N_eligible count pairs.
class FreezeController {
  public:
    FreezeController(std::vector<TrackedPm> tracked, FreezeSchedule schedule,
                     ScoreVariant variant, PairingMode pairing,
                     double beta1 = 0.85, double beta2 = 0.95);

    // EMA update for every unfrozen tracked PM from its current grad buffer.
    void update_scores();

    // Applies the schedule at step t; returns the ids frozen by this call.
    std::vector<PmId> apply_freezing(int64_t t);

    int64_t n_eligible() const;  // units: PMs, or pairs in simultaneous mode
    int64_t frozen_unit_count() const;
    int64_t frozen_pm_count() const;
    bool all_frozen() const;

    const FreezeSchedule& schedule() const { return schedule_; }
    const std::vector<FreezeEvent>& events() const { return events_; }

    // Fraction of tracked PMs currently frozen, per (site, matrix); used for
    // the per-step FLOPs records. Sites with no tracked PM report 0.
    std::array<double, 6> frozen_fraction_by_site(PmMatrix matrix) const;

    double last_score(const PmId& id) const;

  private:
    struct Entry {
        PmId id;
        Tensor param;
        std::function<void(int64_t)> on_freeze;
        ScoreState state;
        bool frozen = false;
        double last_score = 0.0;
    };

    double entry_score(const Entry& e) const;
    void freeze_entry(Entry& e, int64_t t);

    std::vector<Entry> entries_;
    FreezeSchedule schedule_;
    ScoreVariant variant_;
    PairingMode pairing_;
    std::vector<FreezeEvent> events_;
};

}  // namespace aflora
