#include "aflora/freezing.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "aflora/errors.hpp"

namespace aflora {

std::string score_variant_name(ScoreVariant v) {
    switch (v) {
        case ScoreVariant::AbsGrad: return "abs_grad";
        case ScoreVariant::AbsParamTimesGrad: return "abs_param_times_grad";
        case ScoreVariant::AbsGradOverParam: return "abs_grad_over_param";
    }
    throw ContractError("score_variant_name: bad variant");
}

ScoreVariant score_variant_from_name(const std::string& name) {
    if (name == "abs_grad") return ScoreVariant::AbsGrad;
    if (name == "abs_param_times_grad") return ScoreVariant::AbsParamTimesGrad;
    if (name == "abs_grad_over_param") return ScoreVariant::AbsGradOverParam;
    throw ConfigError("unknown score variant '" + name + "'");
}

std::string pairing_name(PairingMode p) {
    return p == PairingMode::Independent ? "independent" : "simultaneous";
}

PairingMode pairing_from_name(const std::string& name) {
    if (name == "independent") return PairingMode::Independent;
    if (name == "simultaneous") return PairingMode::Simultaneous;
    throw ConfigError("unknown pairing mode '" + name + "'");
}

ScoreState ScoreState::zeros(size_t n, double beta1, double beta2) {
    ScoreState s;
    s.ema_i.assign(n, 0.0);
    s.ema_u.assign(n, 0.0);
    s.beta1 = beta1;
    s.beta2 = beta2;
    return s;
}

void score_variant_eval(std::span<const double> param, std::span<const double> grad,
                        ScoreVariant variant, std::span<double> out) {
    if (param.size() != grad.size() || out.size() != grad.size()) {
        throw DimensionError("score_variant_eval: size mismatch (param " +
                             std::to_string(param.size()) + ", grad " +
                             std::to_string(grad.size()) + ")");
    }
    constexpr double eps = 1e-8;  // guards |g|/|p| against p = 0
    switch (variant) {
        case ScoreVariant::AbsGrad:
            for (size_t i = 0; i < grad.size(); ++i) out[i] = std::abs(grad[i]);
            break;
        case ScoreVariant::AbsParamTimesGrad:
            for (size_t i = 0; i < grad.size(); ++i) out[i] = std::abs(param[i] * grad[i]);
            break;
        case ScoreVariant::AbsGradOverParam:
            for (size_t i = 0; i < grad.size(); ++i)
                out[i] = std::abs(grad[i]) / (std::abs(param[i]) + eps);
            break;
    }
}

void update_score_state(ScoreState& state, std::span<const double> grad,
                        std::span<const double> param, ScoreVariant variant) {
    if (grad.size() != state.ema_i.size()) {
        throw DimensionError("update_score_state: grad size " + std::to_string(grad.size()) +
                             " != tracked size " + std::to_string(state.ema_i.size()));
    }
    std::vector<double> sens(grad.size());
    score_variant_eval(param, grad, variant, sens);
    for (size_t i = 0; i < sens.size(); ++i) {
        state.ema_i[i] = state.beta1 * state.ema_i[i] + (1.0 - state.beta1) * sens[i];
        const double uncertainty = std::abs(sens[i] - state.ema_i[i]);
        state.ema_u[i] = state.beta2 * state.ema_u[i] + (1.0 - state.beta2) * uncertainty;
    }
    ++state.step;
}

double freezing_score(const ScoreState& state) {
    if (state.step == 0) throw ContractError("freezing_score: state never updated");
    if (state.ema_i.empty()) throw ContractError("freezing_score: empty state");
    double acc = 0.0;
    for (size_t i = 0; i < state.ema_i.size(); ++i) acc += state.ema_i[i] * state.ema_u[i];
    return acc / static_cast<double>(state.ema_i.size());
}

FreezeSchedule::FreezeSchedule(int64_t t_i, int64_t t_f, int64_t total_steps)
    : t_i_(t_i), t_f_(t_f), total_(total_steps) {
    if (!(0 <= t_i_ && t_i_ < total_ - t_f_ && total_ - t_f_ <= total_)) {
        throw ScheduleError("infeasible freeze schedule: need 0 <= t_i < T - t_f <= T, got t_i=" +
                          std::to_string(t_i_) + " t_f=" + std::to_string(t_f_) +
                          " T=" + std::to_string(total_));
    }
}

double FreezeSchedule::fraction(int64_t t) const {
    if (t < 0 || t > total_) {
        throw ContractError("freeze fraction queried at step " + std::to_string(t) +
                            " outside [0, " + std::to_string(total_) + "]");
    }
    if (t < t_i_) return 0.0;
    if (t >= total_ - t_f_) return 1.0;
    const double progress =
        static_cast<double>(t - t_i_) / static_cast<double>(total_ - t_i_ - t_f_);
    const double rem = 1.0 - progress;
    return 1.0 - rem * rem * rem;
}

FreezeController::FreezeController(std::vector<TrackedPm> tracked, FreezeSchedule schedule,
                                   ScoreVariant variant, PairingMode pairing, double beta1,
                                   double beta2)
    : schedule_(schedule), variant_(variant), pairing_(pairing) {
    entries_.reserve(tracked.size());
    for (auto& pm : tracked) {
        Entry e;
        e.id = pm.id;
        e.param = pm.param;
        e.on_freeze = std::move(pm.on_freeze);
        e.state = ScoreState::zeros(static_cast<size_t>(e.param.size()), beta1, beta2);
        entries_.push_back(std::move(e));
    }
    std::sort(entries_.begin(), entries_.end(),
              [](const Entry& l, const Entry& r) { return l.id < r.id; });
    if (pairing_ == PairingMode::Simultaneous && entries_.size() % 2 != 0) {
        throw ContractError("simultaneous pairing needs complete A/B pairs");
    }
}

void FreezeController::update_scores() {
    for (Entry& e : entries_) {
        if (e.frozen) continue;  // frozen PMs no longer receive gradients
        update_score_state(e.state, e.param.grad(), e.param.values(), variant_);
        e.last_score = freezing_score(e.state);
    }
}

double FreezeController::entry_score(const Entry& e) const { return freezing_score(e.state); }

void FreezeController::freeze_entry(Entry& e, int64_t t) {
    e.frozen = true;
    e.last_score = entry_score(e);
    e.on_freeze(t);
    events_.push_back({t, e.id, e.last_score});
}

std::vector<PmId> FreezeController::apply_freezing(int64_t t) {
    std::vector<PmId> newly_frozen;
    const double frac = schedule_.fraction(t);

    if (pairing_ == PairingMode::Independent) {
        const int64_t target =
            static_cast<int64_t>(std::floor(frac * static_cast<double>(entries_.size())));
        int64_t need = target - frozen_unit_count();
        if (need <= 0) return newly_frozen;

        std::vector<Entry*> candidates;
        for (Entry& e : entries_)
            if (!e.frozen) candidates.push_back(&e);
        std::sort(candidates.begin(), candidates.end(), [this](Entry* l, Entry* r) {
            const double ls = entry_score(*l), rs = entry_score(*r);
            if (ls != rs) return ls < rs;
            return l->id < r->id;
        });
        for (int64_t i = 0; i < need; ++i) {
            freeze_entry(*candidates[static_cast<size_t>(i)], t);
            newly_frozen.push_back(candidates[static_cast<size_t>(i)]->id);
        }
        return newly_frozen;
    }

    // Simultaneous: units are (block, site) pairs scored by the mean of the
    // member scores.
    std::map<LayerId, std::vector<Entry*>> pairs;
    for (Entry& e : entries_) pairs[{e.id.block, e.id.site}].push_back(&e);
    const int64_t n_pairs = static_cast<int64_t>(pairs.size());
    const int64_t target = static_cast<int64_t>(std::floor(frac * static_cast<double>(n_pairs)));
    int64_t frozen_pairs = 0;
    for (const auto& [lid, members] : pairs)
        if (members.front()->frozen) ++frozen_pairs;
    int64_t need = target - frozen_pairs;
    if (need <= 0) return newly_frozen;

    std::vector<std::pair<LayerId, std::vector<Entry*>>> candidates;
    for (auto& [lid, members] : pairs)
        if (!members.front()->frozen) candidates.emplace_back(lid, members);
    std::sort(candidates.begin(), candidates.end(), [this](const auto& l, const auto& r) {
        auto mean_score = [this](const std::vector<Entry*>& m) {
            double acc = 0.0;
            for (Entry* e : m) acc += entry_score(*e);
            return acc / static_cast<double>(m.size());
        };
        const double ls = mean_score(l.second), rs = mean_score(r.second);
        if (ls != rs) return ls < rs;
        return l.first < r.first;
    });
    for (int64_t i = 0; i < need; ++i) {
        for (Entry* e : candidates[static_cast<size_t>(i)].second) {
            freeze_entry(*e, t);
            newly_frozen.push_back(e->id);
        }
    }
    return newly_frozen;
}

int64_t FreezeController::n_eligible() const {
    if (pairing_ == PairingMode::Independent) return static_cast<int64_t>(entries_.size());
    std::map<LayerId, int> pairs;
    for (const Entry& e : entries_) pairs[{e.id.block, e.id.site}] = 1;
    return static_cast<int64_t>(pairs.size());
}

int64_t FreezeController::frozen_unit_count() const {
    if (pairing_ == PairingMode::Independent) return frozen_pm_count();
    std::map<LayerId, bool> pairs;
    for (const Entry& e : entries_) pairs[{e.id.block, e.id.site}] = e.frozen;
    int64_t count = 0;
    for (const auto& [lid, frozen] : pairs) count += frozen ? 1 : 0;
    return count;
}

int64_t FreezeController::frozen_pm_count() const {
    int64_t count = 0;
    for (const Entry& e : entries_) count += e.frozen ? 1 : 0;
    return count;
}

bool FreezeController::all_frozen() const {
    return frozen_pm_count() == static_cast<int64_t>(entries_.size());
}

std::array<double, 6> FreezeController::frozen_fraction_by_site(PmMatrix matrix) const {
    std::array<double, 6> frozen{};
    std::array<double, 6> total{};
    for (const Entry& e : entries_) {
        if (e.id.matrix != matrix) continue;
        const size_t s = static_cast<size_t>(e.id.site);
        total[s] += 1.0;
        if (e.frozen) frozen[s] += 1.0;
    }
    std::array<double, 6> out{};
    for (size_t s = 0; s < 6; ++s) out[s] = total[s] > 0.0 ? frozen[s] / total[s] : 0.0;
    return out;
}

double FreezeController::last_score(const PmId& id) const {
    for (const Entry& e : entries_)
        if (e.id == id) return e.last_score;
    throw ContractError("last_score: unknown PM " + pm_id_str(id));
}

}  // namespace aflora
