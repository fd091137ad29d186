#include "aflora/optim.hpp"

#include <cmath>

#include "aflora/errors.hpp"

namespace aflora {

double lr_at(int64_t step, int64_t total, double base_lr, double warmup_fraction) {
    if (step < 0 || step > total) {
        throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total) + "]");
    }
    const double warmup = warmup_fraction * static_cast<double>(total);
    if (warmup > 0.0 && static_cast<double>(step) < warmup)
        return base_lr * static_cast<double>(step) / warmup;
    if (total == 0) return 0.0;
    const double remain = static_cast<double>(total - step) / (static_cast<double>(total) - warmup);
    return base_lr * remain;
}

AdamW::AdamW(std::vector<Group> groups, double beta1, double beta2, double eps,
             double weight_decay)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {}

void AdamW::step(double lr_scale) {
    for (Group& group : groups_) {
        const double lr = group.base_lr * lr_scale;
        for (Tensor& param : group.params) {
            if (!param.requires_grad()) {
                state_.erase(param.node());  // frozen: state can never be used again
                continue;
            }
            if (!param.has_grad()) {
                throw ContractError("optimizer step: trainable parameter of shape " +
                                    shape_str(param.shape()) + " has no gradient");
            }
            Moments& mom = state_[param.node()];
            const size_t n = static_cast<size_t>(param.size());
            if (mom.m.size() != n) {
                mom.m.assign(n, 0.0);
                mom.v.assign(n, 0.0);
            }
            ++mom.t;
            const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(mom.t));
            const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(mom.t));

            auto g = param.grad();
            auto w = param.values_mut();
            for (size_t i = 0; i < n; ++i) {
                mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g[i];
                mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g[i] * g[i];
                const double m_hat = mom.m[i] / bc1;
                const double v_hat = mom.v[i] / bc2;
                w[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * w[i]);
            }
        }
    }
}

void AdamW::zero_grad() {
    for (Group& group : groups_)
        for (Tensor& param : group.params)
            if (param.requires_grad()) param.zero_grad();
}

bool AdamW::has_state(const Tensor& param) const {
    return state_.find(param.node()) != state_.end();
}

}  // namespace aflora
