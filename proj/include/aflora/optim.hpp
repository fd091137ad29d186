#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "aflora/tensor.hpp"

namespace aflora {

// Linear warmup from 0 to base_lr over warmup_fraction * total steps, then
// linear decay to 0 at step == total.
double lr_at(int64_t step, int64_t total, double base_lr, double warmup_fraction);

// Adaptive-moment optimizer with decoupled weight decay. Parameters are held
// as shared handles; a parameter whose requires_grad has been switched off is
// skipped and its moment state discarded (it can never train again).
class AdamW {
  public:
    struct Group {
        std::vector<Tensor> params;
        double base_lr = 1e-3;
    };

    AdamW(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8, double weight_decay = 0.0);

    // One update over every still-trainable parameter. lr_scale multiplies
    // each group's base_lr (the trainer passes the warmup/decay factor).
    // Throws ContractError if a trainable parameter has no gradient.
    void step(double lr_scale);

    void zero_grad();

    // Whether moment buffers exist for this parameter (testing hook for the
    // discard-on-freeze contract).
    bool has_state(const Tensor& param) const;

  private:
    struct Moments {
        std::vector<double> m;
        std::vector<double> v;
        int64_t t = 0;  // per-parameter update count for bias correction
    };

    std::vector<Group> groups_;
    double beta1_, beta2_, eps_, weight_decay_;
    std::unordered_map<const detail::Node*, Moments> state_;
};

}  // namespace aflora
