#include "aflora/adapter.hpp"

#include <algorithm>

#include "aflora/errors.hpp"

namespace aflora {

std::string site_name(Site s) {
    switch (s) {
        case Site::Q: return "q";
        case Site::K: return "k";
        case Site::V: return "v";
        case Site::O: return "o";
        case Site::FfnInter: return "inter";
        case Site::FfnOut: return "out";
    }
    throw ContractError("site_name: bad site");
}

Site site_from_name(const std::string& name) {
    for (Site s : kAllSites)
        if (site_name(s) == name) return s;
    throw ConfigError("unknown site name '" + name + "'");
}

std::string pm_matrix_name(PmMatrix m) { return m == PmMatrix::A ? "A" : "B"; }

std::string pm_id_str(const PmId& id) {
    return "block" + std::to_string(id.block) + "." + site_name(id.site) + "." +
           pm_matrix_name(id.matrix);
}

std::string mode_name(ModeKind m) {
    switch (m) {
        case ModeKind::LoRA: return "lora";
        case ModeKind::ELoRA: return "elora";
        case ModeKind::AFLoRA: return "aflora";
    }
    throw ContractError("mode_name: bad mode");
}

ModeKind mode_from_name(const std::string& name) {
    if (name == "lora") return ModeKind::LoRA;
    if (name == "elora") return ModeKind::ELoRA;
    if (name == "aflora") return ModeKind::AFLoRA;
    throw ConfigError("unknown mode '" + name + "' (expected lora|elora|aflora)");
}

void AdapterLayer::freeze_a(int64_t step) {
    if (frozen_a()) throw ContractError(pm_id_str({id.block, id.site, PmMatrix::A}) + " already frozen");
    a.set_requires_grad(false);
    freeze_step_a = step;
}

void AdapterLayer::freeze_b(int64_t step) {
    if (frozen_b()) throw ContractError(pm_id_str({id.block, id.site, PmMatrix::B}) + " already frozen");
    b.set_requires_grad(false);
    freeze_step_b = step;
}

AdapterLayer adapter_init(int64_t d_in, int64_t d_out, const AdapterMode& mode, LayerId id,
                          SeededRng& rng) {
    const int64_t r = mode.rank;
    if (r < 1) throw ConfigError("adapter rank must be >= 1, got " + std::to_string(r));
    const bool trainable_pm_mode = mode.kind != ModeKind::ELoRA;
    if (trainable_pm_mode && r > std::min(d_in, d_out)) {
        throw ConfigError("rank " + std::to_string(r) + " exceeds min(d_in, d_out) = " +
                          std::to_string(std::min(d_in, d_out)) + " in a trainable-PM mode");
    }

    AdapterLayer layer;
    layer.id = id;
    layer.w0 = init_backbone_uniform(d_out, d_in, d_in, rng);
    layer.a = init_kaiming_uniform(r, d_in, d_in, rng, false);
    layer.b = init_kaiming_uniform(d_out, r, r, rng, false);
    layer.has_vectors = mode.kind != ModeKind::LoRA;

    // vec_d = 0.1 and vec_b = 0 keep the adapted model exactly at the
    // backbone function at step 0. LoRA pins both at 1 and trains the PMs.
    if (layer.has_vectors) {
        layer.vec_d = Tensor::full({r}, 0.1, true);
        layer.vec_b = Tensor::zeros({d_out}, true);
    } else {
        layer.vec_d = Tensor::full({r}, 1.0, false);
        layer.vec_b = Tensor::full({d_out}, 1.0, false);
    }

    switch (mode.kind) {
        case ModeKind::LoRA:
            layer.a.set_requires_grad(true);
            layer.b.set_requires_grad(true);
            layer.pm_eligible = false;  // trainable forever, never freezes
            break;
        case ModeKind::ELoRA:
            layer.freeze_step_a = 0;
            layer.freeze_step_b = 0;
            layer.pm_eligible = false;
            break;
        case ModeKind::AFLoRA:
            if (mode.pm_trainable.contains(site_kind(id.site))) {
                layer.a.set_requires_grad(true);
                layer.b.set_requires_grad(true);
                layer.pm_eligible = true;
            } else {
                // frozen to random values from the start
                layer.freeze_step_a = 0;
                layer.freeze_step_b = 0;
            }
            break;
    }
    return layer;
}

Tensor adapter_forward(const AdapterLayer& layer, const Tensor& x) {
    if (x.shape().size() != 2 || x.shape()[0] != layer.d_in()) {
        throw DimensionError("adapter_forward: input " + shape_str(x.shape()) +
                             " incompatible with w0 " + shape_str(layer.w0.shape()));
    }
    Tensor base = matmul(layer.w0, x);
    Tensor down = scale_by_vector_rows(layer.vec_d, matmul(layer.a, x));
    Tensor up = scale_by_vector_rows(layer.vec_b, matmul(layer.b, down));
    return add(base, up);
}

Tensor effective_delta(const AdapterLayer& layer) {
    const int64_t r = layer.rank(), di = layer.d_in(), dout = layer.d_out();
    Tensor delta = Tensor::zeros({dout, di});
    auto out = delta.values_mut();
    for (int64_t i = 0; i < dout; ++i) {
        for (int64_t j = 0; j < di; ++j) {
            double acc = 0.0;
            for (int64_t kk = 0; kk < r; ++kk)
                acc += layer.b.at(i, kk) * layer.vec_d.at(kk) * layer.a.at(kk, j);
            out[static_cast<size_t>(i * di + j)] = layer.vec_b.at(i) * acc;
        }
    }
    return delta;
}

int64_t trainable_param_count(const AdapterLayer& layer) {
    int64_t count = 0;
    for (const Tensor* t : {&layer.a, &layer.b, &layer.vec_d, &layer.vec_b})
        if (t->requires_grad()) count += t->size();
    return count;
}

}  // namespace aflora
