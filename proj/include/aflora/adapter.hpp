#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "aflora/ids.hpp"
#include "aflora/rng.hpp"
#include "aflora/tensor.hpp"

namespace aflora {

enum class ModeKind { LoRA, ELoRA, AFLoRA };

std::string mode_name(ModeKind m);
ModeKind mode_from_name(const std::string& name);

struct SiteMask {
    bool attention = false;
    bool ffn = false;

    bool contains(SiteKind kind) const {
        return kind == SiteKind::Attention ? attention : ffn;
    }
    bool operator==(const SiteMask&) const = default;
};

// Operating mode of the adapter path.
//  LoRA:   projection matrices trainable forever, vectors pinned at 1.
//  ELoRA:  projection matrices frozen at random init, vectors trainable.
//  AFLoRA: projection matrices start trainable at pm_trainable sites and are
//          adaptively frozen; at other sites they stay frozen at random init.
struct AdapterMode {
    ModeKind kind = ModeKind::AFLoRA;
    int rank = 4;
    SiteMask pm_trainable{.attention = false, .ffn = true};

    bool vectors_trainable() const { return kind != ModeKind::LoRA; }
    bool operator==(const AdapterMode&) const = default;
};

// One adapted linear site: frozen backbone weight plus the low-rank path
// y = w0 x + diag(vec_b) b diag(vec_d) a x.
struct AdapterLayer {
    LayerId id;
    Tensor w0;     // [d_out x d_in], frozen
    Tensor a;      // [r x d_in] down-projection
    Tensor b;      // [d_out x r] up-projection
    Tensor vec_d;  // [r]
    Tensor vec_b;  // [d_out]
    bool has_vectors = true;   // false in LoRA mode (vectors pinned at 1)
    bool pm_eligible = false;  // configured trainable at start, so subject to freezing
    std::optional<int64_t> freeze_step_a;
    std::optional<int64_t> freeze_step_b;

    int64_t d_in() const { return w0.shape()[1]; }
    int64_t d_out() const { return w0.shape()[0]; }
    int64_t rank() const { return a.shape()[0]; }

    bool frozen_a() const { return !a.requires_grad(); }
    bool frozen_b() const { return !b.requires_grad(); }

    // Freezing changes trainability, never data.
    void freeze_a(int64_t step);
    void freeze_b(int64_t step);
};

// Builds one adapter layer. Draw order is fixed (w0, a, b) so a fixed seed
// reproduces the layer bit for bit.
AdapterLayer adapter_init(int64_t d_in, int64_t d_out, const AdapterMode& mode, LayerId id,
                          SeededRng& rng);

// Eq.-style forward through one site: w0 x + diag(vec_b) b diag(vec_d) a x.
Tensor adapter_forward(const AdapterLayer& layer, const Tensor& x);

// Oracle: materializes diag(vec_b) b diag(vec_d) a with plain loops, off the
// graph, so tests can compare (w0 + delta) x against adapter_forward.
Tensor effective_delta(const AdapterLayer& layer);

// Element count of the components currently carrying requires_grad.
int64_t trainable_param_count(const AdapterLayer& layer);

}  // namespace aflora
