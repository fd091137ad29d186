#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "aflora/adapter.hpp"
#include "aflora/freezing.hpp"
#include "aflora/rng.hpp"
#include "aflora/tensor.hpp"

namespace aflora {

// Desk-scale encoder dimensions plus the adapter mode. Defaults are small
// enough for CI while still exercising all six adapted sites per block.
struct ModelConfig {
    int64_t n_blocks = 2;
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t d_ffn = 256;
    int64_t vocab_size = 32;
    int64_t max_seq_len = 16;
    int64_t n_classes = 2;
    AdapterMode mode;

    // Throws ConfigError on non-positive extents or d_model % n_heads != 0.
    void validate() const;
};

// One pre-norm encoder block. Every linear map is an AdapterLayer; the layer
// norms are frozen backbone parameters.
struct TransformerBlock {
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;
    AdapterLayer q, k, v, o;
    AdapterLayer ffn_inter, ffn_out;

    AdapterLayer& site(Site s);
    const AdapterLayer& site(Site s) const;
};

struct TransformerModel {
    ModelConfig config;
    Tensor embedding;  // [vocab x d_model], frozen
    Tensor positional;  // [d_model x max_seq], frozen
    std::vector<TransformerBlock> blocks;
    Tensor ln_f_gamma, ln_f_beta;  // final norm before the head, frozen
    Tensor head_w;  // [n_classes x d_model], trainable
    Tensor head_b;  // [n_classes], trainable
};

// Deterministic construction: one fixed draw order over all tensors, so a
// seed pins every parameter bit-for-bit.
TransformerModel build_model(const ModelConfig& config, SeededRng& rng);

// tokens is batch-major ([b*seq + s] indexing), every value < vocab_size.
// Returns logits [batch x n_classes] with gradient flow to every trainable
// component.
Tensor model_forward(const TransformerModel& model, const std::vector<int>& tokens,
                     int64_t batch, int64_t seq);

// One projection matrix of one adapter, in enumeration order.
struct PmRef {
    PmId id;
    Tensor param;
    bool eligible = false;  // subject to adaptive freezing
    std::function<void(int64_t step)> on_freeze;
};

// All PMs in the stable order block asc, site (q,k,v,o,inter,out), A before
// B. The on_freeze callbacks point into `model`, which must stay alive and
// unmoved while they are used.
std::vector<PmRef> enumerate_pms(TransformerModel& model);

// Eligible PMs only, wrapped for the freeze controller.
std::vector<TrackedPm> eligible_tracked_pms(TransformerModel& model);

// Sum of the adapters' currently trainable parameters; the head is counted
// separately because the cost accounting excludes it.
int64_t adapter_trainable_param_count(const TransformerModel& model);
int64_t head_param_count(const TransformerModel& model);

// Every trainable tensor (adapters + head), for the optimizer. Handles are
// shared with the model, so later freezes are visible through them.
std::vector<Tensor> adapter_parameters(const TransformerModel& model);
std::vector<Tensor> head_parameters(const TransformerModel& model);

}  // namespace aflora
