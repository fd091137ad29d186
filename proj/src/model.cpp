#include "aflora/model.hpp"

#include <string>

#include "aflora/errors.hpp"

namespace aflora {

void ModelConfig::validate() const {
    auto positive = [](int64_t v, const char* name) {
        if (v <= 0) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
    };
    positive(n_blocks, "n_blocks");
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(d_ffn, "d_ffn");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    positive(n_classes, "n_classes");
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                          std::to_string(n_heads));
    }
}

AdapterLayer& TransformerBlock::site(Site s) {
    switch (s) {
        case Site::Q: return q;
        case Site::K: return k;
        case Site::V: return v;
        case Site::O: return o;
        case Site::FfnInter: return ffn_inter;
        case Site::FfnOut: return ffn_out;
    }
    throw ContractError("TransformerBlock::site: bad site");
}

const AdapterLayer& TransformerBlock::site(Site s) const {
    return const_cast<TransformerBlock*>(this)->site(s);
}

TransformerModel build_model(const ModelConfig& config, SeededRng& rng) {
    config.validate();
    TransformerModel m;
    m.config = config;

    // Draw order is part of the reproducibility contract: embedding,
    // positional, then per block the six sites in q,k,v,o,inter,out order
    // (w0, a, b inside each), then the head.
    m.embedding = init_kaiming_uniform(config.vocab_size, config.d_model, config.d_model, rng);
    m.positional = init_kaiming_uniform(config.d_model, config.max_seq_len, config.d_model, rng);

    m.blocks.reserve(static_cast<size_t>(config.n_blocks));
    for (int64_t bi = 0; bi < config.n_blocks; ++bi) {
        TransformerBlock block;
        block.ln1_gamma = Tensor::full({config.d_model}, 1.0);
        block.ln1_beta = Tensor::zeros({config.d_model});
        block.ln2_gamma = Tensor::full({config.d_model}, 1.0);
        block.ln2_beta = Tensor::zeros({config.d_model});
        for (Site s : kAllSites) {
            const bool ffn_in = s == Site::FfnInter;
            const bool ffn_out = s == Site::FfnOut;
            const int64_t d_in = ffn_out ? config.d_ffn : config.d_model;
            const int64_t d_out = ffn_in ? config.d_ffn : config.d_model;
            block.site(s) = adapter_init(d_in, d_out, config.mode, {static_cast<int>(bi), s}, rng);
        }
        m.blocks.push_back(std::move(block));
    }

    m.ln_f_gamma = Tensor::full({config.d_model}, 1.0);
    m.ln_f_beta = Tensor::zeros({config.d_model});
    m.head_w = init_kaiming_uniform(config.n_classes, config.d_model, config.d_model, rng, true);
    m.head_b = Tensor::zeros({config.n_classes}, true);
    return m;
}

Tensor model_forward(const TransformerModel& model, const std::vector<int>& tokens,
                     int64_t batch, int64_t seq) {
    const ModelConfig& cfg = model.config;
    if (seq > cfg.max_seq_len) {
        throw ContractError("sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                            std::to_string(cfg.max_seq_len));
    }
    if (static_cast<int64_t>(tokens.size()) != batch * seq) {
        throw DimensionError("token count " + std::to_string(tokens.size()) + " != batch*seq = " +
                             std::to_string(batch * seq));
    }

    Tensor x = embedding_lookup(model.embedding, tokens);
    x = add_position_tiled(x, model.positional, batch, seq);

    for (const TransformerBlock& block : model.blocks) {
        Tensor u = layer_norm_cols(x, block.ln1_gamma, block.ln1_beta);
        Tensor qh = adapter_forward(block.q, u);
        Tensor kh = adapter_forward(block.k, u);
        Tensor vh = adapter_forward(block.v, u);
        Tensor attn = multi_head_attention(qh, kh, vh, cfg.n_heads, batch, seq);
        x = add(x, adapter_forward(block.o, attn));

        Tensor w = layer_norm_cols(x, block.ln2_gamma, block.ln2_beta);
        Tensor h = gelu(adapter_forward(block.ffn_inter, w));
        x = add(x, adapter_forward(block.ffn_out, h));
    }

    x = layer_norm_cols(x, model.ln_f_gamma, model.ln_f_beta);

    // Classify on the first-token representation of each sequence.
    std::vector<int64_t> firsts(static_cast<size_t>(batch));
    for (int64_t b = 0; b < batch; ++b) firsts[static_cast<size_t>(b)] = b * seq;
    Tensor pooled = select_columns(x, firsts);
    Tensor logits = add_bias_rows(matmul(model.head_w, pooled), model.head_b);
    return transpose(logits);
}

std::vector<PmRef> enumerate_pms(TransformerModel& model) {
    std::vector<PmRef> out;
    for (size_t bi = 0; bi < model.blocks.size(); ++bi) {
        for (Site s : kAllSites) {
            AdapterLayer* layer = &model.blocks[bi].site(s);
            const int block = static_cast<int>(bi);
            out.push_back({{block, s, PmMatrix::A},
                           layer->a,
                           layer->pm_eligible,
                           [layer](int64_t step) { layer->freeze_a(step); }});
            out.push_back({{block, s, PmMatrix::B},
                           layer->b,
                           layer->pm_eligible,
                           [layer](int64_t step) { layer->freeze_b(step); }});
        }
    }
    return out;
}

std::vector<TrackedPm> eligible_tracked_pms(TransformerModel& model) {
    std::vector<TrackedPm> out;
    for (PmRef& ref : enumerate_pms(model))
        if (ref.eligible) out.push_back({ref.id, ref.param, std::move(ref.on_freeze)});
    return out;
}

int64_t adapter_trainable_param_count(const TransformerModel& model) {
    int64_t count = 0;
    for (const TransformerBlock& block : model.blocks)
        for (Site s : kAllSites) count += trainable_param_count(block.site(s));
    return count;
}

int64_t head_param_count(const TransformerModel& model) {
    return model.head_w.size() + model.head_b.size();
}

std::vector<Tensor> adapter_parameters(const TransformerModel& model) {
    std::vector<Tensor> params;
    for (const TransformerBlock& block : model.blocks) {
        for (Site s : kAllSites) {
            const AdapterLayer& layer = block.site(s);
            for (const Tensor* t : {&layer.a, &layer.b, &layer.vec_d, &layer.vec_b})
                if (t->requires_grad()) params.push_back(*t);
        }
    }
    return params;
}

std::vector<Tensor> head_parameters(const TransformerModel& model) {
    return {model.head_w, model.head_b};
}

}  // namespace aflora
