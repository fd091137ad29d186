#pragma once

#include <string>

#include "aflora/model.hpp"

namespace aflora {

// JSON tensor dump: a versioned header plus one named entry per tensor
// (shape + row-major data at full precision). The entry names follow the
// model structure ("block0.q.a", "head_w", ...).
inline constexpr int64_t kCheckpointVersion = 1;

void save_checkpoint(const TransformerModel& model, const std::string& path,
                     const std::string& config_hash);

struct CheckpointInfo {
    int64_t version = 0;
    std::string config_hash;
};

// Loads into an already-built model of the same geometry. Missing or extra
// entries, shape mismatches, or an unsupported version raise ConfigError.
CheckpointInfo load_checkpoint(TransformerModel& model, const std::string& path);

}  // namespace aflora
