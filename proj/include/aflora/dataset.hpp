#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aflora/rng.hpp"

namespace aflora {

// Fixed-length token sequences with integer class labels.
struct Dataset {
    std::vector<std::vector<int>> tokens;
    std::vector<int> labels;
    int64_t seq_len = 0;
    int64_t vocab = 0;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

enum class TaskKind { Parity, Majority, CopyDetect, Csv };

std::string task_kind_name(TaskKind k);
TaskKind task_kind_from_name(const std::string& name);

struct TaskSpec {
    TaskKind kind = TaskKind::Parity;
    int64_t n_train = 2000;
    int64_t n_eval = 512;
    int64_t seq_len = 16;
    int64_t vocab = 32;
    uint64_t seed = 1234;
    std::string csv_path;       // Csv kind only
    std::string eval_csv_path;  // optional; empty uses a 20% holdout of csv_path
};

// Ground-truth labeling rules. parity: XOR of the tokens' low bits.
// majority: 1 when odd-parity tokens outnumber even ones, 0 otherwise (ties
// included). copy_detect: 1 when the first half equals the second half.
int task_label(TaskKind kind, const std::vector<int>& tokens);

struct SplitDataset {
    Dataset train;
    Dataset eval;
};

// Deterministic synthetic data. Eval sequences are drawn by rejection until
// disjoint from the training set. copy_detect balances labels by duplicating
// the first half in ~half the draws (random draws are almost never copies).
SplitDataset generate_task(const TaskSpec& spec);

// "text,label" CSV: whitespace-split words hashed into [0, vocab) buckets,
// padded/truncated to seq_len (pad token 0). Errors name the file and line.
Dataset load_csv_dataset(const std::string& path, int64_t seq_len, int64_t vocab,
                         int64_t n_classes);

// Synthetic or CSV according to spec.kind.
SplitDataset build_dataset(const TaskSpec& spec, int64_t n_classes);

}  // namespace aflora
