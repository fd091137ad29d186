#include "aflora/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "aflora/errors.hpp"

namespace aflora {

std::string task_kind_name(TaskKind k) {
    switch (k) {
        case TaskKind::Parity: return "parity";
        case TaskKind::Majority: return "majority";
        case TaskKind::CopyDetect: return "copy_detect";
        case TaskKind::Csv: return "csv";
    }
    throw ContractError("task_kind_name: bad kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "parity") return TaskKind::Parity;
    if (name == "majority") return TaskKind::Majority;
    if (name == "copy_detect") return TaskKind::CopyDetect;
    if (name == "csv") return TaskKind::Csv;
    throw ConfigError("unknown task kind '" + name + "'");
}

int task_label(TaskKind kind, const std::vector<int>& tokens) {
    switch (kind) {
        case TaskKind::Parity: {
            int x = 0;
            for (int t : tokens) x ^= (t & 1);
            return x;
        }
        case TaskKind::Majority: {
            int odd = 0;
            for (int t : tokens) odd += (t & 1);
            return 2 * odd > static_cast<int>(tokens.size()) ? 1 : 0;
        }
        case TaskKind::CopyDetect: {
            const size_t half = tokens.size() / 2;
            if (tokens.size() % 2 != 0)
                throw ContractError("copy_detect needs an even sequence length");
            return std::equal(tokens.begin(), tokens.begin() + static_cast<long>(half),
                              tokens.begin() + static_cast<long>(half))
                       ? 1
                       : 0;
        }
        case TaskKind::Csv: break;
    }
    throw ContractError("task_label: csv datasets carry labels explicitly");
}

namespace {

void validate_synthetic_spec(const TaskSpec& spec) {
    if (spec.vocab < 2) throw ConfigError("task vocab must be >= 2, got " + std::to_string(spec.vocab));
    if (spec.seq_len < 1) throw ConfigError("task seq_len must be >= 1");
    if (spec.n_train < 1 || spec.n_eval < 1) throw ConfigError("task split sizes must be >= 1");
    if (spec.kind == TaskKind::CopyDetect && spec.seq_len % 2 != 0)
        throw ConfigError("copy_detect needs an even seq_len, got " + std::to_string(spec.seq_len));
}

std::vector<int> draw_sequence(const TaskSpec& spec, SeededRng& rng) {
    std::vector<int> seq(static_cast<size_t>(spec.seq_len));
    if (spec.kind == TaskKind::CopyDetect && rng.next_unit() < 0.5) {
        const size_t half = seq.size() / 2;
        for (size_t i = 0; i < half; ++i)
            seq[i] = static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.vocab)));
        std::copy(seq.begin(), seq.begin() + static_cast<long>(half),
                  seq.begin() + static_cast<long>(half));
        return seq;
    }
    for (int& t : seq) t = static_cast<int>(rng.next_below(static_cast<uint64_t>(spec.vocab)));
    return seq;
}

}  // namespace

SplitDataset generate_task(const TaskSpec& spec) {
    validate_synthetic_spec(spec);
    SeededRng rng(spec.seed);

    // The eval split is held out first: distinct sequences reserved before any
    // training row exists, so the two splits are disjoint by construction and
    // a cramped task space fails fast instead of starving a rejection loop.
    // Training rows are then i.i.d. draws over the remainder; duplicates are
    // allowed there, as in any resampled corpus.
    const double log_space =
        static_cast<double>(spec.seq_len) * std::log(static_cast<double>(spec.vocab));
    if (log_space < std::log(2.0 * static_cast<double>(spec.n_eval))) {
        throw ConfigError("task space (vocab^seq_len) must be at least twice n_eval to "
                          "hold out a disjoint eval split");
    }

    SplitDataset out;
    out.train.seq_len = out.eval.seq_len = spec.seq_len;
    out.train.vocab = out.eval.vocab = spec.vocab;

    std::set<std::vector<int>> eval_set;
    const int64_t max_attempts = 1000 * (spec.n_eval + spec.n_train);
    int64_t attempts = 0;
    while (out.eval.size() < spec.n_eval) {
        if (++attempts > max_attempts)
            throw ConfigError("cannot hold out " + std::to_string(spec.n_eval) +
                              " distinct eval sequences; the task space is too small");
        std::vector<int> seq = draw_sequence(spec, rng);
        if (!eval_set.insert(seq).second) continue;
        out.eval.labels.push_back(task_label(spec.kind, seq));
        out.eval.tokens.push_back(std::move(seq));
    }

    attempts = 0;
    while (out.train.size() < spec.n_train) {
        if (++attempts > max_attempts)
            throw ConfigError("cannot draw training data outside the eval hold-out; "
                              "the task space is too small");
        std::vector<int> seq = draw_sequence(spec, rng);
        if (eval_set.count(seq)) continue;
        out.train.labels.push_back(task_label(spec.kind, seq));
        out.train.tokens.push_back(std::move(seq));
    }
    return out;
}

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_csv_dataset(const std::string& path, int64_t seq_len, int64_t vocab,
                         int64_t n_classes) {
    if (vocab < 2) throw ConfigError("csv ingestion needs vocab >= 2");
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open dataset file");

    Dataset data;
    data.seq_len = seq_len;
    data.vocab = vocab;

    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string row = trim(line);
        if (line_no == 1) {
            if (row != "text,label")
                throw ConfigError(path + ":1: expected header 'text,label', got '" + row + "'");
            continue;
        }
        if (row.empty()) continue;

        const size_t comma = row.rfind(',');
        if (comma == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": missing ',' separator");
        const std::string text = row.substr(0, comma);
        const std::string label_str = trim(row.substr(comma + 1));

        int label = 0;
        try {
            size_t used = 0;
            label = std::stoi(label_str, &used);
            if (used != label_str.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": bad label '" + label_str +
                              "'");
        }
        if (label < 0 || label >= n_classes)
            throw ConfigError(path + ":" + std::to_string(line_no) + ": label " +
                              std::to_string(label) + " outside [0, " + std::to_string(n_classes) +
                              ")");

        // Whitespace-split words hashed into vocabulary buckets; bucket 0 is
        // reserved for padding, so words map into [1, vocab).
        std::vector<int> seq(static_cast<size_t>(seq_len), 0);
        std::istringstream words(text);
        std::string word;
        size_t pos = 0;
        while (words >> word && pos < seq.size()) {
            seq[pos++] = static_cast<int>(1 + fnv1a(word) % static_cast<uint64_t>(vocab - 1));
        }
        data.tokens.push_back(std::move(seq));
        data.labels.push_back(label);
    }
    if (data.size() == 0) throw ConfigError(path + ": no data rows");
    return data;
}

SplitDataset build_dataset(const TaskSpec& spec, int64_t n_classes) {
    if (spec.kind != TaskKind::Csv) return generate_task(spec);

    if (spec.csv_path.empty()) throw ConfigError("task.kind=csv requires task.csv_path");
    SplitDataset out;
    out.train = load_csv_dataset(spec.csv_path, spec.seq_len, spec.vocab, n_classes);
    if (!spec.eval_csv_path.empty()) {
        out.eval = load_csv_dataset(spec.eval_csv_path, spec.seq_len, spec.vocab, n_classes);
        return out;
    }

    // No eval file: hold out the last 20% of rows (at least one).
    const int64_t n = out.train.size();
    const int64_t n_eval = std::max<int64_t>(1, n / 5);
    const int64_t n_train = n - n_eval;
    if (n_train < 1) throw ConfigError(spec.csv_path + ": too few rows to split");
    out.eval.seq_len = out.train.seq_len;
    out.eval.vocab = out.train.vocab;
    out.eval.tokens.assign(out.train.tokens.begin() + n_train, out.train.tokens.end());
    out.eval.labels.assign(out.train.labels.begin() + n_train, out.train.labels.end());
    out.train.tokens.resize(static_cast<size_t>(n_train));
    out.train.labels.resize(static_cast<size_t>(n_train));
    return out;
}

}  // namespace aflora
