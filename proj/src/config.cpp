#include "aflora/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "aflora/errors.hpp"

namespace aflora {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int64_t to_i64(const std::string& v) {
    size_t used = 0;
    int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
}

uint64_t to_u64(const std::string& v) {
    size_t used = 0;
    uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
}

double to_f64(const std::string& v) {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters");
    return out;
}

std::vector<std::string> split(const std::string& v, char sep) {
    std::vector<std::string> parts;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, sep)) parts.push_back(trim(item));
    return parts;
}

SiteMask sites_from_string(const std::string& v) {
    SiteMask mask{false, false};
    if (v == "none" || v.empty()) return mask;
    for (const std::string& part : split(v, ',')) {
        if (part == "attention") mask.attention = true;
        else if (part == "ffn") mask.ffn = true;
        else throw std::invalid_argument("expected attention|ffn|none");
    }
    return mask;
}

std::string sites_to_string(const SiteMask& mask) {
    if (mask.attention && mask.ffn) return "attention,ffn";
    if (mask.attention) return "attention";
    if (mask.ffn) return "ffn";
    return "none";
}

std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string seeds_to_string(const std::vector<uint64_t>& seeds) {
    std::string out;
    for (size_t i = 0; i < seeds.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(seeds[i]);
    }
    return out;
}

void apply_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
    if (key == "version") c.version = to_i64(value);
    else if (key == "seeds") {
        c.seeds.clear();
        for (const std::string& s : split(value, ',')) c.seeds.push_back(to_u64(s));
        if (c.seeds.empty()) throw std::invalid_argument("empty seed list");
    } else if (key == "output_dir") c.output_dir = value;
    else if (key == "mode") c.mode = mode_from_name(value);
    else if (key == "rank") c.rank = to_i64(value);
    else if (key == "pm_trainable_sites") c.pm_trainable_sites = sites_from_string(value);
    else if (key == "model.n_blocks") c.n_blocks = to_i64(value);
    else if (key == "model.d_model") c.d_model = to_i64(value);
    else if (key == "model.n_heads") c.n_heads = to_i64(value);
    else if (key == "model.d_ffn") c.d_ffn = to_i64(value);
    else if (key == "model.vocab_size") c.vocab_size = to_i64(value);
    else if (key == "model.max_seq_len") c.max_seq_len = to_i64(value);
    else if (key == "model.n_classes") c.n_classes = to_i64(value);
    else if (key == "train.epochs") c.epochs = to_i64(value);
    else if (key == "train.batch_size") c.batch_size = to_i64(value);
    else if (key == "train.lr") c.lr = to_f64(value);
    else if (key == "train.clf_lr") c.clf_lr = to_f64(value);
    else if (key == "train.weight_decay") c.weight_decay = to_f64(value);
    else if (key == "train.warmup_fraction") c.warmup_fraction = to_f64(value);
    else if (key == "train.adam_beta1") c.adam_beta1 = to_f64(value);
    else if (key == "train.adam_beta2") c.adam_beta2 = to_f64(value);
    else if (key == "train.adam_eps") c.adam_eps = to_f64(value);
    else if (key == "freeze.t_i_epochs") c.t_i_epochs = to_f64(value);
    else if (key == "freeze.t_f_epochs") c.t_f_epochs = to_f64(value);
    else if (key == "freeze.score_beta1") c.score_beta1 = to_f64(value);
    else if (key == "freeze.score_beta2") c.score_beta2 = to_f64(value);
    else if (key == "freeze.score_variant") c.score_variant = score_variant_from_name(value);
    else if (key == "freeze.pairing") c.pairing = pairing_from_name(value);
    else if (key == "task.kind") c.task_kind = task_kind_from_name(value);
    else if (key == "task.n_train") c.task_n_train = to_i64(value);
    else if (key == "task.n_eval") c.task_n_eval = to_i64(value);
    else if (key == "task.seq_len") c.task_seq_len = to_i64(value);
    else if (key == "task.vocab") c.task_vocab = to_i64(value);
    else if (key == "task.seed") c.task_seed = to_u64(value);
    else if (key == "task.csv_path") c.task_csv_path = value;
    else if (key == "task.eval_csv_path") c.task_eval_csv_path = value;
    else if (key == "compare.modes") c.compare_modes = value;
    else throw std::invalid_argument("unknown key '" + key + "'");
}

void validate_semantics(const ExperimentConfig& c) {
    if (c.version != 1)
        throw ConfigError("unsupported config version " + std::to_string(c.version));
    if (c.rank < 1) throw ConfigError("rank must be >= 1");
    if (c.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(c.warmup_fraction >= 0.0 && c.warmup_fraction < 1.0))
        throw ConfigError("train.warmup_fraction must lie in [0, 1)");
    for (auto [b, name] : {std::pair{c.adam_beta1, "train.adam_beta1"},
                           {c.adam_beta2, "train.adam_beta2"},
                           {c.score_beta1, "freeze.score_beta1"},
                           {c.score_beta2, "freeze.score_beta2"}}) {
        if (!(b > 0.0 && b < 1.0))
            throw ConfigError(std::string(name) + " must lie in (0, 1)");
    }
    if (c.t_i_epochs < 0.0) throw ConfigError("freeze.t_i_epochs must be >= 0");
    if (c.mode == ModeKind::AFLoRA && !c.pm_trainable_sites.attention &&
        !c.pm_trainable_sites.ffn)
        throw ConfigError("aflora mode needs pm_trainable_sites (attention, ffn, or both)");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig c;
    std::istringstream in(text);
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string row = trim(line);
        if (row.empty() || row[0] == '#') continue;
        const size_t eq = row.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" +
                              row + "'");
        const std::string key = trim(row.substr(0, eq));
        const std::string value = trim(row.substr(eq + 1));
        try {
            apply_key(c, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const std::exception& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": bad value for '" + key +
                              "': " + e.what());
        }
    }
    validate_semantics(c);
    return c;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::stringstream buf;
    buf << in.rdbuf();
    try {
        return parse_config(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string serialize_config(const ExperimentConfig& c) {
    std::string out;
    auto kv = [&out](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
    kv("version", std::to_string(c.version));
    kv("seeds", seeds_to_string(c.seeds));
    kv("output_dir", c.output_dir);
    kv("mode", mode_name(c.mode));
    kv("rank", std::to_string(c.rank));
    kv("pm_trainable_sites", sites_to_string(c.pm_trainable_sites));
    kv("model.n_blocks", std::to_string(c.n_blocks));
    kv("model.d_model", std::to_string(c.d_model));
    kv("model.n_heads", std::to_string(c.n_heads));
    kv("model.d_ffn", std::to_string(c.d_ffn));
    kv("model.vocab_size", std::to_string(c.vocab_size));
    kv("model.max_seq_len", std::to_string(c.max_seq_len));
    kv("model.n_classes", std::to_string(c.n_classes));
    kv("train.epochs", std::to_string(c.epochs));
    kv("train.batch_size", std::to_string(c.batch_size));
    kv("train.lr", fmt_f64(c.lr));
    kv("train.clf_lr", fmt_f64(c.clf_lr));
    kv("train.weight_decay", fmt_f64(c.weight_decay));
    kv("train.warmup_fraction", fmt_f64(c.warmup_fraction));
    kv("train.adam_beta1", fmt_f64(c.adam_beta1));
    kv("train.adam_beta2", fmt_f64(c.adam_beta2));
    kv("train.adam_eps", fmt_f64(c.adam_eps));
    kv("freeze.t_i_epochs", fmt_f64(c.t_i_epochs));
    kv("freeze.t_f_epochs", fmt_f64(c.t_f_epochs));
    kv("freeze.score_beta1", fmt_f64(c.score_beta1));
    kv("freeze.score_beta2", fmt_f64(c.score_beta2));
    kv("freeze.score_variant", score_variant_name(c.score_variant));
    kv("freeze.pairing", pairing_name(c.pairing));
    kv("task.kind", task_kind_name(c.task_kind));
    kv("task.n_train", std::to_string(c.task_n_train));
    kv("task.n_eval", std::to_string(c.task_n_eval));
    kv("task.seq_len", std::to_string(c.task_seq_len));
    kv("task.vocab", std::to_string(c.task_vocab));
    kv("task.seed", std::to_string(c.task_seed));
    kv("task.csv_path", c.task_csv_path);
    kv("task.eval_csv_path", c.task_eval_csv_path);
    kv("compare.modes", c.compare_modes);
    return out;
}

std::string config_hash(const ExperimentConfig& config) {
    const std::string text = serialize_config(config);
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

AdapterMode adapter_mode(const ExperimentConfig& config) {
    AdapterMode mode;
    mode.kind = config.mode;
    mode.rank = config.rank;
    mode.pm_trainable = config.pm_trainable_sites;
    return mode;
}

ModelConfig model_config(const ExperimentConfig& config) {
    ModelConfig mc;
    mc.n_blocks = config.n_blocks;
    mc.d_model = config.d_model;
    mc.n_heads = config.n_heads;
    mc.d_ffn = config.d_ffn;
    mc.vocab_size = config.vocab_size;
    mc.max_seq_len = config.max_seq_len;
    mc.n_classes = config.n_classes;
    mc.mode = adapter_mode(config);
    return mc;
}

TaskSpec task_spec(const ExperimentConfig& config) {
    TaskSpec spec;
    spec.kind = config.task_kind;
    spec.n_train = config.task_n_train;
    spec.n_eval = config.task_n_eval;
    spec.seq_len = config.task_seq_len;
    spec.vocab = config.task_vocab;
    spec.seed = config.task_seed;
    spec.csv_path = config.task_csv_path;
    spec.eval_csv_path = config.task_eval_csv_path;
    return spec;
}

std::vector<std::pair<ModeKind, int64_t>> parse_compare_modes(const std::string& value) {
    std::vector<std::pair<ModeKind, int64_t>> out;
    for (const std::string& part : split(value, ',')) {
        if (part.empty()) continue;
        const size_t colon = part.find(':');
        if (colon == std::string::npos)
            throw ConfigError("compare.modes entry '" + part + "' must look like kind:rank");
        const ModeKind kind = mode_from_name(trim(part.substr(0, colon)));
        int64_t rank = 0;
        try {
            rank = to_i64(trim(part.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ConfigError("compare.modes entry '" + part + "' has a bad rank");
        }
        if (rank < 1) throw ConfigError("compare.modes rank must be >= 1");
        out.push_back({kind, rank});
    }
    if (out.empty()) throw ConfigError("compare.modes is empty");
    return out;
}

}  // namespace aflora
