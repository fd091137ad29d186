#include "aflora/checkpoint.hpp"

#include <fstream>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aflora/errors.hpp"

namespace aflora {

namespace {

using ordered_json = nlohmann::ordered_json;

// Stable (name, tensor) walk over everything the model owns.
std::vector<std::pair<std::string, Tensor>> named_tensors(const TransformerModel& model) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embedding", model.embedding);
    out.emplace_back("positional", model.positional);
    for (size_t bi = 0; bi < model.blocks.size(); ++bi) {
        const TransformerBlock& block = model.blocks[bi];
        const std::string prefix = "block" + std::to_string(bi) + ".";
        out.emplace_back(prefix + "ln1_gamma", block.ln1_gamma);
        out.emplace_back(prefix + "ln1_beta", block.ln1_beta);
        out.emplace_back(prefix + "ln2_gamma", block.ln2_gamma);
        out.emplace_back(prefix + "ln2_beta", block.ln2_beta);
        for (Site s : kAllSites) {
            const AdapterLayer& layer = block.site(s);
            const std::string site_prefix = prefix + site_name(s) + ".";
            out.emplace_back(site_prefix + "w0", layer.w0);
            out.emplace_back(site_prefix + "a", layer.a);
            out.emplace_back(site_prefix + "b", layer.b);
            out.emplace_back(site_prefix + "vec_d", layer.vec_d);
            out.emplace_back(site_prefix + "vec_b", layer.vec_b);
        }
    }
    out.emplace_back("head_w", model.head_w);
    out.emplace_back("head_b", model.head_b);
    return out;
}

}  // namespace

void save_checkpoint(const TransformerModel& model, const std::string& path,
                     const std::string& config_hash) {
    ordered_json doc;
    doc["version"] = kCheckpointVersion;
    doc["config_hash"] = config_hash;
    ordered_json tensors = ordered_json::object();
    for (const auto& [name, tensor] : named_tensors(model)) {
        ordered_json entry;
        entry["shape"] = tensor.shape();
        entry["data"] = std::vector<double>(tensor.values().begin(), tensor.values().end());
        tensors[name] = std::move(entry);
    }
    doc["tensors"] = std::move(tensors);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(path + ": cannot write checkpoint");
    out << doc.dump(1) << "\n";
}

CheckpointInfo load_checkpoint(TransformerModel& model, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open checkpoint");
    ordered_json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": malformed checkpoint: " + e.what());
    }

    CheckpointInfo info;
    info.version = doc.value("version", int64_t{0});
    if (info.version != kCheckpointVersion)
        throw ConfigError(path + ": unsupported checkpoint version " +
                          std::to_string(info.version));
    info.config_hash = doc.value("config_hash", std::string{});

    if (!doc.contains("tensors") || !doc["tensors"].is_object())
        throw ConfigError(path + ": checkpoint has no tensor table");
    const auto& tensors = doc["tensors"];

    auto expected = named_tensors(model);
    if (tensors.size() != expected.size())
        throw ConfigError(path + ": checkpoint has " + std::to_string(tensors.size()) +
                          " tensors, model needs " + std::to_string(expected.size()));

    for (auto& [name, tensor] : expected) {
        if (!tensors.contains(name)) throw ConfigError(path + ": missing tensor '" + name + "'");
        const auto& entry = tensors[name];
        const Shape shape = entry["shape"].get<Shape>();
        if (shape != tensor.shape())
            throw ConfigError(path + ": tensor '" + name + "' has shape " + shape_str(shape) +
                              ", model expects " + shape_str(tensor.shape()));
        const auto data = entry["data"].get<std::vector<double>>();
        if (static_cast<int64_t>(data.size()) != tensor.size())
            throw ConfigError(path + ": tensor '" + name + "' data length mismatch");
        auto dst = tensor.values_mut();
        std::copy(data.begin(), data.end(), dst.begin());
    }
    return info;
}

}  // namespace aflora
