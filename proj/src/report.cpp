#include "aflora/report.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "aflora/errors.hpp"

namespace aflora {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError(path + ": cannot open for writing");
    return out;
}

ordered_json event_to_json(const FreezeEvent& ev) {
    ordered_json j;
    j["step"] = ev.step;
    j["block"] = ev.id.block;
    j["site"] = site_name(ev.id.site);
    j["matrix"] = pm_matrix_name(ev.id.matrix);
    j["score"] = ev.score_at_freeze;
    return j;
}

}  // namespace

void write_report_json(const std::string& path, const ExperimentConfig& config,
                       const std::string& hash, const ExperimentReport& report) {
    ordered_json doc;
    doc["version"] = 1;
    doc["config_hash"] = hash;
    doc["config"] = serialize_config(config);
    doc["mode"] = mode_name(config.mode);

    ordered_json schedule;
    schedule["total_steps"] = report.total_steps;
    schedule["steps_per_epoch"] = report.steps_per_epoch;
    schedule["t_i_steps"] = report.t_i_steps;
    schedule["t_f_steps"] = report.t_f_steps;
    doc["schedule"] = schedule;

    doc["n_eligible_pms"] = report.n_eligible_pms;

    ordered_json results;
    results["final_loss"] = report.final_loss;
    results["train_accuracy"] = report.train_accuracy;
    results["eval_accuracy"] = report.eval_accuracy;
    doc["results"] = results;

    ordered_json params;
    params["trainable_now"] = report.cost.trainable_params_now;
    params["average_trainable"] = report.cost.avg_trainable_params;
    params["head"] = config.n_classes * (config.d_model + 1);
    doc["params"] = params;

    ordered_json flops;
    flops["fwd_per_token"] = report.cost.fwd_flops_per_token;
    flops["bwd_per_token_initial"] = report.cost.bwd_flops_per_token_initial;
    flops["bwd_per_token_final"] = report.cost.bwd_flops_per_token_final;
    flops["adapter_training_total"] = report.cost.adapter_training_flops;
    flops["aux_training_total"] = report.cost.aux_training_flops;
    doc["flops"] = flops;

    ordered_json events = ordered_json::array();
    for (const FreezeEvent& ev : report.events) events.push_back(event_to_json(ev));
    doc["freeze_events"] = std::move(events);

    auto out = open_out(path);
    out << doc.dump(1) << "\n";
}

void write_steps_csv(const std::string& path, const std::string& hash,
                     const std::vector<StepRecord>& records) {
    auto out = open_out(path);
    out << "# config_hash=" << hash << "\n";
    out << "step,epoch,loss,trainable_param_count,n_frozen_pms,adapter_flops_this_step\n";
    for (const StepRecord& r : records) {
        out << r.step << ',' << r.epoch << ',' << fmt(r.loss) << ',' << r.trainable_param_count
            << ',' << r.n_frozen_pms << ',' << fmt(r.adapter_flops_this_step) << "\n";
    }
}

void write_freeze_events_csv(const std::string& path, const std::string& hash,
                             const std::vector<FreezeEvent>& events) {
    auto out = open_out(path);
    out << "# config_hash=" << hash << "\n";
    out << "step,block,site,matrix,score_at_freeze\n";
    for (const FreezeEvent& ev : events) {
        out << ev.step << ',' << ev.id.block << ',' << site_name(ev.id.site) << ','
            << pm_matrix_name(ev.id.matrix) << ',' << fmt(ev.score_at_freeze) << "\n";
    }
}

void write_heatmap_csv(const std::string& path, const std::string& hash,
                       const HeatmapGrid& grid) {
    auto out = open_out(path);
    out << "# config_hash=" << hash << "\n";
    out << "site_matrix";
    const size_t blocks = grid.cells.empty() ? 0 : grid.cells.front().size();
    for (size_t b = 0; b < blocks; ++b) out << ",block_" << b;
    out << "\n";
    for (size_t row = 0; row < grid.row_labels.size(); ++row) {
        out << grid.row_labels[row];
        for (int64_t cell : grid.cells[row]) out << ',' << cell;
        out << "\n";
    }
}

void write_comparison_csv(const std::string& path, const std::string& hash,
                          const std::vector<CompareRow>& rows) {
    if (rows.empty()) throw ContractError("comparison table needs at least one row");
    auto out = open_out(path);
    out << "# config_hash=" << hash << "\n";
    out << "method,avg_params,total_flops,wall_seconds,"
           "normalized_params,normalized_flops,normalized_time\n";
    const CompareRow& ref = rows.front();
    for (const CompareRow& r : rows) {
        out << r.method << ',' << fmt(r.avg_params) << ',' << fmt(r.total_flops) << ','
            << fmt(r.wall_seconds) << ',' << fmt(r.avg_params / ref.avg_params) << ','
            << fmt(r.total_flops / ref.total_flops) << ','
            << fmt(r.wall_seconds / ref.wall_seconds) << "\n";
    }
}

LoadedReport read_report_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open report");
    ordered_json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": malformed report: " + e.what());
    }

    LoadedReport loaded;
    try {
        loaded.config = parse_config(doc.at("config").get<std::string>());
        loaded.config_hash = doc.at("config_hash").get<std::string>();
        for (const auto& j : doc.at("freeze_events")) {
            FreezeEvent ev;
            ev.step = j.at("step").get<int64_t>();
            ev.id.block = j.at("block").get<int64_t>();
            ev.id.site = site_from_name(j.at("site").get<std::string>());
            ev.id.matrix = j.at("matrix").get<std::string>() == "B" ? PmMatrix::B : PmMatrix::A;
            ev.score_at_freeze = j.at("score").get<double>();
            loaded.events.push_back(ev);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": report is missing fields: " + e.what());
    }
    return loaded;
}

}  // namespace aflora
