#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "aflora/checkpoint.hpp"
#include "aflora/config.hpp"
#include "aflora/errors.hpp"
#include "aflora/runner.hpp"

using namespace aflora;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "aflora_unit_scratch";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small enough to train in milliseconds; schedule 1 <= t < 3 within T = 4.
std::string tiny_config_text(const std::string& output_dir) {
    return "version=1\n"
           "seeds=7\n"
           "output_dir=" + output_dir + "\n"
           "mode=aflora\n"
           "rank=2\n"
           "pm_trainable_sites=ffn\n"
           "model.n_blocks=1\n"
           "model.d_model=16\n"
           "model.n_heads=2\n"
           "model.d_ffn=32\n"
           "model.vocab_size=8\n"
           "model.max_seq_len=4\n"
           "model.n_classes=2\n"
           "train.epochs=2\n"
           "train.batch_size=16\n"
           "train.warmup_fraction=0.1\n"
           "freeze.t_i_epochs=0.5\n"
           "freeze.t_f_epochs=0.5\n"
           "task.kind=parity\n"
           "task.n_train=32\n"
           "task.n_eval=8\n"
           "task.seq_len=4\n"
           "task.vocab=8\n"
           "task.seed=5\n";
}

}  // namespace

TEST_CASE("config round trip") {
    SUBCASE("defaults survive serialize/parse") {
        ExperimentConfig c;
        CHECK(parse_config(serialize_config(c)) == c);
    }

    SUBCASE("modified fields survive, including awkward doubles") {
        ExperimentConfig c;
        c.seeds = {1, 2, 3};
        c.mode = ModeKind::ELoRA;
        c.rank = 64;
        c.pm_trainable_sites = {true, true};
        c.lr = 0.0123;
        c.adam_eps = 3e-11;
        c.t_f_epochs = 6.3;
        c.score_variant = ScoreVariant::AbsGradOverParam;
        c.pairing = PairingMode::Simultaneous;
        c.task_kind = TaskKind::CopyDetect;
        c.task_csv_path = "data/reviews.csv";
        c.output_dir = "runs/exp 1";  // spaces survive
        const ExperimentConfig back = parse_config(serialize_config(c));
        CHECK(back == c);
        CHECK(config_hash(back) == config_hash(c));
    }

    SUBCASE("hash is sensitive to any field") {
        ExperimentConfig a;
        ExperimentConfig b;
        b.rank = 8;
        CHECK(config_hash(a) != config_hash(b));
        ExperimentConfig d;
        d.lr = 5.000000001e-3;
        CHECK(config_hash(a) != config_hash(d));
    }

    SUBCASE("comments and blank lines are ignored") {
        const auto c = parse_config("# a comment\n\nversion=1\nrank = 6\n");
        CHECK(c.rank == 6);
    }
}

TEST_CASE("config rejection") {
    SUBCASE("unknown key names the line") {
        try {
            parse_config("version=1\nmodle.d_model=64\n");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("line 2") != std::string::npos);
            CHECK(msg.find("modle.d_model") != std::string::npos);
        }
    }

    SUBCASE("malformed values") {
        CHECK_THROWS_AS(parse_config("rank=four\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("train.lr=1e\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("rank\n"), ConfigError);  // no '='
        CHECK_THROWS_AS(parse_config("pm_trainable_sites=arms\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("seeds=\n"), ConfigError);
    }

    SUBCASE("semantic validation") {
        CHECK_THROWS_AS(parse_config("version=2\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("rank=0\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("train.epochs=0\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("train.warmup_fraction=1.0\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("train.adam_beta1=1.0\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("freeze.score_beta2=0\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("freeze.t_i_epochs=-1\n"), ConfigError);
        CHECK_THROWS_AS(parse_config("mode=aflora\npm_trainable_sites=none\n"), ConfigError);
        CHECK_NOTHROW(parse_config("mode=lora\npm_trainable_sites=none\n"));
    }

    SUBCASE("file errors carry the path") {
        try {
            parse_config_file("/nonexistent/path.cfg");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("/nonexistent/path.cfg") != std::string::npos);
        }
    }
}

TEST_CASE("comparison mode lists") {
    const auto modes = parse_compare_modes("lora:8,elora:64,aflora:4");
    REQUIRE(modes.size() == 3);
    CHECK((modes[0] == std::pair{ModeKind::LoRA, int64_t{8}}));
    CHECK((modes[2] == std::pair{ModeKind::AFLoRA, int64_t{4}}));

    CHECK_THROWS_AS(parse_compare_modes("lora"), ConfigError);
    CHECK_THROWS_AS(parse_compare_modes("lora:x"), ConfigError);
    CHECK_THROWS_AS(parse_compare_modes("lora:0"), ConfigError);
    CHECK_THROWS_AS(parse_compare_modes(""), ConfigError);
    CHECK_THROWS_AS(parse_compare_modes("dora:4"), ConfigError);
}

TEST_CASE("config views feed the library structs") {
    ExperimentConfig c;
    c.mode = ModeKind::AFLoRA;
    c.rank = 3;
    c.pm_trainable_sites = {true, false};
    c.d_model = 48;
    c.task_seq_len = 9;

    const AdapterMode m = adapter_mode(c);
    CHECK(m.kind == ModeKind::AFLoRA);
    CHECK(m.rank == 3);
    CHECK(m.pm_trainable.attention);
    CHECK_FALSE(m.pm_trainable.ffn);

    const ModelConfig mc = model_config(c);
    CHECK(mc.d_model == 48);
    CHECK(mc.mode == m);

    const TaskSpec t = task_spec(c);
    CHECK(t.seq_len == 9);
    CHECK(t.kind == TaskKind::Parity);
}

TEST_CASE("synthetic task labels") {
    CHECK(task_label(TaskKind::Parity, {1, 2, 3}) == 0);  // 1^0^1
    CHECK(task_label(TaskKind::Parity, {1, 2, 2}) == 1);
    CHECK(task_label(TaskKind::Parity, {0, 0, 0, 0}) == 0);

    CHECK(task_label(TaskKind::Majority, {1, 3, 2, 4}) == 0);  // tie goes low
    CHECK(task_label(TaskKind::Majority, {1, 3, 5, 4}) == 1);
    CHECK(task_label(TaskKind::Majority, {2, 4, 6, 8}) == 0);

    CHECK(task_label(TaskKind::CopyDetect, {5, 7, 5, 7}) == 1);
    CHECK(task_label(TaskKind::CopyDetect, {5, 7, 5, 6}) == 0);
    CHECK_THROWS_AS(task_label(TaskKind::CopyDetect, {5, 7, 5}), ContractError);
    CHECK_THROWS_AS(task_label(TaskKind::Csv, {1}), ContractError);
}

TEST_CASE("synthetic task generation") {
    TaskSpec spec;
    spec.kind = TaskKind::Parity;
    spec.n_train = 64;
    spec.n_eval = 32;
    spec.seq_len = 6;
    spec.vocab = 8;
    spec.seed = 77;

    const SplitDataset data = generate_task(spec);

    SUBCASE("sizes, ranges and label consistency") {
        CHECK(data.train.size() == 64);
        CHECK(data.eval.size() == 32);
        CHECK(data.train.seq_len == 6);
        CHECK(data.train.vocab == 8);
        for (const auto& d : {data.train, data.eval}) {
            for (size_t i = 0; i < d.tokens.size(); ++i) {
                CHECK(d.tokens[i].size() == 6);
                for (int tok : d.tokens[i]) {
                    CHECK(tok >= 0);
                    CHECK(tok < 8);
                }
                CHECK(d.labels[i] == task_label(TaskKind::Parity, d.tokens[i]));
            }
        }
    }

    SUBCASE("train and eval never overlap") {
        std::set<std::vector<int>> train_set(data.train.tokens.begin(), data.train.tokens.end());
        for (const auto& seq : data.eval.tokens) CHECK(train_set.count(seq) == 0);
    }

    SUBCASE("same spec, same data; different seed, different data") {
        const SplitDataset again = generate_task(spec);
        CHECK(again.train.tokens == data.train.tokens);
        CHECK(again.eval.labels == data.eval.labels);
        TaskSpec other = spec;
        other.seed = 78;
        CHECK(generate_task(other).train.tokens != data.train.tokens);
    }

    SUBCASE("copy task balances labels") {
        TaskSpec copy = spec;
        copy.kind = TaskKind::CopyDetect;
        copy.n_train = 80;
        const SplitDataset cd = generate_task(copy);
        int ones = 0;
        for (int label : cd.train.labels) ones += label;
        CHECK(ones > 10);
        CHECK(ones < 70);
    }

    SUBCASE("invalid requests") {
        TaskSpec bad = spec;
        bad.vocab = 1;
        CHECK_THROWS_AS(generate_task(bad), ConfigError);
        bad = spec;
        bad.kind = TaskKind::CopyDetect;
        bad.seq_len = 5;  // halves must align
        CHECK_THROWS_AS(generate_task(bad), ConfigError);
        bad = spec;
        bad.n_train = 0;
        CHECK_THROWS_AS(generate_task(bad), ConfigError);
        // 2^2 = 4 sequences cannot host 64 + 32 disjoint rows
        bad = spec;
        bad.vocab = 2;
        bad.seq_len = 2;
        CHECK_THROWS_AS(generate_task(bad), ConfigError);
    }
}

TEST_CASE("csv ingestion") {
    const fs::path dir = scratch_dir();

    SUBCASE("tokens, padding, truncation, holdout") {
        const fs::path csv = dir / "data.csv";
        write_file(csv, "text,label\n"
                        "the quick brown fox,1\n"
                        "lazy dog,0\n"
                        "one two three four five six,1\n"
                        "hello,0\n"
                        "world again,1\n");
        const Dataset d = load_csv_dataset(csv.string(), 4, 16, 2);
        REQUIRE(d.size() == 5);
        CHECK(d.seq_len == 4);
        CHECK((d.labels == std::vector<int>{1, 0, 1, 0, 1}));
        for (const auto& row : d.tokens) {
            REQUIRE(row.size() == 4);
            for (int tok : row) {
                CHECK(tok >= 0);
                CHECK(tok < 16);
            }
        }
        // "lazy dog" + two pads; pad token is 0 and hashed words never are
        CHECK(d.tokens[1][0] != 0);
        CHECK(d.tokens[1][1] != 0);
        CHECK(d.tokens[1][2] == 0);
        CHECK(d.tokens[1][3] == 0);
        // repeated words hash identically
        const Dataset d2 = load_csv_dataset(csv.string(), 4, 16, 2);
        CHECK(d2.tokens == d.tokens);

        TaskSpec spec;
        spec.kind = TaskKind::Csv;
        spec.csv_path = csv.string();
        spec.seq_len = 4;
        spec.vocab = 16;
        const SplitDataset split = build_dataset(spec, 2);
        CHECK(split.train.size() == 4);  // last fifth becomes eval
        CHECK(split.eval.size() == 1);
        CHECK(split.eval.tokens[0] == d.tokens[4]);
    }

    SUBCASE("format violations name the line") {
        const fs::path bad_header = dir / "bad_header.csv";
        write_file(bad_header, "sentence,label\nx,0\n");
        CHECK_THROWS_AS(load_csv_dataset(bad_header.string(), 4, 16, 2), ConfigError);

        const fs::path bad_label = dir / "bad_label.csv";
        write_file(bad_label, "text,label\nx,zero\n");
        try {
            load_csv_dataset(bad_label.string(), 4, 16, 2);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("bad_label.csv") != std::string::npos);
            CHECK(msg.find("2") != std::string::npos);
        }

        const fs::path oob = dir / "oob.csv";
        write_file(oob, "text,label\nx,2\n");
        CHECK_THROWS_AS(load_csv_dataset(oob.string(), 4, 16, 2), ConfigError);

        const fs::path empty = dir / "empty.csv";
        write_file(empty, "text,label\n");
        CHECK_THROWS_AS(load_csv_dataset(empty.string(), 4, 16, 2), ConfigError);

        CHECK_THROWS_AS(load_csv_dataset((dir / "missing.csv").string(), 4, 16, 2), ConfigError);
    }
}

TEST_CASE("checkpoint round trip") {
    const fs::path dir = scratch_dir();
    ModelConfig cfg;
    cfg.n_blocks = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ffn = 32;
    cfg.vocab_size = 8;
    cfg.max_seq_len = 4;
    cfg.mode = AdapterMode{ModeKind::AFLoRA, 2, {false, true}};

    SeededRng rng(6);
    TransformerModel model = build_model(cfg, rng);
    const std::vector<double> head_before(model.head_w.values().begin(),
                                          model.head_w.values().end());
    const fs::path path = dir / "ckpt.json";
    save_checkpoint(model, path.string(), "deadbeefdeadbeef");

    // scribble over the weights, then restore
    for (auto& v : model.head_w.values_mut()) v = -7.5;
    for (auto& v : model.blocks[0].ffn_inter.a.values_mut()) v = 3.25;
    const CheckpointInfo info = load_checkpoint(model, path.string());
    CHECK(info.version == kCheckpointVersion);
    CHECK(info.config_hash == "deadbeefdeadbeef");
    for (int64_t i = 0; i < model.head_w.size(); ++i)
        CHECK(model.head_w.values()[i] == head_before[i]);

    SUBCASE("geometry mismatches are refused") {
        ModelConfig wide = cfg;
        wide.d_model = 32;
        wide.d_ffn = 64;
        SeededRng rng2(6);
        TransformerModel other = build_model(wide, rng2);
        CHECK_THROWS_AS(load_checkpoint(other, path.string()), ConfigError);
    }

    SUBCASE("versioning and malformed files") {
        write_file(dir / "garbage.json", "not json at all");
        CHECK_THROWS_AS(load_checkpoint(model, (dir / "garbage.json").string()), ConfigError);
        write_file(dir / "old.json", "{\"version\": 99, \"tensors\": {}}");
        CHECK_THROWS_AS(load_checkpoint(model, (dir / "old.json").string()), ConfigError);
        CHECK_THROWS_AS(load_checkpoint(model, (dir / "absent.json").string()), ConfigError);
    }
}

TEST_CASE("run artifacts") {
    const fs::path dir = scratch_dir();
    const ExperimentConfig config = parse_config(tiny_config_text("unused"));
    const RunResult result = execute_run(config, 7);

    const fs::path run_dir = dir / "run";
    write_run_artifacts(result, run_dir.string());

    SUBCASE("all five artifacts appear and carry the hash") {
        for (const char* name :
             {"report.json", "steps.csv", "freeze_events.csv", "heatmap.csv", "checkpoint.json"}) {
            CHECK(fs::exists(run_dir / name));
        }
        for (const char* name : {"steps.csv", "freeze_events.csv", "heatmap.csv"}) {
            const std::string text = read_file(run_dir / name);
            CHECK(text.rfind("# config_hash=" + result.hash, 0) == 0);
        }
    }

    SUBCASE("report round trips through the reader") {
        const LoadedReport loaded = read_report_json((run_dir / "report.json").string());
        CHECK(loaded.config_hash == result.hash);
        CHECK(loaded.config == config);
        REQUIRE(loaded.events.size() == result.report.events.size());
        for (size_t i = 0; i < loaded.events.size(); ++i) {
            CHECK(loaded.events[i].step == result.report.events[i].step);
            CHECK(loaded.events[i].id == result.report.events[i].id);
            CHECK(loaded.events[i].score_at_freeze == result.report.events[i].score_at_freeze);
        }
    }

    SUBCASE("steps table has one row per optimizer step") {
        const std::string text = read_file(run_dir / "steps.csv");
        const size_t lines = static_cast<size_t>(std::count(text.begin(), text.end(), '\n'));
        CHECK(lines == 2 + result.report.records.size());  // hash + header + rows
    }

    SUBCASE("checkpoint restores into a freshly built model") {
        SeededRng rng(1);  // different seed: different weights
        TransformerModel fresh = build_model(model_config(config), rng);
        load_checkpoint(fresh, (run_dir / "checkpoint.json").string());
        for (int64_t i = 0; i < fresh.head_w.size(); ++i)
            CHECK(fresh.head_w.values()[i] == result.model.head_w.values()[i]);
    }
}

TEST_CASE("command entry points") {
    const fs::path dir = scratch_dir();
    setenv("AFLORA_OUTPUT_ROOT", dir.string().c_str(), 1);

    SUBCASE("train writes artifacts and returns 0") {
        const fs::path cfg = dir / "run.cfg";
        write_file(cfg, tiny_config_text("train_out"));
        CHECK(run_train_command(cfg.string()) == 0);
        CHECK(fs::exists(dir / "train_out" / "report.json"));
        CHECK(fs::exists(dir / "train_out" / "steps.csv"));
    }

    SUBCASE("multiple seeds get per-seed directories") {
        const fs::path cfg = dir / "seeds.cfg";
        write_file(cfg, tiny_config_text("multi_out") + "seeds=3,4\n");
        CHECK(run_train_command(cfg.string()) == 0);
        CHECK(fs::exists(dir / "multi_out" / "seed3" / "report.json"));
        CHECK(fs::exists(dir / "multi_out" / "seed4" / "report.json"));
    }

    SUBCASE("exit code 2 for config problems") {
        const fs::path cfg = dir / "broken.cfg";
        write_file(cfg, "version=1\nrank=banana\n");
        CHECK(run_train_command(cfg.string()) == 2);
        CHECK(run_train_command((dir / "missing.cfg").string()) == 2);
    }

    SUBCASE("exit code 3 for an infeasible freeze window") {
        const fs::path cfg = dir / "infeasible.cfg";
        write_file(cfg, tiny_config_text("never") + "train.epochs=1\nfreeze.t_i_epochs=2\n");
        CHECK(run_train_command(cfg.string()) == 3);
    }

    SUBCASE("compare emits per-arm artifacts plus the summary table") {
        const fs::path cfg = dir / "compare.cfg";
        write_file(cfg, tiny_config_text("cmp") + "compare.modes=lora:2,elora:8,aflora:2\n");
        CHECK(run_compare_command(cfg.string()) == 0);
        CHECK(fs::exists(dir / "cmp" / "lora_r2" / "report.json"));
        CHECK(fs::exists(dir / "cmp" / "elora_r8" / "report.json"));
        CHECK(fs::exists(dir / "cmp" / "aflora_r2" / "report.json"));
        const std::string table = read_file(dir / "cmp" / "comparison.csv");
        CHECK(table.find("method,avg_params,total_flops,wall_seconds") != std::string::npos);
        CHECK(table.find("lora_r2") != std::string::npos);
        CHECK(table.find("aflora_r2") != std::string::npos);

        SUBCASE("single-entry compare lists are rejected") {
            const fs::path solo = dir / "solo.cfg";
            write_file(solo, tiny_config_text("solo") + "compare.modes=lora:2\n");
            CHECK(run_compare_command(solo.string()) == 2);
        }
    }

    SUBCASE("ablation arms and summary") {
        const fs::path cfg = dir / "ablate.cfg";
        write_file(cfg, tiny_config_text("abl"));
        CHECK(run_ablation_command("pairing", cfg.string()) == 0);
        CHECK(fs::exists(dir / "abl" / "pairing" / "independent" / "report.json"));
        CHECK(fs::exists(dir / "abl" / "pairing" / "simultaneous" / "report.json"));
        CHECK(fs::exists(dir / "abl" / "pairing" / "ablation_summary.csv"));
        CHECK(run_ablation_command("flavor", cfg.string()) == 2);

        const fs::path lora_cfg = dir / "ablate_lora.cfg";
        write_file(lora_cfg, tiny_config_text("abl2") + "mode=lora\n");
        CHECK(run_ablation_command("pairing", lora_cfg.string()) == 2);
    }

    SUBCASE("heatmap rebuild from a finished run") {
        const fs::path cfg = dir / "heat.cfg";
        write_file(cfg, tiny_config_text("heat_out"));
        REQUIRE(run_train_command(cfg.string()) == 0);
        const fs::path run_dir = dir / "heat_out";
        const std::string before = read_file(run_dir / "heatmap.csv");
        fs::remove(run_dir / "heatmap.csv");
        CHECK(run_heatmap_command(run_dir.string()) == 0);
        CHECK(read_file(run_dir / "heatmap.csv") == before);
        CHECK(run_heatmap_command((dir / "nowhere").string()) == 2);
    }

    unsetenv("AFLORA_OUTPUT_ROOT");
}

TEST_CASE("output directory resolution") {
    setenv("AFLORA_OUTPUT_ROOT", "/tmp/aflora_root", 1);
    CHECK(resolve_output_dir("runs/x") == "/tmp/aflora_root/runs/x");
    CHECK(resolve_output_dir("/abs/path") == "/abs/path");
    unsetenv("AFLORA_OUTPUT_ROOT");
    CHECK(resolve_output_dir("runs/x") == "runs/x");
}

TEST_CASE("ablation arm construction") {
    ExperimentConfig base;  // aflora by default
    const auto variants = ablation_arms("score-variant", base);
    REQUIRE(variants.size() == 3);
    CHECK(variants[0].label == "abs_grad");
    CHECK(variants[1].config.score_variant == ScoreVariant::AbsParamTimesGrad);
    // arms differ only in the ablated field
    ExperimentConfig expect = base;
    expect.score_variant = ScoreVariant::AbsGradOverParam;
    CHECK(variants[2].config == expect);

    const auto placement = ablation_arms("placement", base);
    REQUIRE(placement.size() == 3);
    CHECK(placement[0].label == "ffn");
    CHECK((placement[1].config.pm_trainable_sites == SiteMask{true, false}));
    CHECK((placement[2].config.pm_trainable_sites == SiteMask{true, true}));

    CHECK_THROWS_AS(ablation_arms("score-variant", [] {
                        ExperimentConfig c;
                        c.mode = ModeKind::LoRA;
                        return c;
                    }()),
                    ConfigError);
}
