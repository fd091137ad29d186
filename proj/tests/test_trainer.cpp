#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "aflora/errors.hpp"
#include "aflora/optim.hpp"
#include "aflora/trainer.hpp"

using namespace aflora;

namespace {

ModelConfig tiny_model_config(ModeKind kind) {
    ModelConfig c;
    c.n_blocks = 1;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ffn = 32;
    c.vocab_size = 8;
    c.max_seq_len = 6;
    c.n_classes = 2;
    c.mode = AdapterMode{kind, 2, SiteMask{false, true}};
    return c;
}

SplitDataset tiny_data(int64_t n_train = 64, int64_t n_eval = 16) {
    TaskSpec spec;
    spec.kind = TaskKind::Parity;
    spec.n_train = n_train;
    spec.n_eval = n_eval;
    spec.seq_len = 4;
    spec.vocab = 8;
    spec.seed = 9;
    return generate_task(spec);
}

TrainConfig short_schedule(int64_t epochs, int64_t batch) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch;
    t.t_i_epochs = 0.5;
    t.t_f_epochs = 1.0;
    t.warmup_fraction = 0.1;
    return t;
}

}  // namespace

TEST_CASE("learning-rate shape") {
    // 6% warmup over 100 steps: ramp on [0, 6], decay to zero at 100
    CHECK(lr_at(0, 100, 2.0, 0.06) == 0.0);
    CHECK(lr_at(3, 100, 2.0, 0.06) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(lr_at(6, 100, 2.0, 0.06) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(lr_at(53, 100, 2.0, 0.06) == doctest::Approx(2.0 * 47.0 / 94.0).epsilon(1e-12));
    CHECK(lr_at(100, 100, 2.0, 0.06) == 0.0);

    // no warmup: starts at base
    CHECK(lr_at(0, 10, 1.0, 0.0) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(lr_at(-1, 100, 1.0, 0.0), ContractError);
    CHECK_THROWS_AS(lr_at(101, 100, 1.0, 0.0), ContractError);
}

TEST_CASE("adaptive-moment updates") {
    SUBCASE("first-step hand value") {
        Tensor w = Tensor::from_data({1}, {1.0}, true);
        w.node()->ensure_grad();
        w.node()->grad[0] = 0.1;
        AdamW opt({{std::vector<Tensor>{w}, 0.01}});
        opt.step(1.0);
        // m_hat = 0.1, v_hat = 0.01, update = lr * m_hat / (sqrt(v_hat) + eps)
        CHECK(w.at(0) == doctest::Approx(0.99).epsilon(1e-7));
    }

    SUBCASE("zero gradient leaves the value in place (no decay)") {
        Tensor w = Tensor::from_data({1}, {3.0}, true);
        w.node()->ensure_grad();
        AdamW opt({{std::vector<Tensor>{w}, 0.5}});
        opt.step(1.0);
        CHECK(w.at(0) == 3.0);
    }

    SUBCASE("decoupled weight decay applies even with zero gradient") {
        Tensor w = Tensor::from_data({1}, {2.0}, true);
        w.node()->ensure_grad();
        AdamW opt({{std::vector<Tensor>{w}, 0.1}}, 0.9, 0.999, 1e-8, 0.5);
        opt.step(1.0);
        // w -= lr * wd * w = 2 - 0.1*0.5*2
        CHECK(w.at(0) == doctest::Approx(1.9).epsilon(1e-12));
    }

    SUBCASE("frozen parameters are skipped and their state dropped") {
        Tensor w = Tensor::from_data({1}, {1.0}, true);
        w.node()->ensure_grad();
        w.node()->grad[0] = 0.1;
        AdamW opt({{std::vector<Tensor>{w}, 0.01}});
        opt.step(1.0);
        CHECK(opt.has_state(w));

        const double frozen_value = w.at(0);
        w.set_requires_grad(false);
        opt.step(1.0);
        CHECK(w.at(0) == frozen_value);
        CHECK_FALSE(opt.has_state(w));

        // unfreezing later restarts from fresh state rather than stale moments
        w.set_requires_grad(true);
        w.node()->ensure_grad();
        w.node()->grad[0] = 0.1;
        opt.step(1.0);
        CHECK(opt.has_state(w));
    }

    SUBCASE("trainable parameter without a gradient is a contract violation") {
        Tensor w = Tensor::from_data({1}, {1.0}, true);
        AdamW opt({{std::vector<Tensor>{w}, 0.01}});
        CHECK_THROWS_AS(opt.step(1.0), ContractError);
    }

    SUBCASE("zero_grad clears every group") {
        Tensor a = Tensor::from_data({1}, {1.0}, true);
        Tensor b = Tensor::from_data({1}, {1.0}, true);
        a.node()->ensure_grad();
        a.node()->grad[0] = 5;
        b.node()->ensure_grad();
        b.node()->grad[0] = 5;
        AdamW opt({{std::vector<Tensor>{a}, 0.1}, {std::vector<Tensor>{b}, 0.2}});
        opt.zero_grad();
        CHECK_FALSE(a.has_grad());
        CHECK_FALSE(b.has_grad());
    }

    SUBCASE("per-parameter bias correction survives a late join") {
        // two params, one added to the graph later via fresh grads each step
        Tensor a = Tensor::from_data({1}, {1.0}, true);
        AdamW opt({{std::vector<Tensor>{a}, 0.01}});
        for (int i = 0; i < 3; ++i) {
            a.node()->ensure_grad();
            a.node()->grad[0] = 0.1;
            opt.step(1.0);
        }
        // freeze, thaw: t restarts at 1, so the first post-thaw step matches a
        // brand new parameter's step
        const double after3 = a.at(0);
        a.set_requires_grad(false);
        opt.step(1.0);
        a.set_requires_grad(true);
        Tensor fresh = Tensor::from_data({1}, {after3}, true);
        AdamW opt2({{std::vector<Tensor>{fresh}, 0.01}});
        a.node()->grad.assign(1, 0.1);
        fresh.node()->grad.assign(1, 0.1);
        opt.step(1.0);
        opt2.step(1.0);
        CHECK(a.at(0) == doctest::Approx(fresh.at(0)).epsilon(1e-12));
    }
}

TEST_CASE("training loop integration") {
    const SplitDataset data = tiny_data();

    SUBCASE("schedule bookkeeping and freezing progress") {
        SeededRng rng(4);
        TransformerModel model = build_model(tiny_model_config(ModeKind::AFLoRA), rng);
        TrainConfig cfg = short_schedule(4, 16);  // 4 steps/epoch, T = 16
        ExperimentReport rep = train(model, data.train, data.eval, cfg);

        CHECK(rep.steps_per_epoch == 4);
        CHECK(rep.total_steps == 16);
        CHECK(rep.t_i_steps == 2);
        CHECK(rep.t_f_steps == 4);
        CHECK(rep.n_eligible_pms == 4);  // 1 block, 2 ffn sites, A and B
        REQUIRE(rep.records.size() == 16);

        for (size_t i = 0; i < rep.records.size(); ++i) {
            const auto& r = rep.records[i];
            CHECK(r.step == static_cast<int64_t>(i));
            CHECK(r.epoch == static_cast<int64_t>(i / 4));
            CHECK(std::isfinite(r.loss));
            if (i > 0) {
                CHECK(r.trainable_param_count <= rep.records[i - 1].trainable_param_count);
                CHECK(r.n_frozen_pms >= rep.records[i - 1].n_frozen_pms);
            }
        }

        // plateau reached: every eligible PM frozen, only vectors remain
        CHECK(rep.records.back().n_frozen_pms == 4);
        CHECK(adapter_trainable_param_count(model) ==
              rep.records.back().trainable_param_count);
        for (auto& block : model.blocks)
            for (Site s : kAllSites) {
                CHECK(block.site(s).frozen_a());
                CHECK(block.site(s).frozen_b());
            }
        CHECK(model.head_w.requires_grad());

        REQUIRE(rep.events.size() == 4);
        for (const auto& e : rep.events) {
            CHECK(e.step >= rep.t_i_steps);
            CHECK(e.step <= rep.total_steps - rep.t_f_steps);
            CHECK(site_kind(e.id.site) == SiteKind::Ffn);
        }

        // average of the recorded counts
        double mean = 0.0;
        for (const auto& r : rep.records) mean += static_cast<double>(r.trainable_param_count);
        mean /= static_cast<double>(rep.records.size());
        CHECK(rep.cost.avg_trainable_params == doctest::Approx(mean).epsilon(1e-9));
        CHECK(rep.cost.wall_time_seconds > 0.0);
        CHECK(rep.cost.adapter_training_flops > 0.0);

        CHECK(rep.final_loss == rep.records.back().loss);
        CHECK(rep.train_accuracy >= 0.0);
        CHECK(rep.train_accuracy <= 1.0);
    }

    SUBCASE("frozen-matrix mode trains vectors only, no freeze events") {
        SeededRng rng(4);
        TransformerModel model = build_model(tiny_model_config(ModeKind::ELoRA), rng);
        TrainConfig cfg = short_schedule(2, 16);
        ExperimentReport rep = train(model, data.train, data.eval, cfg);
        CHECK(rep.n_eligible_pms == 0);
        CHECK(rep.events.empty());
        for (const auto& r : rep.records) {
            CHECK(r.trainable_param_count == rep.records[0].trainable_param_count);
            CHECK(r.n_frozen_pms == 0);
        }
    }

    SUBCASE("two runs with one seed agree exactly") {
        auto run = [&] {
            SeededRng rng(4);
            TransformerModel model = build_model(tiny_model_config(ModeKind::AFLoRA), rng);
            return train(model, data.train, data.eval, short_schedule(3, 16));
        };
        ExperimentReport r1 = run();
        ExperimentReport r2 = run();
        REQUIRE(r1.records.size() == r2.records.size());
        for (size_t i = 0; i < r1.records.size(); ++i) {
            CHECK(r1.records[i].loss == r2.records[i].loss);
            CHECK(r1.records[i].trainable_param_count == r2.records[i].trainable_param_count);
        }
        REQUIRE(r1.events.size() == r2.events.size());
        for (size_t i = 0; i < r1.events.size(); ++i) {
            CHECK(r1.events[i].step == r2.events[i].step);
            CHECK(r1.events[i].id == r2.events[i].id);
            CHECK(r1.events[i].score_at_freeze == r2.events[i].score_at_freeze);
        }
        CHECK(r1.eval_accuracy == r2.eval_accuracy);
    }

    SUBCASE("head learning rate is independent of the adapter rate") {
        auto run_once = [&](double clf_lr) {
            SeededRng rng(4);
            TransformerModel model = build_model(tiny_model_config(ModeKind::LoRA), rng);
            TrainConfig cfg;
            cfg.epochs = 1;
            cfg.batch_size = 64;  // single step
            cfg.t_i_epochs = 0.0;
            cfg.t_f_epochs = 0.0;
            cfg.warmup_fraction = 0.0;
            cfg.clf_lr = clf_lr;
            train(model, data.train, data.eval, cfg);
            return model;
        };
        TransformerModel m1 = run_once(0.05);
        TransformerModel m2 = run_once(0.005);
        bool head_differs = false;
        for (int64_t i = 0; i < m1.head_w.size(); ++i)
            head_differs |= (m1.head_w.values()[i] != m2.head_w.values()[i]);
        CHECK(head_differs);
        for (int64_t i = 0; i < m1.blocks[0].q.a.size(); ++i)
            CHECK(m1.blocks[0].q.a.values()[i] == m2.blocks[0].q.a.values()[i]);
    }

    SUBCASE("infeasible freeze window") {
        SeededRng rng(4);
        TransformerModel model = build_model(tiny_model_config(ModeKind::AFLoRA), rng);
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = 64;  // T = 1 but t_i = 1 epoch = 1 step
        cfg.t_i_epochs = 1.0;
        cfg.t_f_epochs = 0.0;
        CHECK_THROWS_AS(train(model, data.train, data.eval, cfg), ScheduleError);
    }

    SUBCASE("empty data is rejected") {
        SeededRng rng(4);
        TransformerModel model = build_model(tiny_model_config(ModeKind::AFLoRA), rng);
        Dataset empty;
        empty.seq_len = 4;
        empty.vocab = 8;
        CHECK_THROWS_AS(train(model, empty, empty, short_schedule(2, 16)), ConfigError);
    }

    SUBCASE("sequences longer than the model are rejected") {
        SeededRng rng(4);
        TransformerModel model = build_model(tiny_model_config(ModeKind::AFLoRA), rng);
        TaskSpec spec;
        spec.seq_len = 7;  // max_seq_len is 6
        spec.n_train = 8;
        spec.n_eval = 4;
        spec.vocab = 8;
        SplitDataset wide = generate_task(spec);
        CHECK_THROWS_AS(train(model, wide.train, wide.eval, short_schedule(2, 8)), ConfigError);
    }

    SUBCASE("observer sees every step") {
        SeededRng rng(4);
        TransformerModel model = build_model(tiny_model_config(ModeKind::AFLoRA), rng);
        TrainConfig cfg = short_schedule(2, 16);
        std::vector<int64_t> seen;
        cfg.on_step = [&](const TransformerModel&, int64_t step) { seen.push_back(step); };
        train(model, data.train, data.eval, cfg);
        REQUIRE(seen.size() == 8);
        for (size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == static_cast<int64_t>(i));
    }
}

TEST_CASE("evaluation") {
    const SplitDataset data = tiny_data(32, 8);
    SeededRng rng(12);
    TransformerModel model = build_model(tiny_model_config(ModeKind::AFLoRA), rng);

    const double acc = evaluate(model, data.eval, 8);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(evaluate(model, data.eval, 3) == acc);  // batch split cannot matter

    Dataset empty;
    empty.seq_len = 4;
    empty.vocab = 8;
    CHECK_THROWS_AS(evaluate(model, empty, 8), ContractError);
}
