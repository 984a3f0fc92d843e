#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spt/evaluator.hpp"
#include "spt/memory_bank.hpp"
#include "spt/model.hpp"
#include "spt/ops.hpp"
#include "spt/soft_prompt.hpp"
#include "spt/tensor.hpp"
#include "spt/tokenizer.hpp"
#include "spt/trainer.hpp"

using namespace spt;

namespace {

// A self-contained training world over a toy polarity task.
struct World {
    Vocab vocab;
    ModelConfig cfg;
    Seq2SeqModel model;
    MemoryBank bank;
    SoftPrompt soft;
    std::vector<PromptedExample> train, val;

    static World make(int k2, std::uint64_t seed = 71) {
        World w;
        w.vocab = build_vocab({"this is fine awful great poor good bad really quite"}, 64);
        w.cfg.vocab_size = w.vocab.size();
        w.cfg.embed_dim = 8;
        w.cfg.layers = 1;
        w.cfg.heads = 2;
        w.cfg.ffn_dim = 16;
        w.cfg.max_positions = 24;
        w.model = Seq2SeqModel::init(w.cfg, seed);
        w.bank = MemoryBank::init(w.model.embedding());
        if (k2 > 0) w.soft = init_soft_prompt(k2, {"good", "bad"}, w.vocab, w.model.embedding());

        auto ex = [](const std::string& tpl, const std::string& in, const std::string& out) {
            PromptedExample e;
            e.task_name = "taskA";
            e.template_name = tpl;
            e.input_text = in;
            e.target_text = out;
            e.answer_choice_texts = {"good", "bad"};
            return e;
        };
        const char* pos[] = {"this is fine", "this is great", "really quite fine",
                             "quite great really"};
        const char* neg[] = {"this is awful", "this is poor", "really quite awful",
                             "quite poor really"};
        for (int i = 0; i < 4; ++i) {
            w.train.push_back(ex("tpl1", pos[i], "good"));
            w.train.push_back(ex("tpl1", neg[i], "bad"));
        }
        w.val.push_back(ex("tpl1", "is fine", "good"));
        w.val.push_back(ex("tpl1", "is awful", "bad"));
        return w;
    }

    TrainSetup setup(RegimeKind kind, int k1, int k2, double lr, int epochs) {
        TrainSetup s;
        s.regime = TrainRegime{kind, k1, k2, lr, epochs};
        s.model = &model;
        s.soft = &soft;
        s.bank = &bank;
        s.vocab = &vocab;
        s.train_examples = train;
        s.validation_examples = val;
        s.seed = 2025;
        s.batch_size = 4;
        return s;
    }
};

std::vector<std::pair<std::string, std::vector<double>>> snapshot(const Seq2SeqModel& m) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (auto& [n, t] : m.named_parameters()) out.emplace_back(n, t.data());
    return out;
}

}  // namespace

TEST_CASE("regime defaults match the published setups") {
    TrainRegime f = TrainRegime::defaults(RegimeKind::FullFT);
    CHECK(f.k1 == 20);
    CHECK(f.k2 == 0);
    CHECK(f.lr == 0.0001);
    CHECK(f.epochs == 1);

    TrainRegime p = TrainRegime::defaults(RegimeKind::PeftPretrain);
    CHECK(p.k1 == 10);
    CHECK(p.k2 == 90);
    CHECK(p.lr == 0.3);
    CHECK(p.epochs == 1);

    TrainRegime ft = TrainRegime::defaults(RegimeKind::PeftFinetune);
    CHECK(ft.lr == 0.3);
    CHECK(ft.epochs == 10);

    CHECK(regime_kind_from_string("fullft-spt") == RegimeKind::FullFT);
    CHECK(regime_kind_from_string("peft-pretrain") == RegimeKind::PeftPretrain);
    CHECK(regime_kind_from_string("peft-finetune") == RegimeKind::PeftFinetune);
    CHECK_THROWS_AS(regime_kind_from_string("sgd"), DataError);
    CHECK(regime_kind_to_string(RegimeKind::PeftPretrain) == "peft-pretrain");

    TrainRegime bad = f;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = f;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), DataError);
    bad = f;
    bad.k1 = -1;
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("apply_param_freezing selects the right trainable sets") {
    World w = World::make(4);

    apply_param_freezing(TrainRegime::defaults(RegimeKind::FullFT), w.model, w.soft);
    for (auto& [n, t] : w.model.named_parameters()) CHECK(t.requires_grad());
    CHECK_FALSE(w.soft.trainable());

    apply_param_freezing({RegimeKind::PeftPretrain, 2, 4, 0.3, 1}, w.model, w.soft);
    for (auto& [n, t] : w.model.named_parameters()) {
        if (n == "embedding")
            CHECK(t.requires_grad());
        else
            CHECK_FALSE(t.requires_grad());
    }
    CHECK(w.soft.trainable());

    apply_param_freezing({RegimeKind::PeftFinetune, 2, 4, 0.3, 1}, w.model, w.soft);
    for (auto& [n, t] : w.model.named_parameters()) CHECK_FALSE(t.requires_grad());
    CHECK(w.soft.trainable());

    CHECK(trainable_parameters(w.model, w.soft).size() == 1);
}

TEST_CASE("adam_step closed forms") {
    AdamConfig cfg;
    cfg.lr = 0.1;

    SECTION("zero grad is a fixed point") {
        Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
        p.grad().assign(p.numel(), 0.0);  // materialize an all-zero grad
        AdamSlot slot;
        for (long t = 1; t <= 5; ++t) adam_step(p, slot, t, cfg);
        CHECK(p.data() == std::vector<double>{1.0, -2.0, 0.5});

        Tensor q = Tensor::from_data({2}, {4.0, 5.0}, true);  // no grad buffer at all
        AdamSlot slot2;
        adam_step(q, slot2, 1, cfg);
        CHECK(q.data() == std::vector<double>{4.0, 5.0});
    }
    SECTION("first step with g=1 moves by about -lr") {
        Tensor p = Tensor::from_data({1}, {1.0}, true);
        p.grad().assign(1, 1.0);
        AdamSlot slot;
        adam_step(p, slot, 1, cfg);
        CHECK(p.data()[0] == Catch::Approx(0.900000001).epsilon(1e-15));
        CHECK(std::abs(p.data()[0] - (1.0 - cfg.lr)) < 1e-8);
    }
}

TEST_CASE("adam matches a reference trace on x squared") {
    // frozen from an independent scripted Adam (lr=0.1, betas 0.9/0.999,
    // eps 1e-8, bias correction), f(x) = x^2 from x = 1
    const double expect[10] = {0.9000000005,       0.8004122286917928, 0.7015862729460303,
                               0.603939060573746,  0.507963659264342,  0.4142364559936619,
                               0.3234207049391021, 0.23626372452104188, 0.1535845600703636,
                               0.07624915560691221};

    SECTION("direct adam_step with hand-fed gradients") {
        Tensor x = Tensor::from_data({1}, {1.0}, true);
        AdamSlot slot;
        AdamConfig cfg;
        cfg.lr = 0.1;
        for (long t = 1; t <= 10; ++t) {
            x.grad().assign(1, 2.0 * x.data()[0]);
            adam_step(x, slot, t, cfg);
            REQUIRE(x.data()[0] == Catch::Approx(expect[t - 1]).epsilon(1e-12));
        }
    }
    SECTION("through the optimizer and the autodiff graph") {
        Tensor x = Tensor::from_data({1, 1}, {1.0}, true);
        AdamOptimizer opt({x}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
        for (int t = 1; t <= 10; ++t) {
            opt.zero_grad();
            backward(matmul(x, x));
            opt.step();
            REQUIRE(x.data()[0] == Catch::Approx(expect[t - 1]).epsilon(1e-12));
        }
    }
}

TEST_CASE("clip_global_norm rescales to the threshold") {
    Tensor a = Tensor::from_data({1}, {0.0}, true);
    Tensor b = Tensor::from_data({1}, {0.0}, true);
    a.grad().assign(1, 3.0);
    b.grad().assign(1, 4.0);
    CHECK(clip_global_norm({a, b}, 1.0) == 5.0);
    CHECK(a.grad()[0] == Catch::Approx(0.6).epsilon(1e-15));
    CHECK(b.grad()[0] == Catch::Approx(0.8).epsilon(1e-15));

    a.grad()[0] = 0.3;
    b.grad()[0] = 0.4;
    CHECK(clip_global_norm({a, b}, 1.0) == 0.5);
    CHECK(a.grad()[0] == 0.3);  // under the threshold, untouched

    Tensor c = Tensor::from_data({1}, {1.0}, true);
    CHECK(clip_global_norm({c}, 1.0) == 0.0);  // no grads anywhere
}

TEST_CASE("frozen sets are bit-identical through a real run") {
    SECTION("fullft-spt trains the model, leaves bank and soft alone") {
        World w = World::make(0);
        std::uint64_t fp = w.bank.fingerprint();
        auto before = snapshot(w.model);
        TrainSetup s = w.setup(RegimeKind::FullFT, 2, 0, 0.01, 2);
        run_training(s);
        CHECK(w.bank.verify_fingerprint());
        CHECK(w.bank.fingerprint() == fp);
        auto after = snapshot(w.model);
        CHECK(before[0].second != after[0].second);  // embedding moved
    }
    SECTION("peft-pretrain trains embedding and soft only") {
        World w = World::make(4);
        auto before = snapshot(w.model);
        std::vector<double> soft_before = w.soft.matrix.data();
        TrainSetup s = w.setup(RegimeKind::PeftPretrain, 2, 4, 0.05, 2);
        run_training(s);
        auto after = snapshot(w.model);
        for (std::size_t i = 0; i < before.size(); ++i) {
            if (before[i].first == "embedding")
                CHECK(before[i].second != after[i].second);
            else
                REQUIRE(before[i].second == after[i].second);  // frozen, bit-identical
        }
        CHECK(w.soft.matrix.data() != soft_before);
        CHECK(w.bank.verify_fingerprint());
    }
    SECTION("peft-finetune trains the soft prompt only") {
        World w = World::make(4);
        auto before = snapshot(w.model);
        std::vector<double> soft_before = w.soft.matrix.data();
        TrainSetup s = w.setup(RegimeKind::PeftFinetune, 2, 4, 0.3, 2);
        run_training(s);
        auto after = snapshot(w.model);
        for (std::size_t i = 0; i < before.size(); ++i)
            REQUIRE(before[i].second == after[i].second);
        CHECK(w.soft.matrix.data() != soft_before);
    }
}

TEST_CASE("identical runs produce identical traces and selections") {
    World w1 = World::make(4);
    World w2 = World::make(4);
    TrainSetup s1 = w1.setup(RegimeKind::PeftPretrain, 2, 4, 0.05, 3);
    TrainSetup s2 = w2.setup(RegimeKind::PeftPretrain, 2, 4, 0.05, 3);
    TrainResult r1 = run_training(s1);
    TrainResult r2 = run_training(s2);

    CHECK(r1.loss_trace == r2.loss_trace);
    CHECK(r1.validation_trace == r2.validation_trace);
    CHECK(r1.best_step == r2.best_step);
    CHECK(r1.best_score == r2.best_score);
    CHECK(w1.model.embedding().data() == w2.model.embedding().data());
    CHECK(w1.soft.matrix.data() == w2.soft.matrix.data());
    CHECK(r1.total_steps == 6);  // 8 examples / batch 4 = 2 steps x 3 epochs
}

TEST_CASE("run directory artifacts: loss.csv, checkpoints, best.txt") {
    namespace fs = std::filesystem;
    World w = World::make(0);
    fs::path dir = fs::temp_directory_path() / "spt_trainer_run";
    fs::remove_all(dir);
    TrainSetup s = w.setup(RegimeKind::FullFT, 2, 0, 0.01, 2);
    s.run_dir = dir.string();
    TrainResult r = run_training(s);

    std::ifstream loss(dir / "loss.csv");
    REQUIRE(loss.good());
    std::string line;
    std::getline(loss, line);
    CHECK(line == "step,loss");
    int rows = 0;
    while (std::getline(loss, line))
        if (!line.empty()) ++rows;
    CHECK(rows == r.total_steps);

    for (auto& [step, score] : r.validation_trace)
        CHECK(fs::exists(dir / "checkpoints" / ("step-" + std::to_string(step) + ".bin")));
    CHECK(fs::exists(fs::path(r.best_checkpoint_path)));

    std::ifstream best(dir / "best.txt");
    REQUIRE(best.good());
    int best_step = -1;
    double best_score = -1.0;
    best >> best_step >> best_score;
    CHECK(best_step == r.best_step);
    CHECK(best_score == Catch::Approx(r.best_score));
    fs::remove_all(dir);
}

TEST_CASE("snapshot cadence and max_steps") {
    SECTION("eval_every adds mid-epoch snapshots, deduplicated") {
        World w = World::make(4);
        TrainSetup s = w.setup(RegimeKind::PeftFinetune, 2, 4, 0.3, 3);
        s.eval_every = 4;
        TrainResult r = run_training(s);
        REQUIRE(r.validation_trace.size() == 3);
        CHECK(r.validation_trace[0].first == 2);  // epoch ends at 2, 4, 6
        CHECK(r.validation_trace[1].first == 4);  // eval_every and epoch end collapse
        CHECK(r.validation_trace[2].first == 6);
    }
    SECTION("max_steps cuts the run and still snapshots") {
        World w = World::make(4);
        TrainSetup s = w.setup(RegimeKind::PeftFinetune, 2, 4, 0.3, 5);
        s.max_steps = 3;
        TrainResult r = run_training(s);
        CHECK(r.total_steps == 3);
        REQUIRE(r.validation_trace.size() == 2);
        CHECK(r.validation_trace[0].first == 2);
        CHECK(r.validation_trace[1].first == 3);
    }
    SECTION("ties select the earliest snapshot") {
        World w = World::make(4);
        TrainSetup s = w.setup(RegimeKind::PeftFinetune, 2, 4, 0.3, 2);
        s.validation_examples.clear();  // every snapshot scores 0
        TrainResult r = run_training(s);
        CHECK(r.best_step == 2);
        CHECK(r.best_score == 0.0);
    }
}

TEST_CASE("non-finite loss aborts with provenance") {
    World w = World::make(0);
    Tensor wq = w.model.parameter("enc.0.attn.wq");
    wq.data()[0] = std::nan("");
    TrainSetup s = w.setup(RegimeKind::FullFT, 2, 0, 0.01, 1);
    CHECK_THROWS_MATCHES(run_training(s), NumericError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("step 1") &&
                             Catch::Matchers::ContainsSubstring("taskA/tpl1")));
}

TEST_CASE("setup validation errors") {
    World w = World::make(4);

    TrainSetup s = w.setup(RegimeKind::PeftFinetune, 2, 4, 0.3, 1);
    s.train_examples.clear();
    CHECK_THROWS_AS(run_training(s), DataError);

    TrainSetup s2 = w.setup(RegimeKind::PeftFinetune, 2, 4, 0.3, 1);
    s2.batch_size = 0;
    CHECK_THROWS_AS(run_training(s2), DataError);

    // soft prompt length must equal the regime's k2
    TrainSetup s3 = w.setup(RegimeKind::PeftFinetune, 2, 6, 0.3, 1);
    CHECK_THROWS_AS(run_training(s3), DataError);

    TrainSetup s4 = w.setup(RegimeKind::PeftFinetune, 2, 4, 0.3, 1);
    s4.model = nullptr;
    CHECK_THROWS_AS(run_training(s4), DataError);
}

TEST_CASE("retrieval cache is bit-equal to recomputation") {
    World w = World::make(4);
    PromptPipeline cached{&w.model, &w.soft, &w.bank, &w.vocab, 3};
    cached.cache_retrieval = true;
    PromptPipeline fresh{&w.model, &w.soft, &w.bank, &w.vocab, 3};

    for (int round = 0; round < 3; ++round) {
        for (const PromptedExample& ex : w.train) {
            std::vector<int> ids = fresh.encode_input(ex.input_text);
            MemoryPrompt a = cached.retrieve_for(ids);
            MemoryPrompt b = fresh.retrieve_for(ids);
            REQUIRE(a.token_ids == b.token_ids);
            REQUIRE(a.scores == b.scores);
            REQUIRE(a.embeddings.data() == b.embeddings.data());
        }
    }
    CHECK_FALSE(cached.retrieval_cache.empty());
    CHECK(fresh.retrieval_cache.empty());
}
