// End-to-end acceptance harness. One check per criterion, one PASS/FAIL
// line each; the exit code is the number of failed criteria. Fast
// property checks run in-process; the training criteria shell out to the
// real CLI so the shipped configs and file formats are exercised as a
// user would.
//
// Usage: acceptance --bin <spt-cli> --data <data-dir> --workdir <scratch>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spt/run_config.hpp"

namespace fs = std::filesystem;
using namespace spt;

namespace {

struct Check : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void expect(bool ok, const std::string& what) {
    if (!ok) throw Check(what);
}

std::string g_bin, g_data, g_work;

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    expect(static_cast<bool>(f), "cannot read " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string tail_of(const std::string& path, std::size_t n = 400) {
    std::string s;
    try {
        s = slurp(path);
    } catch (const Check&) {
        return "(no log)";
    }
    if (s.size() > n) s = "..." + s.substr(s.size() - n);
    for (char& c : s)
        if (c == '\n') c = '|';
    return s;
}

void run_cli(const std::string& args, const std::string& log_name) {
    std::string log = g_work + "/" + log_name + ".log";
    std::string cmd = g_bin + " " + args + " > " + log + " 2>&1";
    std::fflush(stdout);
    int rc = std::system(cmd.c_str());
    expect(rc == 0, "command failed (" + args + "): " + tail_of(log));
}

std::pair<int, double> read_best(const std::string& run_dir) {
    std::ifstream f(run_dir + "/best.txt");
    int step = 0;
    double score = 0.0;
    expect(static_cast<bool>(f >> step >> score), "cannot parse " + run_dir + "/best.txt");
    return {step, score};
}

// Highest step-N.bin under <run_dir>/checkpoints: the final snapshot.
std::string final_checkpoint(const std::string& run_dir) {
    int best = -1;
    for (const auto& e : fs::directory_iterator(run_dir + "/checkpoints")) {
        std::string name = e.path().filename().string();
        if (name.rfind("step-", 0) != 0) continue;
        int step = std::atoi(name.c_str() + 5);
        if (step > best) best = step;
    }
    expect(best >= 0, "no checkpoints under " + run_dir);
    return run_dir + "/checkpoints/step-" + std::to_string(best) + ".bin";
}

// ---------------------------------------------------------------- 1
// retrieve equals a full-sort brute-force oracle on 1000 randomized
// trials; every 25th trial plants a duplicate row to force a tie.
std::string c1_retrieval() {
    const std::array<std::size_t, 3> vs = {64, 512, 4096};
    const std::array<std::size_t, 2> ds = {8, 64};
    const std::array<int, 3> ks = {1, 5, 20};
    SplitMix64 rng(20240301);

    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t v = vs[static_cast<std::size_t>(trial) % 3];
        std::size_t d = ds[(static_cast<std::size_t>(trial) / 3) % 2];
        int k1 = ks[(static_cast<std::size_t>(trial) / 6) % 3];

        Tensor emb = Tensor::zeros({v, d});
        for (double& x : emb.data()) x = 2.0 * rng.uniform() - 1.0;
        if (trial % 25 == 0 && v > 4) {
            std::size_t j = 3 + rng.bounded(v - 4);
            for (std::size_t c = 0; c < d; ++c) emb.at(j + 1, c) = emb.at(j, c);
        }
        MemoryBank bank = MemoryBank::init(emb);
        std::vector<double> query(d);
        for (double& x : query) x = 2.0 * rng.uniform() - 1.0;

        MemoryPrompt got = retrieve(bank, query, k1);

        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t id = Vocab::kNumSpecial; id < v; ++id) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += query[c] * emb.at(id, c);
            all.emplace_back(s, id);
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });

        expect(got.token_ids.size() == static_cast<std::size_t>(k1),
               "trial " + std::to_string(trial) + ": wrong result count");
        for (std::size_t i = 0; i < static_cast<std::size_t>(k1); ++i) {
            expect(got.token_ids[i] == static_cast<int>(all[i].second),
                   "trial " + std::to_string(trial) + ": id mismatch at rank " +
                       std::to_string(i));
            expect(got.scores[i] == all[i].first,
                   "trial " + std::to_string(trial) + ": score mismatch at rank " +
                       std::to_string(i));
            for (std::size_t c = 0; c < d; ++c)
                expect(got.embeddings.at(i, c) == emb.at(all[i].second, c),
                       "trial " + std::to_string(trial) + ": row copy mismatch");
        }
    }
    return "1000 trials, ids, order, scores and rows exact";
}

// ---------------------------------------------------------------- 2
// pool_query equals an independent column mean; PAD rows are excluded.
std::string c2_pooling() {
    SplitMix64 rng(42);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        std::size_t q = 1 + rng.bounded(12), d = 1 + rng.bounded(16);
        Tensor rows = Tensor::zeros({q, d});
        for (double& x : rows.data()) x = 4.0 * rng.uniform() - 2.0;
        std::vector<double> got = pool_query(rows);
        for (std::size_t c = 0; c < d; ++c) {
            double sum = 0.0;
            for (std::size_t r = 0; r < q; ++r) sum += rows.at(r, c);
            worst = std::max(worst, std::abs(got[c] - sum / static_cast<double>(q)));
        }
    }
    expect(worst <= 1e-12, "column mean off by " + std::to_string(worst));

    Tensor rows = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    std::vector<double> masked = pool_query(rows, {true, false, true});
    expect(masked[0] == 3.0 && masked[1] == 4.0, "keep mask not honored");

    Tensor emb = Tensor::zeros({5, 2});
    for (std::size_t r = 0; r < 5; ++r) {
        emb.at(r, 0) = static_cast<double>(r);
        emb.at(r, 1) = 10.0 + static_cast<double>(r);
    }
    std::vector<double> pooled = pool_query_ids(emb, {4, 0, 3, 0});
    expect(pooled[0] == 3.5 && pooled[1] == 13.5, "PAD ids not excluded from the mean");

    bool threw = false;
    try {
        pool_query_ids(emb, {0, 0});
    } catch (const DataError&) {
        threw = true;
    }
    expect(threw, "all-PAD query must be rejected");
    return "100 matrices within 1e-12, PAD exclusion holds";
}

// ---------------------------------------------------------------- 3
// 200 steps per regime; the bank never moves, and the per-regime frozen
// parameter sets are bit-identical before and after.
std::string c3_freezing() {
    auto run200 = [](const std::string& config_name, const std::string& tag) {
        RunConfig cfg = load_run_config(g_data + "/configs/" + config_name);
        cfg.eval_every = 0;
        cfg.max_steps = 200;
        cfg.epochs = 200;
        PreparedRun run = prepare_run(cfg);
        std::uint64_t fp = run.bank.fingerprint();

        std::string before = g_work + "/freeze-" + tag + "-before.bin";
        std::string after = g_work + "/freeze-" + tag + "-after.bin";
        save_checkpoint(before, run.model, run.soft, run.vocab, 0, 0);

        TrainSetup s;
        s.regime = run.regime;
        s.model = &run.model;
        s.soft = &run.soft;
        s.bank = &run.bank;
        s.vocab = &run.vocab;
        s.train_examples = run.mixture.examples;
        s.seed = run.cfg.seed;
        s.batch_size = run.cfg.batch_size;
        s.max_steps = 200;
        TrainResult r = run_training(s);
        expect(r.total_steps == 200, tag + ": expected 200 steps, got " +
                                         std::to_string(r.total_steps));

        expect(run.bank.fingerprint() == fp && run.bank.verify_fingerprint(),
               tag + ": bank fingerprint moved during training");
        save_checkpoint(after, run.model, run.soft, run.vocab, 0, 0);
        return diff_checkpoint_sections(before, after);
    };

    std::vector<std::string> full = run200("fullft.json", "fullft");
    expect(!full.empty(), "fullft: 200 steps changed nothing");
    for (const std::string& name : full)
        expect(name.rfind("param/", 0) == 0,
               "fullft: unexpected non-parameter change in " + name);

    std::vector<std::string> pre = run200("peft_pretrain.json", "pretrain");
    for (const std::string& name : pre)
        expect(name == "param/embedding" || name == "soft_prompt",
               "pretrain: frozen section changed: " + name);
    expect(std::count(pre.begin(), pre.end(), "param/embedding") == 1 &&
               std::count(pre.begin(), pre.end(), "soft_prompt") == 1,
           "pretrain: embedding or soft prompt did not train");

    std::vector<std::string> fine = run200("peft_finetune.json", "finetune");
    expect(fine == std::vector<std::string>{"soft_prompt"},
           "finetune: changed sections are not exactly {soft_prompt}");
    return "bank frozen in all regimes, frozen sets bit-identical";
}

// ---------------------------------------------------------------- 4
// Finite differences through the whole pipeline on a 2-layer d=8 model
// with k1 = k2 = 4; memory rows get no gradient, soft rows do.
std::string c4_gradients() {
    std::vector<std::string> corpus = {
        "the cat sat on the mat",    "a dog ran over the hill",
        "yes that is quite right",   "no that seems wrong to me",
        "birds sing in the morning", "rain fell on the quiet town",
    };
    Vocab vocab = build_vocab(corpus, 64);
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.embed_dim = 8;
    mc.layers = 2;
    mc.heads = 2;
    mc.ffn_dim = 16;
    mc.max_positions = 40;
    Seq2SeqModel model = Seq2SeqModel::init(mc, 12345);
    MemoryBank bank = MemoryBank::init(model.embedding());
    SoftPrompt soft = init_soft_prompt(4, {"yes", "no"}, vocab, model.embedding());
    PromptPipeline pipe{&model, &soft, &bank, &vocab, 4};

    const std::string input = "the cat sat on the mat";
    const std::string target = "yes";

    {  // gradient routing on a fresh graph
        soft.matrix.set_requires_grad(true);
        AssembledInput in = pipe.assemble_for(input);
        Tensor loss = model.forward_loss(in, pipe.target_ids(target));
        backward(loss);
        bool mem_zero = !in.memory_segment.has_grad();
        if (!mem_zero) {
            mem_zero = true;
            for (double g : in.memory_segment.grad()) mem_zero = mem_zero && g == 0.0;
        }
        expect(mem_zero, "memory prompt rows received gradient");
        expect(soft.matrix.has_grad(), "soft prompt rows received no gradient");
        double mag = 0.0;
        for (double g : soft.matrix.grad()) mag += std::abs(g);
        expect(mag > 0.0, "soft prompt gradient is identically zero");
    }

    auto loss_fn = [&](Tensor&) {
        AssembledInput in = pipe.assemble_for(input);
        return model.forward_loss(in, pipe.target_ids(target));
    };
    double worst = 0.0;
    std::string worst_name;
    auto check_param = [&](const std::string& name, Tensor t) {
        double err = grad_check(loss_fn, t, 1e-5);
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
    };
    for (const auto& [name, t] : model.named_parameters()) check_param(name, t);
    check_param("soft_prompt", soft.matrix);

    char buf[96];
    std::snprintf(buf, sizeof buf, "max relative error %.3g (%s)", worst, worst_name.c_str());
    expect(worst < 1e-4, buf);
    return buf;
}

// ---------------------------------------------------------------- 5
// expand_dataset emits exactly p x |D| rows; mixture counts are
// sum over (task, template) of min(cap, |D|).
std::string c5_templates() {
    auto dataset = [](const std::string& name, std::size_t p, std::size_t n) {
        TaskDataset ds;
        ds.task_name = name;
        ds.split = "train";
        for (std::size_t i = 0; i < p; ++i)
            ds.templates.push_back(
                make_template("t" + std::to_string(i), "Q: {{text}}", "{{label}}"));
        for (std::size_t j = 0; j < n; ++j)
            ds.examples.push_back(
                {{"text", "w" + std::to_string(j)}, {"label", "x"}});
        return ds;
    };

    for (std::size_t p = 1; p <= 5; ++p)
        for (std::size_t n = 0; n <= 50; ++n)
            expect(expand_dataset(dataset("g", p, n)).size() == p * n,
                   "expand_dataset size off at p=" + std::to_string(p) +
                       ", n=" + std::to_string(n));

    std::vector<TaskDataset> mix = {dataset("a", 2, 0), dataset("b", 1, 3),
                                    dataset("c", 3, 17), dataset("d", 2, 50)};
    for (std::size_t cap : {std::size_t{1}, std::size_t{4}, std::size_t{9},
                            std::size_t{32}, std::size_t{50}}) {
        std::size_t want = 0;
        for (const TaskDataset& ds : mix)
            want += ds.templates.size() * std::min(cap, ds.examples.size());
        MixtureResult got = build_mixture(mix, cap, 7);
        expect(got.examples.size() == want,
               "mixture size off at cap=" + std::to_string(cap));
        std::size_t manifest_total = 0;
        for (const MixtureEntry& e : got.manifest) manifest_total += e.count;
        expect(manifest_total == want && got.manifest.size() == 8,
               "manifest counts off at cap=" + std::to_string(cap));
    }
    return "grid p in [1,5], |D| in [0,50] exact, mixture caps exact";
}

// ---------------------------------------------------------------- 6
// Two CLI train runs with the same config and seed leave byte-identical
// artifacts and pick the same best checkpoint.
std::string c6_determinism() {
    std::string cfg = g_data + "/configs/determinism.json";
    run_cli("train --config " + cfg + " --output-dir " + g_work + "/det-a", "det-a");
    run_cli("train --config " + cfg + " --output-dir " + g_work + "/det-b", "det-b");

    for (const char* name : {"loss.csv", "mixture_manifest.json", "best.txt"})
        expect(slurp(g_work + "/det-a/" + name) == slurp(g_work + "/det-b/" + name),
               std::string(name) + " differs between identical runs");

    auto [step_a, score_a] = read_best(g_work + "/det-a");
    auto [step_b, score_b] = read_best(g_work + "/det-b");
    expect(step_a == step_b && score_a == score_b, "best checkpoint selection differs");
    std::string ckpt = "/checkpoints/step-" + std::to_string(step_a) + ".bin";
    expect(slurp(g_work + "/det-a" + ckpt) == slurp(g_work + "/det-b" + ckpt),
           "best checkpoint bytes differ");
    return "loss.csv, manifest and best checkpoint byte-identical";
}

// ---------------------------------------------------------------- 7
// The shipped configs learn: FullFT-SPT on the held-in mixture, then the
// PEFT pretrain -> finetune handoff onto a held-out task.
std::string c7_learnability() {
    run_cli("train --config " + g_data + "/configs/fullft.json --output-dir " + g_work +
                "/fullft",
            "fullft");
    auto [full_step, full_score] = read_best(g_work + "/fullft");
    expect(full_step <= 500, "fullft best step " + std::to_string(full_step) + " > 500");
    expect(full_score >= 95.0,
           "fullft validation score " + std::to_string(full_score) + " < 95");

    run_cli("train --config " + g_data + "/configs/peft_pretrain.json --output-dir " +
                g_work + "/pretrain",
            "pretrain");
    std::string handoff = final_checkpoint(g_work + "/pretrain");
    run_cli("train --config " + g_data + "/configs/peft_finetune.json --init-checkpoint " +
                handoff + " --output-dir " + g_work + "/finetune",
            "finetune");
    auto [fine_step, fine_score] = read_best(g_work + "/finetune");
    expect(fine_step <= 2000, "finetune best step " + std::to_string(fine_step) + " > 2000");
    expect(fine_score >= 90.0,
           "held-out validation score " + std::to_string(fine_score) + " < 90");

    char buf[96];
    std::snprintf(buf, sizeof buf, "fullft %.1f at step %d, held-out %.1f at step %d",
                  full_score, full_step, fine_score, fine_step);
    return buf;
}

// ---------------------------------------------------------------- 8
// k1 sweep {0, 8, 16}: memory prompts do not hurt. Strict improvement is
// reported, not asserted.
std::string c8_ablation() {
    run_cli("sweep-k1 --config " + g_data + "/configs/sweep.json --values 0,8,16 "
            "--output-dir " +
                g_work + "/sweep",
            "sweep");
    std::map<int, double> scores;
    std::istringstream csv(slurp(g_work + "/sweep/sweep.csv"));
    std::string line;
    std::getline(csv, line);  // header
    while (std::getline(csv, line)) {
        std::size_t comma = line.find(',');
        if (comma == std::string::npos) continue;
        scores[std::stoi(line.substr(0, comma))] = std::stod(line.substr(comma + 1));
    }
    for (int k1 : {0, 8, 16})
        expect(scores.count(k1) == 1, "sweep.csv is missing k1=" + std::to_string(k1));
    expect(scores[8] >= scores[0], "k1=8 scored " + std::to_string(scores[8]) +
                                       " below k1=0 at " + std::to_string(scores[0]));

    char buf[128];
    std::snprintf(buf, sizeof buf, "k1=0: %.2f, k1=8: %.2f, k1=16: %.2f (%s)", scores[0],
                  scores[8], scores[16],
                  scores[8] > scores[0] ? "strict improvement" : "no strict improvement");
    return buf;
}

// ---------------------------------------------------------------- 9
// rank_classify against explicit two-score enumeration on a rigged
// decoder whose logits are known in closed form.
std::string c9_rank_oracle() {
    std::vector<std::string> corpus = {
        "alpha bravo charlie delta echo foxtrot golf hotel",
        "india juliet kilo lima mike november oscar papa",
    };
    Vocab vocab = build_vocab(corpus, 64);
    ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.embed_dim = 8;
    mc.layers = 1;
    mc.heads = 2;
    mc.ffn_dim = 16;
    mc.max_positions = 32;
    Seq2SeqModel model = Seq2SeqModel::init(mc, 3);
    MemoryBank bank = MemoryBank::init(model.embedding());
    SoftPrompt soft;
    PromptPipeline pipe{&model, &soft, &bank, &vocab, 2};

    Tensor gain = model.parameter("dec.final.gain");
    for (double& x : gain.data()) x = 0.0;
    Tensor bias = model.parameter("dec.final.bias");
    Tensor emb = model.parameter("embedding");
    std::size_t v = emb.rows(), d = emb.cols();

    // constant decoder output = bias row, so logits[j] = dot(emb[j], bias)
    auto choice_score = [&](const std::string& text) {
        std::vector<double> logits(v, 0.0);
        for (std::size_t j = 0; j < v; ++j)
            for (std::size_t c = 0; c < d; ++c) logits[j] += emb.at(j, c) * bias.at(c);
        double m = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (double l : logits) sum += std::exp(l - m);
        double lse = m + std::log(sum);
        double score = 0.0;
        for (int id : pipe.target_ids(text)) score += logits[static_cast<std::size_t>(id)] - lse;
        return score;
    };

    std::vector<int> words;
    for (int id = Vocab::kNumSpecial; id < vocab.size(); ++id) words.push_back(id);
    SplitMix64 rng(99);
    auto word = [&]() { return vocab.id_to_token[static_cast<std::size_t>(
                            words[rng.bounded(words.size())])]; };

    for (int f = 0; f < 100; ++f) {
        for (std::size_t c = 0; c < d; ++c) bias.at(c) = 2.0 * rng.uniform() - 1.0;
        std::string w1 = word(), w2 = word();
        while (w2 == w1) w2 = word();
        PromptedExample ex;
        ex.task_name = "rigged";
        ex.template_name = "t";
        ex.input_text = word() + " " + word() + " " + word();
        ex.target_text = w1;
        ex.answer_choice_texts = {w1, w2};

        std::size_t want = choice_score(w2) > choice_score(w1) ? 1 : 0;
        std::size_t got = rank_classify(pipe, ex);
        expect(got == want, "fixture " + std::to_string(f) + ": rank_classify picked " +
                                std::to_string(got) + ", oracle says " + std::to_string(want));
    }

    // tie rule: identical embedding rows give bit-equal scores, lowest wins
    std::string wa = vocab.id_to_token[static_cast<std::size_t>(words[0])];
    std::string wb = vocab.id_to_token[static_cast<std::size_t>(words[1])];
    for (std::size_t c = 0; c < d; ++c)
        emb.at(static_cast<std::size_t>(words[1]), c) =
            emb.at(static_cast<std::size_t>(words[0]), c);
    PromptedExample tie;
    tie.task_name = "rigged";
    tie.template_name = "t";
    tie.input_text = wa + " " + wb;
    tie.target_text = wa;
    tie.answer_choice_texts = {wa, wb};
    expect(rank_classify(pipe, tie) == 0, "tied scores must pick the lowest index");
    tie.answer_choice_texts = {wb, wb};
    tie.target_text = wb;
    expect(rank_classify(pipe, tie) == 0, "duplicate choices must pick the lowest index");
    return "100 fixtures match, tie rule holds";
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; i += 2) {
        std::string flag = argv[i];
        if (flag == "--bin") g_bin = argv[i + 1];
        else if (flag == "--data") g_data = argv[i + 1];
        else if (flag == "--workdir") g_work = argv[i + 1];
        else {
            std::fprintf(stderr, "unknown flag %s\n", flag.c_str());
            return 1;
        }
    }
    if (g_bin.empty() || g_data.empty() || g_work.empty()) {
        std::fprintf(stderr,
                     "usage: acceptance --bin <spt-cli> --data <data-dir> --workdir <dir>\n");
        return 1;
    }
    fs::remove_all(g_work);
    fs::create_directories(g_work);

    struct Criterion {
        int id;
        const char* title;
        std::function<std::string()> fn;
    };
    const std::vector<Criterion> criteria = {
        {1, "retrieval exactness", c1_retrieval},
        {2, "pooling correctness", c2_pooling},
        {3, "freezing invariants", c3_freezing},
        {4, "gradient correctness", c4_gradients},
        {5, "template arithmetic", c5_templates},
        {6, "determinism", c6_determinism},
        {7, "learnability smoke", c7_learnability},
        {8, "ablation direction", c8_ablation},
        {9, "rank oracle", c9_rank_oracle},
    };

    int failed = 0;
    for (const Criterion& c : criteria) {
        std::string note;
        bool ok = true;
        try {
            note = c.fn();
        } catch (const std::exception& e) {
            ok = false;
            note = e.what();
            ++failed;
        }
        std::printf("criterion %d (%s): %s%s%s\n", c.id, c.title, ok ? "PASS" : "FAIL",
                    note.empty() ? "" : " - ", note.c_str());
        std::fflush(stdout);
    }
    std::printf("acceptance: %d/9 passed\n", 9 - failed);
    return failed;
}
