// spt: semi-parametric prompt tuning at desk scale.
// Subcommands: train, eval, inspect, sweep-k1, mixture.
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spt/evaluator.hpp"
#include "spt/run_config.hpp"
#include "spt/trainer.hpp"

namespace fs = std::filesystem;
using namespace spt;

namespace {

// Flag values that override the config file; sentinel = "not given".
struct Overrides {
    std::string regime;
    int k1 = -2;
    int k2 = -2;
    double lr = -1.0;
    int epochs = -1;
    int batch_size = -1;
    std::int64_t seed = -1;
    int max_steps = -1;
    int eval_every = -1;
    std::string init_checkpoint;
    std::string output_dir;
};

void apply_overrides(RunConfig& cfg, const Overrides& o) {
    if (!o.regime.empty()) cfg.regime = o.regime;
    if (o.k1 != -2) cfg.k1 = o.k1;
    if (o.k2 != -2) cfg.k2 = o.k2;
    if (o.lr >= 0.0) cfg.lr = o.lr;
    if (o.epochs >= 0) cfg.epochs = o.epochs;
    if (o.batch_size >= 0) cfg.batch_size = o.batch_size;
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (o.max_steps >= 0) cfg.max_steps = o.max_steps;
    if (o.eval_every >= 0) cfg.eval_every = o.eval_every;
    if (!o.init_checkpoint.empty()) cfg.init_checkpoint = o.init_checkpoint;
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
}

std::vector<PromptedExample> expand_task_dirs(const std::vector<std::string>& dirs,
                                              const std::string& split) {
    if (dirs.empty()) throw DataError("no tasks configured for this command");
    std::vector<PromptedExample> out;
    for (const std::string& dir : dirs) {
        LoadedTask t = load_task_dir(dir);
        for (PromptedExample& ex : expand_dataset(load_task_split(t, split)))
            out.push_back(std::move(ex));
    }
    return out;
}

EvalMode mode_from_string(const std::string& s) {
    if (s == "rank") return EvalMode::Rank;
    if (s == "generative") return EvalMode::Generative;
    throw DataError("unknown eval mode: '" + s + "' (expected rank or generative)");
}

void print_report(const EvalReport& report) {
    for (const EvalRow& r : report.rows)
        std::printf("%-24s %-20s %-14s %8.3f\n", r.task.c_str(), r.template_name.c_str(),
                    r.metric.c_str(), r.score);
    for (const auto& [task, avg] : report.task_averages)
        std::printf("%-24s %-20s %-14s %8.3f\n", task.c_str(), "AVG", "", avg);
    std::printf("%-24s %-20s %-14s %8.3f\n", "ALL", "AVG", "", report.overall_average);
}

int cmd_train(const RunConfig& cfg) {
    PreparedRun run = prepare_run(cfg);
    fs::create_directories(run.cfg.output_dir);
    write_resolved_config(run, (fs::path(run.cfg.output_dir) / "config.json").string());
    write_mixture_manifest(run.mixture.manifest, run.cfg.seed,
                           (fs::path(run.cfg.output_dir) / "mixture_manifest.json").string());

    TrainSetup s;
    s.regime = run.regime;
    s.model = &run.model;
    s.soft = &run.soft;
    s.bank = &run.bank;
    s.vocab = &run.vocab;
    s.train_examples = run.mixture.examples;
    s.validation_examples = run.validation;
    s.seed = run.cfg.seed;
    s.batch_size = run.cfg.batch_size;
    s.eval_every = run.cfg.eval_every;
    s.max_steps = run.cfg.max_steps;
    s.run_dir = run.cfg.output_dir;
    TrainResult r = run_training(s);

    std::printf("trained %d steps on %zu examples (%s, k1=%d, k2=%d)\n", r.total_steps,
                s.train_examples.size(), regime_kind_to_string(run.regime.kind).c_str(),
                run.regime.k1, run.regime.k2);
    std::printf("best checkpoint: step %d, validation score %.3f\n", r.best_step, r.best_score);
    std::printf("run dir: %s\n", run.cfg.output_dir.c_str());
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& mode_str,
             const std::string& split, std::string out_path) {
    LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    MemoryBank bank = bank_for_checkpoint(lc, cfg.seed);
    TrainRegime regime = resolve_regime(cfg);
    EvalMode mode = mode_from_string(mode_str);

    const std::vector<std::string>& dirs = cfg.eval_tasks.empty() ? cfg.train_tasks : cfg.eval_tasks;
    std::vector<PromptedExample> examples = expand_task_dirs(dirs, split);

    PromptPipeline pipe{&lc.model, &lc.soft, &bank, &lc.vocab, regime.k1};
    pipe.cache_retrieval = true;  // evaluation never touches the embeddings
    EvalReport report = evaluate_examples(pipe, examples, mode, cfg.gen_max_len);

    if (out_path.empty()) {
        fs::create_directories(cfg.output_dir);
        out_path = (fs::path(cfg.output_dir) / ("report-" + mode_str + "-" + split + ".csv"))
                       .string();
    }
    write_report_csv(report, out_path);
    print_report(report);
    std::printf("report: %s\n", out_path.c_str());
    return 0;
}

int cmd_inspect(const RunConfig& cfg, const std::string& ckpt_path, const std::string& split,
                std::string out_path, std::string bank_path) {
    LoadedCheckpoint lc = load_checkpoint(ckpt_path);
    MemoryBank bank = bank_for_checkpoint(lc, cfg.seed);
    TrainRegime regime = resolve_regime(cfg);

    const std::vector<std::string>& dirs = cfg.eval_tasks.empty() ? cfg.train_tasks : cfg.eval_tasks;
    std::vector<PromptedExample> examples = expand_task_dirs(dirs, split);

    fs::create_directories(cfg.output_dir);
    if (out_path.empty())
        out_path = (fs::path(cfg.output_dir) / "memory_prompts.jsonl").string();
    if (bank_path.empty()) bank_path = (fs::path(cfg.output_dir) / "bank.bin").string();

    PromptPipeline pipe{&lc.model, &lc.soft, &bank, &lc.vocab, regime.k1};
    pipe.cache_retrieval = true;
    export_memory_prompts(pipe, examples, out_path);
    export_bank(bank, bank_path);
    std::printf("wrote %zu memory prompt rows to %s (+.vec), bank to %s\n", examples.size(),
                out_path.c_str(), bank_path.c_str());
    return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<int>& values, const std::string& mode_str,
              const std::string& split) {
    if (values.empty()) throw DataError("sweep-k1: --values is empty");
    EvalMode mode = mode_from_string(mode_str);
    fs::create_directories(cfg.output_dir);

    std::vector<std::pair<int, double>> scores;
    for (int k1 : values) {
        if (k1 < 0) throw DataError("sweep-k1: k1 values must be >= 0");
        RunConfig c = cfg;
        c.k1 = k1;
        c.output_dir = (fs::path(cfg.output_dir) / ("k1-" + std::to_string(k1))).string();
        std::printf("== k1 = %d ==\n", k1);
        cmd_train(c);

        // evaluate the selected checkpoint for this k1
        std::string best_txt = (fs::path(c.output_dir) / "best.txt").string();
        std::ifstream bf(best_txt);
        int best_step = 0;
        double best_score = 0.0;
        if (!(bf >> best_step >> best_score)) throw DataError("cannot parse " + best_txt);
        std::string ckpt = (fs::path(c.output_dir) / "checkpoints" /
                            ("step-" + std::to_string(best_step) + ".bin"))
                               .string();
        std::string report = (fs::path(c.output_dir) / "report.csv").string();
        LoadedCheckpoint lc = load_checkpoint(ckpt);
        MemoryBank bank = bank_for_checkpoint(lc, c.seed);
        const std::vector<std::string>& dirs = c.eval_tasks.empty() ? c.train_tasks : c.eval_tasks;
        std::vector<PromptedExample> examples = expand_task_dirs(dirs, split);
        PromptPipeline pipe{&lc.model, &lc.soft, &bank, &lc.vocab, k1};
        pipe.cache_retrieval = true;
        EvalReport rep = evaluate_examples(pipe, examples, mode, c.gen_max_len);
        write_report_csv(rep, report);
        scores.emplace_back(k1, rep.overall_average);
        std::printf("k1=%d -> %s score %.3f (report %s)\n", k1, eval_metric_name(mode),
                    rep.overall_average, report.c_str());
    }

    std::string summary = (fs::path(cfg.output_dir) / "sweep.csv").string();
    std::ofstream sf(summary);
    if (!sf) throw DataError("cannot write " + summary);
    sf << "k1,score\n";
    for (auto& [k1, score] : scores) sf << k1 << ',' << format_score(score) << '\n';
    std::printf("sweep summary: %s\n", summary.c_str());
    return 0;
}

int cmd_mixture(const RunConfig& cfg, std::string out_dir) {
    if (cfg.train_tasks.empty()) throw DataError("run config: train_tasks is empty");
    std::vector<TaskDataset> splits;
    for (const std::string& dir : cfg.train_tasks)
        splits.push_back(load_task_split(load_task_dir(dir), "train"));
    MixtureResult mix = build_mixture(splits, cfg.cap_per_template, cfg.seed);

    if (out_dir.empty()) out_dir = cfg.output_dir;
    fs::create_directories(out_dir);
    std::string manifest = (fs::path(out_dir) / "mixture_manifest.json").string();
    write_mixture_manifest(mix.manifest, cfg.seed, manifest);

    std::string rows = (fs::path(out_dir) / "mixture.jsonl").string();
    std::ofstream f(rows);
    if (!f) throw DataError("cannot write " + rows);
    for (const PromptedExample& ex : mix.examples) {
        nlohmann::json j;
        j["task"] = ex.task_name;
        j["template"] = ex.template_name;
        j["input_text"] = ex.input_text;
        j["target_text"] = ex.target_text;
        j["answer_choices"] = ex.answer_choice_texts;
        f << j.dump() << '\n';
    }
    std::printf("materialized %zu examples to %s (manifest %s)\n", mix.examples.size(),
                rows.c_str(), manifest.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-parametric prompt tuning: memory prompts + soft prompts over a tiny seq2seq model"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run config JSON")->required();
        sub->add_option("--regime", ov.regime, "fullft-spt | peft-pretrain | peft-finetune");
        sub->add_option("--k1", ov.k1, "memory prompt length");
        sub->add_option("--k2", ov.k2, "soft prompt length");
        sub->add_option("--lr", ov.lr, "learning rate");
        sub->add_option("--epochs", ov.epochs, "training epochs");
        sub->add_option("--batch-size", ov.batch_size, "examples per step");
        sub->add_option("--seed", ov.seed, "base seed (all sub-streams derive from it)");
        sub->add_option("--max-steps", ov.max_steps, "stop after N optimizer steps (0 = no cap)");
        sub->add_option("--eval-every", ov.eval_every, "extra snapshot cadence in steps");
        sub->add_option("--init-checkpoint", ov.init_checkpoint, "start from this checkpoint");
        sub->add_option("--output-dir", ov.output_dir, "run output directory");
    };

    CLI::App* train = app.add_subcommand("train", "train a regime, select the best checkpoint");
    add_common(train);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    std::string ckpt_path, eval_mode = "rank", split = "validation", out_path;
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--mode", eval_mode, "rank | generative");
    eval->add_option("--split", split, "validation | test");
    eval->add_option("--out", out_path, "report CSV path");

    CLI::App* inspect = app.add_subcommand("inspect", "export memory prompts and the bank");
    add_common(inspect);
    std::string bank_path;
    inspect->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    inspect->add_option("--split", split, "validation | test | train");
    inspect->add_option("--out", out_path, "memory prompt JSONL path");
    inspect->add_option("--bank-out", bank_path, "bank binary path");

    CLI::App* sweep = app.add_subcommand("sweep-k1", "train + evaluate across k1 values");
    add_common(sweep);
    std::vector<int> sweep_values;
    sweep->add_option("--values", sweep_values, "k1 values")->required()->delimiter(',');
    sweep->add_option("--mode", eval_mode, "rank | generative");
    sweep->add_option("--split", split, "validation | test");

    CLI::App* mixture = app.add_subcommand("mixture", "materialize the training mixture + manifest");
    add_common(mixture);
    std::string mixture_out;
    mixture->add_option("--out", mixture_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        RunConfig cfg = load_run_config(config_path);
        apply_overrides(cfg, ov);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg, ckpt_path, eval_mode, split, out_path);
        if (inspect->parsed()) return cmd_inspect(cfg, ckpt_path, split, out_path, bank_path);
        if (sweep->parsed()) return cmd_sweep(cfg, sweep_values, eval_mode, split);
        if (mixture->parsed()) return cmd_mixture(cfg, mixture_out);
        std::fprintf(stderr, "no subcommand\n");
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
