#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "spt/checkpoint.hpp"
#include "spt/errors.hpp"
#include "spt/memory_bank.hpp"
#include "spt/model.hpp"
#include "spt/prompt.hpp"
#include "spt/soft_prompt.hpp"
#include "spt/tokenizer.hpp"
#include "spt/trainer.hpp"

namespace spt {

// One run = one JSON config. Sentinels (-1 for k1/k2, 0 for lr/epochs)
// mean "use the regime defaults". Task entries are directories holding
// templates.json plus train/validation/test.jsonl; relative paths are
// resolved against the config file's directory.
struct RunConfig {
    ModelConfig model;
    std::string regime = "fullft-spt";
    int k1 = -1;
    int k2 = -1;
    double lr = 0.0;
    int epochs = 0;
    int batch_size = 8;
    std::uint64_t seed = 0;
    std::size_t cap_per_template = 50;
    int eval_every = 0;
    int max_steps = 0;
    std::size_t max_vocab = 512;
    int gen_max_len = 16;
    std::vector<std::string> train_tasks;
    std::vector<std::string> eval_tasks;
    std::string init_checkpoint;
    std::string output_dir = "run";
};

inline TrainRegime resolve_regime(const RunConfig& cfg) {
    TrainRegime r = TrainRegime::defaults(regime_kind_from_string(cfg.regime));
    if (cfg.k1 >= 0) r.k1 = cfg.k1;
    if (cfg.k2 >= 0) r.k2 = cfg.k2;
    if (cfg.lr > 0.0) r.lr = cfg.lr;
    if (cfg.epochs >= 1) r.epochs = cfg.epochs;
    r.validate();
    return r;
}

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["model"] = model_config_to_json(cfg.model);
    j["regime"] = cfg.regime;
    j["k1"] = cfg.k1;
    j["k2"] = cfg.k2;
    j["lr"] = cfg.lr;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["cap_per_template"] = cfg.cap_per_template;
    j["eval_every"] = cfg.eval_every;
    j["max_steps"] = cfg.max_steps;
    j["max_vocab"] = cfg.max_vocab;
    j["gen_max_len"] = cfg.gen_max_len;
    j["train_tasks"] = cfg.train_tasks;
    j["eval_tasks"] = cfg.eval_tasks;
    j["init_checkpoint"] = cfg.init_checkpoint;
    j["output_dir"] = cfg.output_dir;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j, const std::string& base_dir) {
    static const std::set<std::string> known = {
        "model",      "regime",     "k1",          "k2",         "lr",
        "epochs",     "batch_size", "seed",        "cap_per_template",
        "eval_every", "max_steps",  "max_vocab",   "gen_max_len",
        "train_tasks", "eval_tasks", "init_checkpoint", "output_dir"};
    if (!j.is_object()) throw DataError("run config: expected a JSON object");
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw DataError("run config: unknown key '" + key + "'");

    RunConfig cfg;
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
    cfg.regime = j.value("regime", cfg.regime);
    cfg.k1 = j.value("k1", cfg.k1);
    cfg.k2 = j.value("k2", cfg.k2);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.cap_per_template = j.value("cap_per_template", cfg.cap_per_template);
    cfg.eval_every = j.value("eval_every", cfg.eval_every);
    cfg.max_steps = j.value("max_steps", cfg.max_steps);
    cfg.max_vocab = j.value("max_vocab", cfg.max_vocab);
    cfg.gen_max_len = j.value("gen_max_len", cfg.gen_max_len);
    cfg.train_tasks = j.value("train_tasks", cfg.train_tasks);
    cfg.eval_tasks = j.value("eval_tasks", cfg.eval_tasks);
    cfg.init_checkpoint = j.value("init_checkpoint", cfg.init_checkpoint);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);

    auto resolve = [&base_dir](std::string& p) {
        if (p.empty()) return;
        std::filesystem::path fp(p);
        if (fp.is_relative() && !base_dir.empty())
            p = (std::filesystem::path(base_dir) / fp).lexically_normal().string();
    };
    for (std::string& t : cfg.train_tasks) resolve(t);
    for (std::string& t : cfg.eval_tasks) resolve(t);
    resolve(cfg.init_checkpoint);
    resolve(cfg.output_dir);
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("config parse error in " + path + ": " + e.what());
    }
    return run_config_from_json(j, std::filesystem::path(path).parent_path().string());
}

struct LoadedTask {
    std::string dir;
    std::string name;
    std::vector<PromptTemplate> templates;
};

inline LoadedTask load_task_dir(const std::string& dir) {
    std::string tp = (std::filesystem::path(dir) / "templates.json").string();
    if (!std::filesystem::exists(tp)) throw DataError("missing template file: " + tp);
    LoadedTask t;
    t.dir = dir;
    t.templates = load_templates(tp, &t.name);
    if (t.name.empty()) throw DataError("task_name missing in " + tp);
    return t;
}

inline bool task_split_exists(const LoadedTask& t, const std::string& split) {
    return std::filesystem::exists(std::filesystem::path(t.dir) / (split + ".jsonl"));
}

inline TaskDataset load_task_split(const LoadedTask& t, const std::string& split) {
    std::string path = (std::filesystem::path(t.dir) / (split + ".jsonl")).string();
    if (!std::filesystem::exists(path)) throw DataError("missing split file: " + path);
    return load_task_dataset(t.name, split, path, t.templates);
}

// All raw text a run can see, in deterministic order, for vocab building:
// every split of every configured task, expanded through its templates.
inline std::vector<std::string> vocab_corpus(const std::vector<LoadedTask>& tasks) {
    std::vector<std::string> corpus;
    for (const LoadedTask& t : tasks) {
        for (const char* split : {"train", "validation", "test"}) {
            if (!task_split_exists(t, split)) continue;
            for (const PromptedExample& ex : expand_dataset(load_task_split(t, split))) {
                corpus.push_back(ex.input_text);
                corpus.push_back(ex.target_text);
                for (const std::string& c : ex.answer_choice_texts) corpus.push_back(c);
            }
        }
    }
    return corpus;
}

// Label texts seed the first soft prompt rows: answer choices of the
// training tasks' templates, first occurrence wins, template order.
inline std::vector<std::string> collect_label_texts(const std::vector<LoadedTask>& tasks) {
    std::vector<std::string> labels;
    std::set<std::string> seen;
    for (const LoadedTask& t : tasks)
        for (const PromptTemplate& tpl : t.templates)
            for (const TemplateString& c : tpl.answer_choices)
                if (seen.insert(c.raw).second) labels.push_back(c.raw);
    return labels;
}

// The bank is the embedding layer at model init, a pure function of
// (model config, seed). A finetune stage rebuilds it from those and
// checks the fingerprint recorded in the checkpoint, so the retrieval
// corpus provably survives the stage switch.
inline MemoryBank bank_for_checkpoint(const LoadedCheckpoint& lc, std::uint64_t seed) {
    Seq2SeqModel fresh = Seq2SeqModel::init(lc.config, seed);
    MemoryBank bank = MemoryBank::init(fresh.embedding());
    if (bank.fingerprint() != lc.bank_fingerprint)
        throw DataError(
            "bank fingerprint mismatch: the checkpoint was created under a different "
            "seed or model config");
    return bank;
}

struct PreparedRun {
    RunConfig cfg;  // resolved: model.vocab_size filled, regime knobs final
    TrainRegime regime;
    Vocab vocab;
    Seq2SeqModel model;
    SoftPrompt soft;
    MemoryBank bank;
    MixtureResult mixture;
    std::vector<PromptedExample> validation;
};

// Everything train needs, built either fresh (vocab from the task corpus,
// seeded init, soft prompt from labels + frequent tokens) or from an
// init_checkpoint (PEFT stage two).
inline PreparedRun prepare_run(const RunConfig& cfg_in) {
    PreparedRun run;
    run.cfg = cfg_in;
    run.regime = resolve_regime(cfg_in);
    if (cfg_in.train_tasks.empty()) throw DataError("run config: train_tasks is empty");

    std::vector<LoadedTask> train_tasks;
    for (const std::string& dir : cfg_in.train_tasks) train_tasks.push_back(load_task_dir(dir));

    if (!cfg_in.init_checkpoint.empty()) {
        LoadedCheckpoint lc = load_checkpoint(cfg_in.init_checkpoint);
        run.vocab = lc.vocab;
        run.model = std::move(lc.model);
        run.soft = std::move(lc.soft);
        if (cfg_in.k2 >= 0 && static_cast<std::size_t>(cfg_in.k2) != run.soft.length())
            throw DataError("run config: k2 = " + std::to_string(cfg_in.k2) +
                            " does not match checkpoint soft prompt length " +
                            std::to_string(run.soft.length()));
        run.regime.k2 = static_cast<int>(run.soft.length());
        run.bank = bank_for_checkpoint(lc, cfg_in.seed);
        run.cfg.model = lc.config;
    } else {
        std::vector<LoadedTask> all_tasks = train_tasks;
        std::set<std::string> seen_dirs(cfg_in.train_tasks.begin(), cfg_in.train_tasks.end());
        for (const std::string& dir : cfg_in.eval_tasks)
            if (seen_dirs.insert(dir).second) all_tasks.push_back(load_task_dir(dir));

        run.vocab = build_vocab(vocab_corpus(all_tasks), static_cast<int>(cfg_in.max_vocab));
        ModelConfig mc = cfg_in.model;
        mc.vocab_size = run.vocab.size();
        run.model = Seq2SeqModel::init(mc, cfg_in.seed);
        run.bank = MemoryBank::init(run.model.embedding());
        run.soft = init_soft_prompt(run.regime.k2, collect_label_texts(train_tasks), run.vocab,
                                    run.model.embedding());
        run.cfg.model = mc;
    }

    std::vector<TaskDataset> train_splits;
    for (const LoadedTask& t : train_tasks) train_splits.push_back(load_task_split(t, "train"));
    run.mixture = build_mixture(train_splits, cfg_in.cap_per_template, cfg_in.seed);

    for (const LoadedTask& t : train_tasks) {
        if (!task_split_exists(t, "validation")) continue;
        for (PromptedExample& ex : expand_dataset(load_task_split(t, "validation")))
            run.validation.push_back(std::move(ex));
    }

    run.cfg.k1 = run.regime.k1;
    run.cfg.k2 = run.regime.k2;
    run.cfg.lr = run.regime.lr;
    run.cfg.epochs = run.regime.epochs;
    return run;
}

// The resolved config written into every run directory; a run is
// re-creatable from this file alone.
inline void write_resolved_config(const PreparedRun& run, const std::string& path) {
    nlohmann::json j = run_config_to_json(run.cfg);
    std::ofstream f(path);
    if (!f) throw DataError("cannot write config copy: " + path);
    f << j.dump(2) << '\n';
}

}  // namespace spt
