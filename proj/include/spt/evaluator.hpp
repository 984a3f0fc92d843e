#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spt/errors.hpp"
#include "spt/memory_bank.hpp"
#include "spt/model.hpp"
#include "spt/prompt.hpp"
#include "spt/soft_prompt.hpp"
#include "spt/tokenizer.hpp"

namespace spt {

// Everything needed to turn one prompted example into model inputs:
// encode, pool, retrieve, assemble. Shared by training, evaluation and
// inspection so all paths agree on truncation and retrieval.
struct PromptPipeline {
    const Seq2SeqModel* model = nullptr;
    const SoftPrompt* soft = nullptr;
    const MemoryBank* bank = nullptr;
    const Vocab* vocab = nullptr;
    int k1 = 0;

    // Retrieval caching is sound only while the embedding layer is frozen
    // (PEFT-Finetune); anything that trains the embeddings must keep this off.
    bool cache_retrieval = false;
    mutable std::map<std::vector<int>, MemoryPrompt> retrieval_cache;

    PromptPipeline() = default;
    PromptPipeline(const Seq2SeqModel* m, const SoftPrompt* s, const MemoryBank* b,
                   const Vocab* v, int k)
        : model(m), soft(s), bank(b), vocab(v), k1(k) {}

    std::size_t discrete_budget() const {
        std::size_t reserved = static_cast<std::size_t>(k1) + soft->length();
        std::size_t maxp = static_cast<std::size_t>(model->config().max_positions);
        if (reserved >= maxp)
            throw DataError("prompt budget: k1 + k2 = " + std::to_string(reserved) +
                            " leaves no room for input (max_positions " +
                            std::to_string(maxp) + ")");
        return maxp - reserved;
    }

    // Discrete prompt ids, truncated from the left so the most recent
    // tokens survive when the template output is too long.
    std::vector<int> encode_input(const std::string& text) const {
        std::vector<int> ids = encode(text, *vocab);
        if (ids.empty()) throw DataError("empty input after encoding: '" + text + "'");
        std::size_t budget = discrete_budget();
        if (ids.size() > budget)
            ids.erase(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(ids.size() - budget));
        return ids;
    }

    std::vector<int> target_ids(const std::string& text) const {
        std::vector<int> ids = encode(text, *vocab);
        ids.push_back(Vocab::kEos);
        return ids;
    }

    MemoryPrompt retrieve_for(const std::vector<int>& ids) const {
        if (cache_retrieval) {
            auto it = retrieval_cache.find(ids);
            if (it != retrieval_cache.end()) return it->second;
        }
        std::vector<double> q = pool_query_ids(model->embedding(), ids);
        MemoryPrompt mem = retrieve(*bank, q, k1);
        if (cache_retrieval) retrieval_cache.emplace(ids, mem);
        return mem;
    }

    AssembledInput assemble_for(const std::string& input_text) const {
        std::vector<int> ids = encode_input(input_text);
        return model->assemble_input(retrieve_for(ids), *soft, ids);
    }
};

// Highest-scoring answer choice under score_sequence; ties take the
// lowest choice index.
inline std::size_t rank_classify(const PromptPipeline& pipe, const PromptedExample& ex) {
    if (!ex.has_choices())
        throw DataError("rank_classify: no answer choices for task " + ex.task_name);
    AssembledInput in = pipe.assemble_for(ex.input_text);
    std::size_t best = 0;
    double best_score = 0.0;
    for (std::size_t i = 0; i < ex.answer_choice_texts.size(); ++i) {
        double s = pipe.model->score_sequence(in, pipe.target_ids(ex.answer_choice_texts[i]));
        if (i == 0 || s > best_score) {
            best = i;
            best_score = s;
        }
    }
    return best;
}

// Lowercase and collapse runs of whitespace; the match criterion for
// generative evaluation.
inline std::string normalize_match(const std::string& s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

struct EvalRow {
    std::string task;
    std::string template_name;
    std::string metric;
    double score = 0.0;  // percent, in [0, 100]
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<std::pair<std::string, double>> task_averages;  // first-appearance order
    double overall_average = 0.0;
};

enum class EvalMode { Rank, Generative };

inline const char* eval_metric_name(EvalMode m) {
    return m == EvalMode::Rank ? "rank_accuracy" : "exact_match";
}

// Per-(task, template) scores plus unweighted task and overall averages,
// mirroring per-template tables with AVG rows.
inline EvalReport evaluate_examples(const PromptPipeline& pipe,
                                    const std::vector<PromptedExample>& examples, EvalMode mode,
                                    int gen_max_len = 16) {
    // group by (task, template) in first-appearance order
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::pair<int, int>> tally;  // correct, total
    for (const PromptedExample& ex : examples) {
        std::pair<std::string, std::string> key{ex.task_name, ex.template_name};
        if (!tally.count(key)) keys.push_back(key);
        auto& [correct, total] = tally[key];
        ++total;
        if (mode == EvalMode::Rank) {
            if (rank_classify(pipe, ex) == ex.gold_choice_index()) ++correct;
        } else {
            AssembledInput in = pipe.assemble_for(ex.input_text);
            std::vector<int> out_ids = pipe.model->generate(in, gen_max_len);
            std::string out_text = decode(out_ids, *pipe.vocab);
            if (normalize_match(out_text) == normalize_match(ex.target_text)) ++correct;
        }
    }

    EvalReport report;
    std::vector<std::string> task_order;
    std::map<std::string, std::pair<double, int>> task_acc;  // sum of template scores, count
    for (const auto& key : keys) {
        auto [correct, total] = tally[key];
        double score = 100.0 * correct / total;
        report.rows.push_back({key.first, key.second, eval_metric_name(mode), score});
        if (!task_acc.count(key.first)) task_order.push_back(key.first);
        task_acc[key.first].first += score;
        task_acc[key.first].second += 1;
    }
    double sum = 0.0;
    for (const std::string& task : task_order) {
        auto [s, n] = task_acc[task];
        report.task_averages.emplace_back(task, s / n);
        sum += s / n;
    }
    report.overall_average = task_order.empty() ? 0.0 : sum / static_cast<double>(task_order.size());
    return report;
}

inline std::string format_score(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

// CSV: one row per (task, template), then a trailing averages block with
// template column AVG, then an overall ALL,AVG row.
inline void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write report: " + path);
    f << "task,template,metric,score\n";
    std::string metric = report.rows.empty() ? "none" : report.rows.front().metric;
    for (const EvalRow& r : report.rows)
        f << r.task << ',' << r.template_name << ',' << r.metric << ',' << format_score(r.score)
          << '\n';
    for (const auto& [task, avg] : report.task_averages)
        f << task << ",AVG," << metric << ',' << format_score(avg) << '\n';
    f << "ALL,AVG," << metric << ',' << format_score(report.overall_average) << '\n';
    if (!f) throw DataError("report write failed: " + path);
}

// One JSONL row per example: the input, retrieved tokens in rank order,
// their scores, and a per-token flag marking retrievals that do not occur
// in the input itself. A sibling .vec file carries the raw k1 x d vectors
// (little-endian f64) for external projection tools.
inline void export_memory_prompts(const PromptPipeline& pipe,
                                  const std::vector<PromptedExample>& examples,
                                  const std::string& out_path) {
    std::ofstream jf(out_path);
    if (!jf) throw DataError("cannot write memory prompt export: " + out_path);
    std::string vec_path = out_path + ".vec";
    std::ofstream vf(vec_path, std::ios::binary);
    if (!vf) throw DataError("cannot write memory prompt vectors: " + vec_path);

    auto put_u64 = [&vf](std::uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        vf.write(b, 8);
    };
    std::size_t d = pipe.bank->dim();
    put_u64(examples.size());
    put_u64(static_cast<std::uint64_t>(pipe.k1));
    put_u64(d);

    for (const PromptedExample& ex : examples) {
        std::vector<int> ids = pipe.encode_input(ex.input_text);
        MemoryPrompt mem = pipe.retrieve_for(ids);
        std::vector<bool> in_input(pipe.vocab->size(), false);
        for (int id : ids) in_input[static_cast<std::size_t>(id)] = true;

        nlohmann::json row;
        row["input_text"] = ex.input_text;
        nlohmann::json toks = nlohmann::json::array();
        nlohmann::json scores = nlohmann::json::array();
        nlohmann::json novel = nlohmann::json::array();
        for (std::size_t i = 0; i < mem.size(); ++i) {
            toks.push_back(pipe.vocab->id_to_token[static_cast<std::size_t>(mem.token_ids[i])]);
            scores.push_back(mem.scores[i]);
            novel.push_back(!in_input[static_cast<std::size_t>(mem.token_ids[i])]);
        }
        row["tokens"] = toks;
        row["scores"] = scores;
        row["novel"] = novel;
        jf << row.dump() << '\n';

        for (double x : mem.embeddings.data()) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, sizeof bits);
            put_u64(bits);
        }
    }
    if (!jf || !vf) throw DataError("memory prompt export failed: " + out_path);
}

}  // namespace spt
