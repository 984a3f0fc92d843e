#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "spt/checkpoint.hpp"
#include "spt/errors.hpp"
#include "spt/evaluator.hpp"
#include "spt/memory_bank.hpp"
#include "spt/model.hpp"
#include "spt/ops.hpp"
#include "spt/prompt.hpp"
#include "spt/rng.hpp"
#include "spt/soft_prompt.hpp"
#include "spt/tensor.hpp"

namespace spt {

enum class RegimeKind { FullFT, PeftPretrain, PeftFinetune };

// kind + its hyperparameters. Defaults follow the published setups:
// FullFT trains the whole model with the memory prompt alone; the PEFT
// stages train the embedding layer + soft prompt, then the soft prompt
// alone at a much higher learning rate.
struct TrainRegime {
    RegimeKind kind = RegimeKind::FullFT;
    int k1 = 20;
    int k2 = 0;
    double lr = 0.0001;
    int epochs = 1;

    static TrainRegime defaults(RegimeKind k) {
        switch (k) {
            case RegimeKind::FullFT:
                return {RegimeKind::FullFT, 20, 0, 0.0001, 1};
            case RegimeKind::PeftPretrain:
                return {RegimeKind::PeftPretrain, 10, 90, 0.3, 1};
            case RegimeKind::PeftFinetune:
            default:
                return {RegimeKind::PeftFinetune, 10, 90, 0.3, 10};
        }
    }

    void validate() const {
        if (k1 < 0 || k2 < 0) throw DataError("regime: k1 and k2 must be >= 0");
        if (!(lr > 0.0)) throw DataError("regime: lr must be > 0");
        if (epochs < 1) throw DataError("regime: epochs must be >= 1");
    }
};

inline RegimeKind regime_kind_from_string(const std::string& s) {
    if (s == "fullft-spt") return RegimeKind::FullFT;
    if (s == "peft-pretrain") return RegimeKind::PeftPretrain;
    if (s == "peft-finetune") return RegimeKind::PeftFinetune;
    throw DataError("unknown regime: '" + s +
                    "' (expected fullft-spt, peft-pretrain or peft-finetune)");
}

inline std::string regime_kind_to_string(RegimeKind k) {
    switch (k) {
        case RegimeKind::FullFT: return "fullft-spt";
        case RegimeKind::PeftPretrain: return "peft-pretrain";
        case RegimeKind::PeftFinetune:
        default: return "peft-finetune";
    }
}

// Trainable sets per regime. The bank is not a parameter anywhere, so it
// can never be trained; the soft prompt belongs to the PEFT stages only.
inline void apply_param_freezing(const TrainRegime& regime, Seq2SeqModel& model,
                                 SoftPrompt& soft) {
    regime.validate();
    switch (regime.kind) {
        case RegimeKind::FullFT:
            model.set_all_trainable(true);
            if (soft.matrix.defined()) soft.set_trainable(false);
            break;
        case RegimeKind::PeftPretrain:
            model.set_all_trainable(false);
            model.embedding().set_requires_grad(true);
            soft.set_trainable(true);
            break;
        case RegimeKind::PeftFinetune:
            model.set_all_trainable(false);
            soft.set_trainable(true);
            break;
    }
}

inline std::vector<Tensor> trainable_parameters(const Seq2SeqModel& model,
                                                const SoftPrompt& soft) {
    std::vector<Tensor> out;
    for (auto& [name, t] : model.named_parameters())
        if (t.requires_grad()) out.push_back(t);
    if (soft.matrix.defined() && soft.trainable() && soft.length() > 0)
        out.push_back(soft.matrix);
    return out;
}

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamSlot {
    std::vector<double> m, v;
};

// One bias-corrected Adam update on a single tensor; t is the 1-based
// step count. A missing grad is a zero grad (moments still decay).
inline void adam_step(Tensor& param, AdamSlot& slot, long t, const AdamConfig& c) {
    std::size_t n = param.numel();
    if (slot.m.empty()) {
        slot.m.assign(n, 0.0);
        slot.v.assign(n, 0.0);
    }
    double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    const std::vector<double>* grad = param.has_grad() ? &param.grad() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
        double g = grad ? (*grad)[i] : 0.0;
        slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g;
        slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g * g;
        double mhat = slot.m[i] / bc1;
        double vhat = slot.v[i] / bc2;
        param.data()[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
}

class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg)
        : cfg_(cfg), params_(std::move(params)), slots_(params_.size()) {}

    const std::vector<Tensor>& params() const { return params_; }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        for (std::size_t i = 0; i < params_.size(); ++i) adam_step(params_[i], slots_[i], t_, cfg_);
    }

private:
    AdamConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<AdamSlot> slots_;
    long t_ = 0;
};

// Scales all grads so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
inline double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const Tensor& p : params)
        if (p.has_grad())
            for (double g : p.grad()) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double s = max_norm / norm;
        for (const Tensor& p : params) {
            if (!p.has_grad()) continue;
            Tensor t = p;
            for (double& g : t.grad()) g *= s;
        }
    }
    return norm;
}

struct TrainSetup {
    TrainRegime regime;
    Seq2SeqModel* model = nullptr;
    SoftPrompt* soft = nullptr;
    MemoryBank* bank = nullptr;
    const Vocab* vocab = nullptr;
    std::vector<PromptedExample> train_examples;       // fixed order, already mixed
    std::vector<PromptedExample> validation_examples;  // checkpoint selection set
    std::uint64_t seed = 0;
    int batch_size = 8;
    int eval_every = 0;  // extra snapshot cadence in steps; 0 = epoch ends only
    int max_steps = 0;   // 0 = no cap
    std::string run_dir;  // "" = keep everything in memory (tests)
    EvalMode selection_mode = EvalMode::Rank;
};

struct TrainResult {
    int best_step = 0;
    double best_score = 0.0;
    std::string best_checkpoint_path;
    int total_steps = 0;
    std::vector<std::pair<int, double>> loss_trace;        // (step, mean batch loss)
    std::vector<std::pair<int, double>> validation_trace;  // (step, macro-average score)
};

// The training loop. Per batch: per example encode -> pool -> retrieve ->
// assemble -> loss; the batch loss is the mean, one Adam update per batch
// (one step). Snapshots at every eval_every steps and at each epoch end
// score the validation set; the best snapshot wins, earliest on ties.
// With no validation examples every snapshot scores 0, so selection
// degenerates to the earliest snapshot.
inline TrainResult run_training(TrainSetup& s) {
    namespace fs = std::filesystem;
    s.regime.validate();
    if (!s.model || !s.soft || !s.bank || !s.vocab)
        throw DataError("run_training: model, soft, bank, vocab are required");
    if (s.train_examples.empty()) throw DataError("run_training: empty training mixture");
    if (s.batch_size < 1) throw DataError("run_training: batch_size must be >= 1");
    if (static_cast<std::size_t>(s.soft->length()) != static_cast<std::size_t>(s.regime.k2))
        throw DataError("run_training: soft prompt length " + std::to_string(s.soft->length()) +
                        " does not match regime k2 " + std::to_string(s.regime.k2));

    apply_param_freezing(s.regime, *s.model, *s.soft);
    PromptPipeline pipe{s.model, s.soft, s.bank, s.vocab, s.regime.k1};
    // sound only while the embedding layer is frozen
    pipe.cache_retrieval = (s.regime.kind == RegimeKind::PeftFinetune);

    std::vector<Tensor> trainable = trainable_parameters(*s.model, *s.soft);
    if (trainable.empty()) throw DataError("run_training: no trainable parameters");
    AdamOptimizer opt(trainable, AdamConfig{s.regime.lr, 0.9, 0.999, 1e-8});
    SplitMix64 dropout_rng(derive_seed(s.seed, "dropout"));
    ForwardCtx train_ctx{true, &dropout_rng};

    std::ofstream loss_csv;
    if (!s.run_dir.empty()) {
        fs::create_directories(fs::path(s.run_dir) / "checkpoints");
        loss_csv.open((fs::path(s.run_dir) / "loss.csv").string());
        if (!loss_csv) throw DataError("cannot write loss.csv under " + s.run_dir);
        loss_csv << "step,loss\n";
    }

    TrainResult res;
    int step = 0;
    int last_snapshot_step = -1;
    int best_step = -1;
    double best_score = 0.0;
    std::string best_path;

    auto snapshot = [&]() {
        if (step == last_snapshot_step) return;
        last_snapshot_step = step;
        double score = 0.0;
        if (!s.validation_examples.empty())
            score = evaluate_examples(pipe, s.validation_examples, s.selection_mode)
                        .overall_average;
        std::string path;
        if (!s.run_dir.empty()) {
            path = (fs::path(s.run_dir) / "checkpoints" /
                    ("step-" + std::to_string(step) + ".bin"))
                       .string();
            save_checkpoint(path, *s.model, *s.soft, *s.vocab, s.bank->fingerprint(),
                            dropout_rng.state);
        }
        res.validation_trace.emplace_back(step, score);
        if (best_step < 0 || score > best_score) {
            best_step = step;
            best_score = score;
            best_path = path;
        }
    };

    std::size_t n = s.train_examples.size();
    bool done = false;
    for (int epoch = 0; epoch < s.regime.epochs && !done; ++epoch) {
        for (std::size_t start = 0; start < n && !done; start += static_cast<std::size_t>(s.batch_size)) {
            std::size_t end = std::min(n, start + static_cast<std::size_t>(s.batch_size));
            opt.zero_grad();
            Tensor total;
            for (std::size_t i = start; i < end; ++i) {
                const PromptedExample& ex = s.train_examples[i];
                AssembledInput in = pipe.assemble_for(ex.input_text);
                Tensor loss = s.model->forward_loss(in, pipe.target_ids(ex.target_text), train_ctx);
                total = total.defined() ? add(total, loss) : loss;
            }
            Tensor mean = scale(total, 1.0 / static_cast<double>(end - start));
            double loss_val = mean.value();
            if (!std::isfinite(loss_val)) {
                std::set<std::string> labels;
                for (std::size_t i = start; i < end; ++i)
                    labels.insert(s.train_examples[i].task_name + "/" +
                                  s.train_examples[i].template_name);
                std::string prov;
                for (const std::string& l : labels) prov += (prov.empty() ? "" : ", ") + l;
                throw NumericError("non-finite loss at step " + std::to_string(step + 1) +
                                   " (batch examples " + std::to_string(start) + ".." +
                                   std::to_string(end - 1) + "; " + prov + ")");
            }
            backward(mean);
            clip_global_norm(trainable, 1.0);
            opt.step();
            ++step;
            res.loss_trace.emplace_back(step, loss_val);
            if (loss_csv.is_open()) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%d,%.17g\n", step, loss_val);
                loss_csv << buf;
            }
            if (s.eval_every > 0 && step % s.eval_every == 0) snapshot();
            if (s.max_steps > 0 && step >= s.max_steps) done = true;
        }
        snapshot();  // epoch end, or the point where max_steps cut in
    }

    res.total_steps = step;
    res.best_step = best_step;
    res.best_score = best_score;
    res.best_checkpoint_path = best_path;
    if (!s.run_dir.empty()) {
        std::ofstream best((fs::path(s.run_dir) / "best.txt").string());
        if (!best) throw DataError("cannot write best.txt under " + s.run_dir);
        char buf[96];
        std::snprintf(buf, sizeof buf, "%d %.17g\n", best_step, best_score);
        best << buf;
    }
    return res;
}

}  // namespace spt
