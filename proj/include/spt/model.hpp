#pragma once

#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "spt/errors.hpp"
#include "spt/memory_bank.hpp"
#include "spt/ops.hpp"
#include "spt/rng.hpp"
#include "spt/soft_prompt.hpp"
#include "spt/tensor.hpp"
#include "spt/tokenizer.hpp"

namespace spt {

struct ModelConfig {
    int vocab_size = 0;
    int embed_dim = 64;
    int layers = 2;
    int heads = 4;
    int ffn_dim = 128;
    int max_positions = 160;
    double dropout = 0.0;
    // Rank-classification candidate scores are unnormalized log-prob sums
    // by default; set to divide by candidate length instead.
    bool length_normalize_scores = false;

    void validate() const {
        if (vocab_size < 1) throw DataError("model config: vocab_size must be >= 1");
        if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
            throw DataError("model config: embed_dim must be divisible by heads");
        if (layers < 1 || ffn_dim < 1 || max_positions < 1)
            throw DataError("model config: layers, ffn_dim, max_positions must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0)
            throw DataError("model config: dropout must be in [0, 1)");
    }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["vocab_size"] = c.vocab_size;
    j["embed_dim"] = c.embed_dim;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["ffn_dim"] = c.ffn_dim;
    j["max_positions"] = c.max_positions;
    j["dropout"] = c.dropout;
    j["length_normalize_scores"] = c.length_normalize_scores;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.dropout = j.value("dropout", c.dropout);
    c.length_normalize_scores = j.value("length_normalize_scores", c.length_normalize_scores);
    return c;
}

// The encoder input: [memory prompt | soft prompt | discrete prompt].
// Memory rows are constants, soft rows are the trainable parameter
// itself, discrete rows are differentiable embedding lookups.
struct AssembledInput {
    Tensor embeddings;                          // (k1+k2+q) x d
    std::array<std::size_t, 3> segment_lengths{};  // (k1, k2, q)
    std::vector<bool> attention_mask;           // true on non-PAD positions
    Tensor memory_segment;                      // constant handle into the graph

    std::size_t total_length() const {
        return segment_lengths[0] + segment_lengths[1] + segment_lengths[2];
    }
    bool fully_unmasked() const {
        for (bool b : attention_mask)
            if (!b) return false;
        return true;
    }
};

// Per-forward switches. Dropout fires only in training mode with a
// non-null RNG stream.
struct ForwardCtx {
    bool training = false;
    SplitMix64* dropout_rng = nullptr;
};

namespace detail {

struct LayerNormParams {
    Tensor gain, bias;
};
struct AttentionParams {
    Tensor wq, wk, wv, wo;
};
struct FfnParams {
    Tensor w1, b1, w2, b2;
};
struct EncoderLayer {
    LayerNormParams ln1;
    AttentionParams attn;
    LayerNormParams ln2;
    FfnParams ffn;
};
struct DecoderLayer {
    LayerNormParams ln1;
    AttentionParams self_attn;
    LayerNormParams ln2;
    AttentionParams cross_attn;
    LayerNormParams ln3;
    FfnParams ffn;
};

// Additive attention bias: 0 on visible keys, -1e30 on hidden ones.
// Softmax then drives hidden weights to exactly zero in f64.
constexpr double kMaskedScore = -1e30;

inline Tensor causal_bias(std::size_t n) {
    Tensor b = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) b.at(i, j) = kMaskedScore;
    return b;
}

inline Tensor key_mask_bias(std::size_t n_query, const std::vector<bool>& key_mask) {
    std::size_t nk = key_mask.size();
    Tensor b = Tensor::zeros({n_query, nk});
    for (std::size_t i = 0; i < n_query; ++i)
        for (std::size_t j = 0; j < nk; ++j)
            if (!key_mask[j]) b.at(i, j) = kMaskedScore;
    return b;
}

}  // namespace detail

// Small pre-layernorm encoder-decoder transformer over the assembled
// prompt sequence. Learned absolute position embeddings; one shared
// position space over the concatenation, starting at 0. The output head
// is tied to the embedding matrix.
class Seq2SeqModel {
public:
    Seq2SeqModel() = default;

    static Seq2SeqModel init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Seq2SeqModel m;
        m.cfg_ = cfg;
        SplitMix64 rng(derive_seed(seed, "init"));
        const double std_w = 0.02;
        std::size_t v = static_cast<std::size_t>(cfg.vocab_size);
        std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
        std::size_t p = static_cast<std::size_t>(cfg.max_positions);
        std::size_t f = static_cast<std::size_t>(cfg.ffn_dim);
        auto w = [&](std::size_t r, std::size_t c) {
            return Tensor::randn({r, c}, rng, std_w, true);
        };
        auto ln = [&]() {
            detail::LayerNormParams l;
            l.gain = Tensor::from_data({d}, std::vector<double>(d, 1.0), true);
            l.bias = Tensor::zeros({d}, true);
            return l;
        };
        auto attn = [&]() {
            detail::AttentionParams a;
            a.wq = w(d, d);
            a.wk = w(d, d);
            a.wv = w(d, d);
            a.wo = w(d, d);
            return a;
        };
        auto ffn = [&]() {
            detail::FfnParams x;
            x.w1 = w(d, f);
            x.b1 = Tensor::zeros({f}, true);
            x.w2 = w(f, d);
            x.b2 = Tensor::zeros({d}, true);
            return x;
        };
        m.embedding_ = w(v, d);
        m.pos_enc_ = w(p, d);
        m.pos_dec_ = w(p, d);
        for (int i = 0; i < cfg.layers; ++i) m.enc_.push_back({ln(), attn(), ln(), ffn()});
        for (int i = 0; i < cfg.layers; ++i)
            m.dec_.push_back({ln(), attn(), ln(), attn(), ln(), ffn()});
        m.enc_final_ = ln();
        m.dec_final_ = ln();
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    Tensor& embedding() { return embedding_; }
    const Tensor& embedding() const { return embedding_; }

    // Fixed, documented ordering; checkpoint sections and optimizer state
    // both follow it.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("embedding", embedding_);
        out.emplace_back("pos_enc", pos_enc_);
        out.emplace_back("pos_dec", pos_dec_);
        auto add_ln = [&out](const std::string& prefix, const detail::LayerNormParams& l) {
            out.emplace_back(prefix + ".gain", l.gain);
            out.emplace_back(prefix + ".bias", l.bias);
        };
        auto add_attn = [&out](const std::string& prefix, const detail::AttentionParams& a) {
            out.emplace_back(prefix + ".wq", a.wq);
            out.emplace_back(prefix + ".wk", a.wk);
            out.emplace_back(prefix + ".wv", a.wv);
            out.emplace_back(prefix + ".wo", a.wo);
        };
        auto add_ffn = [&out](const std::string& prefix, const detail::FfnParams& x) {
            out.emplace_back(prefix + ".w1", x.w1);
            out.emplace_back(prefix + ".b1", x.b1);
            out.emplace_back(prefix + ".w2", x.w2);
            out.emplace_back(prefix + ".b2", x.b2);
        };
        for (std::size_t i = 0; i < enc_.size(); ++i) {
            std::string pre = "enc." + std::to_string(i);
            add_ln(pre + ".ln1", enc_[i].ln1);
            add_attn(pre + ".attn", enc_[i].attn);
            add_ln(pre + ".ln2", enc_[i].ln2);
            add_ffn(pre + ".ffn", enc_[i].ffn);
        }
        add_ln("enc.final", enc_final_);
        for (std::size_t i = 0; i < dec_.size(); ++i) {
            std::string pre = "dec." + std::to_string(i);
            add_ln(pre + ".ln1", dec_[i].ln1);
            add_attn(pre + ".self", dec_[i].self_attn);
            add_ln(pre + ".ln2", dec_[i].ln2);
            add_attn(pre + ".cross", dec_[i].cross_attn);
            add_ln(pre + ".ln3", dec_[i].ln3);
            add_ffn(pre + ".ffn", dec_[i].ffn);
        }
        add_ln("dec.final", dec_final_);
        return out;
    }

    Tensor parameter(const std::string& name) const {
        for (auto& [n, t] : named_parameters())
            if (n == name) return t;
        throw DataError("unknown parameter: " + name);
    }

    void set_all_trainable(bool flag) {
        for (auto& [n, t] : named_parameters()) {
            Tensor tt = t;
            tt.set_requires_grad(flag);
        }
    }

    // [memory | soft | discrete], in that order.
    AssembledInput assemble_input(const MemoryPrompt& mem, const SoftPrompt& soft,
                                  const std::vector<int>& discrete_ids) const {
        std::size_t d = static_cast<std::size_t>(cfg_.embed_dim);
        Tensor mem_rows = mem.embeddings.defined() ? mem.embeddings : Tensor::zeros({0, d});
        Tensor soft_rows = soft.matrix.defined() ? soft.matrix : Tensor::zeros({0, d});
        if (mem_rows.cols() != d || soft_rows.cols() != d)
            throw DataError("assemble_input: prompt width mismatch");
        std::size_t k1 = mem_rows.rows(), k2 = soft_rows.rows(), q = discrete_ids.size();
        std::size_t total = k1 + k2 + q;
        if (total == 0) throw DataError("assemble_input: empty input");
        if (total > static_cast<std::size_t>(cfg_.max_positions))
            throw DataError("assemble_input: length " + std::to_string(total) +
                            " (k1=" + std::to_string(k1) + ", k2=" + std::to_string(k2) +
                            ", q=" + std::to_string(q) + ") exceeds max_positions " +
                            std::to_string(cfg_.max_positions));

        AssembledInput in;
        in.memory_segment = mem_rows;
        in.segment_lengths = {k1, k2, q};
        Tensor discrete = q > 0 ? embedding_rows(embedding_, discrete_ids) : Tensor::zeros({0, d});
        in.embeddings = concat_rows({mem_rows, soft_rows, discrete});
        in.attention_mask.assign(total, true);
        for (std::size_t i = 0; i < q; ++i)
            if (discrete_ids[i] == Vocab::kPad) in.attention_mask[k1 + k2 + i] = false;
        return in;
    }

    Tensor encode(const AssembledInput& in, const ForwardCtx& ctx = {}) const {
        std::size_t n = in.embeddings.rows();
        Tensor x = add(in.embeddings, position_rows(pos_enc_, n));
        Tensor mask_bias;
        if (!in.fully_unmasked()) mask_bias = detail::key_mask_bias(n, in.attention_mask);
        for (const auto& layer : enc_) {
            Tensor h = layernorm_rows(x, layer.ln1.gain, layer.ln1.bias);
            Tensor a = attention(h, h, layer.attn, mask_bias);
            x = add(x, maybe_dropout(a, ctx));
            Tensor h2 = layernorm_rows(x, layer.ln2.gain, layer.ln2.bias);
            x = add(x, maybe_dropout(feed_forward(h2, layer.ffn), ctx));
        }
        return layernorm_rows(x, enc_final_.gain, enc_final_.bias);
    }

    // Teacher-forced decoder logits over [PAD, y_1, ..., y_{r-1}].
    Tensor decoder_logits(const Tensor& enc_out, const std::vector<bool>& enc_mask,
                          const std::vector<int>& target_ids, const ForwardCtx& ctx = {}) const {
        if (target_ids.empty()) throw DataError("decoder: empty target");
        std::size_t r = target_ids.size();
        if (r > static_cast<std::size_t>(cfg_.max_positions))
            throw DataError("decoder: target length " + std::to_string(r) +
                            " exceeds max_positions " + std::to_string(cfg_.max_positions));
        std::vector<int> dec_in(r);
        dec_in[0] = Vocab::kPad;  // decoder start token
        for (std::size_t i = 1; i < r; ++i) dec_in[i] = target_ids[i - 1];

        Tensor y = add(embedding_rows(embedding_, dec_in), position_rows(pos_dec_, r));
        Tensor causal = detail::causal_bias(r);
        Tensor cross_bias;
        bool enc_has_pad = false;
        for (bool b : enc_mask)
            if (!b) enc_has_pad = true;
        if (enc_has_pad) cross_bias = detail::key_mask_bias(r, enc_mask);

        for (const auto& layer : dec_) {
            Tensor h = layernorm_rows(y, layer.ln1.gain, layer.ln1.bias);
            y = add(y, maybe_dropout(attention(h, h, layer.self_attn, causal), ctx));
            Tensor h2 = layernorm_rows(y, layer.ln2.gain, layer.ln2.bias);
            y = add(y, maybe_dropout(attention(h2, enc_out, layer.cross_attn, cross_bias), ctx));
            Tensor h3 = layernorm_rows(y, layer.ln3.gain, layer.ln3.bias);
            y = add(y, maybe_dropout(feed_forward(h3, layer.ffn), ctx));
        }
        y = layernorm_rows(y, dec_final_.gain, dec_final_.bias);
        return matmul(y, transpose(embedding_));  // tied output head
    }

    Tensor forward_loss(const AssembledInput& in, const std::vector<int>& target_ids,
                        const ForwardCtx& ctx = {}) const {
        if (target_ids.empty()) throw DataError("forward_loss: empty target");
        Tensor enc_out = encode(in, ctx);
        Tensor logits = decoder_logits(enc_out, in.attention_mask, target_ids, ctx);
        return cross_entropy(logits, target_ids);
    }

    // Sum over positions of log p(candidate_j | candidate_<j, input).
    // Computed directly from the logits, independent of cross_entropy.
    double score_sequence(const AssembledInput& in, const std::vector<int>& candidate_ids) const {
        if (candidate_ids.empty()) throw DataError("score_sequence: empty candidate");
        NoGradGuard ng;
        Tensor enc_out = encode(in);
        Tensor logits = decoder_logits(enc_out, in.attention_mask, candidate_ids);
        std::size_t v = logits.cols();
        double total = 0.0;
        for (std::size_t i = 0; i < candidate_ids.size(); ++i) {
            int t = candidate_ids[i];
            if (t < 0 || static_cast<std::size_t>(t) >= v)
                throw DataError("score_sequence: candidate id out of range");
            double mx = logits.at(i, 0);
            for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, logits.at(i, c));
            double z = 0.0;
            for (std::size_t c = 0; c < v; ++c) z += std::exp(logits.at(i, c) - mx);
            total += logits.at(i, static_cast<std::size_t>(t)) - mx - std::log(z);
        }
        if (cfg_.length_normalize_scores)
            total /= static_cast<double>(candidate_ids.size());
        return total;
    }

    // Greedy argmax decoding; stops at EOS or max_len. Deterministic,
    // ties take the lowest token id.
    std::vector<int> generate(const AssembledInput& in, int max_len) const {
        if (max_len < 1) throw DataError("generate: max_len must be >= 1");
        NoGradGuard ng;
        Tensor enc_out = encode(in);
        std::vector<int> out;
        for (int step = 0; step < max_len; ++step) {
            std::vector<int> probe = out;
            probe.push_back(Vocab::kPad);  // placeholder for the position being predicted
            Tensor logits = decoder_logits(enc_out, in.attention_mask, probe);
            std::size_t v = logits.cols();
            std::size_t last = probe.size() - 1;
            std::vector<double> row(v);
            for (std::size_t c = 0; c < v; ++c) row[c] = logits.at(last, c);
            int next = static_cast<int>(argmax(row));
            if (next == Vocab::kEos) break;
            out.push_back(next);
        }
        return out;
    }

private:
    static Tensor position_rows(const Tensor& table, std::size_t n) {
        std::vector<int> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        return embedding_rows(table, idx);
    }

    Tensor maybe_dropout(const Tensor& x, const ForwardCtx& ctx) const {
        if (ctx.training && ctx.dropout_rng && cfg_.dropout > 0.0)
            return dropout(x, cfg_.dropout, *ctx.dropout_rng);
        return x;
    }

    Tensor feed_forward(const Tensor& h, const detail::FfnParams& p) const {
        Tensor a = gelu(add_row(matmul(h, p.w1), p.b1));
        return add_row(matmul(a, p.w2), p.b2);
    }

    Tensor attention(const Tensor& xq, const Tensor& xkv, const detail::AttentionParams& p,
                     const Tensor& mask_bias) const {
        std::size_t dk = static_cast<std::size_t>(cfg_.embed_dim / cfg_.heads);
        double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
        Tensor q = matmul(xq, p.wq);
        Tensor k = matmul(xkv, p.wk);
        Tensor v = matmul(xkv, p.wv);
        std::vector<Tensor> heads;
        for (int h = 0; h < cfg_.heads; ++h) {
            std::size_t c0 = static_cast<std::size_t>(h) * dk;
            Tensor qh = slice_cols(q, c0, dk);
            Tensor kh = slice_cols(k, c0, dk);
            Tensor vh = slice_cols(v, c0, dk);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
            if (mask_bias.defined()) scores = add(scores, mask_bias);
            heads.push_back(matmul(softmax_rows(scores), vh));
        }
        return matmul(concat_cols(heads), p.wo);
    }

    ModelConfig cfg_;
    Tensor embedding_;
    Tensor pos_enc_, pos_dec_;
    std::vector<detail::EncoderLayer> enc_;
    std::vector<detail::DecoderLayer> dec_;
    detail::LayerNormParams enc_final_, dec_final_;

    friend class CheckpointIO;
};

}  // namespace spt
