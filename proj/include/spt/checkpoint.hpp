#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "spt/errors.hpp"
#include "spt/model.hpp"
#include "spt/soft_prompt.hpp"
#include "spt/tensor.hpp"
#include "spt/tokenizer.hpp"

namespace spt {

// Checkpoint file: "SPTCKPT1" magic, u64 section count, then per section a
// length-prefixed name and a length-prefixed payload. Everything
// little-endian, f64 stored as raw bits so round trips are bit-exact.
// Section order is fixed: config, vocab, param/<name> in
// named_parameters() order, soft_prompt, bank_fingerprint, prng_state.
inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'T', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    put_u64(out, bits);
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string context;

    void need(std::size_t n) const {
        if (pos + n > buf.size())
            throw DataError("checkpoint: truncated " + context);
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double x;
        std::memcpy(&x, &bits, sizeof x);
        return x;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline std::string tensor_payload(const Tensor& t) {
    std::string out;
    put_u64(out, t.shape().size());
    for (std::size_t dim : t.shape()) put_u64(out, dim);
    for (double x : t.data()) put_f64(out, x);
    return out;
}

inline void fill_tensor_from_payload(Tensor& t, const std::string& payload,
                                     const std::string& name) {
    ByteReader r{payload, 0, "section " + name};
    std::size_t ndim = r.u64();
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = r.u64();
    if (shape != t.shape())
        throw DataError("checkpoint: shape mismatch in section " + name);
    for (double& x : t.data()) x = r.f64();
    if (r.pos != payload.size())
        throw DataError("checkpoint: trailing bytes in section " + name);
}

}  // namespace detail

struct RawCheckpoint {
    std::vector<std::pair<std::string, std::string>> sections;

    const std::string* find(const std::string& name) const {
        for (const auto& [n, p] : sections)
            if (n == name) return &p;
        return nullptr;
    }
    const std::string& require(const std::string& name) const {
        const std::string* p = find(name);
        if (!p) throw DataError("checkpoint: missing section " + name);
        return *p;
    }
};

inline void write_checkpoint_file(const std::string& path, const RawCheckpoint& ck) {
    std::string body;
    body.append(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put_u64(body, ck.sections.size());
    for (const auto& [name, payload] : ck.sections) {
        detail::put_u64(body, name.size());
        body += name;
        detail::put_u64(body, payload.size());
        body += payload;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw DataError("checkpoint write failed: " + path);
}

inline RawCheckpoint read_raw_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof kCheckpointMagic ||
        std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw DataError("not a checkpoint file: " + path);
    detail::ByteReader r{buf, sizeof kCheckpointMagic, "header of " + path};
    std::uint64_t count = r.u64();
    RawCheckpoint ck;
    for (std::uint64_t i = 0; i < count; ++i) {
        r.context = "section " + std::to_string(i) + " of " + path;
        std::size_t name_len = r.u64();
        std::string name = r.bytes(name_len);
        std::size_t payload_len = r.u64();
        ck.sections.emplace_back(std::move(name), r.bytes(payload_len));
    }
    return ck;
}

inline RawCheckpoint build_checkpoint(const Seq2SeqModel& model, const SoftPrompt& soft,
                                      const Vocab& vocab, std::uint64_t bank_fingerprint,
                                      std::uint64_t prng_state) {
    RawCheckpoint ck;
    ck.sections.emplace_back("config", model_config_to_json(model.config()).dump());
    ck.sections.emplace_back("vocab", vocab_to_string(vocab));
    for (const auto& [name, t] : model.named_parameters())
        ck.sections.emplace_back("param/" + name, detail::tensor_payload(t));

    std::string sp;
    std::size_t k2 = soft.length();
    std::size_t d = static_cast<std::size_t>(model.config().embed_dim);
    detail::put_u64(sp, k2);
    detail::put_u64(sp, d);
    detail::put_u64(sp, soft.init_token_ids.size());
    for (int id : soft.init_token_ids) detail::put_u64(sp, static_cast<std::uint64_t>(id));
    if (k2 > 0)
        for (double x : soft.matrix.data()) detail::put_f64(sp, x);
    ck.sections.emplace_back("soft_prompt", std::move(sp));

    std::string fp, ps;
    detail::put_u64(fp, bank_fingerprint);
    detail::put_u64(ps, prng_state);
    ck.sections.emplace_back("bank_fingerprint", std::move(fp));
    ck.sections.emplace_back("prng_state", std::move(ps));
    return ck;
}

inline void save_checkpoint(const std::string& path, const Seq2SeqModel& model,
                            const SoftPrompt& soft, const Vocab& vocab,
                            std::uint64_t bank_fingerprint, std::uint64_t prng_state) {
    write_checkpoint_file(path, build_checkpoint(model, soft, vocab, bank_fingerprint, prng_state));
}

struct LoadedCheckpoint {
    ModelConfig config;
    Vocab vocab;
    Seq2SeqModel model;
    SoftPrompt soft;
    std::uint64_t bank_fingerprint = 0;
    std::uint64_t prng_state = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    RawCheckpoint ck = read_raw_checkpoint(path);
    LoadedCheckpoint out;
    try {
        out.config = model_config_from_json(nlohmann::json::parse(ck.require("config")));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: bad config section: " + std::string(e.what()));
    }
    out.vocab = vocab_from_string(ck.require("vocab"));
    out.model = Seq2SeqModel::init(out.config, 0);
    for (auto& [name, t] : out.model.named_parameters()) {
        Tensor tt = t;
        detail::fill_tensor_from_payload(tt, ck.require("param/" + name), "param/" + name);
    }

    const std::string& sp = ck.require("soft_prompt");
    detail::ByteReader r{sp, 0, "section soft_prompt"};
    std::size_t k2 = r.u64();
    std::size_t d = r.u64();
    if (d != static_cast<std::size_t>(out.config.embed_dim))
        throw DataError("checkpoint: soft_prompt width mismatch");
    std::size_t n_ids = r.u64();
    out.soft.init_token_ids.resize(n_ids);
    for (auto& id : out.soft.init_token_ids) id = static_cast<int>(r.u64());
    std::vector<double> rows(k2 * d);
    for (double& x : rows) x = r.f64();
    out.soft.matrix = Tensor::from_data({k2, d}, std::move(rows));

    detail::ByteReader fr{ck.require("bank_fingerprint"), 0, "section bank_fingerprint"};
    out.bank_fingerprint = fr.u64();
    detail::ByteReader pr{ck.require("prng_state"), 0, "section prng_state"};
    out.prng_state = pr.u64();
    return out;
}

// Names of sections whose bytes differ between the two files, including
// sections present on only one side. Empty result = byte-identical
// section content. This is the oracle behind the freezing checks.
inline std::vector<std::string> diff_checkpoint_sections(const std::string& path_a,
                                                         const std::string& path_b) {
    RawCheckpoint a = read_raw_checkpoint(path_a);
    RawCheckpoint b = read_raw_checkpoint(path_b);
    std::vector<std::string> changed;
    for (const auto& [name, payload] : a.sections) {
        const std::string* other = b.find(name);
        if (!other || *other != payload) changed.push_back(name);
    }
    for (const auto& [name, payload] : b.sections)
        if (!a.find(name)) changed.push_back(name);
    return changed;
}

}  // namespace spt
