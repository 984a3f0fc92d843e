#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "spt/errors.hpp"
#include "spt/tensor.hpp"
#include "spt/tokenizer.hpp"

namespace spt {

// Retrieved prompt: the k1 bank rows with the largest dot product against
// the query, in descending score order (ties by ascending token id).
struct MemoryPrompt {
    std::vector<int> token_ids;
    Tensor embeddings;           // k1 x d, detached copies of bank rows
    std::vector<double> scores;  // non-increasing

    std::size_t size() const { return token_ids.size(); }
};

// A frozen deep copy of the embedding layer, used only as a retrieval
// corpus. The fingerprint is taken at init and must verify for the
// lifetime of the process; nothing in the training path may write here.
class MemoryBank {
public:
    MemoryBank() = default;

    static MemoryBank init(const Tensor& embedding_matrix) {
        if (embedding_matrix.shape().size() != 2)
            throw DataError("memory bank requires a V x d matrix");
        std::size_t v = embedding_matrix.rows(), d = embedding_matrix.cols();
        if (v < 1 || d < 1) throw DataError("memory bank requires V >= 1 and d >= 1");
        for (double x : embedding_matrix.data())
            if (!std::isfinite(x)) throw DataError("memory bank init: non-finite entry");
        MemoryBank b;
        b.vocab_size_ = v;
        b.dim_ = d;
        b.matrix_ = embedding_matrix.data();  // independent copy
        b.fingerprint_ = hash_content(v, d, b.matrix_);
        return b;
    }

    std::size_t vocab_size() const { return vocab_size_; }
    std::size_t dim() const { return dim_; }
    std::uint64_t fingerprint() const { return fingerprint_; }
    const std::vector<double>& matrix() const { return matrix_; }

    const double* row(std::size_t id) const { return matrix_.data() + id * dim_; }

    // Recomputes the content hash and compares with the one captured at init.
    bool verify_fingerprint() const {
        return hash_content(vocab_size_, dim_, matrix_) == fingerprint_;
    }

    static std::uint64_t hash_content(std::size_t v, std::size_t d,
                                      const std::vector<double>& m) {
        std::uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](std::uint64_t x) {
            for (int i = 0; i < 8; ++i) {
                h ^= (x >> (8 * i)) & 0xff;
                h *= 0x100000001b3ull;
            }
        };
        mix(v);
        mix(d);
        for (double x : m) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, sizeof bits);
            mix(bits);
        }
        return h;
    }

private:
    std::size_t vocab_size_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> matrix_;
    std::uint64_t fingerprint_ = 0;
};

// Arithmetic mean over rows. `keep[i] == false` rows (padding) are
// excluded before averaging.
inline std::vector<double> pool_query(const std::vector<double>& rows, std::size_t q,
                                      std::size_t d, const std::vector<bool>& keep = {}) {
    if (!keep.empty() && keep.size() != q)
        throw DataError("pool_query: keep mask length mismatch");
    std::vector<double> mean(d, 0.0);
    std::size_t used = 0;
    for (std::size_t r = 0; r < q; ++r) {
        if (!keep.empty() && !keep[r]) continue;
        for (std::size_t c = 0; c < d; ++c) mean[c] += rows[r * d + c];
        ++used;
    }
    if (used == 0) throw DataError("pool_query: empty query");
    for (double& x : mean) x /= static_cast<double>(used);
    return mean;
}

inline std::vector<double> pool_query(const Tensor& rows, const std::vector<bool>& keep = {}) {
    if (rows.shape().size() != 2) throw DataError("pool_query: expected q x d matrix");
    return pool_query(rows.data(), rows.rows(), rows.cols(), keep);
}

// Pools the live embedding rows of the discrete prompt ids, skipping PAD.
// Reads values only; nothing here joins the autodiff graph.
inline std::vector<double> pool_query_ids(const Tensor& embedding, const std::vector<int>& ids) {
    std::size_t d = embedding.cols();
    std::vector<double> mean(d, 0.0);
    std::size_t used = 0;
    for (int id : ids) {
        if (id == Vocab::kPad) continue;
        if (id < 0 || static_cast<std::size_t>(id) >= embedding.rows())
            throw DataError("pool_query: token id out of range");
        const double* row = embedding.data().data() + static_cast<std::size_t>(id) * d;
        for (std::size_t c = 0; c < d; ++c) mean[c] += row[c];
        ++used;
    }
    if (used == 0) throw DataError("pool_query: empty query");
    for (double& x : mean) x /= static_cast<double>(used);
    return mean;
}

// Exact maximum inner product search over the bank. Special tokens
// (PAD/UNK/EOS) are never candidates. Ordering: score descending, ties by
// ascending token id, bit-for-bit reproducible because every dot product
// accumulates left to right.
inline MemoryPrompt retrieve(const MemoryBank& bank, const std::vector<double>& query, int k1) {
    if (k1 < 0) throw DataError("retrieve: k1 must be >= 0");
    if (query.size() != bank.dim()) throw DataError("retrieve: query dimension mismatch");
    for (double x : query)
        if (!std::isfinite(x)) throw NumericError("retrieve: non-finite query");

    std::size_t v = bank.vocab_size();
    std::size_t first = std::min<std::size_t>(Vocab::kNumSpecial, v);
    std::size_t candidates = v - first;
    if (static_cast<std::size_t>(k1) > candidates)
        throw DataError("retrieve: k1 = " + std::to_string(k1) + " exceeds the " +
                        std::to_string(candidates) + " retrievable tokens");

    std::vector<double> scores(candidates);
    for (std::size_t i = 0; i < candidates; ++i) {
        const double* row = bank.row(first + i);
        double s = 0.0;
        for (std::size_t c = 0; c < bank.dim(); ++c) s += query[c] * row[c];
        scores[i] = s;
    }
    std::vector<std::size_t> order(candidates);
    std::iota(order.begin(), order.end(), 0);
    auto better = [&scores](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    };
    std::size_t k = static_cast<std::size_t>(k1);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), better);

    MemoryPrompt out;
    out.embeddings = Tensor::zeros({k, bank.dim()});
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t id = first + order[i];
        out.token_ids.push_back(static_cast<int>(id));
        out.scores.push_back(scores[order[i]]);
        const double* row = bank.row(id);
        std::copy(row, row + bank.dim(),
                  out.embeddings.data().begin() + static_cast<std::ptrdiff_t>(i * bank.dim()));
    }
    return out;
}

// Elementwise-equal to independent retrieve calls per query row.
inline std::vector<MemoryPrompt> retrieve_batch(const MemoryBank& bank,
                                                const std::vector<std::vector<double>>& queries,
                                                int k1) {
    std::vector<MemoryPrompt> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(retrieve(bank, q, k1));
    return out;
}

// Bank export: "SPTBANK1" magic, u64 V, u64 d, u64 fingerprint, then
// row-major f64 payload, all little-endian.
inline void export_bank(const MemoryBank& bank, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write bank export: " + path);
    f.write("SPTBANK1", 8);
    auto put_u64 = [&f](std::uint64_t x) {
        f.write(reinterpret_cast<const char*>(&x), sizeof x);
    };
    put_u64(bank.vocab_size());
    put_u64(bank.dim());
    put_u64(bank.fingerprint());
    f.write(reinterpret_cast<const char*>(bank.matrix().data()),
            static_cast<std::streamsize>(bank.matrix().size() * sizeof(double)));
    if (!f) throw DataError("failed writing bank export: " + path);
}

}  // namespace spt
