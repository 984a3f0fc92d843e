#pragma once

#include <string>
#include <vector>

#include "spt/errors.hpp"
#include "spt/tensor.hpp"
#include "spt/tokenizer.hpp"

namespace spt {

// The trainable prompt: k2 embedding rows, initialized from label tokens
// first and the most frequent vocabulary tokens after, each row a copy of
// the corresponding embedding-layer row. Training it never touches the
// embedding layer, and vice versa.
struct SoftPrompt {
    Tensor matrix;                    // k2 x d
    std::vector<int> init_token_ids;  // provenance of each row

    std::size_t length() const { return matrix.defined() ? matrix.rows() : 0; }

    void set_trainable(bool flag) { matrix.set_requires_grad(flag); }
    bool trainable() const { return matrix.requires_grad(); }
};

// Rows in order: (1) tokens of the encoded label texts, first occurrence
// only, in the given label order; (2) remaining rows from freq_rank,
// skipping ids already used. k2 = 0 is a valid empty prompt.
inline SoftPrompt init_soft_prompt(int k2, const std::vector<std::string>& label_texts,
                                   const Vocab& vocab, const Tensor& embeddings) {
    if (k2 < 0) throw DataError("init_soft_prompt: k2 must be >= 0");
    for (double x : embeddings.data())
        if (!std::isfinite(x)) throw DataError("init_soft_prompt: non-finite embedding");
    std::size_t d = embeddings.cols();

    std::vector<int> chosen;
    std::vector<bool> used(embeddings.rows(), false);
    auto push_unique = [&](int id) {
        if (static_cast<int>(chosen.size()) >= k2) return;
        if (id < 0 || static_cast<std::size_t>(id) >= embeddings.rows())
            throw DataError("init_soft_prompt: token id out of range");
        if (used[static_cast<std::size_t>(id)]) return;
        used[static_cast<std::size_t>(id)] = true;
        chosen.push_back(id);
    };
    for (const std::string& label : label_texts)
        for (int id : encode(label, vocab)) push_unique(id);
    for (int id : vocab.freq_rank) push_unique(id);
    if (static_cast<int>(chosen.size()) < k2)
        throw DataError("init_soft_prompt: k2 = " + std::to_string(k2) +
                        " exceeds the " + std::to_string(chosen.size()) +
                        " available distinct tokens");

    SoftPrompt sp;
    sp.init_token_ids = chosen;
    sp.matrix = Tensor::zeros({static_cast<std::size_t>(k2), d});
    for (int i = 0; i < k2; ++i) {
        const double* src =
            embeddings.data().data() + static_cast<std::size_t>(chosen[static_cast<std::size_t>(i)]) * d;
        std::copy(src, src + d,
                  sp.matrix.data().begin() + static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(d));
    }
    return sp;
}

}  // namespace spt
