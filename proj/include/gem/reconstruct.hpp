#pragma once

#include <span>
#include <string>

#include "gem/corpus.hpp"
#include "gem/model.hpp"

namespace gem {

// Appends k specials after the text and captures their per-layer K/V.
KVCacheSnapshot<float> compress(const ModelState<float>& state,
                                const Vocab& vocab, const std::string& text,
                                int k = 1);

// Greedy decoding from the cached specials alone, rendered back to text.
std::string reconstruct_text(const ModelState<float>& state,
                             const Vocab& vocab,
                             const KVCacheSnapshot<float>& cache,
                             int max_len = 64);

// Fraction of aligned positions that match; the hypothesis is truncated or
// mismatch-padded to the reference length.
double token_accuracy(std::span<const int> reference,
                      std::span<const int> hypothesis);

}  // namespace gem
