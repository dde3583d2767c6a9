#pragma once

#include <string>
#include <vector>

#include "gem/corpus.hpp"
#include "gem/model.hpp"

namespace gem {

enum class Pooling { kMean, kConcat };

Pooling pooling_from_string(const std::string& name);
std::string pooling_to_string(Pooling pooling);

struct Embedding {
  std::vector<float> vector;
  Pooling pooling = Pooling::kMean;
  int source_len = 0;
  bool truncated = false;

  int dim() const { return static_cast<int>(vector.size()); }
};

// Appends k special tokens, runs an eval forward under the bottleneck mask
// and pools the final-layer rows at the special positions.
Embedding embed_text(const ModelState<float>& state, const Vocab& vocab,
                     const std::string& text, int k = 1,
                     Pooling pooling = Pooling::kMean);

// Plain causal forward, mean over all token positions. The vanilla arm.
Embedding embed_baseline_meanpool(const ModelState<float>& state,
                                  const Vocab& vocab, const std::string& text);

double cosine_sim(const Embedding& a, const Embedding& b);

}  // namespace gem
