#include "gem/embedder.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gem/masking.hpp"

namespace gem {

Pooling pooling_from_string(const std::string& name) {
  if (name == "mean") return Pooling::kMean;
  if (name == "concat") return Pooling::kConcat;
  throw std::invalid_argument("unknown pooling: " + name);
}

std::string pooling_to_string(Pooling pooling) {
  return pooling == Pooling::kMean ? "mean" : "concat";
}

Embedding embed_text(const ModelState<float>& state, const Vocab& vocab,
                     const std::string& text, int k, Pooling pooling) {
  if (k < 1) throw std::invalid_argument("need at least one special token");
  std::vector<int> tokens = vocab.encode(text);
  if (tokens.empty()) {
    throw std::invalid_argument("cannot embed empty text");
  }
  Embedding out;
  out.pooling = pooling;
  const int cap = state.config.max_positions - k;
  if (static_cast<int>(tokens.size()) > cap) {
    tokens.resize(static_cast<size_t>(cap));
    out.truncated = true;
  }
  const int m = static_cast<int>(tokens.size());
  out.source_len = m;
  tokens.insert(tokens.end(), static_cast<size_t>(k), kEmbId);

  AttentionMask mask = build_gem_mask(m, k, 0);
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  auto fr = forward(state, std::span<const int>(tokens), mask,
                    std::span<const int>(positions), /*train_mode=*/false,
                    nullptr, nullptr, /*want_logits=*/false);

  const int d = state.config.d_model;
  if (pooling == Pooling::kMean) {
    MatF pooled = MatF::Zero(1, d);
    for (int i = 0; i < k; ++i) pooled += fr.hidden.row(m + i);
    pooled /= static_cast<float>(k);
    out.vector.assign(pooled.data(), pooled.data() + d);
  } else {
    out.vector.resize(static_cast<size_t>(k) * d);
    for (int i = 0; i < k; ++i) {
      Eigen::Map<MatF>(out.vector.data() + static_cast<size_t>(i) * d, 1, d) =
          fr.hidden.row(m + i);
    }
  }
  return out;
}

Embedding embed_baseline_meanpool(const ModelState<float>& state,
                                  const Vocab& vocab, const std::string& text) {
  std::vector<int> tokens = vocab.encode(text);
  if (tokens.empty()) {
    throw std::invalid_argument("cannot embed empty text");
  }
  Embedding out;
  out.pooling = Pooling::kMean;
  const int cap = state.config.max_positions;
  if (static_cast<int>(tokens.size()) > cap) {
    tokens.resize(static_cast<size_t>(cap));
    out.truncated = true;
  }
  const int T = static_cast<int>(tokens.size());
  out.source_len = T;

  AttentionMask mask = build_gem_mask(T, 0, 0);
  std::vector<int> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), 0);
  auto fr = forward(state, std::span<const int>(tokens), mask,
                    std::span<const int>(positions), /*train_mode=*/false,
                    nullptr, nullptr, /*want_logits=*/false);

  const int d = state.config.d_model;
  MatF pooled = fr.hidden.colwise().mean();
  out.vector.assign(pooled.data(), pooled.data() + d);
  return out;
}

double cosine_sim(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("embedding dimensions disagree");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < a.dim(); ++i) {
    dot += static_cast<double>(a.vector[static_cast<size_t>(i)]) *
           static_cast<double>(b.vector[static_cast<size_t>(i)]);
    na += static_cast<double>(a.vector[static_cast<size_t>(i)]) *
          static_cast<double>(a.vector[static_cast<size_t>(i)]);
    nb += static_cast<double>(b.vector[static_cast<size_t>(i)]) *
          static_cast<double>(b.vector[static_cast<size_t>(i)]);
  }
  if (na <= 0.0 || nb <= 0.0) {
    throw std::invalid_argument("cosine similarity of a zero vector");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace gem
