#include "gem/reconstruct.hpp"

#include <stdexcept>

#include "gem/masking.hpp"
#include "gem/trainer.hpp"

namespace gem {

KVCacheSnapshot<float> compress(const ModelState<float>& state,
                                const Vocab& vocab, const std::string& text,
                                int k) {
  if (k < 1) throw std::invalid_argument("need at least one special token");
  std::vector<int> tokens = vocab.encode(text);
  if (tokens.empty()) {
    throw std::invalid_argument("cannot compress empty text");
  }
  SegmentedSequence seq = insert_specials(
      tokens, static_cast<int>(tokens.size()), k, SeqKind::kCompress);
  return capture_special_kv(state, seq);
}

std::string reconstruct_text(const ModelState<float>& state,
                             const Vocab& vocab,
                             const KVCacheSnapshot<float>& cache, int max_len) {
  std::vector<int> ids =
      decode_from_cache(state, cache, max_len, /*greedy=*/true);
  return vocab.decode(ids);
}

double token_accuracy(std::span<const int> reference,
                      std::span<const int> hypothesis) {
  if (reference.empty()) {
    throw std::invalid_argument("token_accuracy needs a non-empty reference");
  }
  size_t matches = 0;
  for (size_t i = 0; i < reference.size(); ++i) {
    if (i < hypothesis.size() && hypothesis[i] == reference[i]) ++matches;
  }
  return static_cast<double>(matches) / static_cast<double>(reference.size());
}

}  // namespace gem
