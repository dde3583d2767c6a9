#include "gem/masking.hpp"

#include <stdexcept>
#include <string>

#include "gem/corpus.hpp"

namespace gem {

SegmentedSequence SegmentedSequence::plain(std::vector<int> tokens) {
  SegmentedSequence s;
  s.prefix_len = static_cast<int>(tokens.size());
  s.tokens = std::move(tokens);
  s.special_count = 0;
  s.suffix_len = 0;
  s.kind = SeqKind::kPlain;
  validate_segmented(s);
  return s;
}

void validate_segmented(const SegmentedSequence& seq) {
  const int m = seq.prefix_len, k = seq.special_count, n = seq.suffix_len;
  if (m < 0 || k < 0 || n < 0) {
    throw std::invalid_argument("segment lengths must be non-negative");
  }
  if (seq.size() != m + k + n) {
    throw std::invalid_argument("sequence length != m + k + n");
  }
  if (seq.kind == SeqKind::kPlain && k != 0) {
    throw std::invalid_argument("plain sequences cannot carry special tokens");
  }
  for (int i = 0; i < seq.size(); ++i) {
    const bool in_special = i >= m && i < m + k;
    if (in_special && seq.tokens[static_cast<size_t>(i)] != kEmbId) {
      throw std::invalid_argument("special slot " + std::to_string(i) +
                                  " does not hold the EMB token");
    }
    if (!in_special && seq.tokens[static_cast<size_t>(i)] == kEmbId) {
      throw std::invalid_argument("EMB token leaked outside the special slots");
    }
  }
  if (seq.kind == SeqKind::kReconstruct) {
    if (n != m) {
      throw std::invalid_argument("reconstruct suffix must replicate the prefix");
    }
    for (int i = 0; i < m; ++i) {
      if (seq.tokens[static_cast<size_t>(i)] !=
          seq.tokens[static_cast<size_t>(m + k + i)]) {
        throw std::invalid_argument(
            "reconstruct suffix must replicate the prefix");
      }
    }
  }
}

AttentionMask build_gem_mask(int m, int k, int n) {
  if (m < 0 || k < 0 || n < 0) {
    throw std::invalid_argument("mask segment lengths must be non-negative");
  }
  const int T = m + k + n;
  if (T < 1) {
    throw std::invalid_argument("mask needs at least one token");
  }
  AttentionMask mask;
  mask.size_ = T;
  mask.allowed_.assign(static_cast<size_t>(T) * T, 0);

  // Start from the plain causal triangle.
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j <= i; ++j) mask.set(i, j, true);
  }
  if (k > 0) {
    // Specials do not attend each other.
    for (int i = m; i < m + k; ++i) {
      for (int j = m; j < m + k; ++j) {
        if (i != j) mask.set(i, j, false);
      }
    }
    // Suffix positions never attend the prefix.
    for (int i = m + k; i < T; ++i) {
      for (int j = 0; j < m; ++j) mask.set(i, j, false);
    }
  }
  return mask;
}

int LossMask::included_count() const {
  int c = 0;
  for (uint8_t b : include) c += b != 0;
  return c;
}

LossMask build_loss_mask(const SegmentedSequence& seq) {
  validate_segmented(seq);
  const int T = seq.size();
  if (T < 2) {
    throw std::invalid_argument("loss mask needs a sequence of length >= 2");
  }
  LossMask mask;
  mask.include.resize(static_cast<size_t>(T) - 1);
  for (int i = 0; i + 1 < T; ++i) {
    mask.include[static_cast<size_t>(i)] =
        seq.tokens[static_cast<size_t>(i) + 1] != kEmbId ? 1 : 0;
  }
  return mask;
}

bool oracle_allowed(int m, int k, int n, int i, int j) {
  const int T = m + k + n;
  if (m < 0 || k < 0 || n < 0 || T < 1) {
    throw std::invalid_argument("invalid mask segment lengths");
  }
  if (i < 0 || i >= T || j < 0 || j >= T) {
    throw std::invalid_argument("mask query (" + std::to_string(i) + "," +
                                std::to_string(j) + ") out of range");
  }
  if (j > i) return false;
  const bool i_special = i >= m && i < m + k;
  const bool j_special = j >= m && j < m + k;
  const bool prefix_case = i < m && j <= i;
  const bool special_case = i_special && (j < m || j == i);
  const bool suffix_case = i >= m + k && (j_special || (j >= m + k && j <= i));
  return prefix_case || special_case || suffix_case;
}

}  // namespace gem
