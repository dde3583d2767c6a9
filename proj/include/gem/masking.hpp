#pragma once

#include <cstdint>
#include <vector>

namespace gem {

enum class SeqKind { kPlain, kCompress, kReconstruct };

// A tokenized example laid out as prefix | specials | suffix.
struct SegmentedSequence {
  std::vector<int> tokens;
  int prefix_len = 0;     // m
  int special_count = 0;  // k
  int suffix_len = 0;     // n
  SeqKind kind = SeqKind::kPlain;

  int size() const { return static_cast<int>(tokens.size()); }

  static SegmentedSequence plain(std::vector<int> tokens);
};

// Throws std::invalid_argument if the layout invariants are violated.
void validate_segmented(const SegmentedSequence& seq);

// Boolean T x T allowance matrix; row = query position, column = key position.
struct AttentionMask {
  int size_ = 0;
  std::vector<uint8_t> allowed_;

  int size() const { return size_; }
  bool allowed(int i, int j) const {
    return allowed_[static_cast<size_t>(i) * size_ + j] != 0;
  }
  void set(int i, int j, bool v) {
    allowed_[static_cast<size_t>(i) * size_ + j] = v ? 1 : 0;
  }
};

// Causal mask with the bottleneck carved out: specials attend the prefix and
// themselves only; suffix positions attend the specials and the suffix.
AttentionMask build_gem_mask(int m, int k, int n);

// include[i] says whether position i's prediction of token i+1 is scored.
struct LossMask {
  std::vector<uint8_t> include;

  int size() const { return static_cast<int>(include.size()); }
  int included_count() const;
};

LossMask build_loss_mask(const SegmentedSequence& seq);

// Pointwise restatement of the mask rule, kept independent of build_gem_mask.
// Test support.
bool oracle_allowed(int m, int k, int n, int i, int j);

}  // namespace gem
