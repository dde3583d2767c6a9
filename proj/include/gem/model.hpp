#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gem/common.hpp"
#include "gem/corpus.hpp"
#include "gem/masking.hpp"

namespace gem {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int vocab_size = 0;
  int max_positions = 512;
  double dropout_rate = 0.1;
  std::uint64_t seed = 42;

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

std::string model_config_to_json_string(const ModelConfig& cfg);
ModelConfig model_config_from_json_string(const std::string& json_text);

template <class Real>
struct LayerParams {
  Mat<Real> ln1_g, ln1_b;
  Mat<Real> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<Real> ln2_g, ln2_b;
  Mat<Real> w1, b1, w2, b2;
};

template <class Real>
struct ParamRef {
  std::string name;
  Mat<Real>* tensor;
};

template <class Real>
struct ModelParams {
  Mat<Real> tok_emb;  // V x d
  Mat<Real> pos_emb;  // P x d
  std::vector<LayerParams<Real>> layers;
  Mat<Real> lnf_g, lnf_b;
  Mat<Real> w_out;     // d x V
  Mat<Real> b_out;     // 1 x V
  Mat<Real> log_temp;  // 1 x 1, the contrastive temperature lambda

  std::vector<ParamRef<Real>> registry();
  void allocate_zero(const ModelConfig& cfg);
  void set_zero();
};

template <class Real>
struct ModelState {
  ModelConfig config;
  ModelParams<Real> params;

  Real lambda() const { return params.log_temp(0, 0); }
};

template <class Real>
ModelState<Real> init_model(const ModelConfig& cfg);

template <class Real>
struct LayerCache {
  Mat<Real> ln1_in, ln1_xhat, ln1_rstd;
  Mat<Real> attn_in;  // normalized input to the attention projections
  Mat<Real> q, k, v;
  std::vector<Mat<Real>> attn_probs;  // per head, T x T
  Mat<Real> ctx;
  Mat<Real> attn_drop;  // empty unless dropout was applied
  Mat<Real> ln2_in, ln2_xhat, ln2_rstd;
  Mat<Real> mlp_in;  // normalized input to the MLP
  Mat<Real> z1, gelu_out;
  Mat<Real> mlp_drop;
};

template <class Real>
struct ForwardCache {
  std::vector<int> tokens, positions;
  AttentionMask mask;
  bool train_mode = false;
  Mat<Real> emb_drop;
  std::vector<LayerCache<Real>> layers;
  Mat<Real> lnf_in, lnf_xhat, lnf_rstd;
  Mat<Real> hidden;
};

template <class Real>
struct ForwardResult {
  Mat<Real> hidden;  // T x d, final-layer output (post final norm)
  Mat<Real> logits;  // T x V, empty when not requested
};

template <class Real>
ForwardResult<Real> forward(const ModelState<Real>& state,
                            std::span<const int> tokens,
                            const AttentionMask& mask,
                            std::span<const int> positions, bool train_mode,
                            Rng* rng = nullptr,
                            ForwardCache<Real>* cache = nullptr,
                            bool want_logits = true);

// Accumulates parameter gradients for one sequence. d_hidden (T x d) and
// d_logits (T x V) may each be empty.
template <class Real>
void backward(const ModelState<Real>& state, const ForwardCache<Real>& cache,
              const Mat<Real>& d_hidden, const Mat<Real>& d_logits,
              ModelParams<Real>& grads);

// Per-layer K/V rows captured at the special positions, plus the hidden state
// of the last special, which seeds decoding.
template <class Real>
struct KVCacheSnapshot {
  int prefix_len = 0;     // m
  int special_count = 0;  // k
  int n_heads = 0;
  int head_dim = 0;
  std::vector<int> positions;       // absolute positions of the specials
  std::vector<Mat<Real>> keys;      // per layer, k x d
  std::vector<Mat<Real>> values;    // per layer, k x d
  Mat<Real> bootstrap_hidden;       // 1 x d, final hidden at the last special

  std::array<int, 3> key_shape() const {
    return {special_count, n_heads, head_dim};
  }
};

template <class Real>
KVCacheSnapshot<Real> capture_special_kv(const ModelState<Real>& state,
                                         const SegmentedSequence& seq);

template <class Real>
struct DecodeState {
  std::vector<Mat<Real>> keys, values;  // per layer, grows one row per step
  int next_position = 0;
};

template <class Real>
DecodeState<Real> make_decode_state(const ModelState<Real>& state,
                                    const KVCacheSnapshot<Real>& cache);

// Feeds one token at the state's next position; returns its logits row.
template <class Real>
Mat<Real> decode_step(const ModelState<Real>& state, DecodeState<Real>& ds,
                      int token);

template <class Real>
std::vector<int> decode_from_cache(const ModelState<Real>& state,
                                   const KVCacheSnapshot<Real>& cache,
                                   int max_new, bool greedy,
                                   Rng* rng = nullptr);

// Logits rows predicting suffix[0..n); row 0 comes from the cached bootstrap
// hidden, later rows from feeding suffix tokens through the decode path.
template <class Real>
Mat<Real> teacher_forced_suffix_logits(const ModelState<Real>& state,
                                       const KVCacheSnapshot<Real>& cache,
                                       std::span<const int> suffix);

// Checkpoint format: one-line JSON manifest (config, tensor table, lambda),
// then the raw little-endian float32 payload in manifest order.
struct CheckpointExtras {
  std::optional<std::string> vocab_json;
  std::optional<std::string> trainer_json;
  std::vector<std::pair<std::string, const MatF*>> extra_tensors;
};

void save_checkpoint(const ModelState<float>& state, const std::string& path,
                     const CheckpointExtras* extras = nullptr);

struct LoadedCheckpoint {
  ModelState<float> state;
  std::optional<std::string> vocab_json;
  std::optional<std::string> trainer_json;
  std::vector<std::pair<std::string, MatF>> extra_tensors;
};

LoadedCheckpoint load_checkpoint_full(const std::string& path);
ModelState<float> load_checkpoint(const std::string& path);

}  // namespace gem
