#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gem/corpus.hpp"
#include "gem/masking.hpp"
#include "gem/model.hpp"
#include "gem/objective.hpp"

namespace gem {

struct TrainConfig {
  double p_raw = 0.8;          // probability of a plain example per slot
  int k_specials = 1;
  int batch_size = 32;
  int max_seq_len = 128;       // post-insertion length bound, capped at 512
  double lr_ntp = 1e-4;
  double lr_cl = 1e-5;
  long switch_step = 100;      // first step of the contrastive phase
  long total_steps = 1000;
  double dropout_rate_prefix = 0.15;
  double reconstruct_share = 0.5;
  bool symmetric_contrastive = false;
  std::uint64_t seed = 42;

  void validate() const;
};

std::string train_config_to_json_string(const TrainConfig& cfg);
TrainConfig train_config_from_json_string(const std::string& json_text);

struct TrainingBatch {
  std::vector<SegmentedSequence> examples;
  // Prefix-dropout twin per example; plain examples carry none.
  std::vector<std::optional<SegmentedSequence>> partners;
};

SegmentedSequence insert_specials(std::span<const int> tokens, int position,
                                  int k, SeqKind kind);

// Deletes prefix tokens independently at the given rate, always keeping at
// least one; specials and suffix are untouched.
SegmentedSequence dropout_prefix(const SegmentedSequence& seq, double rate,
                                 Rng& rng);

TrainingBatch compose_batch(const std::vector<Document>& corpus,
                            const Vocab& vocab, const TrainConfig& cfg,
                            Rng& rng, long step);

double cosine_lr(long step, double base_lr, long total_steps);

struct AdamState {
  std::vector<MatF> m, v;
  long t = 0;

  void init_like(ModelParams<float>& params);
};

void clip_global_norm(ModelParams<float>& grads, double max_norm);

void adam_step(ModelParams<float>& params, ModelParams<float>& grads,
               AdamState& adam, double lr);

// Loss and parameter gradients for one batch at the given alpha. The rng
// drives model dropout and must be non-null when dropout is active.
template <class Real>
LossBreakdown batch_loss_and_grads(const ModelState<Real>& state,
                                   const TrainingBatch& batch,
                                   const TrainConfig& cfg, double alpha,
                                   Rng* rng, ModelParams<Real>& grads);

LossBreakdown train_step(ModelState<float>& state, const TrainingBatch& batch,
                         const TrainConfig& cfg, long step, AdamState& adam,
                         Rng& rng);

// Owns the training loop state: model, optimizer moments, rng stream and the
// step counter. Checkpoints written by save() can be resumed bit-exactly.
class Trainer {
 public:
  Trainer(std::vector<Document> corpus, Vocab vocab, ModelConfig model_cfg,
          TrainConfig train_cfg);

  // Fresh trainer whose model parameters start from an existing checkpoint.
  static Trainer from_checkpoint(std::vector<Document> corpus,
                                 const std::string& init_ckpt,
                                 TrainConfig train_cfg);

  static Trainer resume(std::vector<Document> corpus,
                        const std::string& ckpt_path);

  LossBreakdown step();
  long current_step() const { return step_; }
  double current_lr(long step) const;

  const ModelState<float>& state() const { return state_; }
  const Vocab& vocab() const { return vocab_; }
  const TrainConfig& train_config() const { return train_cfg_; }

  void save(const std::string& path) const;

 private:
  Trainer() = default;

  std::vector<Document> corpus_;
  Vocab vocab_;
  TrainConfig train_cfg_;
  ModelState<float> state_;
  AdamState adam_;
  Rng rng_;
  long step_ = 0;
};

// Runs total_steps steps (resuming when the checkpoint carries trainer
// state), appending one CSV row per step. Returns the checkpoint path.
struct TrainRunOptions {
  std::string corpus_path;
  ModelConfig model_cfg;          // vocab_size filled from the vocabulary
  TrainConfig train_cfg;
  std::string out_checkpoint;
  std::string csv_log;
  std::string vocab_path;         // empty: build from the corpus
  int vocab_cap = 8192;
  std::string init_from;          // warm-start checkpoint (params only)
  std::string resume_from;        // full trainer resume
};

std::string train(const TrainRunOptions& options);

}  // namespace gem
