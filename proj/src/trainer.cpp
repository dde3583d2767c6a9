#include "gem/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gem {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kClipNorm = 1.0;

std::vector<int> iota_positions(int n) {
  std::vector<int> p(static_cast<size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

std::vector<int> truncated(std::vector<int> tokens, int cap) {
  if (static_cast<int>(tokens.size()) > cap) tokens.resize(static_cast<size_t>(cap));
  return tokens;
}

// Forward over prefix + specials only; suffix rows cannot influence the
// special positions, so the embedding is unchanged and the pass is cheaper.
template <class Real>
Mat<Real> special_embedding_forward(const ModelState<Real>& state,
                                    const SegmentedSequence& seq, Rng* rng,
                                    ForwardCache<Real>* cache) {
  const int m = seq.prefix_len, k = seq.special_count;
  const int mk = m + k;
  std::vector<int> tokens(seq.tokens.begin(), seq.tokens.begin() + mk);
  AttentionMask mask = build_gem_mask(m, k, 0);
  std::vector<int> positions = iota_positions(mk);
  auto fr = forward(state, std::span<const int>(tokens), mask,
                    std::span<const int>(positions), /*train_mode=*/true, rng,
                    cache, /*want_logits=*/false);
  Mat<Real> emb = Mat<Real>::Zero(1, state.config.d_model);
  for (int i = 0; i < k; ++i) emb += fr.hidden.row(m + i);
  emb /= static_cast<Real>(k);
  return emb;
}

}  // namespace

void TrainConfig::validate() const {
  if (p_raw < 0.0 || p_raw > 1.0) {
    throw std::invalid_argument("p_raw must lie in [0, 1]");
  }
  if (reconstruct_share < 0.0 || reconstruct_share > 1.0) {
    throw std::invalid_argument("reconstruct_share must lie in [0, 1]");
  }
  if (lr_ntp <= 0.0 || lr_cl <= 0.0) {
    throw std::invalid_argument("learning rates must be positive");
  }
  if (k_specials < 1) throw std::invalid_argument("k_specials must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (max_seq_len < k_specials + 4 || max_seq_len > 512) {
    throw std::invalid_argument("max_seq_len must lie in [k_specials+4, 512]");
  }
  if (switch_step < 0 || total_steps < 1) {
    throw std::invalid_argument("step counts must be non-negative");
  }
  if (dropout_rate_prefix < 0.0 || dropout_rate_prefix >= 1.0) {
    throw std::invalid_argument("dropout_rate_prefix must lie in [0, 1)");
  }
}

SegmentedSequence insert_specials(std::span<const int> tokens, int position,
                                  int k, SeqKind kind) {
  const int len = static_cast<int>(tokens.size());
  if (k < 1) throw std::invalid_argument("need at least one special token");
  SegmentedSequence seq;
  seq.special_count = k;
  seq.kind = kind;
  if (kind == SeqKind::kCompress) {
    if (position < 1 || position > len) {
      throw std::invalid_argument("insertion position out of range");
    }
    seq.prefix_len = position;
    seq.suffix_len = len - position;
    seq.tokens.assign(tokens.begin(), tokens.begin() + position);
    seq.tokens.insert(seq.tokens.end(), static_cast<size_t>(k), kEmbId);
    seq.tokens.insert(seq.tokens.end(), tokens.begin() + position, tokens.end());
  } else if (kind == SeqKind::kReconstruct) {
    if (position != len) {
      throw std::invalid_argument(
          "reconstruct inserts the specials after the whole input");
    }
    if (len < 1) throw std::invalid_argument("cannot reconstruct empty input");
    seq.prefix_len = len;
    seq.suffix_len = len;
    seq.tokens.assign(tokens.begin(), tokens.end());
    seq.tokens.insert(seq.tokens.end(), static_cast<size_t>(k), kEmbId);
    seq.tokens.insert(seq.tokens.end(), tokens.begin(), tokens.end());
  } else {
    throw std::invalid_argument("insert_specials needs a segmented kind");
  }
  validate_segmented(seq);
  return seq;
}

SegmentedSequence dropout_prefix(const SegmentedSequence& seq, double rate,
                                 Rng& rng) {
  if (seq.special_count < 1) {
    throw std::invalid_argument("dropout_prefix needs a segmented sequence");
  }
  if (seq.prefix_len < 1) {
    throw std::invalid_argument("dropout_prefix needs a non-empty prefix");
  }
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  const int m = seq.prefix_len;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<uint8_t> keep(static_cast<size_t>(m));
  int kept = 0;
  for (int i = 0; i < m; ++i) {
    keep[static_cast<size_t>(i)] = unif(rng) < rate ? 0 : 1;
    kept += keep[static_cast<size_t>(i)];
  }
  if (kept == 0) {
    std::uniform_int_distribution<int> pick(0, m - 1);
    keep[static_cast<size_t>(pick(rng))] = 1;
    kept = 1;
  }

  SegmentedSequence out;
  out.prefix_len = kept;
  out.special_count = seq.special_count;
  out.suffix_len = seq.suffix_len;
  // The twin keeps the original suffix, so a reconstruct example's twin is a
  // plain compress layout.
  out.kind = SeqKind::kCompress;
  out.tokens.reserve(static_cast<size_t>(kept + seq.special_count + seq.suffix_len));
  for (int i = 0; i < m; ++i) {
    if (keep[static_cast<size_t>(i)]) out.tokens.push_back(seq.tokens[static_cast<size_t>(i)]);
  }
  out.tokens.insert(out.tokens.end(), seq.tokens.begin() + m, seq.tokens.end());
  validate_segmented(out);
  return out;
}

TrainingBatch compose_batch(const std::vector<Document>& corpus,
                            const Vocab& vocab, const TrainConfig& cfg,
                            Rng& rng, long step) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  const double alpha = alpha_schedule(step, cfg.switch_step);
  const int k = cfg.k_specials;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> doc_pick(0, static_cast<int>(corpus.size()) - 1);

  TrainingBatch batch;
  batch.examples.reserve(static_cast<size_t>(cfg.batch_size));
  batch.partners.reserve(static_cast<size_t>(cfg.batch_size));
  for (int b = 0; b < cfg.batch_size; ++b) {
    std::vector<int> tokens;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) {
        throw std::runtime_error("corpus has no documents of >= 2 tokens");
      }
      const auto& doc = corpus[static_cast<size_t>(doc_pick(rng))];
      tokens = vocab.encode(doc.text);
      if (tokens.size() >= 2) break;
      std::cerr << "warning: skipping document " << doc.id
                << " (shorter than 2 tokens)\n";
    }
    // Contrastive batches are composed entirely of segmented pairs.
    const bool plain = alpha == 0.0 && unif(rng) < cfg.p_raw;
    if (plain) {
      batch.examples.push_back(
          SegmentedSequence::plain(truncated(std::move(tokens), cfg.max_seq_len)));
      batch.partners.emplace_back(std::nullopt);
      continue;
    }
    const bool reconstruct = unif(rng) < cfg.reconstruct_share;
    SegmentedSequence seq;
    if (reconstruct) {
      auto toks = truncated(std::move(tokens), (cfg.max_seq_len - k) / 2);
      seq = insert_specials(toks, static_cast<int>(toks.size()), k,
                            SeqKind::kReconstruct);
    } else {
      auto toks = truncated(std::move(tokens), cfg.max_seq_len - k);
      std::uniform_int_distribution<int> pos_pick(1, static_cast<int>(toks.size()));
      seq = insert_specials(toks, pos_pick(rng), k, SeqKind::kCompress);
    }
    batch.partners.emplace_back(
        dropout_prefix(seq, cfg.dropout_rate_prefix, rng));
    batch.examples.push_back(std::move(seq));
  }
  return batch;
}

double cosine_lr(long step, double base_lr, long total_steps) {
  if (step < 0 || step > total_steps || total_steps < 1) {
    throw std::invalid_argument("cosine_lr step out of range");
  }
  return base_lr * 0.5 *
         (1.0 + std::cos(M_PI * static_cast<double>(step) /
                         static_cast<double>(total_steps)));
}

void AdamState::init_like(ModelParams<float>& params) {
  m.clear();
  v.clear();
  t = 0;
  for (auto& ref : params.registry()) {
    m.push_back(MatF::Zero(ref.tensor->rows(), ref.tensor->cols()));
    v.push_back(MatF::Zero(ref.tensor->rows(), ref.tensor->cols()));
  }
}

void clip_global_norm(ModelParams<float>& grads, double max_norm) {
  double sq = 0.0;
  for (auto& ref : grads.registry()) {
    sq += ref.tensor->cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / norm);
    for (auto& ref : grads.registry()) *ref.tensor *= scale;
  }
}

void adam_step(ModelParams<float>& params, ModelParams<float>& grads,
               AdamState& adam, double lr) {
  auto prefs = params.registry();
  auto grefs = grads.registry();
  if (adam.m.size() != prefs.size()) {
    throw std::invalid_argument("optimizer state does not match the model");
  }
  adam.t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.t));
  for (size_t i = 0; i < prefs.size(); ++i) {
    MatF& g = *grefs[i].tensor;
    MatF& m = adam.m[i];
    MatF& v = adam.v[i];
    m = static_cast<float>(kAdamBeta1) * m + static_cast<float>(1.0 - kAdamBeta1) * g;
    v = (static_cast<float>(kAdamBeta2) * v.array() +
         static_cast<float>(1.0 - kAdamBeta2) * g.array().square())
            .matrix();
    MatF m_hat = m / static_cast<float>(bc1);
    MatF v_hat = v / static_cast<float>(bc2);
    prefs[i].tensor->array() -=
        static_cast<float>(lr) * m_hat.array() /
        (v_hat.array().sqrt() + static_cast<float>(kAdamEps));
  }
}

template <class Real>
LossBreakdown batch_loss_and_grads(const ModelState<Real>& state,
                                   const TrainingBatch& batch,
                                   const TrainConfig& cfg, double alpha,
                                   Rng* rng, ModelParams<Real>& grads) {
  if (batch.examples.empty()) throw std::invalid_argument("empty batch");
  double ntp_term = 0.0, cl_term = 0.0;

  if (alpha < 1.0) {
    int total_included = 0;
    std::vector<LossMask> masks;
    masks.reserve(batch.examples.size());
    for (const auto& ex : batch.examples) {
      masks.push_back(build_loss_mask(ex));
      total_included += masks.back().included_count();
    }
    if (total_included == 0) {
      throw std::runtime_error("batch has no NTP-scored positions");
    }
    const Real grad_scale =
        static_cast<Real>((1.0 - alpha) / static_cast<double>(total_included));
    double ce_sum = 0.0;
    for (size_t i = 0; i < batch.examples.size(); ++i) {
      const auto& ex = batch.examples[i];
      AttentionMask mask =
          build_gem_mask(ex.prefix_len, ex.special_count, ex.suffix_len);
      std::vector<int> positions = iota_positions(ex.size());
      ForwardCache<Real> cache;
      auto fr = forward(state, std::span<const int>(ex.tokens), mask,
                        std::span<const int>(positions), /*train_mode=*/true,
                        rng, &cache, /*want_logits=*/true);
      std::vector<int> targets(ex.tokens.begin() + 1, ex.tokens.end());
      Mat<Real> d_logits;
      auto stats = ntp_ce_sum_and_grad(fr.logits, std::span<const int>(targets),
                                       masks[i], grad_scale, &d_logits);
      ce_sum += static_cast<double>(stats.ce_sum);
      backward(state, cache, Mat<Real>(), d_logits, grads);
    }
    ntp_term = ce_sum / static_cast<double>(total_included);
  }

  if (alpha > 0.0) {
    std::vector<size_t> pair_idx;
    for (size_t i = 0; i < batch.examples.size(); ++i) {
      if (batch.partners[i].has_value()) pair_idx.push_back(i);
    }
    const int B = static_cast<int>(pair_idx.size());
    if (B < 2) {
      throw std::runtime_error(
          "contrastive loss needs at least two positive pairs in the batch");
    }
    const int d = state.config.d_model;
    Mat<Real> Q(B, d), D(B, d);
    std::vector<ForwardCache<Real>> q_caches(static_cast<size_t>(B));
    std::vector<ForwardCache<Real>> d_caches(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
      const auto& ex = batch.examples[pair_idx[static_cast<size_t>(b)]];
      const auto& tw = *batch.partners[pair_idx[static_cast<size_t>(b)]];
      Q.row(b) = special_embedding_forward(state, ex, rng,
                                           &q_caches[static_cast<size_t>(b)]);
      D.row(b) = special_embedding_forward(state, tw, rng,
                                           &d_caches[static_cast<size_t>(b)]);
    }
    Mat<Real> dQ, dD;
    Real dlam = 0;
    const Real lambda = state.params.log_temp(0, 0);
    const Real cl = contrastive_loss_and_grad(Q, D, lambda, &dQ, &dD, &dlam,
                                              cfg.symmetric_contrastive);
    const Real w = static_cast<Real>(alpha);
    grads.log_temp(0, 0) += w * dlam;
    for (int b = 0; b < B; ++b) {
      const auto& ex = batch.examples[pair_idx[static_cast<size_t>(b)]];
      const auto& tw = *batch.partners[pair_idx[static_cast<size_t>(b)]];
      for (int side = 0; side < 2; ++side) {
        const auto& seq = side == 0 ? ex : tw;
        const auto& cache = side == 0 ? q_caches[static_cast<size_t>(b)]
                                      : d_caches[static_cast<size_t>(b)];
        const auto& drow = side == 0 ? dQ : dD;
        const int mk = seq.prefix_len + seq.special_count;
        Mat<Real> d_hidden = Mat<Real>::Zero(mk, d);
        for (int s = 0; s < seq.special_count; ++s) {
          d_hidden.row(seq.prefix_len + s) =
              drow.row(b) * (w / static_cast<Real>(seq.special_count));
        }
        backward(state, cache, d_hidden, Mat<Real>(), grads);
      }
    }
    cl_term = static_cast<double>(cl);
  }

  return combined_loss(ntp_term, cl_term, alpha);
}

LossBreakdown train_step(ModelState<float>& state, const TrainingBatch& batch,
                         const TrainConfig& cfg, long step, AdamState& adam,
                         Rng& rng) {
  const double alpha = alpha_schedule(step, cfg.switch_step);
  ModelParams<float> grads;
  grads.allocate_zero(state.config);
  LossBreakdown lb = batch_loss_and_grads(state, batch, cfg, alpha, &rng, grads);
  if (!std::isfinite(lb.total)) {
    throw std::runtime_error("non-finite loss at step " + std::to_string(step));
  }
  clip_global_norm(grads, kClipNorm);
  const double base_lr = alpha == 0.0 ? cfg.lr_ntp : cfg.lr_cl;
  const double lr = cosine_lr(step, base_lr, cfg.total_steps);
  adam_step(state.params, grads, adam, lr);
  state.params.log_temp(0, 0) = static_cast<float>(
      clamp_temperature(static_cast<double>(state.params.log_temp(0, 0))));
  return lb;
}

// --- config (de)serialization ---

namespace {

nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["p_raw"] = cfg.p_raw;
  j["k_specials"] = cfg.k_specials;
  j["batch_size"] = cfg.batch_size;
  j["max_seq_len"] = cfg.max_seq_len;
  j["lr_ntp"] = cfg.lr_ntp;
  j["lr_cl"] = cfg.lr_cl;
  j["switch_step"] = cfg.switch_step;
  j["total_steps"] = cfg.total_steps;
  j["dropout_rate_prefix"] = cfg.dropout_rate_prefix;
  j["reconstruct_share"] = cfg.reconstruct_share;
  j["symmetric_contrastive"] = cfg.symmetric_contrastive;
  j["seed"] = cfg.seed;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.p_raw = j.value("p_raw", cfg.p_raw);
  cfg.k_specials = j.value("k_specials", cfg.k_specials);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.max_seq_len = j.value("max_seq_len", cfg.max_seq_len);
  cfg.lr_ntp = j.value("lr_ntp", cfg.lr_ntp);
  cfg.lr_cl = j.value("lr_cl", cfg.lr_cl);
  cfg.switch_step = j.value("switch_step", cfg.switch_step);
  cfg.total_steps = j.value("total_steps", cfg.total_steps);
  cfg.dropout_rate_prefix = j.value("dropout_rate_prefix", cfg.dropout_rate_prefix);
  cfg.reconstruct_share = j.value("reconstruct_share", cfg.reconstruct_share);
  cfg.symmetric_contrastive =
      j.value("symmetric_contrastive", cfg.symmetric_contrastive);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

}  // namespace

std::string train_config_to_json_string(const TrainConfig& cfg) {
  return train_config_to_json(cfg).dump();
}

TrainConfig train_config_from_json_string(const std::string& json_text) {
  return train_config_from_json(nlohmann::json::parse(json_text));
}

// --- Trainer ---

Trainer::Trainer(std::vector<Document> corpus, Vocab vocab,
                 ModelConfig model_cfg, TrainConfig train_cfg) {
  train_cfg.validate();
  model_cfg.vocab_size = vocab.size();
  model_cfg.validate();
  if (train_cfg.max_seq_len > model_cfg.max_positions) {
    throw std::invalid_argument("max_seq_len exceeds the model's positions");
  }
  corpus_ = std::move(corpus);
  vocab_ = std::move(vocab);
  train_cfg_ = train_cfg;
  state_ = init_model<float>(model_cfg);
  adam_.init_like(state_.params);
  rng_.seed(train_cfg_.seed);
  step_ = 0;
}

Trainer Trainer::from_checkpoint(std::vector<Document> corpus,
                                 const std::string& init_ckpt,
                                 TrainConfig train_cfg) {
  train_cfg.validate();
  LoadedCheckpoint loaded = load_checkpoint_full(init_ckpt);
  if (!loaded.vocab_json) {
    throw std::runtime_error("checkpoint carries no vocabulary: " + init_ckpt);
  }
  Trainer t;
  t.corpus_ = std::move(corpus);
  t.vocab_ = Vocab::from_json_string(*loaded.vocab_json);
  t.train_cfg_ = train_cfg;
  t.state_ = std::move(loaded.state);
  t.adam_.init_like(t.state_.params);
  t.rng_.seed(train_cfg.seed);
  t.step_ = 0;
  return t;
}

Trainer Trainer::resume(std::vector<Document> corpus,
                        const std::string& ckpt_path) {
  LoadedCheckpoint loaded = load_checkpoint_full(ckpt_path);
  if (!loaded.vocab_json || !loaded.trainer_json) {
    throw std::runtime_error("checkpoint lacks trainer state: " + ckpt_path);
  }
  nlohmann::json tj = nlohmann::json::parse(*loaded.trainer_json);
  Trainer t;
  t.corpus_ = std::move(corpus);
  t.vocab_ = Vocab::from_json_string(*loaded.vocab_json);
  t.train_cfg_ = train_config_from_json(tj.at("train_config"));
  t.state_ = std::move(loaded.state);
  t.step_ = tj.at("step").get<long>();

  t.adam_.init_like(t.state_.params);
  t.adam_.t = tj.at("adam_t").get<long>();
  std::unordered_map<std::string, MatF*> extras;
  for (auto& [name, mat] : loaded.extra_tensors) extras[name] = &mat;
  auto refs = t.state_.params.registry();
  for (size_t i = 0; i < refs.size(); ++i) {
    auto m_it = extras.find("adam_m." + refs[i].name);
    auto v_it = extras.find("adam_v." + refs[i].name);
    if (m_it == extras.end() || v_it == extras.end()) {
      throw std::runtime_error("checkpoint lacks optimizer moments for " +
                               refs[i].name);
    }
    t.adam_.m[i] = *m_it->second;
    t.adam_.v[i] = *v_it->second;
  }
  std::istringstream rng_in(tj.at("rng").get<std::string>());
  rng_in >> t.rng_;
  if (!rng_in) throw std::runtime_error("corrupt rng state in checkpoint");
  return t;
}

LossBreakdown Trainer::step() {
  TrainingBatch batch = compose_batch(corpus_, vocab_, train_cfg_, rng_, step_);
  LossBreakdown lb = train_step(state_, batch, train_cfg_, step_, adam_, rng_);
  step_ += 1;
  return lb;
}

double Trainer::current_lr(long step) const {
  const double alpha = alpha_schedule(step, train_cfg_.switch_step);
  const double base = alpha == 0.0 ? train_cfg_.lr_ntp : train_cfg_.lr_cl;
  return cosine_lr(step, base, train_cfg_.total_steps);
}

void Trainer::save(const std::string& path) const {
  nlohmann::ordered_json tj;
  tj["step"] = step_;
  tj["adam_t"] = adam_.t;
  std::ostringstream rng_out;
  rng_out << rng_;
  tj["rng"] = rng_out.str();
  tj["train_config"] = train_config_to_json(train_cfg_);

  CheckpointExtras extras;
  extras.vocab_json = vocab_.to_json_string();
  extras.trainer_json = tj.dump();
  auto refs = const_cast<ModelParams<float>&>(state_.params).registry();
  for (size_t i = 0; i < refs.size(); ++i) {
    extras.extra_tensors.emplace_back("adam_m." + refs[i].name, &adam_.m[i]);
    extras.extra_tensors.emplace_back("adam_v." + refs[i].name, &adam_.v[i]);
  }
  save_checkpoint(state_, path, &extras);
}

std::string train(const TrainRunOptions& options) {
  std::vector<Document> docs = load_corpus(options.corpus_path);

  Trainer trainer = [&]() {
    if (!options.resume_from.empty()) {
      return Trainer::resume(docs, options.resume_from);
    }
    if (!options.init_from.empty()) {
      return Trainer::from_checkpoint(docs, options.init_from,
                                      options.train_cfg);
    }
    Vocab vocab = options.vocab_path.empty()
                      ? Vocab::build(docs, options.vocab_cap)
                      : Vocab::load(options.vocab_path);
    return Trainer(docs, std::move(vocab), options.model_cfg,
                   options.train_cfg);
  }();

  const bool resuming = !options.resume_from.empty();
  std::ofstream csv(options.csv_log,
                    resuming ? std::ios::app : std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write CSV log: " + options.csv_log);
  if (!resuming) {
    nlohmann::ordered_json echo;
    echo["model"] = nlohmann::ordered_json::parse(
        model_config_to_json_string(trainer.state().config));
    echo["train"] = train_config_to_json(trainer.train_config());
    csv << "# " << echo.dump() << "\n";
    csv << "step,lr,alpha,loss_ntp,loss_cl,loss_total\n";
  }

  char row[256];
  while (trainer.current_step() < trainer.train_config().total_steps) {
    const long s = trainer.current_step();
    const double lr = trainer.current_lr(s);
    LossBreakdown lb = trainer.step();
    std::snprintf(row, sizeof(row), "%ld,%.10g,%.0f,%.10g,%.10g,%.10g\n", s, lr,
                  lb.alpha, lb.ntp, lb.cl, lb.total);
    csv << row;
    if (s % 50 == 0) csv.flush();
  }
  csv.flush();
  trainer.save(options.out_checkpoint);
  return options.out_checkpoint;
}

// --- explicit instantiations ---

template LossBreakdown batch_loss_and_grads<float>(const ModelState<float>&,
                                                   const TrainingBatch&,
                                                   const TrainConfig&, double,
                                                   Rng*, ModelParams<float>&);
template LossBreakdown batch_loss_and_grads<double>(const ModelState<double>&,
                                                    const TrainingBatch&,
                                                    const TrainConfig&, double,
                                                    Rng*, ModelParams<double>&);

}  // namespace gem
