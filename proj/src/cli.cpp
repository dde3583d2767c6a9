#include "gem/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "gem/corpus.hpp"
#include "gem/embedder.hpp"
#include "gem/evalkit.hpp"
#include "gem/masking.hpp"
#include "gem/model.hpp"
#include "gem/objective.hpp"
#include "gem/reconstruct.hpp"
#include "gem/trainer.hpp"

namespace gem {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct LoadedModel {
  ModelState<float> state;
  Vocab vocab;
};

LoadedModel load_model_with_vocab(const std::string& ckpt) {
  LoadedCheckpoint loaded = load_checkpoint_full(ckpt);
  if (!loaded.vocab_json) {
    throw std::runtime_error("checkpoint carries no vocabulary: " + ckpt);
  }
  return {std::move(loaded.state), Vocab::from_json_string(*loaded.vocab_json)};
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

int cmd_build_vocab(const std::string& input, const std::string& out, int cap) {
  auto docs = load_corpus(input);
  Vocab vocab = Vocab::build(docs, cap);
  vocab.save(out);
  std::cerr << "vocab of " << vocab.size() << " tokens written to " << out
            << "\n";
  return 0;
}

int cmd_train(CLI::App* sub, const std::string& corpus,
              const std::string& config_path, const std::string& out,
              std::string log_path, const std::string& vocab_path,
              int vocab_cap, const std::string& init_from,
              const std::string& resume_from, std::uint64_t seed, long steps,
              double p_raw, int k, long switch_step, int batch_size) {
  ModelConfig mc;
  TrainConfig tc;
  if (!config_path.empty()) {
    nlohmann::json j = nlohmann::json::parse(read_file(config_path));
    if (j.contains("model")) {
      mc = model_config_from_json_string(j["model"].dump());
    }
    if (j.contains("train")) {
      tc = train_config_from_json_string(j["train"].dump());
    }
  }
  if (sub->count("--seed")) {
    mc.seed = seed;
    tc.seed = seed;
  }
  if (sub->count("--steps")) tc.total_steps = steps;
  if (sub->count("--p-raw")) tc.p_raw = p_raw;
  if (sub->count("--k")) tc.k_specials = k;
  if (sub->count("--switch-step")) tc.switch_step = switch_step;
  if (sub->count("--batch-size")) tc.batch_size = batch_size;
  if (log_path.empty()) log_path = out + ".csv";

  TrainRunOptions options;
  options.corpus_path = corpus;
  options.model_cfg = mc;
  options.train_cfg = tc;
  options.out_checkpoint = out;
  options.csv_log = log_path;
  options.vocab_path = vocab_path;
  options.vocab_cap = vocab_cap;
  options.init_from = init_from;
  options.resume_from = resume_from;
  const std::string ckpt = train(options);
  std::cerr << "checkpoint written to " << ckpt << " (log: " << log_path
            << ")\n";
  return 0;
}

int cmd_embed(const std::string& ckpt, const std::string& input,
              const std::string& out, int k, const std::string& pooling_name,
              std::uint64_t seed) {
  LoadedModel lm = load_model_with_vocab(ckpt);
  Pooling pooling = pooling_from_string(pooling_name);
  auto docs = load_corpus(input);

  std::ofstream os(out, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write embeddings: " + out);
  nlohmann::ordered_json cfg;
  cfg["ckpt"] = ckpt;
  cfg["input"] = input;
  cfg["k"] = k;
  cfg["pooling"] = pooling_name;
  cfg["seed"] = seed;
  nlohmann::ordered_json header;
  header["config"] = cfg;
  os << header.dump() << "\n";

  for (const auto& doc : docs) {
    Embedding emb = embed_text(lm.state, lm.vocab, doc.text, k, pooling);
    nlohmann::ordered_json row;
    row["id"] = doc.id;
    row["dim"] = emb.dim();
    row["vector"] = emb.vector;
    if (emb.truncated) row["truncated"] = true;
    os << row.dump() << "\n";
  }
  if (!os) throw std::runtime_error("failed writing embeddings: " + out);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& corpus,
             const std::string& suite, const std::string& out,
             std::uint64_t seed, double noise_rate, int k,
             const std::string& pooling_name, const std::string& embedder) {
  LoadedModel lm = load_model_with_vocab(ckpt);
  Pooling pooling = pooling_from_string(pooling_name);
  auto docs = load_corpus(corpus);
  Rng rng(seed);

  EmbedFn embed_fn;
  if (embedder == "gem") {
    embed_fn = [&](const std::string& text) {
      return embed_text(lm.state, lm.vocab, text, k, pooling);
    };
  } else if (embedder == "meanpool") {
    embed_fn = [&](const std::string& text) {
      return embed_baseline_meanpool(lm.state, lm.vocab, text);
    };
  } else {
    throw std::invalid_argument("unknown embedder: " + embedder);
  }

  std::vector<std::pair<std::string, double>> rows;
  if (suite == "retrieval") {
    RetrievalSet set = make_retrieval_set(docs, noise_rate, rng);
    RetrievalMetrics metrics = eval_retrieval(embed_fn, set);
    rows.emplace_back("recall@1", metrics.recall_at_1);
    rows.emplace_back("ndcg@10", metrics.ndcg_at_10);
  } else if (suite == "sts") {
    StsSet set = make_sts_set(docs, rng);
    rows.emplace_back("spearman", eval_sts(embed_fn, set));
  } else if (suite == "ppl") {
    std::vector<std::string> texts;
    for (const auto& d : docs) texts.push_back(d.text);
    rows.emplace_back("perplexity", eval_perplexity(lm.state, lm.vocab, texts));
  } else {
    throw std::invalid_argument("unknown suite: " + suite);
  }

  std::ofstream os(out, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write metrics: " + out);
  nlohmann::ordered_json cfg;
  cfg["ckpt"] = ckpt;
  cfg["corpus"] = corpus;
  cfg["suite"] = suite;
  cfg["seed"] = seed;
  cfg["noise_rate"] = noise_rate;
  cfg["k"] = k;
  cfg["pooling"] = pooling_name;
  cfg["embedder"] = embedder;
  os << "# " << cfg.dump() << "\n";
  os << "suite,metric,value,seed,ckpt\n";
  for (const auto& [metric, value] : rows) {
    os << suite << "," << metric << "," << format_value(value) << "," << seed
       << "," << ckpt << "\n";
  }
  if (!os) throw std::runtime_error("failed writing metrics: " + out);
  return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& text, int k,
                    int max_len) {
  LoadedModel lm = load_model_with_vocab(ckpt);
  KVCacheSnapshot<float> cache = compress(lm.state, lm.vocab, text, k);
  std::vector<int> ids =
      decode_from_cache(lm.state, cache, max_len, /*greedy=*/true);
  std::vector<int> ref = lm.vocab.encode(text);
  const double acc = token_accuracy(ref, ids);

  nlohmann::ordered_json cfg;
  cfg["ckpt"] = ckpt;
  cfg["k"] = k;
  cfg["max_len"] = max_len;
  std::cout << "config: " << cfg.dump() << "\n";
  std::cout << "input:     " << text << "\n";
  std::cout << "recovered: " << lm.vocab.decode(ids) << "\n";
  std::cout << "token accuracy: " << format_value(acc) << "\n";
  return 0;
}

int cmd_mask_dump(int m, int k, int n) {
  AttentionMask mask = build_gem_mask(m, k, n);
  for (int i = 0; i < mask.size(); ++i) {
    for (int j = 0; j < mask.size(); ++j) {
      if (j) std::cout << ' ';
      std::cout << (mask.allowed(i, j) ? '1' : '0');
    }
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"gem: bottleneck-token text embeddings on a toy transformer"};
  app.require_subcommand(1);
  std::uint64_t seed = 42;

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "rng seed")->envname("GEM_SEED");
  };

  // build-vocab
  auto* sv = app.add_subcommand("build-vocab", "build a vocabulary json");
  std::string sv_input, sv_out;
  int sv_cap = 8192;
  sv->add_option("--input", sv_input, "corpus file")->required();
  sv->add_option("--out", sv_out, "output vocab json")->required();
  sv->add_option("--cap", sv_cap, "vocabulary cap");
  add_seed(sv);

  // train
  auto* st = app.add_subcommand("train", "train a model");
  std::string st_corpus, st_config, st_out, st_log, st_vocab, st_init, st_resume;
  int st_vocab_cap = 8192, st_k = 1, st_batch = 32;
  long st_steps = 1000, st_switch = 100;
  double st_p_raw = 0.8;
  st->add_option("--corpus", st_corpus, "training corpus")->required();
  st->add_option("--config", st_config, "json config with model/train sections");
  st->add_option("--out", st_out, "output checkpoint")->required();
  st->add_option("--log", st_log, "csv log path (default: <out>.csv)");
  st->add_option("--vocab", st_vocab, "existing vocab json");
  st->add_option("--vocab-cap", st_vocab_cap, "cap when building the vocab");
  st->add_option("--init-from", st_init, "warm-start checkpoint");
  st->add_option("--resume", st_resume, "resume a checkpoint with trainer state");
  st->add_option("--steps", st_steps, "total training steps");
  st->add_option("--p-raw", st_p_raw, "plain-example probability");
  st->add_option("--k", st_k, "special tokens per segmented example");
  st->add_option("--switch-step", st_switch, "contrastive phase start");
  st->add_option("--batch-size", st_batch, "examples per batch");
  add_seed(st);

  // embed
  auto* se = app.add_subcommand("embed", "embed texts from a file");
  std::string se_ckpt, se_input, se_out, se_pooling = "mean";
  int se_k = 1;
  se->add_option("--ckpt", se_ckpt, "checkpoint")->required();
  se->add_option("--input", se_input, "texts file (jsonl or plain)")->required();
  se->add_option("--out", se_out, "output jsonl")->required();
  se->add_option("--k", se_k, "special token count");
  se->add_option("--pooling", se_pooling, "mean|concat");
  add_seed(se);

  // eval
  auto* sl = app.add_subcommand("eval", "run an evaluation suite");
  std::string sl_ckpt, sl_corpus, sl_suite, sl_out, sl_pooling = "mean",
                                                    sl_embedder = "gem";
  double sl_noise = 0.3;
  int sl_k = 1;
  sl->add_option("--ckpt", sl_ckpt, "checkpoint")->required();
  sl->add_option("--corpus", sl_corpus, "evaluation documents")->required();
  sl->add_option("--suite", sl_suite, "retrieval|sts|ppl")->required();
  sl->add_option("--out", sl_out, "metrics csv")->required();
  sl->add_option("--noise-rate", sl_noise, "query corruption rate");
  sl->add_option("--k", sl_k, "special token count");
  sl->add_option("--pooling", sl_pooling, "mean|concat");
  sl->add_option("--embedder", sl_embedder, "gem|meanpool");
  add_seed(sl);

  // reconstruct
  auto* sr = app.add_subcommand("reconstruct", "compress and decode a text");
  std::string sr_ckpt, sr_text;
  int sr_k = 1, sr_max_len = 64;
  sr->add_option("--ckpt", sr_ckpt, "checkpoint")->required();
  sr->add_option("--text", sr_text, "input text")->required();
  sr->add_option("--k", sr_k, "special token count");
  sr->add_option("--max-len", sr_max_len, "decoding budget");
  add_seed(sr);

  // mask-dump
  auto* sm = app.add_subcommand("mask-dump", "print a bottleneck mask");
  int sm_m = 0, sm_k = 0, sm_n = 0;
  sm->add_option("--m", sm_m, "prefix length");
  sm->add_option("--k", sm_k, "special count");
  sm->add_option("--n", sm_n, "suffix length");
  add_seed(sm);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (sv->parsed()) return cmd_build_vocab(sv_input, sv_out, sv_cap);
    if (st->parsed()) {
      return cmd_train(st, st_corpus, st_config, st_out, st_log, st_vocab,
                       st_vocab_cap, st_init, st_resume, seed, st_steps,
                       st_p_raw, st_k, st_switch, st_batch);
    }
    if (se->parsed()) {
      return cmd_embed(se_ckpt, se_input, se_out, se_k, se_pooling, seed);
    }
    if (sl->parsed()) {
      return cmd_eval(sl_ckpt, sl_corpus, sl_suite, sl_out, seed, sl_noise,
                      sl_k, sl_pooling, sl_embedder);
    }
    if (sr->parsed()) {
      return cmd_reconstruct(sr_ckpt, sr_text, sr_k, sr_max_len);
    }
    if (sm->parsed()) return cmd_mask_dump(sm_m, sm_k, sm_n);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace gem
