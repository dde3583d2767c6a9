#include "gem/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gem/masking.hpp"
#include "gem/objective.hpp"

namespace gem {

namespace {

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

Embedding embed_or_name(const EmbedFn& embed_fn, const std::string& text,
                        const std::string& what) {
  try {
    return embed_fn(text);
  } catch (const std::exception& e) {
    throw std::runtime_error("embedding failed for " + what + ": " + e.what());
  }
}

// Average ranks, ties resolved by averaging (1-based).
std::vector<double> average_ranks(std::span<const double> values) {
  const size_t n = values.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

RetrievalSet make_retrieval_set(const std::vector<Document>& docs,
                                double noise_rate, Rng& rng) {
  if (docs.size() < 10) {
    throw std::invalid_argument("retrieval set needs at least 10 documents");
  }
  if (noise_rate < 0.0 || noise_rate >= 1.0) {
    throw std::invalid_argument("noise_rate must lie in [0, 1)");
  }
  RetrievalSet set;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& doc : docs) {
    set.corpus_docs.emplace_back(doc.id, doc.text);
    auto words = tokenize_words(doc.text);
    if (words.size() < 4) continue;
    std::vector<std::string> kept;
    for (const auto& w : words) {
      if (unif(rng) >= noise_rate) kept.push_back(w);
    }
    if (kept.empty()) {
      std::uniform_int_distribution<size_t> pick(0, words.size() - 1);
      kept.push_back(words[pick(rng)]);
    }
    set.queries.push_back({join_words(kept), doc.id});
  }
  return set;
}

RetrievalMetrics eval_retrieval(const EmbedFn& embed_fn,
                                const RetrievalSet& set) {
  if (set.queries.empty() || set.corpus_docs.empty()) {
    throw std::invalid_argument("empty retrieval set");
  }
  std::vector<Embedding> doc_embs;
  doc_embs.reserve(set.corpus_docs.size());
  for (const auto& [id, text] : set.corpus_docs) {
    doc_embs.push_back(embed_or_name(embed_fn, text, "doc " + id));
  }

  double hits = 0.0, ndcg = 0.0;
  for (const auto& q : set.queries) {
    Embedding qe = embed_or_name(embed_fn, q.text, "query for doc " + q.gold_id);
    std::vector<std::pair<double, size_t>> scored(set.corpus_docs.size());
    for (size_t i = 0; i < doc_embs.size(); ++i) {
      scored[i] = {cosine_sim(qe, doc_embs[i]), i};
    }
    // Reproducible ranking: similarity descending, then doc id ascending.
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return set.corpus_docs[a.second].first < set.corpus_docs[b.second].first;
    });
    size_t rank = 0;
    for (size_t i = 0; i < scored.size(); ++i) {
      if (set.corpus_docs[scored[i].second].first == q.gold_id) {
        rank = i + 1;
        break;
      }
    }
    if (rank == 1) hits += 1.0;
    if (rank >= 1 && rank <= 10) {
      ndcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  RetrievalMetrics metrics;
  metrics.recall_at_1 = hits / static_cast<double>(set.queries.size());
  metrics.ndcg_at_10 = ndcg / static_cast<double>(set.queries.size());
  return metrics;
}

StsSet make_sts_set(const std::vector<Document>& docs, Rng& rng) {
  static const double kRatios[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<size_t> order(docs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  StsSet set;
  size_t ratio_idx = 0;
  for (size_t i = 0; i + 1 < order.size(); i += 2) {
    auto a_words = tokenize_words(docs[order[i]].text);
    auto b_words = tokenize_words(docs[order[i + 1]].text);
    if (a_words.size() < 4 || b_words.size() < 4) continue;
    const double r = kRatios[ratio_idx % 5];
    ++ratio_idx;
    const size_t la = a_words.size();
    const size_t take = static_cast<size_t>(std::lround(r * static_cast<double>(la)));
    std::vector<std::string> spliced(a_words.begin(),
                                     a_words.begin() + static_cast<long>(take));
    for (size_t t = 0; spliced.size() < la; ++t) {
      spliced.push_back(b_words[t % b_words.size()]);
    }
    set.pairs.push_back({docs[order[i]].text, join_words(spliced), r});
  }
  return set;
}

double eval_sts(const EmbedFn& embed_fn, const StsSet& set) {
  if (set.pairs.size() < 20) {
    throw std::invalid_argument("sts evaluation needs at least 20 pairs");
  }
  std::vector<double> sims, golds;
  for (size_t i = 0; i < set.pairs.size(); ++i) {
    const auto& p = set.pairs[i];
    Embedding a = embed_or_name(embed_fn, p.text_a, "sts pair " + std::to_string(i));
    Embedding b = embed_or_name(embed_fn, p.text_b, "sts pair " + std::to_string(i));
    sims.push_back(cosine_sim(a, b));
    golds.push_back(p.gold);
  }
  return spearman(sims, golds);
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman needs two equal-length vectors");
  }
  std::vector<double> ra = average_ranks(a);
  std::vector<double> rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) {
    throw std::invalid_argument(
        "spearman undefined for a constant vector");
  }
  return cov / std::sqrt(va * vb);
}

double eval_perplexity(const ModelState<float>& state, const Vocab& vocab,
                       const std::vector<std::string>& texts) {
  double ce_sum = 0.0;
  long count = 0;
  for (const auto& text : texts) {
    std::vector<int> tokens = vocab.encode(text);
    if (tokens.size() < 2) continue;
    if (static_cast<int>(tokens.size()) > state.config.max_positions) {
      tokens.resize(static_cast<size_t>(state.config.max_positions));
    }
    for (int t : tokens) {
      if (t == kEmbId) {
        throw std::invalid_argument(
            "perplexity texts must not contain the special token");
      }
    }
    const int T = static_cast<int>(tokens.size());
    AttentionMask mask = build_gem_mask(T, 0, 0);
    std::vector<int> positions(tokens.size());
    std::iota(positions.begin(), positions.end(), 0);
    auto fr = forward(state, std::span<const int>(tokens), mask,
                      std::span<const int>(positions), /*train_mode=*/false,
                      nullptr, nullptr, /*want_logits=*/true);
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    LossMask lm;
    lm.include.assign(tokens.size() - 1, 1);
    auto stats = ntp_ce_sum_and_grad<float>(
        fr.logits, std::span<const int>(targets), lm, 0.0f, nullptr);
    ce_sum += static_cast<double>(stats.ce_sum);
    count += stats.included;
  }
  if (count == 0) {
    throw std::invalid_argument("no scorable text for perplexity");
  }
  return std::exp(ce_sum / static_cast<double>(count));
}

}  // namespace gem
