#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gem/corpus.hpp"
#include "gem/embedder.hpp"
#include "gem/model.hpp"

namespace gem {

using EmbedFn = std::function<Embedding(const std::string&)>;

struct RetrievalSet {
  struct Query {
    std::string text;
    std::string gold_id;
  };
  std::vector<std::pair<std::string, std::string>> corpus_docs;  // id, text
  std::vector<Query> queries;
};

// One query per document of >= 4 tokens: the document with tokens deleted
// independently at noise_rate (at least one kept).
RetrievalSet make_retrieval_set(const std::vector<Document>& docs,
                                double noise_rate, Rng& rng);

struct RetrievalMetrics {
  double recall_at_1 = 0.0;
  double ndcg_at_10 = 0.0;
};

RetrievalMetrics eval_retrieval(const EmbedFn& embed_fn,
                                const RetrievalSet& set);

struct StsSet {
  struct Pair {
    std::string text_a;
    std::string text_b;
    double gold;  // the overlap ratio the pair was built with
  };
  std::vector<Pair> pairs;
};

// Pairs spliced from documents at overlap ratios {0, .25, .5, .75, 1}.
StsSet make_sts_set(const std::vector<Document>& docs, Rng& rng);

double eval_sts(const EmbedFn& embed_fn, const StsSet& set);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

// exp(mean token-level cross-entropy) under plain causal masking.
double eval_perplexity(const ModelState<float>& state, const Vocab& vocab,
                       const std::vector<std::string>& texts);

}  // namespace gem
