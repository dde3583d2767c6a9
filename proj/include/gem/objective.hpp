#pragma once

#include <span>

#include "gem/common.hpp"
#include "gem/masking.hpp"

namespace gem {

struct LossBreakdown {
  double ntp = 0.0;
  double cl = 0.0;
  double alpha = 0.0;
  double total = 0.0;
};

// Mean cross-entropy over the included positions. logits is T x V; targets
// and mask have length T-1 (position i predicts targets[i]).
template <class Real>
Real ntp_loss(const Mat<Real>& logits, std::span<const int> targets,
              const LossMask& mask);

// Sum of included cross-entropies plus, when d_logits is given, the gradient
// rows scaled by grad_scale. Returns {sum, included_count}.
template <class Real>
struct NtpStats {
  Real ce_sum = 0;
  int included = 0;
};

template <class Real>
NtpStats<Real> ntp_ce_sum_and_grad(const Mat<Real>& logits,
                                   std::span<const int> targets,
                                   const LossMask& mask, Real grad_scale,
                                   Mat<Real>* d_logits);

// InfoNCE over a precomputed similarity matrix (row = query, col = candidate;
// the diagonal holds the positives). One-directional unless symmetric.
template <class Real>
Real infonce_from_similarities(const Mat<Real>& sims, Real lambda,
                               bool symmetric = false);

template <class Real>
Mat<Real> cosine_similarity_matrix(const Mat<Real>& q, const Mat<Real>& d);

template <class Real>
Real contrastive_loss(const Mat<Real>& q, const Mat<Real>& d, Real lambda,
                      bool symmetric = false);

template <class Real>
Real contrastive_loss_and_grad(const Mat<Real>& q, const Mat<Real>& d,
                               Real lambda, Mat<Real>* dq, Mat<Real>* dd,
                               Real* dlambda, bool symmetric = false);

LossBreakdown combined_loss(double ntp, double cl, double alpha);

double alpha_schedule(long step, long switch_step = 100);

double clamp_temperature(double lambda);

}  // namespace gem
