#include "gem/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gem {

namespace {

const double kLambdaMax = std::log(100.0);

template <class Real>
Mat<Real> normalize_rows(const Mat<Real>& x, Mat<Real>* norms) {
  Mat<Real> out(x.rows(), x.cols());
  norms->resize(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Real n = x.row(i).norm();
    if (!(n > Real(0)) || !std::isfinite(static_cast<double>(n))) {
      throw std::invalid_argument("zero-norm embedding at row " +
                                  std::to_string(i));
    }
    (*norms)(i, 0) = n;
    out.row(i) = x.row(i) / n;
  }
  return out;
}

// Rowwise softmax probabilities of lambda * sims.
template <class Real>
Mat<Real> scaled_softmax_rows(const Mat<Real>& sims, Real lambda) {
  Mat<Real> p(sims.rows(), sims.cols());
  for (Eigen::Index i = 0; i < sims.rows(); ++i) {
    const Real maxv = lambda * sims.row(i).maxCoeff();
    Real denom = 0;
    for (Eigen::Index j = 0; j < sims.cols(); ++j) {
      p(i, j) = std::exp(lambda * sims(i, j) - maxv);
      denom += p(i, j);
    }
    p.row(i) /= denom;
  }
  return p;
}

template <class Real>
Real infonce_directional(const Mat<Real>& sims, Real lambda) {
  const Eigen::Index B = sims.rows();
  Real loss = 0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const Real maxv = lambda * sims.row(i).maxCoeff();
    Real denom = 0;
    for (Eigen::Index j = 0; j < B; ++j) {
      denom += std::exp(lambda * sims(i, j) - maxv);
    }
    const Real lse = maxv + std::log(denom);
    loss += lse - lambda * sims(i, i);
  }
  return loss / static_cast<Real>(B);
}

}  // namespace

template <class Real>
NtpStats<Real> ntp_ce_sum_and_grad(const Mat<Real>& logits,
                                   std::span<const int> targets,
                                   const LossMask& mask, Real grad_scale,
                                   Mat<Real>* d_logits) {
  const Eigen::Index T = logits.rows(), V = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != T - 1 ||
      static_cast<Eigen::Index>(mask.include.size()) != T - 1) {
    throw std::invalid_argument("targets/mask must have length T-1");
  }
  if (d_logits) *d_logits = Mat<Real>::Zero(T, V);

  NtpStats<Real> stats;
  for (Eigen::Index i = 0; i < T - 1; ++i) {
    if (!mask.include[static_cast<size_t>(i)]) continue;
    const int target = targets[static_cast<size_t>(i)];
    if (target < 0 || target >= V) {
      throw std::invalid_argument("target id out of range: " +
                                  std::to_string(target));
    }
    const Real maxv = logits.row(i).maxCoeff();
    Real denom = 0;
    for (Eigen::Index j = 0; j < V; ++j) {
      denom += std::exp(logits(i, j) - maxv);
    }
    const Real lse = maxv + std::log(denom);
    stats.ce_sum += lse - logits(i, target);
    stats.included += 1;
    if (d_logits) {
      for (Eigen::Index j = 0; j < V; ++j) {
        d_logits->coeffRef(i, j) =
            std::exp(logits(i, j) - lse) * grad_scale;
      }
      d_logits->coeffRef(i, target) -= grad_scale;
    }
  }
  return stats;
}

template <class Real>
Real ntp_loss(const Mat<Real>& logits, std::span<const int> targets,
              const LossMask& mask) {
  auto stats = ntp_ce_sum_and_grad<Real>(logits, targets, mask, Real(0), nullptr);
  if (stats.included == 0) {
    throw std::invalid_argument("loss mask excludes every position");
  }
  return stats.ce_sum / static_cast<Real>(stats.included);
}

template <class Real>
Mat<Real> cosine_similarity_matrix(const Mat<Real>& q, const Mat<Real>& d) {
  if (q.rows() != d.rows() || q.cols() != d.cols()) {
    throw std::invalid_argument("embedding matrices must share their shape");
  }
  Mat<Real> qn, dn;
  Mat<Real> qhat = normalize_rows(q, &qn);
  Mat<Real> dhat = normalize_rows(d, &dn);
  return qhat * dhat.transpose();
}

template <class Real>
Real infonce_from_similarities(const Mat<Real>& sims, Real lambda,
                               bool symmetric) {
  if (sims.rows() != sims.cols() || sims.rows() < 2) {
    throw std::invalid_argument("similarity matrix must be square with B >= 2");
  }
  Real loss = infonce_directional(sims, lambda);
  if (symmetric) {
    Mat<Real> st = sims.transpose();
    loss = Real(0.5) * (loss + infonce_directional(st, lambda));
  }
  return loss;
}

template <class Real>
Real contrastive_loss(const Mat<Real>& q, const Mat<Real>& d, Real lambda,
                      bool symmetric) {
  if (q.rows() < 2) {
    throw std::invalid_argument("contrastive loss needs a batch of B >= 2");
  }
  return infonce_from_similarities(cosine_similarity_matrix(q, d), lambda,
                                   symmetric);
}

template <class Real>
Real contrastive_loss_and_grad(const Mat<Real>& q, const Mat<Real>& d,
                               Real lambda, Mat<Real>* dq, Mat<Real>* dd,
                               Real* dlambda, bool symmetric) {
  const Eigen::Index B = q.rows();
  if (B < 2) {
    throw std::invalid_argument("contrastive loss needs a batch of B >= 2");
  }
  if (q.rows() != d.rows() || q.cols() != d.cols()) {
    throw std::invalid_argument("embedding matrices must share their shape");
  }
  Mat<Real> qn, dn;
  Mat<Real> qhat = normalize_rows(q, &qn);
  Mat<Real> dhat = normalize_rows(d, &dn);
  Mat<Real> sims = qhat * dhat.transpose();

  const Real inv_b = Real(1) / static_cast<Real>(B);
  Mat<Real> p = scaled_softmax_rows(sims, lambda);
  Mat<Real> d_sims = (p - Mat<Real>::Identity(B, B)) * (lambda * inv_b);
  Real loss = infonce_directional(sims, lambda);
  Real dlam = ((p - Mat<Real>::Identity(B, B)).cwiseProduct(sims)).sum() * inv_b;

  if (symmetric) {
    Mat<Real> st = sims.transpose();
    Mat<Real> p2 = scaled_softmax_rows(st, lambda);
    Mat<Real> d_sims2 = (p2 - Mat<Real>::Identity(B, B)) * (lambda * inv_b);
    loss = Real(0.5) * (loss + infonce_directional(st, lambda));
    d_sims = Real(0.5) * (d_sims + Mat<Real>(d_sims2.transpose()));
    dlam = Real(0.5) *
           (dlam + ((p2 - Mat<Real>::Identity(B, B)).cwiseProduct(st)).sum() *
                       inv_b);
  }

  if (dlambda) *dlambda += dlam;
  if (dq || dd) {
    Mat<Real> d_qhat = d_sims * dhat;
    Mat<Real> d_dhat = d_sims.transpose() * qhat;
    if (dq) {
      dq->resize(B, q.cols());
      for (Eigen::Index i = 0; i < B; ++i) {
        const Real dot = qhat.row(i).dot(d_qhat.row(i));
        dq->row(i) = (d_qhat.row(i) - qhat.row(i) * dot) / qn(i, 0);
      }
    }
    if (dd) {
      dd->resize(B, d.cols());
      for (Eigen::Index i = 0; i < B; ++i) {
        const Real dot = dhat.row(i).dot(d_dhat.row(i));
        dd->row(i) = (d_dhat.row(i) - dhat.row(i) * dot) / dn(i, 0);
      }
    }
  }
  return loss;
}

LossBreakdown combined_loss(double ntp, double cl, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) {
    throw std::invalid_argument("alpha must lie in [0, 1]");
  }
  LossBreakdown lb;
  lb.ntp = ntp;
  lb.cl = cl;
  lb.alpha = alpha;
  lb.total = (1.0 - alpha) * ntp + alpha * cl;
  return lb;
}

double alpha_schedule(long step, long switch_step) {
  if (step < 0) throw std::invalid_argument("step must be non-negative");
  return step < switch_step ? 0.0 : 1.0;
}

double clamp_temperature(double lambda) {
  return std::min(std::max(lambda, 0.0), kLambdaMax);
}

// --- explicit instantiations ---

template NtpStats<float> ntp_ce_sum_and_grad<float>(const Mat<float>&,
                                                    std::span<const int>,
                                                    const LossMask&, float,
                                                    Mat<float>*);
template NtpStats<double> ntp_ce_sum_and_grad<double>(const Mat<double>&,
                                                      std::span<const int>,
                                                      const LossMask&, double,
                                                      Mat<double>*);

template float ntp_loss<float>(const Mat<float>&, std::span<const int>,
                               const LossMask&);
template double ntp_loss<double>(const Mat<double>&, std::span<const int>,
                                 const LossMask&);

template Mat<float> cosine_similarity_matrix<float>(const Mat<float>&,
                                                    const Mat<float>&);
template Mat<double> cosine_similarity_matrix<double>(const Mat<double>&,
                                                      const Mat<double>&);

template float infonce_from_similarities<float>(const Mat<float>&, float, bool);
template double infonce_from_similarities<double>(const Mat<double>&, double,
                                                  bool);

template float contrastive_loss<float>(const Mat<float>&, const Mat<float>&,
                                       float, bool);
template double contrastive_loss<double>(const Mat<double>&, const Mat<double>&,
                                         double, bool);

template float contrastive_loss_and_grad<float>(const Mat<float>&,
                                                const Mat<float>&, float,
                                                Mat<float>*, Mat<float>*,
                                                float*, bool);
template double contrastive_loss_and_grad<double>(const Mat<double>&,
                                                  const Mat<double>&, double,
                                                  Mat<double>*, Mat<double>*,
                                                  double*, bool);

}  // namespace gem
