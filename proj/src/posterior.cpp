#include "ts3/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ts3 {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v) {
  double m = kNegInf;
  for (double x : v) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

void Hyperparams::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("Hyperparams: eta must be positive");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("Hyperparams: gamma must be >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("Hyperparams: lambda must be >= 0");
}

Hyperparams default_hyperparams(std::size_t N, std::size_t T, std::size_t H, Dims dims, double lambda_scale) {
  const double log_nt = std::max(std::log(static_cast<double>(N) * static_cast<double>(T)), std::log(2.0));
  const double d1 = static_cast<double>(dims.d1);
  const double d2 = static_cast<double>(dims.d2);
  Hyperparams hp;
  hp.gamma = 0.1;
  hp.eta = 1.0 / (4.0 * log_nt);
  hp.lambda = lambda_scale * std::pow(static_cast<double>(T), -0.75) * static_cast<double>(H) *
              std::pow(d1 * d1 * d2, -0.25) * std::sqrt(log_nt);
  return hp;
}

double td_residual(const TransitionSample& s, const QFunction& g, const QFunction& f) {
  const double next = s.h + 1 < f.horizon() ? f.max_value(s.h + 1, s.next_state) : 0.0;
  return g(s.h, s.state, s.action) - s.reward - next;
}

std::vector<double> normalize_log_weights(std::span<const double> log_w) {
  double m = kNegInf;
  for (double x : log_w) m = std::max(m, x);
  if (!std::isfinite(m)) throw std::domain_error("normalize_log_weights: no finite weight");
  std::vector<double> p(log_w.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(log_w[i] - m));
  for (auto& x : p) x /= z;
  return p;
}

PosteriorState::PosteriorState(const FunctionClass& cls, Hyperparams hp, LikelihoodMode mode)
    : cls_(&cls), n_(cls.size()), hp_(hp), mode_(mode), c_(n_ * n_, 0.0), a_(n_, 0.0) {
  hp_.validate();
}

std::vector<double> PosteriorState::inner_log_posterior(MemberId f) const {
  const auto& lp = cls_->log_prior();
  std::vector<double> w(n_);
  for (MemberId g = 0; g < n_; ++g) w[g] = lp[g] - hp_.gamma * c_[f * n_ + g];
  const double z = log_sum_exp(w);
  for (auto& x : w) x -= z;
  return w;
}

std::vector<double> PosteriorState::inner_posterior(MemberId f) const {
  const auto& lp = cls_->log_prior();
  std::vector<double> w(n_);
  for (MemberId g = 0; g < n_; ++g) w[g] = lp[g] - hp_.gamma * c_[f * n_ + g];
  return normalize_log_weights(w);
}

std::vector<double> PosteriorState::outer_log_weights() const {
  const auto& lp = cls_->log_prior();
  std::vector<double> w(n_);
  for (MemberId f = 0; f < n_; ++f) w[f] = lp[f] + a_[f];
  return w;
}

std::vector<double> PosteriorState::outer_posterior() const { return normalize_log_weights(outer_log_weights()); }

void PosteriorState::sample_values(const TransitionSample& s, std::vector<double>& gv,
                                   std::vector<double>& fv) const {
  gv.resize(n_);
  fv.resize(n_);
  const bool last = s.h + 1 >= cls_->horizon();
  for (MemberId i = 0; i < n_; ++i) {
    const auto& q = (*cls_)[i];
    gv[i] = q(s.h, s.state, s.action);
    fv[i] = last ? 0.0 : q.max_value(s.h + 1, s.next_state);
  }
}

double PosteriorState::likelihood_from(MemberId f, const std::vector<double>& gv, const std::vector<double>& fv,
                                       double r) const {
  const double target = r + fv[f];
  const double self = gv[f] - target;
  const double first = hp_.eta * self * self;
  if (mode_ == LikelihoodMode::no_correction) return first;

  const auto& lp = cls_->log_prior();
  if (hp_.gamma == 0.0) {
    // gamma -> 0: (eta/gamma) ln E exp(-gamma D^2) -> -eta E[D^2], q = prior.
    double mean_sq = 0.0;
    for (MemberId g = 0; g < n_; ++g) {
      const double d = gv[g] - target;
      mean_sq += cls_->prior()[g] * d * d;
    }
    return first - hp_.eta * mean_sq;
  }
  // Same value as first + (eta/gamma) ln E_q exp(-gamma D(g,f)^2), with the
  // first term folded into the exponent: (eta/gamma) ln E_q exp(-gamma (D(g,f)^2 - D(f,f)^2)).
  const double self_sq = self * self;
  std::vector<double> base(n_), tilted(n_);
  for (MemberId g = 0; g < n_; ++g) {
    const double d = gv[g] - target;
    base[g] = lp[g] - hp_.gamma * c_[f * n_ + g];
    tilted[g] = base[g] - hp_.gamma * (d * d - self_sq);
  }
  return (hp_.eta / hp_.gamma) * (log_sum_exp(tilted) - log_sum_exp(base));
}

double PosteriorState::likelihood(MemberId f, const TransitionSample& s) const {
  std::vector<double> gv, fv;
  sample_values(s, gv, fv);
  return likelihood_from(f, gv, fv, s.reward);
}

std::vector<double> PosteriorState::likelihoods(const TransitionSample& s) const {
  std::vector<double> gv, fv;
  sample_values(s, gv, fv);
  std::vector<double> out(n_);
  for (MemberId f = 0; f < n_; ++f) out[f] = likelihood_from(f, gv, fv, s.reward);
  return out;
}

void PosteriorState::advance(const TransitionSample& s, ContextId x1) {
  if (s.t != t_ + 1) {
    throw std::logic_error("PosteriorState::advance: expected episode " + std::to_string(t_ + 1) + ", got " +
                           std::to_string(s.t));
  }
  std::vector<double> gv, fv;
  sample_values(s, gv, fv);
  // L for every f is frozen before C changes.
  std::vector<double> L(n_);
  for (MemberId f = 0; f < n_; ++f) L[f] = likelihood_from(f, gv, fv, s.reward);
  for (MemberId f = 0; f < n_; ++f) {
    a_[f] += hp_.lambda * (*cls_)[f].max_value(0, x1) - L[f];
    const double target = s.reward + fv[f];
    double* col = c_.data() + f * n_;
    for (MemberId g = 0; g < n_; ++g) {
      const double d = gv[g] - target;
      col[g] += d * d;
    }
  }
  history_.push_back(s);
  contexts_.push_back(x1);
  ++t_;
}

MemberId PosteriorState::sample_f(Rng& rng) const {
  const auto p = outer_posterior();
  return rng.categorical(p);
}

MemberId PosteriorState::sample_g(MemberId f, Rng& rng) const {
  const auto p = inner_posterior(f);
  return rng.categorical(p);
}

}  // namespace ts3
