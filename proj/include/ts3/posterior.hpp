#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ts3/envs.hpp"
#include "ts3/qclass.hpp"
#include "ts3/rng.hpp"

namespace ts3 {

struct Hyperparams {
  double eta = 0.0;
  double gamma = 0.1;
  double lambda = 0.0;

  /// Throws std::invalid_argument unless eta > 0, gamma >= 0, lambda >= 0.
  /// gamma = 0 is accepted and means the limit gamma -> 0.
  void validate() const;
};

/// gamma = 0.1, eta = 1 / (4 ln(NT)), and
/// lambda = scale * T^(-3/4) * H * (d1^2 d2)^(-1/4) * sqrt(ln(NT)).
/// ln(NT) is floored at ln 2 so tiny runs stay finite.
Hyperparams default_hyperparams(std::size_t N, std::size_t T, std::size_t H, Dims dims, double lambda_scale = 1.0);

/// One stored transition: only step h of episode t is kept.
struct TransitionSample {
  std::size_t t = 0;  // 1-based episode index
  std::size_t h = 0;  // 0-based step
  StateId state = 0;
  ActionId action = 0;
  double reward = 0.0;
  StateId next_state = kTerminal;
};

/// g(x, a) - r - max_a' f(x', a'); the last term is 0 on the final step.
double td_residual(const TransitionSample& s, const QFunction& g, const QFunction& f);

enum class LikelihoodMode {
  full,           // eta * D(f,f)^2 + (eta/gamma) ln E_q exp(-gamma D(g,f)^2)
  no_correction,  // eta * D(f,f)^2 only
};

/// Log-space normalization; entries of -inf get probability 0.
std::vector<double> normalize_log_weights(std::span<const double> log_w);

/// Exact two-timescale posterior over a finite class.
///   C[g][f] = sum_s D_s(g, f)^2
///   A[f]    = sum_s (lambda * max_a f(x1_s, a) - L_s(f))
/// The class must outlive the state.
class PosteriorState {
 public:
  PosteriorState(const FunctionClass& cls, Hyperparams hp, LikelihoodMode mode = LikelihoodMode::full);

  std::size_t t() const { return t_; }
  std::size_t size() const { return n_; }
  const Hyperparams& hyper() const { return hp_; }
  LikelihoodMode mode() const { return mode_; }
  const FunctionClass& function_class() const { return *cls_; }

  double C(MemberId g, MemberId f) const { return c_[f * n_ + g]; }
  std::span<const double> C_column(MemberId f) const { return {c_.data() + f * n_, n_}; }
  const std::vector<double>& A() const { return a_; }
  const std::vector<TransitionSample>& history() const { return history_; }
  const std::vector<ContextId>& contexts() const { return contexts_; }

  /// q_t(. | f) from the samples seen so far.
  std::vector<double> inner_posterior(MemberId f) const;
  std::vector<double> inner_log_posterior(MemberId f) const;
  /// p_t over f.
  std::vector<double> outer_posterior() const;
  std::vector<double> outer_log_weights() const;

  /// L(f) for a new sample under the current inner posterior.
  double likelihood(MemberId f, const TransitionSample& s) const;
  std::vector<double> likelihoods(const TransitionSample& s) const;

  /// Folds in episode t + 1: L is evaluated with the current C before C
  /// absorbs the sample. Throws std::logic_error if s.t != t() + 1.
  void advance(const TransitionSample& s, ContextId x1);

  MemberId sample_f(Rng& rng) const;
  MemberId sample_g(MemberId f, Rng& rng) const;

 private:
  // Per-member g(x, a) and max_a f(x') at the sample.
  void sample_values(const TransitionSample& s, std::vector<double>& gv, std::vector<double>& fv) const;
  double likelihood_from(MemberId f, const std::vector<double>& gv, const std::vector<double>& fv,
                         double r) const;

  const FunctionClass* cls_;
  std::size_t n_;
  Hyperparams hp_;
  LikelihoodMode mode_;
  std::size_t t_ = 0;
  std::vector<double> c_;  // column-major: c_[f * n + g]
  std::vector<double> a_;
  std::vector<TransitionSample> history_;
  std::vector<ContextId> contexts_;
};

}  // namespace ts3
