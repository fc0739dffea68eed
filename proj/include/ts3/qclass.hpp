#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ts3/mdp.hpp"
#include "ts3/qfunction.hpp"

namespace ts3 {

/// Finite value-function class with a prior over its members. Member i has
/// id i. The prior defaults to uniform.
class FunctionClass {
 public:
  FunctionClass() = default;
  explicit FunctionClass(std::vector<QFunction> members, std::vector<double> prior = {});

  std::size_t size() const { return members_.size(); }
  const QFunction& operator[](MemberId i) const { return members_[i]; }
  const std::vector<QFunction>& members() const { return members_; }
  const std::vector<double>& prior() const { return prior_; }
  const std::vector<double>& log_prior() const { return log_prior_; }
  std::size_t horizon() const { return members_.front().horizon(); }
  std::size_t num_actions() const { return members_.front().num_actions(); }

 private:
  std::vector<QFunction> members_;
  std::vector<double> prior_;
  std::vector<double> log_prior_;
};

inline ActionId greedy_action(const QFunction& f, std::size_t h, StateId x) { return f.greedy(h, x); }

/// (T^h f)(x, a) = E[r^h + max_a' f^{h+1}(x', a') | x, a] for every step-h
/// pair, computed from the exact tables. At the last step this is the mean
/// reward.
std::vector<double> bellman_backup(const ContextualMDP& env, const QFunction& f, std::size_t h);

/// Backup applied at every step at once: g^h = T^h f for all h.
QFunction full_backup(const ContextualMDP& env, const QFunction& f);

/// E^h(g, f; x, a) = g^h(x, a) - (T^h f)(x, a).
double bellman_residual(const ContextualMDP& env, const QFunction& g, const QFunction& f, std::size_t h,
                        StateId x, ActionId a);

struct CheckResult {
  bool pass = false;
  double worst = 0.0;
  /// For completeness: the (f, h) attaining the worst gap. For realizability:
  /// the closest member.
  std::optional<MemberId> member;
  std::optional<std::size_t> step;
};

inline constexpr double kCheckTolerance = 1e-9;

/// Pass iff some member is within `tol` of Q* in sup norm.
CheckResult check_realizability(const ContextualMDP& env, const FunctionClass& cls, double tol = kCheckTolerance);

/// Pass iff for every (f, h) some member g has ||g^h - T^h f||_inf <= tol.
CheckResult check_completeness(const ContextualMDP& env, const FunctionClass& cls, double tol = kCheckTolerance);

struct CoveringNumbers {
  double kappa = 0.0;        // sup_f -ln p0(F(eps, f)), +inf when some ball is empty
  double kappa_prime = 0.0;  // ln of the greedy eps-cover size
  std::size_t cover_size = 0;
  std::optional<MemberId> empty_ball;  // first f whose Bellman ball is empty
};

CoveringNumbers covering_numbers(const ContextualMDP& env, const FunctionClass& cls, double eps);

}  // namespace ts3
