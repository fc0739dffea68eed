#include "ts3/qclass.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ts3 {

namespace {
// Absorbs last-ulp differences when comparing against an exact eps.
constexpr double kSlack = 1e-12;

double sup_diff(const std::vector<double>& a, const std::vector<double>& b, double stop_above) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
    if (worst > stop_above) break;
  }
  return worst;
}
}  // namespace

FunctionClass::FunctionClass(std::vector<QFunction> members, std::vector<double> prior)
    : members_(std::move(members)), prior_(std::move(prior)) {
  if (members_.empty()) throw std::invalid_argument("FunctionClass: empty class");
  for (MemberId i = 0; i < members_.size(); ++i) {
    members_[i].set_id(i);
    if (members_[i].horizon() != members_[0].horizon() || members_[i].num_actions() != members_[0].num_actions()) {
      throw std::invalid_argument("FunctionClass: members have different shapes");
    }
  }
  if (prior_.empty()) prior_.assign(members_.size(), 1.0 / static_cast<double>(members_.size()));
  if (prior_.size() != members_.size()) throw std::invalid_argument("FunctionClass: prior size mismatch");
  double sum = 0.0;
  for (double p : prior_) {
    if (!(p >= 0.0)) throw std::invalid_argument("FunctionClass: negative prior weight");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw std::invalid_argument("FunctionClass: prior does not sum to 1");
  log_prior_.resize(prior_.size());
  std::transform(prior_.begin(), prior_.end(), log_prior_.begin(), [](double p) {
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  });
}

std::vector<double> bellman_backup(const ContextualMDP& env, const QFunction& f, std::size_t h) {
  std::vector<double> next_max;
  if (h + 1 < env.horizon()) {
    next_max.resize(env.num_states(h + 1));
    for (StateId x = 0; x < next_max.size(); ++x) next_max[x] = f.max_value(h + 1, x);
  }
  return backup_table(env, h, next_max);
}

QFunction full_backup(const ContextualMDP& env, const QFunction& f) {
  std::vector<std::vector<double>> tables(env.horizon());
  for (std::size_t h = 0; h < env.horizon(); ++h) tables[h] = bellman_backup(env, f, h);
  return QFunction(env.num_actions(), std::move(tables));
}

double bellman_residual(const ContextualMDP& env, const QFunction& g, const QFunction& f, std::size_t h, StateId x,
                        ActionId a) {
  double target = env.reward_mean(h, x, a);
  if (h + 1 < env.horizon()) {
    const auto row = env.transition(h, x, a);
    for (StateId n = 0; n < row.size(); ++n) target += row[n] * f.max_value(h + 1, n);
  }
  return g(h, x, a) - target;
}

CheckResult check_realizability(const ContextualMDP& env, const FunctionClass& cls, double tol) {
  const QFunction qstar = value_iteration(env);
  CheckResult res;
  res.worst = std::numeric_limits<double>::infinity();
  for (const auto& f : cls.members()) {
    const double d = f.distance(qstar);
    if (d < res.worst) {
      res.worst = d;
      res.member = f.id();
    }
  }
  res.pass = res.worst <= tol;
  return res;
}

CheckResult check_completeness(const ContextualMDP& env, const FunctionClass& cls, double tol) {
  CheckResult res;
  res.worst = 0.0;
  for (const auto& f : cls.members()) {
    for (std::size_t h = 0; h < env.horizon(); ++h) {
      const auto target = bellman_backup(env, f, h);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& g : cls.members()) {
        best = std::min(best, sup_diff(g.table(h), target, best));
        if (best == 0.0) break;
      }
      if (!res.member || best > res.worst) {
        res.worst = best;
        res.member = f.id();
        res.step = h;
      }
    }
  }
  res.pass = res.worst <= tol;
  return res;
}

CoveringNumbers covering_numbers(const ContextualMDP& env, const FunctionClass& cls, double eps) {
  if (eps < 0.0) throw std::invalid_argument("covering_numbers: eps must be nonnegative");
  CoveringNumbers out;
  const std::size_t N = cls.size();
  const std::size_t H = env.horizon();

  for (const auto& f : cls.members()) {
    const QFunction tf = full_backup(env, f);
    double mass = 0.0;
    for (const auto& g : cls.members()) {
      double worst = 0.0;
      for (std::size_t h = 0; h < H && worst <= eps + kSlack; ++h) {
        worst = std::max(worst, sup_diff(g.table(h), tf.table(h), eps + kSlack));
      }
      if (worst <= eps + kSlack) mass += cls.prior()[g.id()];
    }
    if (mass <= 0.0) {
      out.kappa = std::numeric_limits<double>::infinity();
      if (!out.empty_ball) out.empty_ball = f.id();
      continue;
    }
    out.kappa = std::max(out.kappa, -std::log(mass));
  }

  std::vector<MemberId> centers;
  for (MemberId i = 0; i < N; ++i) {
    bool covered = false;
    for (MemberId c : centers) {
      if (cls[i].distance(cls[c]) <= eps + kSlack) {
        covered = true;
        break;
      }
    }
    if (!covered) centers.push_back(i);
  }
  out.cover_size = centers.size();
  out.kappa_prime = std::log(static_cast<double>(centers.size()));
  return out;
}

}  // namespace ts3
