#pragma once

// Small hand-rolled environments and brute-force oracles shared by the unit
// tests. Nothing here calls into the library's DP code.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "ts3/mdp.hpp"
#include "ts3/metrics.hpp"
#include "ts3/qclass.hpp"
#include "ts3/qfunction.hpp"
#include "ts3/rng.hpp"

namespace testsupport {

using ts3::ActionId;
using ts3::ContextId;
using ts3::StateId;

// contexts on step 0; `local` states per context on later steps, global id
// c * local + l. Rewards lie in [0, 1/H] so returns stay in [0, 1].
inline ts3::ContextualMDP random_env(std::uint64_t seed, std::size_t contexts, std::size_t local, std::size_t A,
                                     std::size_t H, ts3::RewardNoise noise = ts3::RewardNoise::two_point) {
  ts3::Rng rng(seed);
  const double rmax = 1.0 / static_cast<double>(H);
  std::vector<double> init(contexts);
  double z = 0.0;
  for (auto& p : init) z += (p = 0.2 + rng.uniform());
  for (auto& p : init) p /= z;
  std::vector<ts3::StepTables> steps(H);
  for (std::size_t h = 0; h < H; ++h) {
    auto& st = steps[h];
    st.num_states = h == 0 ? contexts : contexts * local;
    st.num_next_states = h + 1 < H ? contexts * local : 0;
    for (StateId s = 0; s < st.num_states; ++s) st.state_context.push_back(h == 0 ? s : s / local);
    for (StateId s = 0; s < st.num_states; ++s) {
      for (ActionId a = 0; a < A; ++a) {
        const double m = rmax * rng.uniform();
        st.reward_mean.push_back(m);
        if (noise == ts3::RewardNoise::none) {
          st.reward_lo.push_back(m);
          st.reward_hi.push_back(m);
        } else if (noise == ts3::RewardNoise::uniform) {
          const double w = std::min(m, rmax - m);
          st.reward_lo.push_back(m - w);
          st.reward_hi.push_back(m + w);
        } else {
          st.reward_lo.push_back(0.0);
          st.reward_hi.push_back(rmax);
        }
        if (st.num_next_states == 0) continue;
        const ContextId c = st.state_context[s];
        std::vector<double> row(st.num_next_states, 0.0);
        double rz = 0.0;
        for (std::size_t l = 0; l < local; ++l) rz += (row[c * local + l] = rng.uniform() + 0.05);
        for (double& p : row) st.transition.push_back(p / rz);
      }
    }
  }
  return ts3::ContextualMDP(A, init, std::move(steps), noise, "random");
}

// Deterministic reward tables for a single-context env where every later
// step has `n` states. next(h, s, a) gives a full next-state distribution.
inline ts3::ContextualMDP single_context_env(
    std::size_t n, std::size_t A, std::size_t H, const std::function<double(std::size_t, StateId, ActionId)>& reward,
    const std::function<std::vector<double>(std::size_t, StateId, ActionId)>& next) {
  std::vector<ts3::StepTables> steps(H);
  for (std::size_t h = 0; h < H; ++h) {
    auto& st = steps[h];
    st.num_states = h == 0 ? 1 : n;
    st.num_next_states = h + 1 < H ? n : 0;
    st.state_context.assign(st.num_states, 0);
    for (StateId s = 0; s < st.num_states; ++s) {
      for (ActionId a = 0; a < A; ++a) {
        st.reward_mean.push_back(reward(h, s, a));
        if (st.num_next_states == 0) continue;
        const auto row = next(h, s, a);
        st.transition.insert(st.transition.end(), row.begin(), row.end());
      }
    }
  }
  return ts3::ContextualMDP(A, {1.0}, std::move(steps), ts3::RewardNoise::none, "single");
}

// Random QFunction shaped like env. Step h entries lie in [0, (H - h) / H],
// the range of values reachable with rewards in [0, 1/H], so backups of it
// stay in [0, 1].
inline ts3::QFunction random_q(const ts3::ContextualMDP& env, ts3::Rng& rng) {
  const double H = static_cast<double>(env.horizon());
  std::vector<std::vector<double>> t(env.horizon());
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    t[h].resize(env.num_states(h) * env.num_actions());
    for (auto& v : t[h]) v = (H - double(h)) / H * rng.uniform();
  }
  return ts3::QFunction(env.num_actions(), std::move(t));
}

// Random Markov policy as [h][s][a] probabilities.
inline std::vector<std::vector<std::vector<double>>> random_policy_table(const ts3::ContextualMDP& env, ts3::Rng& rng) {
  std::vector<std::vector<std::vector<double>>> p(env.horizon());
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    p[h].resize(env.num_states(h));
    for (auto& row : p[h]) {
      row.resize(env.num_actions());
      double z = 0.0;
      for (double& v : row) z += (v = rng.uniform() + 0.01);
      for (double& v : row) v /= z;
    }
  }
  return p;
}

// Expected return by explicit enumeration of every (a1, s2, a2, ...) path.
inline double enumerate_value(const ts3::ContextualMDP& env, const std::vector<std::vector<std::vector<double>>>& pi,
                              ContextId c) {
  std::function<double(std::size_t, StateId)> go = [&](std::size_t h, StateId s) -> double {
    double total = 0.0;
    for (ActionId a = 0; a < env.num_actions(); ++a) {
      const double pa = pi[h][s][a];
      if (pa == 0.0) continue;
      double v = env.step(h).reward_mean[s * env.num_actions() + a];
      if (h + 1 < env.horizon()) {
        const auto& st = env.step(h);
        for (StateId n = 0; n < st.num_next_states; ++n) {
          const double p = st.transition[(s * env.num_actions() + a) * st.num_next_states + n];
          if (p > 0.0) v += p * go(h + 1, n);
        }
      }
      total += pa * v;
    }
    return total;
  };
  return go(0, c);
}

// Forward occupancy d^h(s | c) computed by pushing mass one step at a time.
inline std::vector<std::vector<double>> forward_occupancy(const ts3::ContextualMDP& env,
                                                          const std::vector<std::vector<std::vector<double>>>& pi,
                                                          ContextId c) {
  std::vector<std::vector<double>> d(env.horizon());
  d[0].assign(env.num_states(0), 0.0);
  d[0][c] = 1.0;
  for (std::size_t h = 0; h + 1 < env.horizon(); ++h) {
    const auto& st = env.step(h);
    d[h + 1].assign(st.num_next_states, 0.0);
    for (StateId s = 0; s < st.num_states; ++s) {
      for (ActionId a = 0; a < env.num_actions(); ++a) {
        for (StateId n = 0; n < st.num_next_states; ++n) {
          d[h + 1][n] += d[h][s] * pi[h][s][a] * st.transition[(s * env.num_actions() + a) * st.num_next_states + n];
        }
      }
    }
  }
  return d;
}

inline std::vector<std::vector<std::vector<double>>> greedy_table(const ts3::ContextualMDP& env,
                                                                  const ts3::QFunction& f) {
  std::vector<std::vector<std::vector<double>>> p(env.horizon());
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    p[h].assign(env.num_states(h), std::vector<double>(env.num_actions(), 0.0));
    for (StateId s = 0; s < env.num_states(h); ++s) {
      std::size_t best = 0;
      for (ActionId a = 1; a < env.num_actions(); ++a) {
        if (f(h, s, a) > f(h, s, best)) best = a;
      }
      p[h][s][best] = 1.0;
    }
  }
  return p;
}

// Brute-force backup: sum over next states of P * (rbar + max f'), written
// as the explicit double loop.
inline double brute_backup(const ts3::ContextualMDP& env, const ts3::QFunction& f, std::size_t h, StateId x,
                           ActionId a) {
  const auto& st = env.step(h);
  const double rbar = st.reward_mean[x * env.num_actions() + a];
  if (h + 1 == env.horizon()) return rbar;
  double v = 0.0;
  for (StateId n = 0; n < st.num_next_states; ++n) {
    const double p = st.transition[(x * env.num_actions() + a) * st.num_next_states + n];
    double m = -1e300;
    for (ActionId b = 0; b < env.num_actions(); ++b) m = std::max(m, f(h + 1, n, b));
    v += p * (rbar + m);
  }
  return v;
}

// Rank of the stacked step-h occupancy rows of every member, restricted to
// context c, by SVD at the library's relative cutoff.
inline std::size_t occupancy_rank(const ts3::ContextualMDP& env, const ts3::FunctionClass& cls, std::size_t h, ContextId c) {
  std::vector<StateId> states;
  for (StateId s = 0; s < env.num_states(h); ++s) {
    if (env.context_of(h, s) == c) states.push_back(s);
  }
  Eigen::MatrixXd M(static_cast<Eigen::Index>(cls.size()), static_cast<Eigen::Index>(states.size()));
  for (ts3::MemberId f = 0; f < cls.size(); ++f) {
    const auto d = forward_occupancy(env, greedy_table(env, cls[f]), c);
    for (std::size_t j = 0; j < states.size(); ++j) M(Eigen::Index(f), Eigen::Index(j)) = d[h][states[j]];
  }
  const auto sv = Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues();
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) r += sv(i) > ts3::kRankCutoff * sv(0);
  return r;
}

// Constant-shaped class over env: member k prefers action pick(k, h, s).
inline ts3::FunctionClass preference_class(const ts3::ContextualMDP& env, std::size_t n,
                                          const std::function<ActionId(std::size_t, std::size_t, StateId)>& pick) {
  std::vector<ts3::QFunction> m;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::vector<double>> t(env.horizon());
    for (std::size_t h = 0; h < env.horizon(); ++h) {
      t[h].assign(env.num_states(h) * env.num_actions(), 0.1);
      for (StateId s = 0; s < env.num_states(h); ++s) t[h][s * env.num_actions() + pick(k, h, s)] = 0.2 + 0.01 * k;
    }
    m.emplace_back(env.num_actions(), t);
  }
  return ts3::FunctionClass(m);
}

// H = 2, one context, two actions. Action a at step 1 leads to state a.
// Rewards are two-point on [0, 1/2]. The class has seven members: four with
// step-2 table r2 (their backups are all Q*) and three more whose step-2
// tables are far from r2, each mapping onto one of the first four. Unlike
// generated classes, no two members are close, so the inner posterior can
// separate them within a few thousand samples.
struct SeparatedClosed {
  ts3::ContextualMDP env;
  ts3::FunctionClass cls;
};

inline SeparatedClosed separated_closed_class() {
  std::vector<ts3::StepTables> steps(2);
  auto& s0 = steps[0];
  s0.num_states = 1;
  s0.num_next_states = 2;
  s0.state_context = {0};
  s0.reward_mean = {0.25, 0.25};
  s0.reward_lo = {0.0, 0.0};
  s0.reward_hi = {0.5, 0.5};
  s0.transition = {1.0, 0.0, 0.0, 1.0};
  auto& s1 = steps[1];
  s1.num_states = 2;
  s1.num_next_states = 0;
  s1.state_context = {0, 0};
  const std::vector<double> r2{0.1, 0.4, 0.45, 0.05};
  s1.reward_mean = r2;
  s1.reward_lo.assign(4, 0.0);
  s1.reward_hi.assign(4, 0.5);
  ts3::ContextualMDP env(2, {1.0}, std::move(steps), ts3::RewardNoise::two_point, "separated");

  // Step-2 tables and their per-state maxima.
  const std::vector<std::vector<double>> u{r2, {0.0, 0.0, 0.0, 0.0}, {0.5, 0.5, 0.0, 0.0}, {0.0, 0.0, 0.5, 0.5}};
  const std::vector<std::vector<double>> first{{0.0, 0.9}, {0.9, 0.0}, {0.5, 0.5}};
  std::vector<ts3::QFunction> m;
  for (const auto& uk : u) {
    const double m0 = std::max(uk[0], uk[1]), m1 = std::max(uk[2], uk[3]);
    m.emplace_back(2, std::vector<std::vector<double>>{{0.25 + m0, 0.25 + m1}, r2});
  }
  for (std::size_t k = 1; k < u.size(); ++k) m.emplace_back(2, std::vector<std::vector<double>>{first[k - 1], u[k]});
  return {std::move(env), ts3::FunctionClass(std::move(m))};
}

}  // namespace testsupport
