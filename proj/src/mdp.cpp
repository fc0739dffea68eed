#include "ts3/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace ts3 {

namespace {

constexpr double kRowTol = 1e-12;

std::string at(std::size_t h, StateId s) {
  return "(h=" + std::to_string(h + 1) + ", state=" + std::to_string(s) + ")";
}

std::string at(std::size_t h, StateId s, ActionId a) {
  return "(h=" + std::to_string(h + 1) + ", state=" + std::to_string(s) + ", action=" + std::to_string(a) + ")";
}

}  // namespace

ContextualMDP::ContextualMDP(std::size_t num_actions, std::vector<double> initial_dist,
                             std::vector<StepTables> steps, RewardNoise noise, std::string name)
    : num_actions_(num_actions),
      initial_(std::move(initial_dist)),
      steps_(std::move(steps)),
      noise_(noise),
      name_(std::move(name)) {
  validate();
}

void ContextualMDP::validate() {
  if (steps_.empty()) throw std::invalid_argument("ContextualMDP: horizon must be positive");
  if (num_actions_ == 0) throw std::invalid_argument("ContextualMDP: no actions");
  if (initial_.empty()) throw std::invalid_argument("ContextualMDP: no contexts");
  double init_sum = 0.0;
  for (double p : initial_) {
    if (p < 0.0) throw std::invalid_argument("ContextualMDP: negative initial probability");
    init_sum += p;
  }
  if (std::abs(init_sum - 1.0) > kRowTol) {
    throw std::invalid_argument("ContextualMDP: initial distribution sums to " + std::to_string(init_sum));
  }

  const std::size_t H = steps_.size();
  const std::size_t A = num_actions_;
  if (steps_[0].num_states != initial_.size()) {
    throw std::invalid_argument("ContextualMDP: step 0 must have one state per context");
  }
  for (std::size_t h = 0; h < H; ++h) {
    auto& st = steps_[h];
    const std::size_t expected_next = h + 1 < H ? steps_[h + 1].num_states : 0;
    if (st.num_next_states != expected_next) {
      throw std::invalid_argument("ContextualMDP: step " + std::to_string(h + 1) + " next-state count mismatch");
    }
    if (st.state_context.size() != st.num_states || st.reward_mean.size() != st.num_states * A ||
        st.transition.size() != st.num_states * A * st.num_next_states) {
      throw std::invalid_argument("ContextualMDP: step " + std::to_string(h + 1) + " table sizes are inconsistent");
    }
    if (st.reward_lo.empty()) st.reward_lo = st.reward_mean;
    if (st.reward_hi.empty()) st.reward_hi = st.reward_mean;
    if (st.reward_lo.size() != st.reward_mean.size() || st.reward_hi.size() != st.reward_mean.size()) {
      throw std::invalid_argument("ContextualMDP: reward bound tables have the wrong size");
    }
    for (StateId s = 0; s < st.num_states; ++s) {
      const ContextId c = st.state_context[s];
      if (c >= initial_.size()) throw std::invalid_argument("ContextualMDP: bad context id at " + at(h, s));
      if (h == 0 && c != s) throw std::invalid_argument("ContextualMDP: step-0 state must equal its context");
      for (ActionId a = 0; a < A; ++a) {
        const std::size_t i = s * A + a;
        const double m = st.reward_mean[i], lo = st.reward_lo[i], hi = st.reward_hi[i];
        if (!(lo >= 0.0 && lo <= m + kRowTol && m <= hi + kRowTol && hi <= 1.0)) {
          throw std::invalid_argument("ContextualMDP: reward bounds violate 0 <= lo <= mean <= hi <= 1 at " +
                                      at(h, s, a));
        }
        if (noise_ == RewardNoise::uniform && std::abs(0.5 * (lo + hi) - m) > 1e-12) {
          throw std::invalid_argument("ContextualMDP: uniform noise must be centered at " + at(h, s, a));
        }
        if (noise_ == RewardNoise::none && (lo != m || hi != m)) {
          throw std::invalid_argument("ContextualMDP: noiseless reward with nondegenerate bounds at " +
                                      at(h, s, a));
        }
        if (st.num_next_states == 0) continue;
        double sum = 0.0;
        const double* row = st.transition.data() + i * st.num_next_states;
        for (StateId n = 0; n < st.num_next_states; ++n) {
          if (row[n] < 0.0) throw std::invalid_argument("ContextualMDP: negative transition at " + at(h, s, a));
          if (row[n] > 0.0 && steps_[h + 1].state_context[n] != c) {
            throw std::invalid_argument("ContextualMDP: transition leaves its context at " + at(h, s, a));
          }
          sum += row[n];
        }
        if (std::abs(sum - 1.0) > kRowTol) {
          throw std::invalid_argument("ContextualMDP: transition row sums to " + std::to_string(sum) + " at " +
                                      at(h, s, a));
        }
      }
    }
  }

  // Largest cumulative reward upper bound along any path with positive
  // probability, from every state. Keeps sum_h r^h in [0, 1] surely.
  std::vector<double> next_best;
  for (std::size_t h = H; h-- > 0;) {
    const auto& st = steps_[h];
    std::vector<double> best(st.num_states, 0.0);
    for (StateId s = 0; s < st.num_states; ++s) {
      double b = 0.0;
      for (ActionId a = 0; a < A; ++a) {
        double tail = 0.0;
        if (st.num_next_states > 0) {
          const auto row = transition(h, s, a);
          for (StateId n = 0; n < row.size(); ++n) {
            if (row[n] > 0.0) tail = std::max(tail, next_best[n]);
          }
        }
        b = std::max(b, st.reward_hi[s * A + a] + tail);
      }
      best[s] = b;
      if (b > 1.0 + kRowTol) {
        throw std::invalid_argument("ContextualMDP: cumulative reward can exceed 1 from " + at(h, s));
      }
    }
    next_best = std::move(best);
  }
  max_path_reward_ = 0.0;
  for (ContextId c = 0; c < initial_.size(); ++c) {
    if (initial_[c] > 0.0) max_path_reward_ = std::max(max_path_reward_, next_best[c]);
  }
}

ContextId ContextualMDP::sample_context(Rng& rng) const { return rng.categorical(initial_); }

double ContextualMDP::sample_reward(std::size_t h, StateId s, ActionId a, Rng& rng) const {
  const auto& st = steps_[h];
  const std::size_t i = s * num_actions_ + a;
  const double m = st.reward_mean[i], lo = st.reward_lo[i], hi = st.reward_hi[i];
  switch (noise_) {
    case RewardNoise::none:
      return m;
    case RewardNoise::uniform:
      return lo + (hi - lo) * rng.uniform();
    case RewardNoise::two_point: {
      if (hi <= lo) return m;
      const double p_hi = (m - lo) / (hi - lo);
      return rng.uniform() < p_hi ? hi : lo;
    }
  }
  return m;
}

StateId ContextualMDP::sample_next(std::size_t h, StateId s, ActionId a, Rng& rng) const {
  return rng.categorical(transition(h, s, a));
}

// ---------------------------------------------------------------- policies

Policy::Policy(ExplicitPolicy p) : impl_(std::move(p)) {
  for (std::size_t h = 0; h < std::get<ExplicitPolicy>(impl_).probs.size(); ++h) {
    const auto& per_state = std::get<ExplicitPolicy>(impl_).probs[h];
    for (StateId s = 0; s < per_state.size(); ++s) {
      if (per_state[s].empty()) continue;
      double sum = 0.0;
      for (double q : per_state[s]) {
        if (q < 0.0) throw std::invalid_argument("Policy: negative action probability at " + at(h, s));
        sum += q;
      }
      if (std::abs(sum - 1.0) > kRowTol) {
        throw std::invalid_argument("Policy: action probabilities sum to " + std::to_string(sum) + " at " + at(h, s));
      }
    }
  }
}

Policy::Policy(HybridPolicy p) : impl_(std::move(p)) {
  const auto& hp = std::get<HybridPolicy>(impl_);
  if (!hp.before || !hp.after) throw std::invalid_argument("Policy: hybrid with a missing component");
}

Policy Policy::greedy(const QFunction& f) {
  GreedyPolicy g;
  g.action.resize(f.horizon());
  for (std::size_t h = 0; h < f.horizon(); ++h) {
    g.action[h].resize(f.num_states(h));
    for (StateId s = 0; s < f.num_states(h); ++s) g.action[h][s] = f.greedy(h, s);
  }
  return Policy(std::move(g));
}

Policy Policy::uniform(const ContextualMDP& env) {
  ExplicitPolicy e;
  const std::size_t A = env.num_actions();
  e.probs.resize(env.horizon());
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    e.probs[h].assign(env.num_states(h), std::vector<double>(A, 1.0 / static_cast<double>(A)));
  }
  return Policy(std::move(e));
}

Policy Policy::hybrid(Policy before, Policy after, std::size_t switch_step) {
  return Policy(HybridPolicy{std::make_shared<const Policy>(std::move(before)),
                             std::make_shared<const Policy>(std::move(after)), switch_step});
}

std::vector<double> Policy::action_probs(std::size_t h, StateId s, std::size_t num_actions) const {
  if (const auto* g = std::get_if<GreedyPolicy>(&impl_)) {
    if (h >= g->action.size() || s >= g->action[h].size()) {
      throw std::out_of_range("Policy: undefined at " + at(h, s));
    }
    std::vector<double> p(num_actions, 0.0);
    p.at(g->action[h][s]) = 1.0;
    return p;
  }
  if (const auto* e = std::get_if<ExplicitPolicy>(&impl_)) {
    if (h >= e->probs.size() || s >= e->probs[h].size() || e->probs[h][s].empty()) {
      throw std::out_of_range("Policy: undefined at " + at(h, s));
    }
    if (e->probs[h][s].size() != num_actions) throw std::out_of_range("Policy: action count mismatch at " + at(h, s));
    return e->probs[h][s];
  }
  const auto& hp = std::get<HybridPolicy>(impl_);
  return (h < hp.switch_step ? hp.before : hp.after)->action_probs(h, s, num_actions);
}

ActionId Policy::sample_action(std::size_t h, StateId s, Rng& rng) const {
  if (const auto* g = std::get_if<GreedyPolicy>(&impl_)) {
    if (h >= g->action.size() || s >= g->action[h].size()) {
      throw std::out_of_range("Policy: undefined at " + at(h, s));
    }
    return g->action[h][s];
  }
  if (const auto* e = std::get_if<ExplicitPolicy>(&impl_)) {
    if (h >= e->probs.size() || s >= e->probs[h].size() || e->probs[h][s].empty()) {
      throw std::out_of_range("Policy: undefined at " + at(h, s));
    }
    return rng.categorical(e->probs[h][s]);
  }
  const auto& hp = std::get<HybridPolicy>(impl_);
  return (h < hp.switch_step ? hp.before : hp.after)->sample_action(h, s, rng);
}

int Policy::tag(std::size_t h) const {
  const auto* hp = std::get_if<HybridPolicy>(&impl_);
  if (!hp) return 0;
  return h < hp->switch_step ? hp->before->tag(h) : 1 + hp->after->tag(h);
}

// ---------------------------------------------------------------- episodes

double Episode::total_reward() const {
  double total = 0.0;
  for (const auto& s : steps) total += s.reward;
  return total;
}

Episode rollout(const ContextualMDP& env, const Policy& policy, Rng& rng) {
  const ContextId c = env.sample_context(rng);
  return rollout_from(env, policy, c, rng);
}

Episode rollout_from(const ContextualMDP& env, const Policy& policy, ContextId context, Rng& rng) {
  Episode ep;
  ep.context = context;
  ep.steps.reserve(env.horizon());
  StateId s = context;
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    EpisodeStep step;
    step.state = s;
    step.action = policy.sample_action(h, s, rng);
    step.reward = env.sample_reward(h, s, step.action, rng);
    step.next_state = h + 1 < env.horizon() ? env.sample_next(h, s, step.action, rng) : kTerminal;
    step.policy_tag = policy.tag(h);
    ep.steps.push_back(step);
    s = step.next_state;
  }
  return ep;
}

OccupancyTable exact_occupancy(const ContextualMDP& env, const Policy& policy, ContextId context) {
  const std::size_t H = env.horizon();
  const std::size_t A = env.num_actions();
  OccupancyTable occ;
  occ.context = context;
  occ.dist.resize(H);
  occ.dist[0].assign(env.num_states(0), 0.0);
  occ.dist[0].at(context) = 1.0;
  for (std::size_t h = 0; h + 1 < H; ++h) {
    occ.dist[h + 1].assign(env.num_states(h + 1), 0.0);
    for (StateId s = 0; s < env.num_states(h); ++s) {
      const double mass = occ.dist[h][s];
      if (mass == 0.0) continue;
      const auto pi = policy.action_probs(h, s, A);
      for (ActionId a = 0; a < A; ++a) {
        if (pi[a] == 0.0) continue;
        const auto row = env.transition(h, s, a);
        for (StateId n = 0; n < row.size(); ++n) occ.dist[h + 1][n] += mass * pi[a] * row[n];
      }
    }
  }
  return occ;
}

namespace {

// Forward support of the policy from a set of step-0 states.
std::vector<std::vector<char>> reachable(const ContextualMDP& env, const Policy& policy,
                                         const std::vector<char>& start) {
  const std::size_t H = env.horizon();
  const std::size_t A = env.num_actions();
  std::vector<std::vector<char>> r(H);
  r[0] = start;
  for (std::size_t h = 0; h + 1 < H; ++h) {
    r[h + 1].assign(env.num_states(h + 1), 0);
    for (StateId s = 0; s < env.num_states(h); ++s) {
      if (!r[h][s]) continue;
      const auto pi = policy.action_probs(h, s, A);
      for (ActionId a = 0; a < A; ++a) {
        if (pi[a] == 0.0) continue;
        const auto row = env.transition(h, s, a);
        for (StateId n = 0; n < row.size(); ++n) {
          if (row[n] > 0.0) r[h + 1][n] = 1;
        }
      }
    }
  }
  return r;
}

std::vector<double> backward_values(const ContextualMDP& env, const Policy& policy,
                                    const std::vector<std::vector<char>>& mask) {
  const std::size_t A = env.num_actions();
  std::vector<double> next;
  for (std::size_t h = env.horizon(); h-- > 0;) {
    std::vector<double> v(env.num_states(h), 0.0);
    for (StateId s = 0; s < env.num_states(h); ++s) {
      if (!mask[h][s]) continue;
      const auto pi = policy.action_probs(h, s, A);
      double total = 0.0;
      for (ActionId a = 0; a < A; ++a) {
        if (pi[a] == 0.0) continue;
        double q = env.reward_mean(h, s, a);
        const auto row = env.transition(h, s, a);
        for (StateId n = 0; n < row.size(); ++n) q += row[n] * next[n];
        total += pi[a] * q;
      }
      v[s] = total;
    }
    next = std::move(v);
  }
  return next;
}

}  // namespace

double policy_value(const ContextualMDP& env, const Policy& policy, ContextId context) {
  std::vector<char> start(env.num_contexts(), 0);
  start.at(context) = 1;
  return backward_values(env, policy, reachable(env, policy, start))[context];
}

std::vector<double> policy_values(const ContextualMDP& env, const Policy& policy) {
  std::vector<char> start(env.num_contexts(), 1);
  return backward_values(env, policy, reachable(env, policy, start));
}

std::vector<double> backup_table(const ContextualMDP& env, std::size_t h, std::span<const double> next_max) {
  const std::size_t A = env.num_actions();
  const std::size_t S = env.num_states(h);
  const bool last = h + 1 == env.horizon();
  if (!last && next_max.size() != env.num_states(h + 1)) {
    throw std::invalid_argument("backup_table: next-step value has the wrong size");
  }
  std::vector<double> out(S * A);
  for (StateId s = 0; s < S; ++s) {
    for (ActionId a = 0; a < A; ++a) {
      double q = env.reward_mean(h, s, a);
      if (!last) {
        const auto row = env.transition(h, s, a);
        for (StateId n = 0; n < row.size(); ++n) q += row[n] * next_max[n];
      }
      out[s * A + a] = q;
    }
  }
  return out;
}

QFunction value_iteration(const ContextualMDP& env) {
  const std::size_t H = env.horizon();
  const std::size_t A = env.num_actions();
  std::vector<std::vector<double>> tables(H);
  std::vector<double> next_max;
  for (std::size_t h = H; h-- > 0;) {
    tables[h] = backup_table(env, h, next_max);
    next_max.assign(env.num_states(h), 0.0);
    for (StateId s = 0; s < env.num_states(h); ++s) {
      const std::span<const double> row(tables[h].data() + s * A, A);
      next_max[s] = row[argmax_lowest(row)];
    }
  }
  return QFunction(A, std::move(tables));
}

}  // namespace ts3
