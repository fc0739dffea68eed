#pragma once

#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ts3/qfunction.hpp"
#include "ts3/rng.hpp"

namespace ts3 {

/// How a realized reward is drawn around its mean. Every variant keeps
/// E[r] equal to the tabulated mean so DP oracles stay exact.
///   none:      r = mean
///   uniform:   r ~ U[lo, hi], with mean = (lo + hi) / 2
///   two_point: r in {lo, hi}, P(hi) = (mean - lo) / (hi - lo)
enum class RewardNoise { none, uniform, two_point };

/// Tables for one step of an episodic contextual MDP. States are indexed
/// globally per step; state_context[s] is the context the state belongs to.
struct StepTables {
  std::size_t num_states = 0;
  std::size_t num_next_states = 0;  // zero on the last step
  std::vector<ContextId> state_context;
  std::vector<double> reward_mean;  // num_states * A
  std::vector<double> reward_lo;    // num_states * A
  std::vector<double> reward_hi;    // num_states * A
  std::vector<double> transition;   // num_states * A * num_next_states
};

/// Episodic contextual MDP over finite, per-step state sets. The state of
/// step 0 is the context itself: num_states(0) == num_contexts() and state c
/// at step 0 belongs to context c. Transitions never leave a context.
/// Immutable after construction; the constructor validates every invariant
/// and throws std::invalid_argument on violation.
class ContextualMDP {
 public:
  ContextualMDP(std::size_t num_actions, std::vector<double> initial_dist,
                std::vector<StepTables> steps, RewardNoise noise, std::string name = {});

  std::size_t horizon() const { return steps_.size(); }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t num_contexts() const { return initial_.size(); }
  std::size_t num_states(std::size_t h) const { return steps_[h].num_states; }
  ContextId context_of(std::size_t h, StateId s) const { return steps_[h].state_context[s]; }
  std::span<const double> initial_dist() const { return initial_; }
  RewardNoise noise() const { return noise_; }
  const std::string& name() const { return name_; }
  const StepTables& step(std::size_t h) const { return steps_[h]; }

  double reward_mean(std::size_t h, StateId s, ActionId a) const {
    return steps_[h].reward_mean[s * num_actions_ + a];
  }
  /// Next-state distribution; empty on the last step.
  std::span<const double> transition(std::size_t h, StateId s, ActionId a) const {
    const auto& st = steps_[h];
    return {st.transition.data() + (s * num_actions_ + a) * st.num_next_states, st.num_next_states};
  }

  ContextId sample_context(Rng& rng) const;
  double sample_reward(std::size_t h, StateId s, ActionId a, Rng& rng) const;
  StateId sample_next(std::size_t h, StateId s, ActionId a, Rng& rng) const;

  /// Largest achievable sum of reward upper bounds over realizable paths.
  double max_path_reward() const { return max_path_reward_; }

 private:
  void validate();

  std::size_t num_actions_;
  std::vector<double> initial_;
  std::vector<StepTables> steps_;
  RewardNoise noise_;
  std::string name_;
  double max_path_reward_ = 0.0;
};

class Policy;

struct GreedyPolicy {
  std::vector<std::vector<ActionId>> action;  // [h][s]
};

struct ExplicitPolicy {
  /// [h][s] -> distribution over actions. An empty vector marks (h, s) as
  /// undefined; reaching it is an error.
  std::vector<std::vector<std::vector<double>>> probs;
};

/// `before` acts on steps h < switch_step, `after` from switch_step on.
struct HybridPolicy {
  std::shared_ptr<const Policy> before;
  std::shared_ptr<const Policy> after;
  std::size_t switch_step = 0;
};

/// Markov policy: the action distribution depends only on (h, state).
class Policy {
 public:
  explicit Policy(GreedyPolicy p) : impl_(std::move(p)) {}
  explicit Policy(ExplicitPolicy p);
  explicit Policy(HybridPolicy p);

  static Policy greedy(const QFunction& f);
  static Policy uniform(const ContextualMDP& env);
  static Policy hybrid(Policy before, Policy after, std::size_t switch_step);

  /// Distribution over actions at (h, s); throws std::out_of_range naming
  /// (h, s) when undefined.
  std::vector<double> action_probs(std::size_t h, StateId s, std::size_t num_actions) const;
  ActionId sample_action(std::size_t h, StateId s, Rng& rng) const;

  /// Which component acts at step h: 0 for plain policies; for hybrids,
  /// the before-part's tag before the switch and 1 + the after-part's tag
  /// from the switch on.
  int tag(std::size_t h) const;

 private:
  std::variant<GreedyPolicy, ExplicitPolicy, HybridPolicy> impl_;
};

struct EpisodeStep {
  StateId state = 0;
  ActionId action = 0;
  double reward = 0.0;
  StateId next_state = 0;  // kTerminal on the last step
  int policy_tag = 0;
};

inline constexpr StateId kTerminal = static_cast<StateId>(-1);

struct Episode {
  ContextId context = 0;
  std::vector<EpisodeStep> steps;

  double total_reward() const;
};

/// d^h(x | x1) for one context: [h][s] over all step-h states.
struct OccupancyTable {
  ContextId context = 0;
  std::vector<std::vector<double>> dist;
};

/// Plays one episode from a context drawn from the initial distribution.
Episode rollout(const ContextualMDP& env, const Policy& policy, Rng& rng);
/// Same, from a given context.
Episode rollout_from(const ContextualMDP& env, const Policy& policy, ContextId context, Rng& rng);

OccupancyTable exact_occupancy(const ContextualMDP& env, const Policy& policy, ContextId context);

/// Exact expected return R(pi, x1) by backward DP.
double policy_value(const ContextualMDP& env, const Policy& policy, ContextId context);
/// Returns for every context at once.
std::vector<double> policy_values(const ContextualMDP& env, const Policy& policy);

/// One-step backup r(x,a) + E[max_a' next(x', a')] for step h, where
/// next_max gives max_a' f^{h+1}(x', a') (ignored on the last step).
std::vector<double> backup_table(const ContextualMDP& env, std::size_t h,
                                 std::span<const double> next_max);

/// Exact Q* tables by backward induction with zero terminal value.
QFunction value_iteration(const ContextualMDP& env);

}  // namespace ts3
