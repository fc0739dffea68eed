#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ts3/design.hpp"
#include "ts3/envs.hpp"
#include "ts3/posterior.hpp"

namespace ts3 {

enum class Algorithm { ts3, ts2d, uniform, greedy_oracle, vanilla_ts, fgts_nocorrect };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);

struct AgentConfig {
  std::string name;
  Algorithm algorithm = Algorithm::ts3;
  std::optional<double> eta;     // defaults from (N, T, H, dims) when unset
  std::optional<double> gamma;
  std::optional<double> lambda;
  double lambda_scale = 1.0;     // multiplies the default lambda
  std::size_t T = 1000;
  std::uint64_t seed = 0;
  bool single_sample = false;    // ts3 ablation: f'_t = f_t
  double design_tol = 0.01;
  double time_limit_seconds = 600.0;
  std::size_t dump_top_k = 0;    // > 0 writes posterior snapshots to `dump`
  std::ostream* dump = nullptr;
};

/// Effective hyperparameters for a config on an instance. vanilla_ts forces
/// lambda = 0.
Hyperparams resolve_hyperparams(const AgentConfig& cfg, const Instance& inst);

inline constexpr std::int64_t kNoMember = -1;

struct TraceRow {
  std::size_t t = 0;        // 1-based
  std::size_t h = 0;        // 1-based step whose tuple was stored
  std::int64_t f_id = kNoMember;
  std::int64_t fprime_id = kNoMember;
  double inst_regret = 0.0;
  double cum_regret = 0.0;
  double executed_return = 0.0;
  std::uint64_t seed = 0;
};

struct RegretTrace {
  std::string agent;
  Algorithm algorithm = Algorithm::ts3;
  Hyperparams hyper;
  std::uint64_t seed = 0;
  std::size_t planned_T = 0;
  bool truncated = false;
  std::vector<TraceRow> rows;
  std::vector<TransitionSample> samples;
  /// Value of the uniform mixture over pi_{f_1..f_t}: the mean over t of
  /// E_{x1 ~ D} R(pi_{f_t}, x1), and its gap to E V*.
  double batch_value = 0.0;
  double batch_regret = 0.0;
};

/// Exact per-member returns shared across runs on one instance.
struct ValueCache {
  std::vector<double> vstar;                 // [x1]
  std::vector<std::vector<double>> member;   // [f][x1] = R(pi_f, x1)
  std::vector<double> member_mean;           // [f] = E_D R(pi_f, x1)
  std::vector<double> uniform;               // [x1] for the uniform policy
  double vstar_mean = 0.0;
  MemberId qstar_member = 0;

  static ValueCache build(const Instance& inst);
};

/// Per-(h, x) G-optimal designs over the declared features, exposed as one
/// explicit policy per step that is defined only at that step.
struct DesignTable {
  std::vector<std::vector<DesignWeights>> designs;  // [h][s]
  std::vector<Policy> step_policies;                // [h]

  static DesignTable build(const Instance& inst, double tol);
};

struct EpisodeResult {
  ContextId context = 0;
  std::size_t h = 0;  // 0-based
  MemberId f = 0;
  MemberId fprime = 0;
  Episode episode;
  TransitionSample sample;
};

/// Streams for episode t: ctx, h, f, fprime, env.
struct EpisodeStreams {
  Rng ctx, h, f, fprime, env;
  EpisodeStreams(std::uint64_t seed, std::size_t t);
};

/// One round of the two-sample loop: observe x1, draw h_t, draw f_t and
/// f'_t, play pi_f before h_t and pi_f' from h_t on, then fold in the step
/// h_t tuple.
EpisodeResult ts3_episode(const Instance& inst, PosteriorState& state, EpisodeStreams& rng, bool single_sample);

/// One round of the design loop: a single draw f_t acts before h_t, the
/// step-h_t action comes from the state's G-optimal design and pi_f acts
/// afterwards.
EpisodeResult ts2d_episode(const Instance& inst, const DesignTable& designs, PosteriorState& state,
                           EpisodeStreams& rng);

/// Full online run. Regret is exact: V*(x1) - R(pi_{f_t}, x1).
RegretTrace run_agent(const Instance& inst, const AgentConfig& cfg, const ValueCache* values = nullptr,
                      const DesignTable* designs = nullptr);

}  // namespace ts3
