#include "ts3/agents.hpp"

#include <algorithm>
#include <chrono>
#include <memory>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace ts3 {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::ts3: return "ts3";
    case Algorithm::ts2d: return "ts2d";
    case Algorithm::uniform: return "uniform";
    case Algorithm::greedy_oracle: return "greedy_oracle";
    case Algorithm::vanilla_ts: return "vanilla_ts";
    case Algorithm::fgts_nocorrect: return "fgts_nocorrect";
  }
  return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
  for (Algorithm a : {Algorithm::ts3, Algorithm::ts2d, Algorithm::uniform, Algorithm::greedy_oracle,
                      Algorithm::vanilla_ts, Algorithm::fgts_nocorrect}) {
    if (to_string(a) == name) return a;
  }
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

Hyperparams resolve_hyperparams(const AgentConfig& cfg, const Instance& inst) {
  Hyperparams hp =
      default_hyperparams(inst.cls.size(), cfg.T, inst.env.horizon(), inst.dims, cfg.lambda_scale);
  if (cfg.eta) hp.eta = *cfg.eta;
  if (cfg.gamma) hp.gamma = *cfg.gamma;
  if (cfg.lambda) hp.lambda = *cfg.lambda;
  if (cfg.algorithm == Algorithm::vanilla_ts) hp.lambda = 0.0;
  hp.validate();
  return hp;
}

ValueCache ValueCache::build(const Instance& inst) {
  const auto& env = inst.env;
  ValueCache vc;
  const QFunction qstar = value_iteration(env);
  vc.vstar.resize(env.num_contexts());
  for (ContextId c = 0; c < env.num_contexts(); ++c) {
    vc.vstar[c] = qstar.max_value(0, c);
    vc.vstar_mean += env.initial_dist()[c] * vc.vstar[c];
  }
  const auto real = check_realizability(env, inst.cls);
  vc.qstar_member = real.member.value_or(0);
  vc.member.resize(inst.cls.size());
  vc.member_mean.assign(inst.cls.size(), 0.0);
  for (MemberId f = 0; f < inst.cls.size(); ++f) {
    vc.member[f] = policy_values(env, Policy::greedy(inst.cls[f]));
    for (ContextId c = 0; c < env.num_contexts(); ++c) vc.member_mean[f] += env.initial_dist()[c] * vc.member[f][c];
  }
  vc.uniform = policy_values(env, Policy::uniform(env));
  return vc;
}

DesignTable DesignTable::build(const Instance& inst, double tol) {
  const auto& env = inst.env;
  DesignTable dt;
  dt.designs.resize(env.horizon());
  DesignOptions opts;
  opts.tol = tol;
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    ExplicitPolicy e;
    e.probs.resize(env.horizon());
    e.probs[h].resize(env.num_states(h));
    for (StateId s = 0; s < env.num_states(h); ++s) {
      try {
        dt.designs[h].push_back(solve_design(inst.features.vectors(h, s), opts));
      } catch (const std::exception& ex) {
        throw std::runtime_error("design failed at (h=" + std::to_string(h + 1) + ", state=" + std::to_string(s) +
                                 "): " + ex.what());
      }
      e.probs[h][s] = dt.designs[h].back().weights;
    }
    dt.step_policies.emplace_back(std::move(e));
  }
  return dt;
}

EpisodeStreams::EpisodeStreams(std::uint64_t seed, std::size_t t)
    : ctx(Rng(seed).substream("ctx", t)),
      h(Rng(seed).substream("h", t)),
      f(Rng(seed).substream("f", t)),
      fprime(Rng(seed).substream("fprime", t)),
      env(Rng(seed).substream("env", t)) {}

namespace {

TransitionSample stored_tuple(const Episode& ep, std::size_t h, std::size_t t) {
  const auto& st = ep.steps[h];
  return TransitionSample{t, h, st.state, st.action, st.reward, st.next_state};
}

// Greedy policies are immutable; cache one shared copy per member.
std::vector<std::shared_ptr<const Policy>> greedy_policies(const FunctionClass& cls) {
  std::vector<std::shared_ptr<const Policy>> out;
  out.reserve(cls.size());
  for (const auto& f : cls.members()) out.push_back(std::make_shared<const Policy>(Policy::greedy(f)));
  return out;
}

EpisodeResult ts3_step(const Instance& inst, const std::vector<std::shared_ptr<const Policy>>& greedy,
                       PosteriorState& state, EpisodeStreams& rng, bool single_sample) {
  const auto& env = inst.env;
  EpisodeResult r;
  const std::size_t t = state.t() + 1;
  r.context = env.sample_context(rng.ctx);
  r.h = rng.h.below(env.horizon());
  r.f = state.sample_f(rng.f);
  r.fprime = single_sample ? r.f : state.sample_f(rng.fprime);
  const Policy play(HybridPolicy{greedy[r.f], greedy[r.fprime], r.h});
  r.episode = rollout_from(env, play, r.context, rng.env);
  r.sample = stored_tuple(r.episode, r.h, t);
  state.advance(r.sample, r.context);
  return r;
}

EpisodeResult ts2d_step(const Instance& inst, const std::vector<std::shared_ptr<const Policy>>& greedy,
                        const std::vector<std::shared_ptr<const Policy>>& design_steps, PosteriorState& state,
                        EpisodeStreams& rng) {
  const auto& env = inst.env;
  EpisodeResult r;
  const std::size_t t = state.t() + 1;
  r.context = env.sample_context(rng.ctx);
  r.h = rng.h.below(env.horizon());
  r.f = state.sample_f(rng.f);
  r.fprime = r.f;
  auto tail = std::make_shared<const Policy>(HybridPolicy{design_steps[r.h], greedy[r.f], r.h + 1});
  const Policy play(HybridPolicy{greedy[r.f], tail, r.h});
  r.episode = rollout_from(env, play, r.context, rng.env);
  r.sample = stored_tuple(r.episode, r.h, t);
  state.advance(r.sample, r.context);
  return r;
}

void dump_snapshot(std::ostream& os, const PosteriorState& state, std::size_t k) {
  const auto p = state.outer_posterior();
  std::vector<std::size_t> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
  nlohmann::json top = nlohmann::json::array();
  for (std::size_t i = 0; i < k; ++i) top.push_back({{"id", idx[i]}, {"weight", p[idx[i]]}});
  os << nlohmann::json{{"t", state.t()}, {"top", top}}.dump() << '\n';
}

}  // namespace

EpisodeResult ts3_episode(const Instance& inst, PosteriorState& state, EpisodeStreams& rng, bool single_sample) {
  return ts3_step(inst, greedy_policies(inst.cls), state, rng, single_sample);
}

EpisodeResult ts2d_episode(const Instance& inst, const DesignTable& designs, PosteriorState& state,
                           EpisodeStreams& rng) {
  std::vector<std::shared_ptr<const Policy>> steps;
  for (const auto& p : designs.step_policies) steps.push_back(std::make_shared<const Policy>(p));
  return ts2d_step(inst, greedy_policies(inst.cls), steps, state, rng);
}

RegretTrace run_agent(const Instance& inst, const AgentConfig& cfg, const ValueCache* values,
                      const DesignTable* designs) {
  if (cfg.T == 0) throw std::invalid_argument("run_agent: T must be positive");
  std::optional<ValueCache> own_values;
  if (!values) values = &own_values.emplace(ValueCache::build(inst));
  std::optional<DesignTable> own_designs;
  if (cfg.algorithm == Algorithm::ts2d && !designs) designs = &own_designs.emplace(DesignTable::build(inst, cfg.design_tol));

  const auto& env = inst.env;
  RegretTrace trace;
  trace.agent = cfg.name.empty() ? to_string(cfg.algorithm) : cfg.name;
  trace.algorithm = cfg.algorithm;
  trace.seed = cfg.seed;
  trace.planned_T = cfg.T;
  trace.hyper = resolve_hyperparams(cfg, inst);
  trace.rows.reserve(cfg.T);

  const bool learns = cfg.algorithm != Algorithm::uniform && cfg.algorithm != Algorithm::greedy_oracle;
  const LikelihoodMode mode = (cfg.algorithm == Algorithm::vanilla_ts || cfg.algorithm == Algorithm::fgts_nocorrect)
                                  ? LikelihoodMode::no_correction
                                  : LikelihoodMode::full;
  std::optional<PosteriorState> state;
  if (learns) state.emplace(inst.cls, trace.hyper, mode);

  const auto greedy = greedy_policies(inst.cls);
  std::vector<std::shared_ptr<const Policy>> design_steps;
  if (designs) {
    for (const auto& p : designs->step_policies) design_steps.push_back(std::make_shared<const Policy>(p));
  }
  const Policy uniform = Policy::uniform(env);

  const auto start = std::chrono::steady_clock::now();
  double cum = 0.0;
  double batch_sum = 0.0;
  for (std::size_t t = 1; t <= cfg.T; ++t) {
    if (t % 256 == 0 && cfg.time_limit_seconds > 0.0) {
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      if (elapsed.count() > cfg.time_limit_seconds) {
        trace.truncated = true;
        break;
      }
    }
    EpisodeStreams rng(cfg.seed, t);
    TraceRow row;
    row.t = t;
    row.seed = cfg.seed;
    double regret = 0.0;
    switch (cfg.algorithm) {
      case Algorithm::uniform: {
        const ContextId c = env.sample_context(rng.ctx);
        const std::size_t h = rng.h.below(env.horizon());
        const Episode ep = rollout_from(env, uniform, c, rng.env);
        row.h = h + 1;
        row.executed_return = ep.total_reward();
        regret = values->vstar[c] - values->uniform[c];
        double mean_uniform = 0.0;
        for (ContextId x = 0; x < env.num_contexts(); ++x) mean_uniform += env.initial_dist()[x] * values->uniform[x];
        batch_sum += mean_uniform;
        trace.samples.push_back(stored_tuple(ep, h, t));
        break;
      }
      case Algorithm::greedy_oracle: {
        const ContextId c = env.sample_context(rng.ctx);
        const std::size_t h = rng.h.below(env.horizon());
        const MemberId f = values->qstar_member;
        const Episode ep = rollout_from(env, *greedy[f], c, rng.env);
        row.h = h + 1;
        row.f_id = row.fprime_id = static_cast<std::int64_t>(f);
        row.executed_return = ep.total_reward();
        regret = values->vstar[c] - values->member[f][c];
        batch_sum += values->member_mean[f];
        trace.samples.push_back(stored_tuple(ep, h, t));
        break;
      }
      case Algorithm::ts2d: {
        const auto r = ts2d_step(inst, greedy, design_steps, *state, rng);
        row.h = r.h + 1;
        row.f_id = static_cast<std::int64_t>(r.f);
        row.fprime_id = static_cast<std::int64_t>(r.fprime);
        row.executed_return = r.episode.total_reward();
        regret = values->vstar[r.context] - values->member[r.f][r.context];
        batch_sum += values->member_mean[r.f];
        trace.samples.push_back(r.sample);
        break;
      }
      case Algorithm::ts3:
      case Algorithm::vanilla_ts:
      case Algorithm::fgts_nocorrect: {
        const auto r = ts3_step(inst, greedy, *state, rng, cfg.single_sample);
        row.h = r.h + 1;
        row.f_id = static_cast<std::int64_t>(r.f);
        row.fprime_id = static_cast<std::int64_t>(r.fprime);
        row.executed_return = r.episode.total_reward();
        regret = values->vstar[r.context] - values->member[r.f][r.context];
        batch_sum += values->member_mean[r.f];
        trace.samples.push_back(r.sample);
        break;
      }
    }
    cum += regret;
    row.inst_regret = regret;
    row.cum_regret = cum;
    trace.rows.push_back(row);
    if (state && cfg.dump && cfg.dump_top_k > 0) dump_snapshot(*cfg.dump, *state, cfg.dump_top_k);
  }
  if (!trace.rows.empty()) {
    trace.batch_value = batch_sum / static_cast<double>(trace.rows.size());
    trace.batch_regret = values->vstar_mean - trace.batch_value;
  }
  return trace;
}

}  // namespace ts3
