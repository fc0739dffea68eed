#include "ts3/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ts3 {

namespace {

constexpr std::size_t kMaxStates = 64;
constexpr std::size_t kMaxActions = 64;
constexpr std::size_t kMaxClass = 512;

// Step 0 holds one state per context; later steps hold `local` states per
// context, laid out context-major.
struct Layout {
  std::size_t H = 1, C = 1, L = 1;

  std::size_t count(std::size_t h) const { return h == 0 ? C : C * L; }
  std::size_t locals(std::size_t h) const { return h == 0 ? C : L; }
  StateId global(std::size_t h, ContextId c, std::size_t l) const { return h == 0 ? c : c * L + l; }
  ContextId context(std::size_t h, StateId s) const { return h == 0 ? s : s / L; }
  std::size_t local(std::size_t h, StateId s) const { return h == 0 ? s : s % L; }
};

struct LocalEntry {
  double mean = 0.0, lo = 0.0, hi = 0.0;
  std::vector<double> next_local;  // over next-step locals of the same context
};

using LocalKernel = std::function<void(std::size_t h, ContextId c, std::size_t l, ActionId a, LocalEntry&)>;

ContextualMDP assemble(const Layout& lay, std::size_t A, std::vector<double> initial, RewardNoise noise,
                       std::string name, const LocalKernel& kernel) {
  std::vector<StepTables> steps(lay.H);
  for (std::size_t h = 0; h < lay.H; ++h) {
    auto& st = steps[h];
    st.num_states = lay.count(h);
    st.num_next_states = h + 1 < lay.H ? lay.count(h + 1) : 0;
    st.state_context.resize(st.num_states);
    st.reward_mean.resize(st.num_states * A);
    st.reward_lo.resize(st.num_states * A);
    st.reward_hi.resize(st.num_states * A);
    st.transition.assign(st.num_states * A * st.num_next_states, 0.0);
    for (StateId s = 0; s < st.num_states; ++s) {
      const ContextId c = lay.context(h, s);
      st.state_context[s] = c;
      for (ActionId a = 0; a < A; ++a) {
        LocalEntry e;
        kernel(h, c, lay.local(h, s), a, e);
        const std::size_t i = s * A + a;
        st.reward_mean[i] = e.mean;
        st.reward_lo[i] = e.lo;
        st.reward_hi[i] = e.hi;
        if (st.num_next_states == 0) continue;
        if (e.next_local.size() != lay.L) throw std::logic_error("assemble: next-local row has the wrong size");
        for (std::size_t l2 = 0; l2 < lay.L; ++l2) {
          st.transition[i * st.num_next_states + lay.global(h + 1, c, l2)] = e.next_local[l2];
        }
      }
    }
  }
  return ContextualMDP(A, std::move(initial), std::move(steps), noise, std::move(name));
}

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  double total = 0.0;
  for (auto& x : w) {
    x = -std::log1p(-rng.uniform());
    total += x;
  }
  for (auto& x : w) x /= total;
  return w;
}

// Dirichlet(1) weights on `branching` distinct entries out of n.
std::vector<double> sparse_row(std::size_t n, std::size_t branching, Rng& rng) {
  const std::size_t b = branching == 0 ? n : std::min(branching, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < b; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  const auto w = random_simplex(b, rng);
  std::vector<double> row(n, 0.0);
  for (std::size_t i = 0; i < b; ++i) row[idx[i]] = w[i];
  return row;
}

void set_reward(LocalEntry& e, double mean, double rmax, RewardNoise noise) {
  e.mean = mean;
  switch (noise) {
    case RewardNoise::none:
      e.lo = e.hi = mean;
      break;
    case RewardNoise::uniform: {
      const double w = std::min(mean, rmax - mean);
      e.lo = mean - w;
      e.hi = mean + w;
      break;
    }
    case RewardNoise::two_point:
      e.lo = 0.0;
      e.hi = rmax;
      break;
  }
}

std::vector<double> uniform_initial(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

double step_vmax(const Layout& lay, std::size_t h) {
  return static_cast<double>(lay.H - h) / static_cast<double>(lay.H);
}

// Replicates a local table (locals(h) x A) across contexts.
std::vector<double> replicate(const Layout& lay, std::size_t h, std::size_t A, const std::vector<double>& local) {
  if (h == 0) return local;
  std::vector<double> out(lay.count(h) * A);
  for (StateId s = 0; s < lay.count(h); ++s) {
    std::copy_n(local.begin() + static_cast<std::ptrdiff_t>(lay.local(h, s) * A), A,
                out.begin() + static_cast<std::ptrdiff_t>(s * A));
  }
  return out;
}

FeatureMap replicate_features(const Layout& lay, std::size_t A, std::size_t dim,
                              const std::vector<std::vector<double>>& local) {
  FeatureMap fm;
  fm.dim = dim;
  fm.num_actions = A;
  fm.table.resize(lay.H);
  for (std::size_t h = 0; h < lay.H; ++h) fm.table[h] = replicate(lay, h, A * dim, local[h]);
  return fm;
}

// ---------------------------------------------------------------- tabular

// Kernels are generated per (h, key, local) where key is 0 for dynamics
// shared across contexts and the context otherwise.
struct TabularKernels {
  std::vector<std::vector<std::vector<LocalEntry>>> entry;  // [h][key][l * A + a]
};

TabularKernels random_tabular(const Layout& lay, std::size_t A, std::size_t branching, RewardNoise noise,
                              bool shared, Rng& rng) {
  const double rmax = 1.0 / static_cast<double>(lay.H);
  TabularKernels k;
  k.entry.resize(lay.H);
  for (std::size_t h = 0; h < lay.H; ++h) {
    const std::size_t keys = (h == 0 || shared) ? 1 : lay.C;
    k.entry[h].resize(keys);
    for (std::size_t key = 0; key < keys; ++key) {
      const std::size_t nl = lay.locals(h);
      k.entry[h][key].resize(nl * A);
      for (std::size_t l = 0; l < nl; ++l) {
        for (ActionId a = 0; a < A; ++a) {
          auto& e = k.entry[h][key][l * A + a];
          set_reward(e, rmax * rng.uniform(), rmax, noise);
          if (h + 1 < lay.H) e.next_local = sparse_row(lay.L, branching, rng);
        }
      }
    }
  }
  return k;
}

Instance make_tabular(const EnvSpec& spec, bool mixture) {
  Rng rng(spec.seed);
  Rng env_rng = rng.substream("env");
  Layout lay{spec.horizon, spec.contexts, spec.states};
  const std::size_t A = spec.actions;
  const auto kernels = random_tabular(lay, A, spec.branching, spec.reward_noise, !mixture, env_rng);
  auto env = assemble(lay, A, uniform_initial(lay.C), spec.reward_noise, mixture ? "mixture" : "tabular",
                      [&](std::size_t h, ContextId c, std::size_t l, ActionId a, LocalEntry& e) {
                        const std::size_t key = (h == 0 || !mixture) ? 0 : c;
                        e = kernels.entry[h][key][l * A + a];
                      });
  TableSampler sampler = [&](std::size_t h, Rng& r) {
    const double vmax = step_vmax(lay, h);
    if (mixture) {
      std::vector<double> t(lay.count(h) * A);
      for (auto& v : t) v = vmax * r.uniform();
      return t;
    }
    std::vector<double> local(lay.locals(h) * A);
    for (auto& v : local) v = vmax * r.uniform();
    return replicate(lay, h, A, local);
  };
  Rng cls_rng = rng.substream("class");
  auto cls = build_closed_class(env, spec.class_size, sampler, cls_rng);
  auto features = indicator_features(env);
  return Instance{spec, std::move(env), std::move(cls), std::move(features), Dims{spec.states, A}, {}, {}, {}};
}

// ---------------------------------------------------------------- linear

Instance make_linear(const EnvSpec& spec) {
  Rng rng(spec.seed);
  Rng env_rng = rng.substream("env");
  Layout lay{spec.horizon, spec.contexts, spec.states};
  const std::size_t A = spec.actions;
  const std::size_t d = spec.feature_dim;
  const double rmax = 1.0 / static_cast<double>(lay.H);

  // Features live on the probability simplex so that <phi, mu> is a
  // distribution whenever every mu_i is.
  std::vector<std::vector<double>> phi(lay.H);  // [h][(l * A + a) * d + i]
  for (std::size_t h = 0; h < lay.H; ++h) {
    const std::size_t nl = lay.locals(h);
    phi[h].resize(nl * A * d);
    for (std::size_t l = 0; l < nl; ++l) {
      if (spec.feature_kind == "rbf") {
        // Normalized radial-basis weights of each action's position around
        // state-dependent basis points.
        const double beta = 4.0 * static_cast<double>(std::max<std::size_t>(d, 2) - 1);
        std::vector<double> centers(d);
        for (std::size_t i = 0; i < d; ++i) {
          const double base = d > 1 ? static_cast<double>(i) / static_cast<double>(d - 1) : 0.5;
          centers[i] = base + 0.3 * (env_rng.uniform() - 0.5) / static_cast<double>(std::max<std::size_t>(d, 2) - 1);
        }
        for (ActionId a = 0; a < A; ++a) {
          const double pos = A > 1 ? static_cast<double>(a) / static_cast<double>(A - 1) : 0.5;
          double total = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double w = std::exp(-beta * std::abs(pos - centers[i]));
            phi[h][(l * A + a) * d + i] = w;
            total += w;
          }
          for (std::size_t i = 0; i < d; ++i) phi[h][(l * A + a) * d + i] /= total;
        }
      } else if (spec.feature_kind == "dirichlet") {
        for (ActionId a = 0; a < A; ++a) {
          const auto w = random_simplex(d, env_rng);
          std::copy(w.begin(), w.end(), phi[h].begin() + static_cast<std::ptrdiff_t>((l * A + a) * d));
        }
      } else {
        throw std::invalid_argument("make_env: unknown feature_kind '" + spec.feature_kind + "'");
      }
    }
  }
  LinearModel model;
  model.mu.resize(lay.H);
  model.theta.resize(lay.H);
  for (std::size_t h = 0; h < lay.H; ++h) {
    model.theta[h].resize(d);
    for (auto& t : model.theta[h]) t = rmax * env_rng.uniform();
    if (h + 1 < lay.H) {
      model.mu[h].resize(d * lay.L);
      for (std::size_t i = 0; i < d; ++i) {
        const auto row = sparse_row(lay.L, spec.branching, env_rng);
        std::copy(row.begin(), row.end(), model.mu[h].begin() + static_cast<std::ptrdiff_t>(i * lay.L));
      }
    }
  }
  auto env = assemble(lay, A, uniform_initial(lay.C), spec.reward_noise, "linear_mdp",
                      [&](std::size_t h, ContextId, std::size_t l, ActionId a, LocalEntry& e) {
                        const double* f = phi[h].data() + (l * A + a) * d;
                        double mean = 0.0;
                        for (std::size_t i = 0; i < d; ++i) mean += f[i] * model.theta[h][i];
                        set_reward(e, std::min(mean, rmax), rmax, spec.reward_noise);
                        if (h + 1 < lay.H) {
                          e.next_local.assign(lay.L, 0.0);
                          for (std::size_t l2 = 0; l2 < lay.L; ++l2) {
                            for (std::size_t i = 0; i < d; ++i) e.next_local[l2] += f[i] * model.mu[h][i * lay.L + l2];
                          }
                        }
                      });
  TableSampler sampler = [&](std::size_t h, Rng& r) {
    const double vmax = step_vmax(lay, h);
    std::vector<double> w(d);
    for (auto& x : w) x = vmax * r.uniform();
    std::vector<double> local(lay.locals(h) * A, 0.0);
    for (std::size_t j = 0; j < local.size(); ++j) {
      for (std::size_t i = 0; i < d; ++i) local[j] += phi[h][j * d + i] * w[i];
      local[j] = std::min(local[j], vmax);
    }
    return replicate(lay, h, A, local);
  };
  Rng cls_rng = rng.substream("class");
  auto cls = build_closed_class(env, spec.class_size, sampler, cls_rng);
  auto features = replicate_features(lay, A, d, phi);
  return Instance{spec, std::move(env), std::move(cls), std::move(features), Dims{d, d}, {}, std::move(model), {}};
}

// ---------------------------------------------------------------- slate

Instance make_slate(const EnvSpec& spec) {
  Rng rng(spec.seed);
  Rng env_rng = rng.substream("env");
  Layout lay{spec.horizon, spec.contexts, spec.states};
  const std::size_t K = spec.items;
  const std::size_t alts = K + 1;
  const double rmax = 1.0 / static_cast<double>(lay.H);

  SlateModel model;
  model.items = K;
  model.slate_length = spec.slate_length;
  model.slates = enumerate_slates(K, spec.slate_length);
  const std::size_t A = model.slates.size();
  model.position_bias.resize(spec.slate_length);
  for (std::size_t j = 0; j < spec.slate_length; ++j) model.position_bias[j] = -0.5 * static_cast<double>(j);

  // Local (per user state) utilities and rewards; item-driven dynamics.
  std::vector<std::vector<double>> utility(lay.H), reward(lay.H), local_choice(lay.H);
  std::vector<std::vector<double>> nu(lay.H);  // [h][alt * L + l']
  for (std::size_t h = 0; h < lay.H; ++h) {
    const std::size_t nl = lay.locals(h);
    utility[h].resize(nl * K);
    reward[h].resize(nl * alts, 0.0);
    for (std::size_t l = 0; l < nl; ++l) {
      for (std::size_t k = 0; k < K; ++k) {
        utility[h][l * K + k] = 2.0 * env_rng.uniform() - 1.0;
        reward[h][l * alts + k] = rmax * env_rng.uniform();
      }
    }
    local_choice[h].resize(nl * A * alts, 0.0);
    for (std::size_t l = 0; l < nl; ++l) {
      for (ActionId a = 0; a < A; ++a) {
        double* p = local_choice[h].data() + (l * A + a) * alts;
        double total = 1.0;  // no-click has utility 0
        p[K] = 1.0;
        for (std::size_t j = 0; j < spec.slate_length; ++j) {
          const std::size_t item = model.slates[a][j];
          p[item] = std::exp(utility[h][l * K + item] + model.position_bias[j]);
          total += p[item];
        }
        for (std::size_t k = 0; k < alts; ++k) p[k] /= total;
      }
    }
    if (h + 1 < lay.H) {
      nu[h].resize(alts * lay.L);
      for (std::size_t k = 0; k < alts; ++k) {
        const auto row = sparse_row(lay.L, spec.branching, env_rng);
        std::copy(row.begin(), row.end(), nu[h].begin() + static_cast<std::ptrdiff_t>(k * lay.L));
      }
    }
  }

  auto env = assemble(lay, A, uniform_initial(lay.C), RewardNoise::none, "slate",
                      [&](std::size_t h, ContextId, std::size_t l, ActionId a, LocalEntry& e) {
                        const double* p = local_choice[h].data() + (l * A + a) * alts;
                        double mean = 0.0;
                        for (std::size_t k = 0; k < alts; ++k) mean += p[k] * reward[h][l * alts + k];
                        set_reward(e, mean, rmax, RewardNoise::none);
                        if (h + 1 < lay.H) {
                          e.next_local.assign(lay.L, 0.0);
                          for (std::size_t k = 0; k < alts; ++k) {
                            for (std::size_t l2 = 0; l2 < lay.L; ++l2) e.next_local[l2] += p[k] * nu[h][k * lay.L + l2];
                          }
                        }
                      });

  model.choice.resize(lay.H);
  model.item_reward.resize(lay.H);
  model.item_next.resize(lay.H);
  for (std::size_t h = 0; h < lay.H; ++h) {
    model.choice[h].resize(lay.count(h));
    model.item_reward[h].resize(lay.count(h));
    model.item_next[h].resize(lay.count(h));
    for (StateId s = 0; s < lay.count(h); ++s) {
      const std::size_t l = lay.local(h, s);
      const ContextId c = lay.context(h, s);
      model.choice[h][s].assign(local_choice[h].begin() + static_cast<std::ptrdiff_t>(l * A * alts),
                                local_choice[h].begin() + static_cast<std::ptrdiff_t>((l + 1) * A * alts));
      model.item_reward[h][s].assign(reward[h].begin() + static_cast<std::ptrdiff_t>(l * alts),
                                     reward[h].begin() + static_cast<std::ptrdiff_t>((l + 1) * alts));
      if (h + 1 < lay.H) {
        const std::size_t S2 = lay.count(h + 1);
        model.item_next[h][s].assign(alts * S2, 0.0);
        for (std::size_t k = 0; k < alts; ++k) {
          for (std::size_t l2 = 0; l2 < lay.L; ++l2) {
            model.item_next[h][s][k * S2 + lay.global(h + 1, c, l2)] = nu[h][k * lay.L + l2];
          }
        }
      }
    }
  }

  TableSampler sampler = [&](std::size_t h, Rng& r) {
    const double vmax = step_vmax(lay, h);
    const std::size_t nl = lay.locals(h);
    std::vector<double> g(nl * alts);
    for (auto& v : g) v = vmax * r.uniform();
    std::vector<double> local(nl * A, 0.0);
    for (std::size_t l = 0; l < nl; ++l) {
      for (ActionId a = 0; a < A; ++a) {
        const double* p = local_choice[h].data() + (l * A + a) * alts;
        double v = 0.0;
        for (std::size_t k = 0; k < alts; ++k) v += p[k] * g[l * alts + k];
        local[l * A + a] = std::min(v, vmax);
      }
    }
    return replicate(lay, h, A, local);
  };
  Rng cls_rng = rng.substream("class");
  auto cls = build_closed_class(env, spec.class_size, sampler, cls_rng);
  auto features = replicate_features(lay, A, alts, local_choice);
  const Dims dims{std::min(spec.states, alts), alts};
  return Instance{spec, std::move(env), std::move(cls), std::move(features), dims, std::move(model), {}, {}};
}

// ---------------------------------------------------------------- cb_hard

Instance make_cb_hard(const EnvSpec& spec) {
  const std::size_t n = spec.contexts;
  StepTables st;
  st.num_states = n;
  st.num_next_states = 0;
  st.state_context.resize(n);
  std::iota(st.state_context.begin(), st.state_context.end(), 0);
  st.reward_mean.resize(2 * n);
  st.reward_lo.assign(2 * n, 0.0);
  st.reward_hi.assign(2 * n, 1.0);
  for (std::size_t x = 0; x < n; ++x) {
    st.reward_mean[2 * x] = 0.0;
    st.reward_mean[2 * x + 1] = 0.5;
  }
  std::vector<StepTables> steps{st};
  ContextualMDP env(2, uniform_initial(n), std::move(steps), RewardNoise::two_point, "cb_hard");

  std::vector<double> star(2 * n);
  for (std::size_t x = 0; x < n; ++x) {
    star[2 * x] = 0.0;
    star[2 * x + 1] = 0.5;
  }
  std::vector<QFunction> members;
  for (std::size_t i = 0; i < n; ++i) {
    auto t = star;
    t[2 * i] = 1.0;
    members.emplace_back(2, std::vector<std::vector<double>>{t});
  }
  members.emplace_back(2, std::vector<std::vector<double>>{star});
  FunctionClass cls(std::move(members));
  auto features = indicator_features(env);
  auto s = spec;
  s.class_size = n + 1;
  s.horizon = 1;
  s.actions = 2;
  return Instance{s, std::move(env), std::move(cls), std::move(features), Dims{1, 2}, {}, {}, {}};
}

}  // namespace

// ---------------------------------------------------------------- public

std::string to_string(Family f) {
  switch (f) {
    case Family::tabular: return "tabular";
    case Family::linear_mdp: return "linear_mdp";
    case Family::mixture: return "mixture";
    case Family::slate: return "slate";
    case Family::block_mdp: return "block_mdp";
    case Family::cb_hard: return "cb_hard";
  }
  return "unknown";
}

Family family_from_string(const std::string& name) {
  for (Family f : {Family::tabular, Family::linear_mdp, Family::mixture, Family::slate, Family::block_mdp,
                   Family::cb_hard}) {
    if (to_string(f) == name) return f;
  }
  throw std::invalid_argument("unknown environment family '" + name + "'");
}

void EnvSpec::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("EnvSpec: " + why); };
  if (family == Family::cb_hard) {
    if (contexts == 0 || contexts > kMaxStates) fail("cb_hard needs 1..64 contexts");
    if (contexts + 1 > kMaxClass) fail("class too large");
    return;
  }
  if (horizon == 0 || horizon > 5) fail("horizon must be in [1, 5]");
  if (contexts == 0) fail("contexts must be positive");
  if (states == 0) fail("states must be positive");
  if (class_size == 0 || class_size > kMaxClass) fail("class_size must be in [1, 512]");
  const std::size_t m = family == Family::block_mdp ? std::max<std::size_t>(emissions, 1) : 1;
  if (family == Family::block_mdp && (emissions == 0 || emissions > 8)) fail("emissions must be in [1, 8]");
  if (family == Family::block_mdp && (states > 8 || contexts > 8)) fail("block_mdp latent state count must be <= 8");
  const std::size_t step0 = contexts * m;
  const std::size_t later = horizon > 1 ? contexts * m * states * m : 0;
  if (step0 > kMaxStates || later > kMaxStates) fail("more than 64 states per step");
  if (family == Family::slate) {
    if (items == 0 || items > 8) fail("slate items must be in [1, 8]");
    if (slate_length == 0 || slate_length > 3 || slate_length > items) fail("slate length must be in [1, min(3, K)]");
  } else if (actions == 0 || actions > kMaxActions) {
    fail("actions must be in [1, 64]");
  }
  if (family == Family::linear_mdp && (feature_dim == 0 || feature_dim > kMaxStates)) {
    fail("feature_dim must be in [1, 64]");
  }
}

std::vector<std::vector<double>> FeatureMap::vectors(std::size_t h, StateId s) const {
  std::vector<std::vector<double>> out(num_actions);
  for (ActionId a = 0; a < num_actions; ++a) {
    const auto v = (*this)(h, s, a);
    out[a].assign(v.begin(), v.end());
  }
  return out;
}

FeatureMap indicator_features(const ContextualMDP& env) {
  const std::size_t A = env.num_actions();
  FeatureMap fm;
  fm.dim = A;
  fm.num_actions = A;
  fm.table.resize(env.horizon());
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    fm.table[h].assign(env.num_states(h) * A * A, 0.0);
    for (StateId s = 0; s < env.num_states(h); ++s) {
      for (ActionId a = 0; a < A; ++a) fm.table[h][(s * A + a) * A + a] = 1.0;
    }
  }
  return fm;
}

FunctionClass build_closed_class(const ContextualMDP& env, std::size_t size, const TableSampler& sample, Rng& rng) {
  if (size == 0) throw std::invalid_argument("build_closed_class: size must be positive");
  const std::size_t H = env.horizon();
  const std::size_t A = env.num_actions();
  std::vector<QFunction> members{value_iteration(env)};
  auto present = [&](const QFunction& f, const std::vector<QFunction>& extra) {
    for (const auto& m : members) {
      if (m.distance(f) <= 1e-12) return true;
    }
    for (const auto& m : extra) {
      if (m.distance(f) <= 1e-12) return true;
    }
    return false;
  };

  const std::size_t max_attempts = 1000 + 100 * size;
  std::size_t attempts = 0;
  while (members.size() < size) {
    if (++attempts > max_attempts) {
      throw std::runtime_error("build_closed_class: could not reach " + std::to_string(size) + " distinct members (got " +
                               std::to_string(members.size()) + ")");
    }
    const std::size_t room = size - members.size();
    if (room >= H) {
      std::vector<std::vector<double>> tables(H);
      for (std::size_t h = 0; h < H; ++h) tables[h] = sample(h, rng);
      std::vector<QFunction> chain{QFunction(A, std::move(tables))};
      // The H-th backup is Q*, already a member.
      for (std::size_t k = 1; k < H; ++k) chain.push_back(full_backup(env, chain.back()));
      std::vector<QFunction> fresh;
      for (auto& f : chain) {
        if (!present(f, fresh)) fresh.push_back(std::move(f));
      }
      if (fresh.size() > room) continue;
      for (auto& f : fresh) members.push_back(std::move(f));
    } else {
      // Step 0 never enters a backup, so swapping it keeps the class closed.
      const auto& base = members[rng.below(members.size())];
      auto tables = base.tables();
      tables[0] = sample(0, rng);
      QFunction f(A, std::move(tables));
      if (!present(f, {})) members.push_back(std::move(f));
    }
  }
  for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);

  FunctionClass cls(std::move(members));
  const auto real = check_realizability(env, cls);
  if (!real.pass) {
    throw std::runtime_error("build_closed_class: realizability fails, deviation " + std::to_string(real.worst));
  }
  const auto comp = check_completeness(env, cls);
  if (!comp.pass) {
    throw std::runtime_error("build_closed_class: completeness gap " + std::to_string(comp.worst) + " at member " +
                             std::to_string(comp.member.value_or(0)) + ", step " + std::to_string(comp.step.value_or(0) + 1));
  }
  return cls;
}

std::vector<std::vector<std::size_t>> enumerate_slates(std::size_t items, std::size_t length) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur;
  std::vector<char> used(items, 0);
  std::function<void()> rec = [&]() {
    if (cur.size() == length) {
      out.push_back(cur);
      return;
    }
    for (std::size_t k = 0; k < items; ++k) {
      if (used[k]) continue;
      used[k] = 1;
      cur.push_back(k);
      rec();
      cur.pop_back();
      used[k] = 0;
    }
  };
  rec();
  return out;
}

std::vector<double> slate_closed_form(const ContextualMDP& env, const SlateModel& model, const QFunction& qstar,
                                      std::size_t h) {
  const std::size_t A = env.num_actions();
  const std::size_t alts = model.items + 1;
  std::vector<double> out(env.num_states(h) * A);
  for (StateId s = 0; s < env.num_states(h); ++s) {
    std::vector<double> g(alts);
    for (std::size_t k = 0; k < alts; ++k) {
      g[k] = model.item_reward[h][s][k];
      if (h + 1 < env.horizon()) {
        const std::size_t S2 = env.num_states(h + 1);
        for (StateId n = 0; n < S2; ++n) g[k] += model.item_next[h][s][k * S2 + n] * qstar.max_value(h + 1, n);
      }
    }
    for (ActionId a = 0; a < A; ++a) {
      const auto p = model.choice_probs(h, s, a);
      double q = 0.0;
      for (std::size_t k = 0; k < alts; ++k) q += p[k] * g[k];
      out[s * A + a] = q;
    }
  }
  return out;
}

Instance make_env(const EnvSpec& spec) {
  spec.validate();
  switch (spec.family) {
    case Family::tabular: return make_tabular(spec, false);
    case Family::mixture: return make_tabular(spec, true);
    case Family::linear_mdp: return make_linear(spec);
    case Family::slate: return make_slate(spec);
    case Family::cb_hard: return make_cb_hard(spec);
    case Family::block_mdp: return make_block_mdp(spec);
  }
  throw std::invalid_argument("make_env: unknown family");
}

Instance make_block_mdp(const EnvSpec& spec) {
  spec.validate();
  EnvSpec latent_spec = spec;
  latent_spec.family = Family::tabular;
  auto latent = std::make_shared<Instance>(make_tabular(latent_spec, false));
  const auto& lenv = latent->env;
  const std::size_t m = spec.emissions;
  const std::size_t A = spec.actions;
  const Layout lat{spec.horizon, spec.contexts, spec.states};
  const Layout obs{spec.horizon, spec.contexts * m, spec.states * m};

  // Round-robin emission: observation o of a block belongs to latent o mod |Z|.
  auto decode = [&](std::size_t h, StateId s) {
    return lat.global(h, obs.context(h, s) % lat.C, obs.local(h, s) % lat.L);
  };
  std::vector<std::vector<StateId>> decoder(spec.horizon);
  for (std::size_t h = 0; h < spec.horizon; ++h) {
    decoder[h].resize(obs.count(h));
    for (StateId s = 0; s < obs.count(h); ++s) decoder[h][s] = decode(h, s);
  }

  std::vector<double> initial(obs.C);
  for (ContextId c = 0; c < obs.C; ++c) initial[c] = lenv.initial_dist()[c % lat.C] / static_cast<double>(m);
  auto env = assemble(obs, A, std::move(initial), lenv.noise(), "block_mdp",
                      [&](std::size_t h, ContextId c, std::size_t l, ActionId a, LocalEntry& e) {
                        const StateId z = decoder[h][obs.global(h, c, l)];
                        const std::size_t i = z * A + a;
                        e.mean = lenv.step(h).reward_mean[i];
                        e.lo = lenv.step(h).reward_lo[i];
                        e.hi = lenv.step(h).reward_hi[i];
                        if (h + 1 < spec.horizon) {
                          const auto row = lenv.transition(h, z, a);
                          e.next_local.assign(obs.L, 0.0);
                          for (std::size_t l2 = 0; l2 < obs.L; ++l2) {
                            e.next_local[l2] = row[decoder[h + 1][obs.global(h + 1, c, l2)]] / static_cast<double>(m);
                          }
                        }
                      });

  std::vector<QFunction> members;
  members.reserve(latent->cls.size());
  for (const auto& f : latent->cls.members()) {
    std::vector<std::vector<double>> tables(spec.horizon);
    for (std::size_t h = 0; h < spec.horizon; ++h) {
      tables[h].resize(obs.count(h) * A);
      for (StateId s = 0; s < obs.count(h); ++s) {
        for (ActionId a = 0; a < A; ++a) tables[h][s * A + a] = f(h, decoder[h][s], a);
      }
    }
    members.emplace_back(A, std::move(tables));
  }
  FunctionClass cls(std::move(members), latent->cls.prior());
  auto features = indicator_features(env);
  auto info = std::make_shared<BlockInfo>(BlockInfo{latent, std::move(decoder)});
  return Instance{spec, std::move(env), std::move(cls), std::move(features), Dims{spec.states, A}, {}, {}, info};
}

}  // namespace ts3
