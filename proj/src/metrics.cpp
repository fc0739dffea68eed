#include "ts3/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ts3/rng.hpp"

namespace ts3 {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::vector<StateId> states_of(const ContextualMDP& env, std::size_t h, ContextId c) {
  std::vector<StateId> out;
  for (StateId s = 0; s < env.num_states(h); ++s) {
    if (env.context_of(h, s) == c) out.push_back(s);
  }
  return out;
}

// E^h(f, f; s, a) for every step-h state and action.
std::vector<double> residual_table(const ContextualMDP& env, const QFunction& f, std::size_t h) {
  const auto backup = bellman_backup(env, f, h);
  const auto& t = f.table(h);
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] - backup[i];
  return out;
}

}  // namespace

std::size_t numerical_rank(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) return 0;
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> M(
      m.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Eigen::JacobiSVD<MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0) return 0;
  std::size_t r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > kRankCutoff * sv(0)) ++r;
  }
  return r;
}

BellmanMatrix bellman_error_matrix(const ContextualMDP& env, const FunctionClass& cls, ErrorKind kind, std::size_t h,
                                   std::optional<ContextId> context) {
  const std::size_t N = cls.size();
  const std::size_t A = env.num_actions();
  BellmanMatrix out;
  out.kind = kind;
  out.h = h;
  out.context = context;
  out.n = N;
  out.entries.assign(N * N, 0.0);

  std::vector<std::vector<double>> res(N);
  for (MemberId f = 0; f < N; ++f) res[f] = residual_table(env, cls[f], h);

  std::vector<ContextId> ctxs;
  std::vector<double> ctx_w;
  if (context) {
    ctxs.push_back(*context);
    ctx_w.push_back(1.0);
  } else {
    for (ContextId c = 0; c < env.num_contexts(); ++c) {
      if (env.initial_dist()[c] > 0.0) {
        ctxs.push_back(c);
        ctx_w.push_back(env.initial_dist()[c]);
      }
    }
  }
  for (MemberId fp = 0; fp < N; ++fp) {
    const Policy roll = Policy::greedy(cls[fp]);
    std::vector<double> d(env.num_states(h), 0.0);
    for (std::size_t k = 0; k < ctxs.size(); ++k) {
      const auto occ = exact_occupancy(env, roll, ctxs[k]);
      for (StateId s = 0; s < d.size(); ++s) d[s] += ctx_w[k] * occ.dist[h][s];
    }
    for (MemberId f = 0; f < N; ++f) {
      double v = 0.0;
      for (StateId s = 0; s < d.size(); ++s) {
        if (d[s] == 0.0) continue;
        const ActionId a = kind == ErrorKind::V ? cls[f].greedy(h, s) : cls[fp].greedy(h, s);
        v += d[s] * res[f][s * A + a];
      }
      out.entries[f * N + fp] = v;
    }
  }
  out.rank = numerical_rank(out.entries, N, N);
  return out;
}

BellmanRank bellman_rank(const ContextualMDP& env, const FunctionClass& cls, ErrorKind kind) {
  BellmanRank out;
  out.kind = kind;
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    if (kind == ErrorKind::V) {
      for (ContextId c = 0; c < env.num_contexts(); ++c) {
        out.cells.push_back(bellman_error_matrix(env, cls, kind, h, c));
      }
    } else {
      out.cells.push_back(bellman_error_matrix(env, cls, kind, h, std::nullopt));
    }
  }
  for (const auto& m : out.cells) out.rank = std::max(out.rank, m.rank);
  return out;
}

Factorization factorize(const ContextualMDP& env, const FunctionClass& cls) {
  const std::size_t N = cls.size();
  const std::size_t H = env.horizon();
  const std::size_t A = env.num_actions();
  Factorization fac;
  fac.psi.resize(N);
  for (MemberId fp = 0; fp < N; ++fp) {
    const Policy roll = Policy::greedy(cls[fp]);
    fac.psi[fp].resize(env.num_contexts());
    for (ContextId c = 0; c < env.num_contexts(); ++c) fac.psi[fp][c] = exact_occupancy(env, roll, c).dist;
  }
  fac.u.resize(N);
  for (MemberId f = 0; f < N; ++f) {
    fac.u[f].resize(H);
    for (std::size_t h = 0; h < H; ++h) {
      const auto res = residual_table(env, cls[f], h);
      fac.u[f][h].resize(env.num_states(h));
      for (StateId s = 0; s < env.num_states(h); ++s) fac.u[f][h][s] = res[s * A + cls[f].greedy(h, s)];
    }
  }
  for (MemberId f = 0; f < N; ++f) {
    for (std::size_t h = 0; h < H; ++h) {
      for (ContextId c = 0; c < env.num_contexts(); ++c) {
        double sq = 0.0;
        for (StateId s : states_of(env, h, c)) sq += fac.u[f][h][s] * fac.u[f][h][s];
        fac.B1 = std::max(fac.B1, std::sqrt(sq));
      }
    }
  }
  return fac;
}

double factorization_residual(const ContextualMDP& env, const FunctionClass& cls, const Factorization& fac) {
  const std::size_t N = cls.size();
  const std::size_t H = env.horizon();
  double worst = 0.0;
  for (MemberId fp = 0; fp < N; ++fp) {
    const auto& pol = cls[fp];
    for (MemberId f = 0; f < N; ++f) {
      for (std::size_t h = 0; h < H; ++h) {
        // W_k(s) = expected u^h(f) at step h from state s at step k under pi_f'.
        std::vector<double> w = fac.u[f][h];
        for (std::size_t k = h; k-- > 0;) {
          std::vector<double> prev(env.num_states(k), 0.0);
          for (StateId s = 0; s < prev.size(); ++s) {
            const auto row = env.transition(k, s, pol.greedy(k, s));
            double v = 0.0;
            for (StateId n = 0; n < row.size(); ++n) v += row[n] * w[n];
            prev[s] = v;
          }
          w = std::move(prev);
        }
        for (ContextId c = 0; c < env.num_contexts(); ++c) {
          const auto& psi = fac.psi[fp][c][h];
          double inner = 0.0;
          for (StateId s = 0; s < psi.size(); ++s) inner += psi[s] * fac.u[f][h][s];
          worst = std::max(worst, std::abs(inner - w[c]));
        }
      }
    }
  }
  return worst;
}

DecompositionCheck verify_regret_decomposition(const ContextualMDP& env, const QFunction& f, ContextId x1) {
  const QFunction qstar = value_iteration(env);
  const Policy pi = Policy::greedy(f);
  const double vstar = qstar.max_value(0, x1);
  DecompositionCheck out;
  out.regret = vstar - policy_value(env, pi, x1);
  const auto occ = exact_occupancy(env, pi, x1);
  const std::size_t A = env.num_actions();
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    const auto res = residual_table(env, f, h);
    for (StateId s = 0; s < env.num_states(h); ++s) {
      if (occ.dist[h][s] == 0.0) continue;
      out.bellman_sum += occ.dist[h][s] * res[s * A + f.greedy(h, s)];
    }
  }
  out.optimism_gap = f.max_value(0, x1) - vstar;
  out.residual = std::abs(out.regret - (out.bellman_sum - out.optimism_gap));
  return out;
}

EmbeddingFit embedding_residual(const ContextualMDP& env, const FunctionClass& cls, const FeatureMap& features) {
  const std::size_t A = env.num_actions();
  const auto d = static_cast<Eigen::Index>(features.dim);
  EmbeddingFit out;
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    std::vector<std::vector<double>> res(cls.size());
    for (MemberId f = 0; f < cls.size(); ++f) res[f] = residual_table(env, cls[f], h);
    for (StateId s = 0; s < env.num_states(h); ++s) {
      MatrixXd Phi(static_cast<Eigen::Index>(A), d);
      for (ActionId a = 0; a < A; ++a) {
        const auto phi = features(h, s, a);
        for (Eigen::Index k = 0; k < d; ++k) Phi(static_cast<Eigen::Index>(a), k) = phi[static_cast<std::size_t>(k)];
      }
      const Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(Phi);
      for (MemberId f = 0; f < cls.size(); ++f) {
        const Eigen::Map<const VectorXd> y(res[f].data() + s * A, static_cast<Eigen::Index>(A));
        const VectorXd w = cod.solve(y);
        out.max_error = std::max(out.max_error, (Phi * w - y).cwiseAbs().maxCoeff());
        out.B2 = std::max(out.B2, w.norm());
      }
    }
  }
  return out;
}

std::vector<double> default_lambda_grid() {
  std::vector<double> g(32);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::pow(10.0, -8.0 + 10.0 * static_cast<double>(i) / 31.0);
  return g;
}

double trace_ratio(const std::vector<std::vector<double>>& spectra, double lambda) {
  double best = 0.0;
  for (const auto& sp : spectra) {
    double k = 0.0;
    for (double e : sp) {
      if (e > 0.0) k += e / (e + lambda);
    }
    best = std::max(best, k);
  }
  return best;
}

EffectiveDimStep effective_dim_step(const std::vector<std::vector<double>>& spectra, double eps,
                                    const std::vector<double>& grid) {
  if (eps < 0.0) throw std::invalid_argument("effective_dim_step: eps must be nonnegative");
  if (grid.empty()) throw std::invalid_argument("effective_dim_step: empty lambda grid");
  EffectiveDimStep out;
  out.grid_K.reserve(grid.size());
  for (double l : grid) out.grid_K.push_back(trace_ratio(spectra, l));
  if (eps == 0.0) {
    std::size_t rank = 0;
    for (const auto& sp : spectra) {
      const double top = sp.empty() ? 0.0 : *std::max_element(sp.begin(), sp.end());
      std::size_t r = 0;
      for (double e : sp) {
        if (top > 0.0 && e > kRankCutoff * top) ++r;
      }
      rank = std::max(rank, r);
    }
    out.value = static_cast<double>(rank);
    out.lambda = 0.0;
    return out;
  }
  const double budget = eps * eps;
  std::size_t idx = grid.size();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] * out.grid_K[i] <= budget) idx = i;
  }
  if (idx == grid.size()) {
    out.feasible = false;
    out.value = out.grid_K.front();
    out.lambda = grid.front();
    return out;
  }
  double lo = grid[idx];
  if (idx + 1 < grid.size()) {
    double hi = grid[idx + 1];
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (mid * trace_ratio(spectra, mid) <= budget) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
  }
  out.lambda = lo;
  out.value = trace_ratio(spectra, lo);
  return out;
}

std::vector<std::vector<double>> candidate_distributions(std::size_t n, std::size_t random_draws, std::uint64_t seed) {
  std::vector<std::vector<double>> out;
  out.emplace_back(n, 1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p(n, 0.0);
    p[i] = 1.0;
    out.push_back(std::move(p));
  }
  Rng rng(seed);
  for (std::size_t k = 0; k < random_draws; ++k) {
    std::vector<double> p(n);
    double total = 0.0;
    for (auto& x : p) {
      x = -std::log1p(-rng.uniform());
      total += x;
    }
    for (auto& x : p) x /= total;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<double> symmetric_spectrum(const std::vector<double>& m, std::size_t d) {
  if (d == 0) return {};
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> M(
      m.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  const Eigen::SelfAdjointEigenSolver<MatrixXd> es(MatrixXd(M), Eigen::EigenvaluesOnly);
  std::vector<double> ev(d);
  for (std::size_t i = 0; i < d; ++i) ev[i] = std::max(0.0, es.eigenvalues()(static_cast<Eigen::Index>(i)));
  return ev;
}

namespace {

EffectiveDim assemble_dim(const std::vector<std::vector<std::vector<double>>>& spectra_per_step, double eps) {
  EffectiveDim out;
  out.lambda_grid = default_lambda_grid();
  for (const auto& spectra : spectra_per_step) {
    out.steps.push_back(effective_dim_step(spectra, eps, out.lambda_grid));
    out.total += out.steps.back().value;
    out.feasibility_warning = out.feasibility_warning || !out.steps.back().feasible;
  }
  return out;
}

// Weighted second moment of vectors, restricted to `support` coordinates.
std::vector<double> second_moment(const std::vector<const std::vector<double>*>& vecs, const std::vector<double>& p,
                                  const std::vector<std::size_t>& support) {
  const std::size_t d = support.size();
  std::vector<double> m(d * d, 0.0);
  for (std::size_t k = 0; k < vecs.size(); ++k) {
    if (p[k] == 0.0) continue;
    const auto& v = *vecs[k];
    for (std::size_t i = 0; i < d; ++i) {
      const double vi = p[k] * v[support[i]];
      if (vi == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) m[i * d + j] += vi * v[support[j]];
    }
  }
  return m;
}

}  // namespace

EffectiveDim effective_bellman_rank(const ContextualMDP& env, const FunctionClass& cls, double eps,
                                    const std::vector<std::vector<double>>& candidates) {
  const std::size_t N = cls.size();
  std::vector<std::vector<std::vector<std::vector<double>>>> occ(N);
  for (MemberId fp = 0; fp < N; ++fp) {
    const Policy roll = Policy::greedy(cls[fp]);
    occ[fp].resize(env.num_contexts());
    for (ContextId c = 0; c < env.num_contexts(); ++c) occ[fp][c] = exact_occupancy(env, roll, c).dist;
  }
  std::vector<std::vector<std::vector<double>>> spectra(env.horizon());
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    for (ContextId c = 0; c < env.num_contexts(); ++c) {
      std::vector<std::size_t> support;
      for (StateId s = 0; s < env.num_states(h); ++s) {
        if (env.context_of(h, s) == c) support.push_back(s);
      }
      std::vector<const std::vector<double>*> vecs(N);
      for (MemberId fp = 0; fp < N; ++fp) vecs[fp] = &occ[fp][c][h];
      for (const auto& p : candidates) {
        spectra[h].push_back(symmetric_spectrum(second_moment(vecs, p, support), support.size()));
      }
    }
  }
  return assemble_dim(spectra, eps);
}

EffectiveDim effective_embedding_dim(const ContextualMDP& env, const FunctionClass& cls, const FeatureMap& features,
                                     double eps, const std::vector<std::vector<double>>& candidates) {
  const std::size_t N = cls.size();
  const std::size_t d = features.dim;
  std::vector<std::size_t> support(d);
  for (std::size_t i = 0; i < d; ++i) support[i] = i;
  std::vector<std::vector<std::vector<double>>> spectra(env.horizon());
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    for (StateId s = 0; s < env.num_states(h); ++s) {
      std::vector<std::vector<double>> phis(N);
      std::vector<const std::vector<double>*> vecs(N);
      for (MemberId f = 0; f < N; ++f) {
        const auto phi = features(h, s, cls[f].greedy(h, s));
        phis[f].assign(phi.begin(), phi.end());
        vecs[f] = &phis[f];
      }
      for (const auto& p : candidates) spectra[h].push_back(symmetric_spectrum(second_moment(vecs, p, support), d));
    }
  }
  return assemble_dim(spectra, eps);
}

}  // namespace ts3
