#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ts3/envs.hpp"
#include "ts3/mdp.hpp"
#include "ts3/qclass.hpp"

namespace ts3 {

/// Relative singular-value cutoff for numerical ranks.
inline constexpr double kRankCutoff = 1e-8;

/// Rank of a row-major rows x cols matrix at kRankCutoff * sigma_max.
std::size_t numerical_rank(const std::vector<double>& m, std::size_t rows, std::size_t cols);

enum class ErrorKind {
  V,  // roll in with pi_f', evaluate a = pi_f(x)
  Q,  // roll in with pi_f', evaluate a = pi_f'(x)
};

/// M[f][f'] = E_{x ~ pi_f' | x1} E^h(f, f; x, a). With no context the entry is
/// also averaged over x1 ~ D.
struct BellmanMatrix {
  ErrorKind kind = ErrorKind::V;
  std::size_t h = 0;
  std::optional<ContextId> context;
  std::size_t n = 0;
  std::vector<double> entries;  // row-major n x n
  std::size_t rank = 0;

  double operator()(MemberId f, MemberId fprime) const { return entries[f * n + fprime]; }
};

BellmanMatrix bellman_error_matrix(const ContextualMDP& env, const FunctionClass& cls, ErrorKind kind, std::size_t h,
                                   std::optional<ContextId> context);

/// V-type: max rank over the per-(h, x1) matrices. Q-type: max over h of
/// the D-averaged matrix.
struct BellmanRank {
  ErrorKind kind = ErrorKind::V;
  std::size_t rank = 0;
  std::vector<BellmanMatrix> cells;
};

BellmanRank bellman_rank(const ContextualMDP& env, const FunctionClass& cls, ErrorKind kind);

/// Occupancies and greedy-action residuals of every member, the tabular
/// factors of the averaged Bellman error:
///   E_{x ~ pi_f' | x1} E^h(f, f; x, pi_f(x)) = <psi^h(f', x1), u^h(f)>.
struct Factorization {
  // psi[f'][x1][h][s] over all step-h states
  std::vector<std::vector<std::vector<std::vector<double>>>> psi;
  // u[f][h][s] = E^h(f, f; s, pi_f(s))
  std::vector<std::vector<std::vector<double>>> u;
  double B1 = 0.0;  // max over (f, h, x1) of ||u restricted to x1's states||_2
};

Factorization factorize(const ContextualMDP& env, const FunctionClass& cls);

/// Max over (f, f', x1, h) of |<psi, u> - direct|, the direct side being a
/// backward recursion that never forms occupancies.
double factorization_residual(const ContextualMDP& env, const FunctionClass& cls, const Factorization& fac);

struct DecompositionCheck {
  double regret = 0.0;          // V*(x1) - R(pi_f, x1)
  double bellman_sum = 0.0;     // sum_h E_{pi_f | x1} E^h(f, f; x, pi_f(x))
  double optimism_gap = 0.0;    // f(x1) - V*(x1)
  double residual = 0.0;        // |regret - (bellman_sum - optimism_gap)|
};

DecompositionCheck verify_regret_decomposition(const ContextualMDP& env, const QFunction& f, ContextId x1);

struct EmbeddingFit {
  double max_error = 0.0;  // max |<w, phi(x, a)> - E^h(f, f; x, a)|
  double B2 = 0.0;         // max fitted ||w||_2
};

/// Per (f, h, x), least-squares fit of the action residual profile onto the
/// declared features.
EmbeddingFit embedding_residual(const ContextualMDP& env, const FunctionClass& cls, const FeatureMap& features);

// ---------------------------------------------------------------- effective dimensions

/// 32 geometric points on [1e-8, 1e2].
std::vector<double> default_lambda_grid();

/// K(lambda) = max over spectra of sum_i e_i / (e_i + lambda).
double trace_ratio(const std::vector<std::vector<double>>& spectra, double lambda);

struct EffectiveDimStep {
  double value = 0.0;
  double lambda = 0.0;        // lambda attaining the reported value
  bool feasible = true;       // false: nothing on the grid met lambda K <= eps^2
  std::vector<double> grid_K;  // K on the grid
};

/// inf { K(lambda) : lambda K(lambda) <= eps^2 }. lambda K is increasing, so
/// the largest feasible grid point is refined by bisection. eps = 0 returns
/// the lambda -> 0+ limit, the largest numerical rank.
EffectiveDimStep effective_dim_step(const std::vector<std::vector<double>>& spectra, double eps,
                                    const std::vector<double>& grid);

struct EffectiveDim {
  std::vector<double> lambda_grid;
  std::vector<EffectiveDimStep> steps;
  double total = 0.0;
  bool lower_bound = true;  // sup over p taken over a finite candidate set
  bool feasibility_warning = false;
};

/// Uniform over the class, every point mass, then `random_draws` flat
/// Dirichlet draws.
std::vector<std::vector<double>> candidate_distributions(std::size_t n, std::size_t random_draws, std::uint64_t seed);

/// br(eps) from Sigma^h(p, x1) = E_{f' ~ p} psi^h(f', x1) psi^h(f', x1)^T.
EffectiveDim effective_bellman_rank(const ContextualMDP& env, const FunctionClass& cls, double eps,
                                    const std::vector<std::vector<double>>& candidates);

/// dc(eps) from Sigma~^h(p, x) = E_{f ~ p} phi(x, pi_f(x)) phi(x, pi_f(x))^T.
EffectiveDim effective_embedding_dim(const ContextualMDP& env, const FunctionClass& cls, const FeatureMap& features,
                                     double eps, const std::vector<std::vector<double>>& candidates);

/// Eigenvalues of a symmetric d x d row-major matrix, clamped at 0.
std::vector<double> symmetric_spectrum(const std::vector<double>& m, std::size_t d);

}  // namespace ts3
