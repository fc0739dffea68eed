#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace ts3 {

struct DesignOptions {
  double tol = 0.01;  // stop once max leverage <= rank * (1 + tol)
  std::size_t max_iterations = 20000;
  bool record_history = false;
};

struct DesignWeights {
  std::vector<double> weights;  // one per input vector
  double g = 0.0;               // max leverage
  std::size_t rank = 0;
  std::size_t iterations = 0;
  std::vector<double> logdet_history;  // log det of the design matrix in span coordinates
};

class DesignError : public std::runtime_error {
 public:
  DesignError(const std::string& what, DesignWeights best) : std::runtime_error(what), best_(std::move(best)) {}
  const DesignWeights& best() const { return best_; }

 private:
  DesignWeights best_;
};

/// Relative eigenvalue cutoff for pseudo-inverses and ranks.
inline constexpr double kDesignCutoff = 1e-10;

/// Approximate G-optimal design by Frank-Wolfe with away steps on
/// log det Sigma(rho), which has the same optimizer. Exact duplicates share
/// their weight evenly. Throws std::invalid_argument on an empty, ragged or
/// all-zero input and DesignError when the iteration cap is hit.
DesignWeights solve_design(const std::vector<std::vector<double>>& vectors, const DesignOptions& opts = {});

/// v^T Sigma(rho)^+ v. Throws std::domain_error when v leaves the span of
/// the weighted support.
double leverage(std::span<const double> v, std::span<const double> weights,
                const std::vector<std::vector<double>>& vectors);

/// Rank of the vector set at the design cutoff.
std::size_t vector_rank(const std::vector<std::vector<double>>& vectors);

}  // namespace ts3
