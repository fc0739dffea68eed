#include "ts3/design.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace ts3 {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void check_input(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw std::invalid_argument("design: empty vector set");
  const std::size_t d = vectors.front().size();
  if (d == 0) throw std::invalid_argument("design: zero-dimensional vectors");
  bool nonzero = false;
  for (const auto& v : vectors) {
    if (v.size() != d) throw std::invalid_argument("design: vectors have different dimensions");
    for (double x : v) {
      if (!std::isfinite(x)) throw std::invalid_argument("design: non-finite entry");
      nonzero = nonzero || x != 0.0;
    }
  }
  if (!nonzero) throw std::invalid_argument("design: every vector is zero");
}

MatrixXd as_rows(const std::vector<std::vector<double>>& vectors) {
  MatrixXd X(static_cast<Eigen::Index>(vectors.size()), static_cast<Eigen::Index>(vectors.front().size()));
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    for (std::size_t i = 0; i < vectors[k].size(); ++i) {
      X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = vectors[k][i];
    }
  }
  return X;
}

// Orthonormal basis (columns) of the eigenvectors of M above the cutoff.
MatrixXd span_basis(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  const auto& ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (top > 0.0 && ev(i) > kDesignCutoff * top) keep.push_back(i);
  }
  MatrixXd B(M.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) B.col(static_cast<Eigen::Index>(j)) = es.eigenvectors().col(keep[j]);
  return B;
}

struct Solver {
  MatrixXd Z;  // unique vectors in span coordinates, one per row
  Eigen::Index r = 0;

  MatrixXd sigma(const VectorXd& rho) const {
    MatrixXd S = MatrixXd::Zero(r, r);
    for (Eigen::Index k = 0; k < Z.rows(); ++k) {
      if (rho(k) > 0.0) S.noalias() += rho(k) * Z.row(k).transpose() * Z.row(k);
    }
    return S;
  }

  VectorXd leverages(const MatrixXd& S) const {
    Eigen::LDLT<MatrixXd> ldlt(S);
    const MatrixXd W = ldlt.solve(Z.transpose());
    VectorXd l(Z.rows());
    for (Eigen::Index k = 0; k < Z.rows(); ++k) l(k) = Z.row(k).dot(W.col(k));
    return l;
  }
};

}  // namespace

std::size_t vector_rank(const std::vector<std::vector<double>>& vectors) {
  check_input(vectors);
  const MatrixXd X = as_rows(vectors);
  return static_cast<std::size_t>(span_basis(X.transpose() * X).cols());
}

DesignWeights solve_design(const std::vector<std::vector<double>>& vectors, const DesignOptions& opts) {
  check_input(vectors);
  const std::size_t K = vectors.size();

  // Exact duplicates collapse to one representative.
  std::map<std::vector<double>, std::size_t> seen;
  std::vector<std::size_t> rep_of(K);
  std::vector<std::size_t> reps;
  for (std::size_t k = 0; k < K; ++k) {
    auto [it, inserted] = seen.emplace(vectors[k], reps.size());
    if (inserted) reps.push_back(k);
    rep_of[k] = it->second;
  }
  std::vector<std::vector<double>> unique;
  unique.reserve(reps.size());
  for (std::size_t k : reps) unique.push_back(vectors[k]);

  const MatrixXd X = as_rows(unique);
  const MatrixXd B = span_basis(X.transpose() * X);
  Solver s;
  s.Z = X * B;
  s.r = B.cols();
  const double r = static_cast<double>(s.r);
  const Eigen::Index U = s.Z.rows();

  // Start uniform on the first linearly independent subset.
  VectorXd rho = VectorXd::Zero(U);
  {
    MatrixXd Q(s.r, 0);
    std::vector<Eigen::Index> picked;
    for (Eigen::Index k = 0; k < U && static_cast<Eigen::Index>(picked.size()) < s.r; ++k) {
      VectorXd z = s.Z.row(k).transpose();
      const double norm = z.norm();
      if (norm == 0.0) continue;
      if (Q.cols() > 0) z -= Q * (Q.transpose() * z);
      if (z.norm() > 1e-8 * norm) {
        Q.conservativeResize(Eigen::NoChange, Q.cols() + 1);
        Q.col(Q.cols() - 1) = z / z.norm();
        picked.push_back(k);
      }
    }
    for (Eigen::Index k : picked) rho(k) = 1.0 / static_cast<double>(picked.size());
  }

  DesignWeights out;
  out.rank = static_cast<std::size_t>(s.r);
  auto expand = [&](const VectorXd& w) {
    std::vector<std::size_t> copies(U, 0);
    for (std::size_t k = 0; k < K; ++k) ++copies[rep_of[k]];
    std::vector<double> full(K);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      full[k] = w(static_cast<Eigen::Index>(rep_of[k])) / static_cast<double>(copies[rep_of[k]]);
      total += full[k];
    }
    for (auto& x : full) x /= total;
    return full;
  };

  const double target = r * (1.0 + opts.tol);
  std::size_t it = 0;
  for (;; ++it) {
    const MatrixXd S = s.sigma(rho);
    const VectorXd lev = s.leverages(S);
    if (opts.record_history) out.logdet_history.push_back(Eigen::LDLT<MatrixXd>(S).vectorD().array().log().sum());
    Eigen::Index j = 0;
    for (Eigen::Index k = 1; k < U; ++k) {
      if (lev(k) > lev(j)) j = k;
    }
    out.g = lev(j);
    if (lev(j) <= target) break;
    if (it >= opts.max_iterations) {
      out.weights = expand(rho);
      out.iterations = it;
      throw DesignError("design: no convergence after " + std::to_string(it) + " iterations (g = " +
                            std::to_string(out.g) + ", rank " + std::to_string(s.r) + ")",
                        out);
    }
    // Least useful support point, for an away step.
    Eigen::Index i = -1;
    for (Eigen::Index k = 0; k < U; ++k) {
      if (rho(k) > 0.0 && (i < 0 || lev(k) < lev(i))) i = k;
    }
    const double toward_gap = lev(j) - r;
    const double away_gap = r - lev(i);
    if (toward_gap >= away_gap || rho(i) >= 1.0) {
      const double tau = (lev(j) - r) / (r * (lev(j) - 1.0));
      rho *= (1.0 - tau);
      rho(j) += tau;
    } else {
      const double floor = -rho(i) / (1.0 - rho(i));
      double tau = floor;
      if (lev(i) > 1.0) tau = std::max(floor, (lev(i) - r) / (r * (lev(i) - 1.0)));
      rho *= (1.0 - tau);
      rho(i) += tau;
      if (tau == floor) rho(i) = 0.0;
    }
    for (Eigen::Index k = 0; k < U; ++k) rho(k) = std::max(rho(k), 0.0);
  }
  out.weights = expand(rho);
  out.iterations = it;
  return out;
}

double leverage(std::span<const double> v, std::span<const double> weights,
                const std::vector<std::vector<double>>& vectors) {
  check_input(vectors);
  const auto d = static_cast<Eigen::Index>(vectors.front().size());
  if (weights.size() != vectors.size()) throw std::invalid_argument("leverage: weight count mismatch");
  if (static_cast<Eigen::Index>(v.size()) != d) throw std::invalid_argument("leverage: dimension mismatch");
  MatrixXd S = MatrixXd::Zero(d, d);
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    const Eigen::Map<const VectorXd> x(vectors[k].data(), d);
    S.noalias() += weights[k] * x * x.transpose();
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
  const double top = es.eigenvalues().maxCoeff();
  if (!(top > 0.0)) throw std::domain_error("leverage: design matrix is zero");
  const Eigen::Map<const VectorXd> vv(v.data(), d);
  double value = 0.0;
  VectorXd proj = VectorXd::Zero(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double lam = es.eigenvalues()(i);
    if (lam <= kDesignCutoff * top) continue;
    const double c = es.eigenvectors().col(i).dot(vv);
    value += c * c / lam;
    proj += c * es.eigenvectors().col(i);
  }
  if ((vv - proj).norm() > 1e-8 * std::max(1.0, vv.norm())) {
    throw std::domain_error("leverage: vector lies outside the span of the design support");
  }
  return value;
}

}  // namespace ts3
