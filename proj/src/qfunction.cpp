#include "ts3/qfunction.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ts3 {

ActionId argmax_lowest(std::span<const double> values) {
  ActionId best = 0;
  for (ActionId a = 1; a < values.size(); ++a) {
    if (values[a] > values[best]) best = a;
  }
  return best;
}

QFunction::QFunction(std::size_t num_actions, std::vector<std::vector<double>> tables, MemberId id)
    : num_actions_(num_actions), tables_(std::move(tables)), id_(id) {
  if (num_actions_ == 0) throw std::invalid_argument("QFunction: zero actions");
  greedy_.resize(tables_.size());
  max_.resize(tables_.size());
  for (std::size_t h = 0; h < tables_.size(); ++h) {
    const auto& t = tables_[h];
    if (t.size() % num_actions_ != 0) {
      throw std::invalid_argument("QFunction: step " + std::to_string(h + 1) +
                                  " table size is not a multiple of the action count");
    }
    for (double v : t) {
      if (!(v >= -1e-12 && v <= 1.0 + 1e-12)) {
        throw std::invalid_argument("QFunction: value outside [0,1] at step " + std::to_string(h + 1));
      }
    }
    const std::size_t ns = t.size() / num_actions_;
    greedy_[h].resize(ns);
    max_[h].resize(ns);
    for (StateId x = 0; x < ns; ++x) {
      const auto r = row(h, x);
      const ActionId a = argmax_lowest(r);
      greedy_[h][x] = a;
      max_[h][x] = r[a];
    }
  }
}

double QFunction::distance(const QFunction& other) const {
  if (other.tables_.size() != tables_.size()) throw std::invalid_argument("QFunction::distance: horizon mismatch");
  double worst = 0.0;
  for (std::size_t h = 0; h < tables_.size(); ++h) {
    if (tables_[h].size() != other.tables_[h].size()) {
      throw std::invalid_argument("QFunction::distance: shape mismatch");
    }
    for (std::size_t i = 0; i < tables_[h].size(); ++i) {
      worst = std::max(worst, std::abs(tables_[h][i] - other.tables_[h][i]));
    }
  }
  return worst;
}

}  // namespace ts3
