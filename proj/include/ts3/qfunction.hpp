#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ts3 {

using StateId = std::size_t;
using ActionId = std::size_t;
using ContextId = std::size_t;
using MemberId = std::size_t;

/// Per-step value tables f^h(x, a) in [0, 1]. Step h (0-based) holds a
/// row-major num_states(h) x num_actions table. The value after the last
/// step is identically zero. Greedy actions and maxima are cached at
/// construction; ties go to the lowest action id.
class QFunction {
 public:
  QFunction() = default;
  QFunction(std::size_t num_actions, std::vector<std::vector<double>> tables, MemberId id = 0);

  std::size_t horizon() const { return tables_.size(); }
  std::size_t num_actions() const { return num_actions_; }
  std::size_t num_states(std::size_t h) const { return tables_[h].size() / num_actions_; }
  MemberId id() const { return id_; }
  void set_id(MemberId id) { id_ = id; }

  double operator()(std::size_t h, StateId x, ActionId a) const {
    return tables_[h][x * num_actions_ + a];
  }
  std::span<const double> row(std::size_t h, StateId x) const {
    return {tables_[h].data() + x * num_actions_, num_actions_};
  }
  const std::vector<double>& table(std::size_t h) const { return tables_[h]; }
  const std::vector<std::vector<double>>& tables() const { return tables_; }

  ActionId greedy(std::size_t h, StateId x) const { return greedy_[h][x]; }
  /// max_a f^h(x, a); zero past the horizon.
  double max_value(std::size_t h, StateId x) const {
    return h < tables_.size() ? max_[h][x] : 0.0;
  }

  /// Sup-norm distance over all steps; shapes must agree.
  double distance(const QFunction& other) const;
  bool same_tables(const QFunction& other) const { return tables_ == other.tables_; }

 private:
  std::size_t num_actions_ = 0;
  std::vector<std::vector<double>> tables_;
  std::vector<std::vector<ActionId>> greedy_;
  std::vector<std::vector<double>> max_;
  MemberId id_ = 0;
};

/// Lowest-index maximizer.
ActionId argmax_lowest(std::span<const double> values);

}  // namespace ts3
