#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ts3/mdp.hpp"
#include "ts3/qclass.hpp"

namespace ts3 {

enum class Family { tabular, linear_mdp, mixture, slate, block_mdp, cb_hard };

std::string to_string(Family f);
Family family_from_string(const std::string& name);

/// Parameters of a generated instance. Later steps use "local" state ids
/// that are replicated per context, so a step-h state is the pair
/// (context, local) and the global step-h state count is contexts * states.
struct EnvSpec {
  Family family = Family::tabular;
  std::size_t horizon = 3;
  std::size_t contexts = 4;   // step-0 states; components for mixture
  std::size_t states = 4;     // local states per context on steps >= 1
  std::size_t actions = 3;
  std::size_t branching = 2;  // nonzero entries per transition row, 0 = all
  RewardNoise reward_noise = RewardNoise::two_point;
  std::size_t feature_dim = 4;            // linear_mdp
  std::string feature_kind = "dirichlet";  // linear_mdp: dirichlet | rbf
  std::size_t items = 4;                   // slate: K
  std::size_t slate_length = 2;            // slate: L
  std::size_t emissions = 1;               // block_mdp: observations per latent state
  std::size_t class_size = 32;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument outside the desk-scale ranges
  /// (H <= 5, <= 64 states per step, |A| <= 64 or K <= 8, L <= 3, N <= 512).
  void validate() const;
};

/// phi^h(x, a) for every step-h state and action, dim entries each.
struct FeatureMap {
  std::size_t dim = 0;
  std::size_t num_actions = 0;
  std::vector<std::vector<double>> table;  // [h][(s * A + a) * dim + k]

  std::span<const double> operator()(std::size_t h, StateId s, ActionId a) const {
    return {table[h].data() + (s * num_actions + a) * dim, dim};
  }
  /// The per-action vectors at (h, s).
  std::vector<std::vector<double>> vectors(std::size_t h, StateId s) const;
};

/// e_a features.
FeatureMap indicator_features(const ContextualMDP& env);

/// Declared dimensions: d1 bounds the Bellman rank, d2 the embedding
/// dimension. They feed the default optimism coefficient.
struct Dims {
  std::size_t d1 = 1;
  std::size_t d2 = 1;
};

/// Multinomial-logit click model behind the slate family. Alternative K is
/// the no-click outcome.
struct SlateModel {
  std::size_t items = 0;
  std::size_t slate_length = 0;
  std::vector<std::vector<std::size_t>> slates;  // action id -> ordered items
  std::vector<double> position_bias;             // per slot
  // [h][s] -> per action, K+1 choice probabilities (flattened)
  std::vector<std::vector<std::vector<double>>> choice;
  // [h][s] -> reward of each alternative (K+1)
  std::vector<std::vector<std::vector<double>>> item_reward;
  // [h][s] -> per alternative, distribution over step-(h+1) states (flattened)
  std::vector<std::vector<std::vector<double>>> item_next;

  std::span<const double> choice_probs(std::size_t h, StateId s, ActionId a) const {
    return {choice[h][s].data() + a * (items + 1), items + 1};
  }
};

struct LinearModel {
  // mu^h_i over the next-step local states of the current context:
  // [h][i * L + l']. P(x' | x, a) = <phi(x, a), mu(local(x'))> when x' shares
  // the context of x, and 0 otherwise.
  std::vector<std::vector<double>> mu;
  std::vector<std::vector<double>> theta;  // [h][i]
};

struct Instance;

struct BlockInfo {
  std::shared_ptr<const Instance> latent;
  std::vector<std::vector<StateId>> decoder;  // [h][observed state] -> latent state
};

/// A generated environment with a companion class that contains Q* and is
/// closed under the Bellman operator.
struct Instance {
  EnvSpec spec;
  ContextualMDP env;
  FunctionClass cls;
  FeatureMap features;
  Dims dims;
  std::optional<SlateModel> slate;
  std::optional<LinearModel> linear;
  std::shared_ptr<const BlockInfo> block;
};

/// Draws a structured step-h table with entries in [0, vmax(h)].
using TableSampler = std::function<std::vector<double>(std::size_t h, Rng& rng)>;

/// Q* plus Bellman-backup chains of random seeds, topped up with members
/// that differ only on step 0 (their backups already belong to the class).
/// Throws std::runtime_error if the result fails either check.
FunctionClass build_closed_class(const ContextualMDP& env, std::size_t size, const TableSampler& sample, Rng& rng);

Instance make_env(const EnvSpec& spec);
Instance make_block_mdp(const EnvSpec& spec);

/// Ordered slates of `length` distinct items out of `items`, lexicographic.
std::vector<std::vector<std::size_t>> enumerate_slates(std::size_t items, std::size_t length);

/// Q*(x, slate) = sum over alternatives of P(alt | x, slate) * g(x, alt),
/// with g(x, alt) = r(x, alt) + E[V*(x') | x, alt].
std::vector<double> slate_closed_form(const ContextualMDP& env, const SlateModel& model, const QFunction& qstar,
                                      std::size_t h);

}  // namespace ts3
