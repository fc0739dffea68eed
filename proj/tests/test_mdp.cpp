#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "support.hpp"
#include "ts3/mdp.hpp"

using namespace ts3;
using testsupport::random_env;

namespace {

Policy explicit_policy(std::vector<std::vector<std::vector<double>>> p) { return Policy(ExplicitPolicy{std::move(p)}); }

// Policy that always plays action `a`.
Policy constant_policy(const ContextualMDP& env, ActionId a) {
  GreedyPolicy g;
  for (std::size_t h = 0; h < env.horizon(); ++h) g.action.emplace_back(env.num_states(h), a);
  return Policy(g);
}

double chi2_critical(std::size_t dof, double p) {
  return boost::math::quantile(boost::math::complement(boost::math::chi_squared(static_cast<double>(dof)), p));
}

}  // namespace

TEST_CASE("rng streams are reproducible and independent of other streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng root(7);
  Rng s1 = root.substream("f", 3);
  Rng burn = root.substream("g", 3);
  for (int i = 0; i < 1000; ++i) burn.next_u64();
  Rng s2 = root.substream("f", 3);
  for (int i = 0; i < 50; ++i) CHECK(s1.uniform() == s2.uniform());
  CHECK(root.substream("f", 3).next_u64() != root.substream("f", 4).next_u64());
  CHECK(root.substream("f", 3).next_u64() != root.substream("fprime", 3).next_u64());

  Rng c(1);
  const std::vector<double> w{1.0, 0.0, 3.0};
  std::vector<int> counts(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[c.categorical(w)]++;
  CHECK(counts[1] == 0);
  CHECK(std::abs(counts[2] / double(n) - 0.75) < 5 * std::sqrt(0.75 * 0.25 / n));
}

TEST_CASE("single-state horizon-one env with unit reward") {
  auto env = testsupport::single_context_env(
      1, 1, 1, [](std::size_t, StateId, ActionId) { return 1.0; }, nullptr);
  Rng rng(3);
  const auto ep = rollout(env, Policy::uniform(env), rng);
  REQUIRE(ep.steps.size() == 1);
  CHECK(ep.steps[0].reward == 1.0);
  CHECK(ep.steps[0].next_state == kTerminal);
  CHECK(ep.total_reward() == 1.0);
}

TEST_CASE("two-state env: step-2 frequencies match the occupancy") {
  // One context, 2 states on step 2, known kernel.
  auto env = testsupport::single_context_env(
      2, 2, 2, [](std::size_t, StateId, ActionId a) { return 0.1 * a; },
      [](std::size_t, StateId, ActionId a) { return a == 0 ? std::vector<double>{0.3, 0.7} : std::vector<double>{0.9, 0.1}; });
  const auto pi = explicit_policy({{{0.25, 0.75}}, {{0.5, 0.5}, {0.5, 0.5}}});
  const auto occ = exact_occupancy(env, pi, 0);
  const double p0 = 0.25 * 0.3 + 0.75 * 0.9;  // 0.75
  CHECK(occ.dist[1][0] == doctest::Approx(p0).epsilon(1e-14));
  const int n = 100000;
  int hits = 0;
  Rng rng(11);
  for (int i = 0; i < n; ++i) hits += rollout_from(env, pi, 0, rng).steps[1].state == 0;
  CHECK(std::abs(hits / double(n) - p0) <= 5 * std::sqrt(p0 * (1 - p0) / n));
}

TEST_CASE("hybrid policy switches components at the switch step") {
  auto env = random_env(5, 2, 3, 4, 3);
  const auto pa = constant_policy(env, 1);
  const auto pb = constant_policy(env, 3);
  const auto hyb = Policy::hybrid(pa, pb, 1);  // 0-based: step 1 is the second step
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const auto ep = rollout(env, hyb, rng);
    CHECK(ep.steps[0].action == 1);
    CHECK(ep.steps[1].action == 3);
    CHECK(ep.steps[2].action == 3);
    CHECK(ep.steps[0].policy_tag == 0);
    CHECK(ep.steps[1].policy_tag == 1);
  }
  CHECK(hyb.tag(0) == 0);
  CHECK(hyb.tag(2) == 1);
}

TEST_CASE("hybrid of a policy with itself is distributed like the policy") {
  auto env = random_env(17, 1, 3, 2, 3);
  Rng prng(4);
  const auto table = testsupport::random_policy_table(env, prng);
  const auto pure = explicit_policy(table);
  const auto hyb = Policy::hybrid(pure, pure, 1);
  // Chi-square over full trajectories (a1, s2, a2, s3, a3).
  auto key = [](const Episode& e) {
    std::string k;
    for (const auto& s : e.steps) k += std::to_string(s.state) + ":" + std::to_string(s.action) + ",";
    return k;
  };
  const int n = 10000;
  std::map<std::string, double> expected;
  {
    // Exact trajectory probabilities by enumeration.
    std::function<void(std::size_t, StateId, double, std::string)> go = [&](std::size_t h, StateId s, double p,
                                                                           std::string k) {
      for (ActionId a = 0; a < env.num_actions(); ++a) {
        const double pa = p * table[h][s][a];
        const std::string kk = k + std::to_string(s) + ":" + std::to_string(a) + ",";
        if (h + 1 == env.horizon()) {
          expected[kk] += pa;
          continue;
        }
        const auto row = env.transition(h, s, a);
        for (StateId x = 0; x < row.size(); ++x) {
          if (row[x] > 0) go(h + 1, x, pa * row[x], kk);
        }
      }
    };
    go(0, 0, 1.0, "");
  }
  std::map<std::string, int> counts;
  Rng rng(21);
  for (int i = 0; i < n; ++i) counts[key(rollout(env, hyb, rng))]++;
  double stat = 0.0;
  for (const auto& [k, p] : expected) {
    const double e = p * n;
    const double o = counts.count(k) ? counts[k] : 0;
    stat += (o - e) * (o - e) / e;
  }
  CHECK(stat < chi2_critical(expected.size() - 1, 0.001));
}

TEST_CASE("occupancy of a deterministic chain is a point mass path") {
  const std::size_t H = 4, n = 3;
  auto env = testsupport::single_context_env(
      n, 1, H, [](std::size_t, StateId, ActionId) { return 0.0; },
      [&](std::size_t h, StateId, ActionId) {
        std::vector<double> row(n, 0.0);
        row[(h + 1) % n] = 1.0;
        return row;
      });
  const auto occ = exact_occupancy(env, Policy::uniform(env), 0);
  for (std::size_t h = 1; h < H; ++h) {
    for (StateId s = 0; s < n; ++s) CHECK(occ.dist[h][s] == (s == h % n ? 1.0 : 0.0));
  }
}

TEST_CASE("uniform policy with doubly stochastic kernel gives uniform occupancy") {
  auto env = testsupport::single_context_env(
      2, 2, 4, [](std::size_t, StateId, ActionId) { return 0.0; },
      [](std::size_t h, StateId s, ActionId a) {
        if (h == 0) return std::vector<double>{0.5, 0.5};
        return (s + a) % 2 == 0 ? std::vector<double>{0.8, 0.2} : std::vector<double>{0.2, 0.8};
      });
  const auto occ = exact_occupancy(env, Policy::uniform(env), 0);
  for (std::size_t h = 1; h < 4; ++h) {
    CHECK(occ.dist[h][0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(occ.dist[h][1] == doctest::Approx(0.5).epsilon(1e-14));
  }
}

TEST_CASE("occupancy matches forward oracle and Monte Carlo on a random env") {
  auto env = random_env(23, 2, 2, 3, 3);  // 4 states on later steps
  Rng prng(8);
  const auto table = testsupport::random_policy_table(env, prng);
  const auto pi = explicit_policy(table);
  for (ContextId c = 0; c < 2; ++c) {
    const auto occ = exact_occupancy(env, pi, c);
    const auto oracle = testsupport::forward_occupancy(env, table, c);
    for (std::size_t h = 0; h < env.horizon(); ++h) {
      for (StateId s = 0; s < env.num_states(h); ++s) CHECK(std::abs(occ.dist[h][s] - oracle[h][s]) <= 1e-14);
    }
    // Composition: sum_x d^h(x) P(x'|x, pi) = d^{h+1}(x').
    for (std::size_t h = 0; h + 1 < env.horizon(); ++h) {
      std::vector<double> push(env.num_states(h + 1), 0.0);
      for (StateId s = 0; s < env.num_states(h); ++s) {
        for (ActionId a = 0; a < env.num_actions(); ++a) {
          const auto row = env.transition(h, s, a);
          for (StateId x = 0; x < row.size(); ++x) push[x] += occ.dist[h][s] * table[h][s][a] * row[x];
        }
      }
      for (StateId x = 0; x < push.size(); ++x) CHECK(std::abs(push[x] - occ.dist[h + 1][x]) <= 1e-12);
    }
    const int n = 100000;
    std::vector<std::vector<int>> counts(env.horizon());
    for (std::size_t h = 0; h < env.horizon(); ++h) counts[h].assign(env.num_states(h), 0);
    Rng rng(100 + c);
    for (int i = 0; i < n; ++i) {
      const auto ep = rollout_from(env, pi, c, rng);
      for (std::size_t h = 0; h < env.horizon(); ++h) counts[h][ep.steps[h].state]++;
    }
    for (std::size_t h = 1; h < env.horizon(); ++h) {
      for (StateId s = 0; s < env.num_states(h); ++s) {
        const double p = occ.dist[h][s];
        CHECK(std::abs(counts[h][s] / double(n) - p) <= 5 * std::sqrt(p * (1 - p) / n) + 1e-12);
      }
    }
  }
}

TEST_CASE("policy values") {
  SUBCASE("zero-reward env") {
    auto env = testsupport::single_context_env(
        3, 2, 3, [](std::size_t, StateId, ActionId) { return 0.0; },
        [](std::size_t, StateId, ActionId) { return std::vector<double>{0.2, 0.3, 0.5}; });
    Rng prng(2);
    CHECK(policy_value(env, Policy::uniform(env), 0) == 0.0);
    CHECK(policy_value(env, explicit_policy(testsupport::random_policy_table(env, prng)), 0) == 0.0);
  }
  SUBCASE("optimal value equals max of Q* at the context") {
    auto env = random_env(31, 3, 3, 3, 3);
    const auto q = value_iteration(env);
    const auto v = policy_values(env, Policy::greedy(q));
    for (ContextId c = 0; c < 3; ++c) CHECK(std::abs(v[c] - q.max_value(0, c)) <= 1e-12);
  }
  SUBCASE("matches path enumeration and a Monte Carlo mean") {
    auto env = random_env(37, 1, 3, 2, 3, RewardNoise::two_point);
    Rng prng(3);
    const auto table = testsupport::random_policy_table(env, prng);
    const auto pi = explicit_policy(table);
    const double exact = policy_value(env, pi, 0);
    CHECK(std::abs(exact - testsupport::enumerate_value(env, table, 0)) <= 1e-14);
    const int n = 1000000;
    double sum = 0.0, sq = 0.0;
    Rng rng(5);
    for (int i = 0; i < n; ++i) {
      const double r = rollout_from(env, pi, 0, rng).total_reward();
      sum += r;
      sq += r * r;
    }
    const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
    CHECK(std::abs(mean - exact) <= 5 * sd / std::sqrt(double(n)));
  }
}

TEST_CASE("value iteration") {
  SUBCASE("horizon one gives the mean reward") {
    auto env = random_env(41, 3, 1, 4, 1);
    const auto q = value_iteration(env);
    for (StateId s = 0; s < 3; ++s) {
      for (ActionId a = 0; a < 4; ++a) CHECK(q(0, s, a) == env.reward_mean(0, s, a));
    }
  }
  SUBCASE("deterministic two-step chain with terminal reward") {
    // Action 1 at step 1 moves to state 1; only (state 1, action 1) at step 2 pays.
    auto env = testsupport::single_context_env(
        2, 2, 2, [](std::size_t h, StateId s, ActionId a) { return h == 1 && s == 1 && a == 1 ? 1.0 : 0.0; },
        [](std::size_t, StateId, ActionId a) { return a == 1 ? std::vector<double>{0, 1} : std::vector<double>{1, 0}; });
    const auto q = value_iteration(env);
    CHECK(q(0, 0, 1) == 1.0);
    CHECK(q(0, 0, 0) == 0.0);
    CHECK(q(1, 1, 1) == 1.0);
    CHECK(q(1, 1, 0) == 0.0);
    CHECK(q(1, 0, 0) == 0.0);
    CHECK(q(1, 0, 1) == 0.0);
  }
  SUBCASE("fixed point residual on a random env") {
    auto env = random_env(43, 1, 4, 3, 4);
    const auto q = value_iteration(env);
    double worst = 0.0;
    for (std::size_t h = 0; h < env.horizon(); ++h) {
      for (StateId s = 0; s < env.num_states(h); ++s) {
        for (ActionId a = 0; a < 3; ++a) worst = std::max(worst, std::abs(q(h, s, a) - testsupport::brute_backup(env, q, h, s, a)));
      }
    }
    CHECK(worst <= 1e-12);
  }
  SUBCASE("greedy on Q* beats random policies") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto env = random_env(50 + seed, 2, 3, 3, 3);
      const auto vstar = policy_values(env, Policy::greedy(value_iteration(env)));
      Rng prng(seed);
      for (int i = 0; i < 50; ++i) {
        const auto v = policy_values(env, explicit_policy(testsupport::random_policy_table(env, prng)));
        for (ContextId c = 0; c < 2; ++c) CHECK(vstar[c] >= v[c] - 1e-12);
      }
    }
  }
}

TEST_CASE("rollout rewards and returns stay in the unit interval") {
  for (auto noise : {RewardNoise::none, RewardNoise::uniform, RewardNoise::two_point}) {
    auto env = random_env(61, 2, 3, 3, 4, noise);
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
      const auto ep = rollout(env, Policy::uniform(env), rng);
      for (const auto& s : ep.steps) CHECK((s.reward >= 0.0 && s.reward <= 1.0));
      CHECK(ep.total_reward() <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("reward noise keeps the tabulated mean") {
  auto env = random_env(63, 1, 1, 1, 1, RewardNoise::two_point);
  Rng rng(2);
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += env.sample_reward(0, 0, 0, rng);
  const double m = env.reward_mean(0, 0, 0);
  CHECK(std::abs(sum / n - m) <= 5 * std::sqrt(m * (1 - m) / n));
}

TEST_CASE("undefined policy state is a hard error naming the state") {
  auto env = random_env(67, 1, 2, 2, 2);
  ExplicitPolicy p;
  p.probs = {{{1.0, 0.0}}, {{0.5, 0.5}, {}}};
  const Policy pi(p);
  try {
    (void)pi.action_probs(1, 1, 2);
    FAIL("expected an error");
  } catch (const std::out_of_range& e) {
    const std::string msg = e.what();
    CHECK(msg.find("h=2") != std::string::npos);
    CHECK(msg.find("state=1") != std::string::npos);
  }
}

TEST_CASE("constructor rejects broken tables") {
  auto make = [](double p_leave) {
    std::vector<StepTables> steps(2);
    steps[0] = {2, 4, {0, 1}, {0.1, 0.1, 0.1, 0.1}, {}, {}, {}};
    for (StateId s = 0; s < 2; ++s) {
      for (ActionId a = 0; a < 2; ++a) {
        std::vector<double> row(4, 0.0);
        row[2 * s] = 1.0 - p_leave;
        row[2 * (1 - s)] = p_leave;
        steps[0].transition.insert(steps[0].transition.end(), row.begin(), row.end());
      }
    }
    steps[1] = {4, 0, {0, 0, 1, 1}, std::vector<double>(8, 0.2), {}, {}, {}};
    return ContextualMDP(2, {0.5, 0.5}, steps, RewardNoise::none);
  };
  CHECK_NOTHROW(make(0.0));
  CHECK_THROWS_AS(make(0.1), std::invalid_argument);
  CHECK_THROWS_AS(ContextualMDP(2, {0.7, 0.7}, {}, RewardNoise::none), std::invalid_argument);
  // Rewards summing past 1 along a path.
  auto env_over = [] {
    return testsupport::single_context_env(
        1, 1, 2, [](std::size_t, StateId, ActionId) { return 0.6; },
        [](std::size_t, StateId, ActionId) { return std::vector<double>{1.0}; });
  };
  CHECK_THROWS_AS(env_over(), std::invalid_argument);
}
