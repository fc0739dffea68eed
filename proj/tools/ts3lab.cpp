// ts3lab: run experiments, compute structural metrics, solve designs and
// check (env, class) pairs.

#include <filesystem>
#include <iostream>
#include <limits>
#include <string>

#include "CLI11.hpp"
#include "ts3/agents.hpp"
#include "ts3/design.hpp"
#include "ts3/harness.hpp"
#include "ts3/metrics.hpp"
#include "ts3/serialize.hpp"

namespace fs = std::filesystem;
using ts3::Json;

namespace {

void emit(const Json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
  } else {
    ts3::write_json_file(out, j);
  }
}

struct Pair {
  ts3::LoadedEnv env;
  ts3::FunctionClass cls;
};

Pair load_pair(const std::string& env_path, const std::string& class_path) {
  auto env = ts3::env_from_json(ts3::read_json_file(env_path));
  auto cls = ts3::class_from_json(ts3::read_json_file(class_path));
  if (cls.horizon() != env.env.horizon() || cls.num_actions() != env.env.num_actions()) {
    throw std::invalid_argument("class shape does not match the environment");
  }
  for (std::size_t h = 0; h < env.env.horizon(); ++h) {
    if (cls[0].num_states(h) != env.env.num_states(h)) {
      throw std::invalid_argument("class state count does not match the environment at step " + std::to_string(h + 1));
    }
  }
  return Pair{std::move(env), std::move(cls)};
}

ts3::FeatureMap features_of(const ts3::LoadedEnv& e) {
  return e.features ? *e.features : ts3::indicator_features(e.env);
}

int cmd_run(const std::string& config, std::size_t workers, std::size_t dump_k, const std::string& output) {
  auto cfg = ts3::load_config(config);
  if (workers > 0) cfg.workers = workers;
  if (dump_k > 0) cfg.dump_top_k = dump_k;
  if (!output.empty()) cfg.output = output;
  const Json summary = ts3::run_experiment(cfg);
  std::cout << (fs::path(cfg.output) / "summary.json").string() << '\n';
  for (const auto& v : summary.at("verdicts")) std::cout << v.dump() << '\n';
  for (const auto& f : summary.at("failures")) std::cerr << "failure: " << f.dump() << '\n';
  return summary.at("pass").get<bool>() ? 0 : 1;
}

int cmd_metrics(const std::string& env_path, const std::string& class_path, double eps, std::size_t draws,
                const std::string& out) {
  const auto p = load_pair(env_path, class_path);
  const auto& env = p.env.env;
  const auto features = features_of(p.env);
  const auto candidates = ts3::candidate_distributions(p.cls.size(), draws, 0);
  const auto br = ts3::effective_bellman_rank(env, p.cls, eps, candidates);
  const auto dc = ts3::effective_embedding_dim(env, p.cls, features, eps, candidates);
  const auto fac = ts3::factorize(env, p.cls);
  const auto fit = ts3::embedding_residual(env, p.cls, features);
  double decomposition = 0.0;
  for (const auto& f : p.cls.members()) {
    for (ts3::ContextId c = 0; c < env.num_contexts(); ++c) {
      decomposition = std::max(decomposition, ts3::verify_regret_decomposition(env, f, c).residual);
    }
  }
  auto dim_json = [](const ts3::EffectiveDim& d) {
    Json steps = Json::array();
    for (const auto& s : d.steps) steps.push_back({{"value", s.value}, {"lambda", s.lambda}, {"feasible", s.feasible}});
    return Json{{"total", d.total}, {"steps", steps}, {"lower_bound", d.lower_bound},
                {"feasibility_warning", d.feasibility_warning}};
  };
  Json report;
  report["eps"] = eps;
  report["br"] = dim_json(br);
  report["dc"] = dim_json(dc);
  report["ranks"] = {{"V", ts3::bellman_rank(env, p.cls, ts3::ErrorKind::V).rank},
                     {"Q", ts3::bellman_rank(env, p.cls, ts3::ErrorKind::Q).rank}};
  report["B1"] = fac.B1;
  report["B2"] = fit.B2;
  report["embedding_residual"] = fit.max_error;
  report["identity_residuals"] = {{"factorization", ts3::factorization_residual(env, p.cls, fac)},
                                  {"regret_decomposition", decomposition}};
  emit(report, out);
  return 0;
}

int cmd_design(const std::string& path, double tol, const std::string& out) {
  const Json in = ts3::read_json_file(path);
  const Json& vj = in.is_object() ? in.at("vectors") : in;
  const auto vectors = vj.get<std::vector<std::vector<double>>>();
  ts3::DesignOptions opts;
  opts.tol = tol;
  const auto d = ts3::solve_design(vectors, opts);
  emit(Json{{"weights", d.weights}, {"g", d.g}, {"rank", d.rank}, {"iterations", d.iterations}, {"tol", tol}}, out);
  return 0;
}

int cmd_check(const std::string& env_path, const std::string& class_path, const std::string& out) {
  const auto p = load_pair(env_path, class_path);
  const auto& env = p.env.env;
  Json report;
  Json failures = Json::array();
  const auto real = ts3::check_realizability(env, p.cls);
  report["realizability"] = {{"pass", real.pass}, {"worst", real.worst}, {"closest_member", real.member.value_or(0)}};
  if (!real.pass) failures.push_back({{"check", "realizability"}, {"worst", real.worst}});
  const auto comp = ts3::check_completeness(env, p.cls);
  report["completeness"] = {{"pass", comp.pass}, {"worst", comp.worst}};
  if (!comp.pass) {
    failures.push_back({{"check", "completeness"}, {"worst", comp.worst}, {"f", comp.member.value_or(0)},
                        {"h", comp.step.value_or(0) + 1}});
  }
  double decomposition = 0.0;
  for (const auto& f : p.cls.members()) {
    for (ts3::ContextId c = 0; c < env.num_contexts(); ++c) {
      decomposition = std::max(decomposition, ts3::verify_regret_decomposition(env, f, c).residual);
    }
  }
  report["regret_decomposition"] = {{"pass", decomposition <= 1e-9}, {"worst", decomposition}};
  if (decomposition > 1e-9) failures.push_back({{"check", "regret_decomposition"}, {"worst", decomposition}});
  const auto fit = ts3::embedding_residual(env, p.cls, features_of(p.env));
  report["embedding_residual"] = {{"pass", fit.max_error <= 1e-9}, {"worst", fit.max_error}, {"B2", fit.B2}};
  if (fit.max_error > 1e-9) failures.push_back({{"check", "embedding_residual"}, {"worst", fit.max_error}});
  report["failures"] = failures;
  report["pass"] = failures.empty();
  emit(report, out);
  return failures.empty() ? 0 : 1;
}

int cmd_generate(const std::string& config, const std::string& family, std::int64_t seed, const std::string& dir) {
  ts3::EnvSpec spec;
  if (!config.empty()) {
    const Json j = ts3::load_config_json(config);
    spec = ts3::env_spec_from_json(j.contains("env") ? j.at("env") : j);
  }
  if (!family.empty()) spec.family = ts3::family_from_string(family);
  if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
  const auto inst = ts3::make_env(spec);
  fs::create_directories(dir);
  ts3::write_json_file((fs::path(dir) / "env.json").string(), ts3::env_to_json(inst.env, &inst.features, &inst.dims));
  ts3::write_json_file((fs::path(dir) / "class.json").string(), ts3::class_to_json(inst.cls));
  std::cout << (fs::path(dir) / "env.json").string() << '\n' << (fs::path(dir) / "class.json").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Posterior-sampling RL laboratory over finite value-function classes"};
  app.require_subcommand(1);

  std::string config, env_path, class_path, vectors, out, output, family, dir = "generated";
  std::size_t workers = 0, dump_k = 0, draws = 64;
  double tol = 0.01, eps = 0.0;
  std::int64_t seed = -1;

  auto* run = app.add_subcommand("run", "Run an experiment config (TOML or JSON)");
  run->add_option("--config", config, "Config path")->required()->check(CLI::ExistingFile);
  run->add_option("--workers", workers, "Parallel runs");
  run->add_option("--output", output, "Override the output directory");
  auto* dump = run->add_flag("--dump-posteriors", "Write top-5 posterior weights per episode (JSON lines)");
  run->add_option("--dump-top-k", dump_k, "Top-k for --dump-posteriors");

  auto* metrics = app.add_subcommand("metrics", "Structural metrics of an env + class pair");
  metrics->add_option("--env", env_path, "mdp/1 JSON")->required()->check(CLI::ExistingFile);
  metrics->add_option("--class", class_path, "class/1 JSON")->required()->check(CLI::ExistingFile);
  metrics->add_option("--eps", eps, "Epsilon for br and dc")->check(CLI::NonNegativeNumber);
  metrics->add_option("--random-candidates", draws, "Random mixtures in the candidate set");
  metrics->add_option("--out", out, "Write the report here instead of stdout");

  auto* design = app.add_subcommand("design", "G-optimal design over a vector set");
  design->add_option("--vectors", vectors, "JSON array of vectors")->required()->check(CLI::ExistingFile);
  design->add_option("--tol", tol, "Stop at max leverage <= rank * (1 + tol)")->check(CLI::PositiveNumber);
  design->add_option("--out", out, "Write the result here instead of stdout");

  auto* check = app.add_subcommand("check", "Realizability, completeness and identity checks");
  check->add_option("--env", env_path, "mdp/1 JSON")->required()->check(CLI::ExistingFile);
  check->add_option("--class", class_path, "class/1 JSON")->required()->check(CLI::ExistingFile);
  check->add_option("--out", out, "Write the report here instead of stdout");

  auto* generate = app.add_subcommand("generate", "Write env.json and class.json for an env spec");
  generate->add_option("--config", config, "Config whose [env] section to use")->check(CLI::ExistingFile);
  generate->add_option("--family", family, "Override the family");
  generate->add_option("--seed", seed, "Override the env seed");
  generate->add_option("--dir", dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, workers, *dump ? std::max<std::size_t>(dump_k, 5) : dump_k, output);
    if (*metrics) return cmd_metrics(env_path, class_path, eps, draws, out);
    if (*design) return cmd_design(vectors, tol, out);
    if (*check) return cmd_check(env_path, class_path, out);
    if (*generate) return cmd_generate(config, family, seed, dir);
  } catch (const ts3::DesignError& e) {
    std::cout << Json{{"error", e.what()}, {"best_weights", e.best().weights}, {"g", e.best().g}}.dump(2) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cout << Json{{"error", e.what()}}.dump(2) << '\n';
    return 2;
  }
  return 2;
}
