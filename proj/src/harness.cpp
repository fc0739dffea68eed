#include "ts3/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "toml.hpp"

namespace ts3 {

namespace fs = std::filesystem;

namespace {

Json toml_to_json(const toml::node& n) {
  if (const auto* t = n.as_table()) {
    Json j = Json::object();
    for (auto&& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = n.as_array()) {
    Json j = Json::array();
    for (auto&& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* v = n.as_string()) return v->get();
  if (const auto* v = n.as_integer()) return v->get();
  if (const auto* v = n.as_floating_point()) return v->get();
  if (const auto* v = n.as_boolean()) return v->get();
  throw std::invalid_argument("config: unsupported TOML value type (dates and times are not accepted)");
}

std::uint64_t seed_offset() {
  const char* s = std::getenv("BELLMAN_TS3_SEED_OFFSET");
  if (!s || !*s) return 0;
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("BELLMAN_TS3_SEED_OFFSET is not an unsigned integer: ") + s);
  }
}

template <typename T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

EnvSpec env_spec_from_json(const Json& j) {
  EnvSpec s;
  if (j.contains("family")) s.family = family_from_string(j.at("family").get<std::string>());
  maybe(j, "horizon", s.horizon);
  maybe(j, "contexts", s.contexts);
  maybe(j, "states", s.states);
  maybe(j, "actions", s.actions);
  maybe(j, "branching", s.branching);
  if (j.contains("reward_noise")) s.reward_noise = noise_from_string(j.at("reward_noise").get<std::string>());
  maybe(j, "feature_dim", s.feature_dim);
  maybe(j, "feature_kind", s.feature_kind);
  maybe(j, "items", s.items);
  maybe(j, "slate_length", s.slate_length);
  maybe(j, "emissions", s.emissions);
  maybe(j, "class_size", s.class_size);
  maybe(j, "seed", s.seed);
  for (const auto& [k, v] : j.items()) {
    static const char* known[] = {"family", "horizon", "contexts", "states", "actions", "branching", "reward_noise",
                                  "feature_dim", "feature_kind", "items", "slate_length", "emissions", "class_size",
                                  "seed"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* x) { return k == x; }) == std::end(known)) {
      throw std::invalid_argument("config: unknown env key '" + k + "'");
    }
  }
  return s;
}

Json env_spec_to_json(const EnvSpec& s) {
  return {{"family", to_string(s.family)},   {"horizon", s.horizon},
          {"contexts", s.contexts},          {"states", s.states},
          {"actions", s.actions},            {"branching", s.branching},
          {"reward_noise", to_string(s.reward_noise)}, {"feature_dim", s.feature_dim},
          {"feature_kind", s.feature_kind},  {"items", s.items},
          {"slate_length", s.slate_length},  {"emissions", s.emissions},
          {"class_size", s.class_size},      {"seed", s.seed}};
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  if (!j.contains("env")) throw std::invalid_argument("config: missing [env] section");
  cfg.env = env_spec_from_json(j.at("env"));
  maybe(j, "instance_per_seed", cfg.instance_per_seed);
  maybe(j, "T", cfg.T);
  maybe(j, "output", cfg.output);
  maybe(j, "workers", cfg.workers);
  maybe(j, "dump_top_k", cfg.dump_top_k);
  if (j.contains("guards")) {
    maybe(j.at("guards"), "time_limit_seconds", cfg.time_limit_seconds);
    maybe(j.at("guards"), "max_memory_mb", cfg.max_memory_mb);
  }
  if (j.contains("acceptance")) cfg.acceptance = j.at("acceptance");
  if (!j.contains("seeds") || j.at("seeds").empty()) throw std::invalid_argument("config: seeds must be nonempty");
  const std::uint64_t offset = seed_offset();
  for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>() + offset);
  if (!j.contains("agents") || j.at("agents").empty()) throw std::invalid_argument("config: agents must be nonempty");
  for (const auto& a : j.at("agents")) {
    AgentConfig ac;
    ac.algorithm = algorithm_from_string(a.at("algorithm").get<std::string>());
    ac.name = a.value("name", to_string(ac.algorithm));
    ac.T = a.value("T", cfg.T);
    if (a.contains("eta")) ac.eta = a.at("eta").get<double>();
    if (a.contains("gamma")) ac.gamma = a.at("gamma").get<double>();
    if (a.contains("lambda")) ac.lambda = a.at("lambda").get<double>();
    maybe(a, "lambda_scale", ac.lambda_scale);
    maybe(a, "single_sample", ac.single_sample);
    maybe(a, "design_tol", ac.design_tol);
    ac.time_limit_seconds = cfg.time_limit_seconds;
    cfg.agents.push_back(std::move(ac));
  }
  std::map<std::string, int> names;
  for (const auto& a : cfg.agents) {
    if (++names[a.name] > 1) throw std::invalid_argument("config: duplicate agent name '" + a.name + "'");
  }
  if (cfg.T == 0) throw std::invalid_argument("config: T must be positive");
  if (cfg.workers == 0) cfg.workers = 1;
  return cfg;
}

Json load_config_json(const std::string& path) {
  if (fs::path(path).extension() == ".toml") {
    try {
      const toml::table tbl = toml::parse_file(path);
      return toml_to_json(tbl);
    } catch (const toml::parse_error& e) {
      std::ostringstream os;
      os << "config: " << path << ": " << e.description() << " at line " << e.source().begin.line;
      throw std::invalid_argument(os.str());
    }
  }
  return read_json_file(path);
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(load_config_json(path)); }

std::string format_number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "t,h_t,f_id,fprime_id,inst_regret,cum_regret,executed_return,seed\n";
  for (const auto& r : rows) {
    out << r.t << ',' << r.h << ',' << r.f_id << ',' << r.fprime_id << ',' << format_number(r.inst_regret) << ','
        << format_number(r.cum_regret) << ',' << format_number(r.executed_return) << ',' << r.seed << '\n';
  }
}

std::vector<TraceRow> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "t,h_t,f_id,fprime_id,inst_regret,cum_regret,executed_return,seed") {
    throw std::runtime_error(path + ": unexpected trace header");
  }
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw std::runtime_error(path + ": malformed row '" + line + "'");
    TraceRow r;
    r.t = std::stoull(cells[0]);
    r.h = std::stoull(cells[1]);
    r.f_id = std::stoll(cells[2]);
    r.fprime_id = std::stoll(cells[3]);
    r.inst_regret = std::stod(cells[4]);
    r.cum_regret = std::stod(cells[5]);
    r.executed_return = std::stod(cells[6]);
    r.seed = std::stoull(cells[7]);
    rows.push_back(r);
  }
  return rows;
}

std::string trace_filename(const std::string& agent, std::uint64_t seed) {
  return "trace_" + agent + "_seed" + std::to_string(seed) + ".csv";
}

double t_half_width(const std::vector<double>& v) {
  if (v.size() < 3) throw std::invalid_argument("t_half_width: needs at least 3 values");
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double n = static_cast<double>(v.size());
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  return boost::math::quantile(boost::math::complement(dist, 0.025)) * sd / std::sqrt(n);
}

Json run_experiment(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output);

  struct Job {
    std::size_t agent;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < cfg.agents.size(); ++a) {
    for (auto s : cfg.seeds) jobs.push_back({a, s});
  }

  // Instances are shared read-only across workers.
  std::map<std::uint64_t, std::shared_ptr<const Instance>> instances;
  std::map<std::uint64_t, std::string> instance_errors;
  std::map<std::uint64_t, std::shared_ptr<const ValueCache>> values;
  for (auto s : cfg.instance_per_seed ? cfg.seeds : std::vector<std::uint64_t>{0}) {
    EnvSpec spec = cfg.env;
    if (cfg.instance_per_seed) spec.seed += s;
    try {
      auto inst = std::make_shared<const Instance>(make_env(spec));
      values[s] = std::make_shared<const ValueCache>(ValueCache::build(*inst));
      instances[s] = std::move(inst);
    } catch (const std::exception& e) {
      instance_errors[s] = e.what();
    }
  }

  Json failures = Json::array();
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      AgentConfig ac = cfg.agents[job.agent];
      ac.seed = job.seed;
      const std::uint64_t key = cfg.instance_per_seed ? job.seed : 0;
      try {
        if (instance_errors.count(key)) throw std::runtime_error("instance generation failed: " + instance_errors.at(key));
        const auto& inst = *instances.at(key);
        const double n = static_cast<double>(inst.cls.size());
        const double mb = (n * n * 8.0 + static_cast<double>(ac.T) * (sizeof(TraceRow) + sizeof(TransitionSample))) /
                          (1024.0 * 1024.0);
        if (mb * static_cast<double>(cfg.workers) > cfg.max_memory_mb) {
          throw std::runtime_error("memory guard: estimated " + format_number(mb) + " MB per run exceeds the budget");
        }
        std::ofstream dump;
        if (cfg.dump_top_k > 0) {
          dump.open(fs::path(cfg.output) / ("posterior_" + ac.name + "_seed" + std::to_string(job.seed) + ".jsonl"));
          ac.dump = &dump;
          ac.dump_top_k = cfg.dump_top_k;
        }
        const auto trace = run_agent(inst, ac, values.at(key).get());
        write_trace_csv((fs::path(cfg.output) / trace_filename(ac.name, job.seed)).string(), trace.rows);
        if (trace.truncated) {
          std::lock_guard<std::mutex> lock(mu);
          failures.push_back({{"agent", ac.name}, {"seed", job.seed}, {"error", "wall-clock guard: trace truncated"},
                              {"partial", true}});
        }
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        failures.push_back({{"agent", ac.name}, {"seed", job.seed}, {"error", e.what()}, {"partial", false}});
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_workers = std::min(cfg.workers, std::max<std::size_t>(jobs.size(), 1));
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::sort(failures.begin(), failures.end(), [](const Json& a, const Json& b) {
    return std::make_pair(a.at("agent").get<std::string>(), a.at("seed").get<std::uint64_t>()) <
           std::make_pair(b.at("agent").get<std::string>(), b.at("seed").get<std::uint64_t>());
  });
  Json summary = summarize(cfg, failures);
  write_json_file((fs::path(cfg.output) / "summary.json").string(), summary);
  return summary;
}

Json summarize(const ExperimentConfig& cfg, const Json& failures) {
  Json agents = Json::object();
  std::map<std::string, double> final_mean;
  std::map<std::string, double> decile_ratio;
  for (const auto& ac : cfg.agents) {
    std::vector<std::vector<TraceRow>> traces;
    std::vector<std::uint64_t> seeds;
    for (auto s : cfg.seeds) {
      const auto path = fs::path(cfg.output) / trace_filename(ac.name, s);
      if (!fs::exists(path)) continue;
      traces.push_back(read_trace_csv(path.string()));
      seeds.push_back(s);
    }
    Json entry;
    entry["algorithm"] = to_string(ac.algorithm);
    entry["runs"] = traces.size();
    entry["T"] = ac.T;
    const std::size_t T = ac.T;
    Json checkpoints = Json::array();
    for (std::size_t cp : {std::max<std::size_t>(T / 10, 1), std::max<std::size_t>(T / 2, 1), T}) {
      std::vector<double> v;
      for (const auto& tr : traces) {
        if (tr.size() >= cp) v.push_back(tr[cp - 1].cum_regret);
      }
      Json c{{"t", cp}, {"n", v.size()}};
      c["mean"] = v.empty() ? Json(nullptr) : Json(mean_of(v));
      c["ci95_half_width"] = v.size() >= 3 ? Json(t_half_width(v)) : Json(nullptr);
      checkpoints.push_back(c);
      if (cp == T && !v.empty()) final_mean[ac.name] = mean_of(v);
    }
    entry["checkpoints"] = checkpoints;
    std::vector<double> first, last, finals;
    for (const auto& tr : traces) {
      const std::size_t n = tr.size();
      const std::size_t dec = std::max<std::size_t>(n / 10, 1);
      if (n == 0) continue;
      double f = 0.0, l = 0.0;
      for (std::size_t i = 0; i < dec; ++i) f += tr[i].inst_regret;
      for (std::size_t i = n - dec; i < n; ++i) l += tr[i].inst_regret;
      first.push_back(f / static_cast<double>(dec));
      last.push_back(l / static_cast<double>(dec));
      finals.push_back(tr.back().cum_regret);
    }
    entry["first_decile_mean"] = mean_of(first);
    entry["last_decile_mean"] = mean_of(last);
    const double fm = mean_of(first);
    entry["decile_ratio"] = fm > 0.0 ? Json(mean_of(last) / fm) : Json(nullptr);
    if (fm > 0.0) decile_ratio[ac.name] = mean_of(last) / fm;
    entry["final_cum_regret"] = finals;
    entry["seeds"] = seeds;
    agents[ac.name] = entry;
  }

  Json verdicts = Json::array();
  const auto& acc = cfg.acceptance;
  if (acc.contains("decile")) {
    for (const auto& d : acc.at("decile")) {
      const auto name = d.at("agent").get<std::string>();
      const double thr = d.at("max_ratio").get<double>();
      Json v{{"check", "decile_ratio"}, {"agent", name}, {"threshold", thr}};
      if (decile_ratio.count(name)) {
        v["value"] = decile_ratio[name];
        v["pass"] = decile_ratio[name] <= thr;
      } else {
        v["value"] = nullptr;
        v["pass"] = false;
      }
      verdicts.push_back(v);
    }
  }
  if (acc.contains("compare")) {
    for (const auto& c : acc.at("compare")) {
      const auto name = c.at("agent").get<std::string>();
      const auto base = c.at("baseline").get<std::string>();
      Json v{{"check", "cum_regret_ratio"}, {"agent", name}, {"baseline", base}};
      if (final_mean.count(name) && final_mean.count(base) && final_mean[base] > 0.0) {
        const double ratio = final_mean[name] / final_mean[base];
        v["value"] = ratio;
        bool pass = true;
        if (c.contains("max_ratio")) {
          v["max_ratio"] = c.at("max_ratio");
          pass = pass && ratio <= c.at("max_ratio").get<double>();
        }
        if (c.contains("min_ratio")) {
          v["min_ratio"] = c.at("min_ratio");
          pass = pass && ratio >= c.at("min_ratio").get<double>();
        }
        v["pass"] = pass;
      } else {
        v["value"] = nullptr;
        v["pass"] = false;
      }
      verdicts.push_back(v);
    }
  }
  bool all_pass = failures.empty();
  for (const auto& v : verdicts) all_pass = all_pass && v.at("pass").get<bool>();

  Json out;
  out["env"] = env_spec_to_json(cfg.env);
  out["T"] = cfg.T;
  out["seeds"] = cfg.seeds;
  out["agents"] = agents;
  out["acceptance"] = cfg.acceptance;
  out["verdicts"] = verdicts;
  out["failures"] = failures;
  out["pass"] = all_pass;
  return out;
}

}  // namespace ts3
