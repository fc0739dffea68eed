#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ts3/agents.hpp"
#include "ts3/envs.hpp"
#include "ts3/serialize.hpp"

namespace ts3 {

struct ExperimentConfig {
  EnvSpec env;
  bool instance_per_seed = false;  // regenerate the instance with env.seed + run seed
  std::vector<AgentConfig> agents;
  std::vector<std::uint64_t> seeds;
  std::size_t T = 1000;
  std::string output = "out";
  std::size_t workers = 1;
  double time_limit_seconds = 600.0;
  double max_memory_mb = 4096.0;
  std::size_t dump_top_k = 0;
  Json acceptance = Json::object();  // echoed verbatim into the summary
};

EnvSpec env_spec_from_json(const Json& j);
Json env_spec_to_json(const EnvSpec& spec);

/// Parses the JSON form of a config. Agents inherit T unless they set it.
/// Applies BELLMAN_TS3_SEED_OFFSET to every seed.
ExperimentConfig config_from_json(const Json& j);

/// TOML (by extension .toml) or JSON.
Json load_config_json(const std::string& path);
ExperimentConfig load_config(const std::string& path);

/// Twelve significant digits, fixed column order:
/// t,h_t,f_id,fprime_id,inst_regret,cum_regret,executed_return,seed
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);
std::vector<TraceRow> read_trace_csv(const std::string& path);
std::string format_number(double x);

std::string trace_filename(const std::string& agent, std::uint64_t seed);

/// Runs every (agent, seed), writes one CSV each, then summary.json computed
/// from the files just written. Run failures are recorded, not thrown.
Json run_experiment(const ExperimentConfig& cfg);

/// Summary of the traces in cfg.output; needs no in-memory run state.
Json summarize(const ExperimentConfig& cfg, const Json& failures = Json::array());

/// Two-sided 95% t interval half-width of the mean; needs >= 3 values.
double t_half_width(const std::vector<double>& v);

}  // namespace ts3
