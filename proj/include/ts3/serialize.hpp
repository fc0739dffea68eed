#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "ts3/envs.hpp"

namespace ts3 {

using Json = nlohmann::json;

/// mdp/1: explicit per-step tables. Features and declared dimensions ride
/// along when given.
Json env_to_json(const ContextualMDP& env, const FeatureMap* features = nullptr, const Dims* dims = nullptr);

struct LoadedEnv {
  ContextualMDP env;
  std::optional<FeatureMap> features;
  std::optional<Dims> dims;
};

/// Throws std::invalid_argument on a schema mismatch; table invariants are
/// enforced by the ContextualMDP constructor.
LoadedEnv env_from_json(const Json& j);

/// class/1: prior plus per-member, per-step Q tables.
Json class_to_json(const FunctionClass& cls);
FunctionClass class_from_json(const Json& j);

RewardNoise noise_from_string(const std::string& s);
std::string to_string(RewardNoise n);

Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

}  // namespace ts3
