#include "ts3/serialize.hpp"

#include <fstream>
#include <stdexcept>

namespace ts3 {

namespace {

void expect_schema(const Json& j, const std::string& schema) {
  if (!j.is_object() || !j.contains("schema") || j.at("schema") != schema) {
    throw std::invalid_argument("expected a document with schema \"" + schema + "\"");
  }
}

}  // namespace

RewardNoise noise_from_string(const std::string& s) {
  if (s == "none") return RewardNoise::none;
  if (s == "uniform") return RewardNoise::uniform;
  if (s == "two_point") return RewardNoise::two_point;
  throw std::invalid_argument("unknown reward noise '" + s + "'");
}

std::string to_string(RewardNoise n) {
  switch (n) {
    case RewardNoise::none: return "none";
    case RewardNoise::uniform: return "uniform";
    case RewardNoise::two_point: return "two_point";
  }
  return "unknown";
}

Json env_to_json(const ContextualMDP& env, const FeatureMap* features, const Dims* dims) {
  Json j;
  j["schema"] = "mdp/1";
  j["name"] = env.name();
  j["horizon"] = env.horizon();
  j["num_actions"] = env.num_actions();
  j["initial_dist"] = std::vector<double>(env.initial_dist().begin(), env.initial_dist().end());
  j["reward_noise"] = to_string(env.noise());
  Json steps = Json::array();
  for (std::size_t h = 0; h < env.horizon(); ++h) {
    const auto& st = env.step(h);
    steps.push_back({{"num_states", st.num_states},
                     {"num_next_states", st.num_next_states},
                     {"state_context", st.state_context},
                     {"reward_mean", st.reward_mean},
                     {"reward_lo", st.reward_lo},
                     {"reward_hi", st.reward_hi},
                     {"transition", st.transition}});
  }
  j["steps"] = std::move(steps);
  if (features) j["features"] = {{"dim", features->dim}, {"table", features->table}};
  if (dims) j["dims"] = {{"d1", dims->d1}, {"d2", dims->d2}};
  return j;
}

LoadedEnv env_from_json(const Json& j) {
  expect_schema(j, "mdp/1");
  const std::size_t A = j.at("num_actions").get<std::size_t>();
  std::vector<StepTables> steps;
  for (const auto& s : j.at("steps")) {
    StepTables st;
    st.num_states = s.at("num_states").get<std::size_t>();
    st.num_next_states = s.value("num_next_states", std::size_t{0});
    st.state_context = s.at("state_context").get<std::vector<ContextId>>();
    st.reward_mean = s.at("reward_mean").get<std::vector<double>>();
    st.reward_lo = s.value("reward_lo", std::vector<double>{});
    st.reward_hi = s.value("reward_hi", std::vector<double>{});
    st.transition = s.value("transition", std::vector<double>{});
    steps.push_back(std::move(st));
  }
  if (j.contains("horizon") && j.at("horizon").get<std::size_t>() != steps.size()) {
    throw std::invalid_argument("mdp/1: horizon disagrees with the number of steps");
  }
  LoadedEnv out{ContextualMDP(A, j.at("initial_dist").get<std::vector<double>>(), std::move(steps),
                              noise_from_string(j.value("reward_noise", std::string("none"))),
                              j.value("name", std::string{})),
                std::nullopt, std::nullopt};
  if (j.contains("features")) {
    FeatureMap fm;
    fm.dim = j.at("features").at("dim").get<std::size_t>();
    fm.num_actions = A;
    fm.table = j.at("features").at("table").get<std::vector<std::vector<double>>>();
    if (fm.table.size() != out.env.horizon()) throw std::invalid_argument("mdp/1: feature table has wrong horizon");
    for (std::size_t h = 0; h < fm.table.size(); ++h) {
      if (fm.table[h].size() != out.env.num_states(h) * A * fm.dim) {
        throw std::invalid_argument("mdp/1: feature table has wrong size at step " + std::to_string(h + 1));
      }
    }
    out.features = std::move(fm);
  }
  if (j.contains("dims")) out.dims = Dims{j.at("dims").at("d1").get<std::size_t>(), j.at("dims").at("d2").get<std::size_t>()};
  return out;
}

Json class_to_json(const FunctionClass& cls) {
  Json j;
  j["schema"] = "class/1";
  j["horizon"] = cls.horizon();
  j["num_actions"] = cls.num_actions();
  std::vector<std::size_t> states;
  for (std::size_t h = 0; h < cls.horizon(); ++h) states.push_back(cls[0].num_states(h));
  j["num_states"] = states;
  j["prior"] = cls.prior();
  Json members = Json::array();
  for (const auto& f : cls.members()) members.push_back(f.tables());
  j["members"] = std::move(members);
  return j;
}

FunctionClass class_from_json(const Json& j) {
  expect_schema(j, "class/1");
  const std::size_t A = j.at("num_actions").get<std::size_t>();
  std::vector<QFunction> members;
  for (const auto& m : j.at("members")) members.emplace_back(A, m.get<std::vector<std::vector<double>>>());
  if (j.contains("horizon")) {
    for (const auto& f : members) {
      if (f.horizon() != j.at("horizon").get<std::size_t>()) throw std::invalid_argument("class/1: horizon mismatch");
    }
  }
  return FunctionClass(std::move(members), j.value("prior", std::vector<double>{}));
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return Json::parse(in);
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace ts3
