#include "ear/config.hpp"

#include <fstream>
#include <set>

namespace ear {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
    if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned())
      throw ConfigError(where + "." + key + ": expected a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
  }
  try {
    out = v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": invalid value");
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.lr > 0)) throw ConfigError("optimizer.lr must be positive");
  if (!(optimizer.beta1 >= 0 && optimizer.beta1 < 1) || !(optimizer.beta2 >= 0 && optimizer.beta2 < 1))
    throw ConfigError("optimizer betas must lie in [0, 1)");
  if (!(optimizer.eps > 0)) throw ConfigError("optimizer.eps must be positive");
  if (!(split.test_fraction >= 0 && split.test_fraction < 1)) throw ConfigError("split.test_fraction must lie in [0, 1)");
  if (split.k_folds < 1) throw ConfigError("split.k_folds must be >= 1");
  if (ablation_seeds.empty()) throw ConfigError("ablation_seeds must not be empty");
}

json to_json(const EarConfig& c) {
  return {{"depth", c.depth},
          {"base_channels", c.base_channels},
          {"in_channels", c.in_channels},
          {"out_classes", c.out_classes},
          {"use_attention", c.use_attention},
          {"use_lstm", c.use_lstm},
          {"frames", c.frames},
          {"attention_max_positions", c.attention_max_positions}};
}

json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"loss", loss_name(c.loss)},
          {"optimizer",
           {{"name", "adam"}, {"lr", c.optimizer.lr}, {"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"data", c.data},
          {"split", {{"test_fraction", c.split.test_fraction}, {"k_folds", c.split.k_folds}}},
          {"output_dir", c.output_dir},
          {"augment", c.augment},
          {"ablation_seeds", c.ablation_seeds}};
}

EarConfig ear_config_from_json(const json& j) {
  reject_unknown(j,
                 {"depth", "base_channels", "in_channels", "out_classes", "use_attention", "use_lstm", "frames",
                  "attention_max_positions"},
                 "model");
  EarConfig c;
  read(j, "depth", c.depth, "model");
  read(j, "base_channels", c.base_channels, "model");
  read(j, "in_channels", c.in_channels, "model");
  read(j, "out_classes", c.out_classes, "model");
  read(j, "use_attention", c.use_attention, "model");
  read(j, "use_lstm", c.use_lstm, "model");
  read(j, "frames", c.frames, "model");
  read(j, "attention_max_positions", c.attention_max_positions, "model");
  c.validate();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j,
                 {"model", "loss", "optimizer", "epochs", "batch_size", "seed", "data", "split", "output_dir",
                  "augment", "ablation_seeds"},
                 "config");
  RunConfig c;
  if (j.contains("model")) c.model = ear_config_from_json(j.at("model"));
  if (j.contains("loss")) {
    std::string name;
    read(j, "loss", name, "config");
    c.loss = parse_loss(name);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    reject_unknown(o, {"name", "lr", "beta1", "beta2", "eps"}, "optimizer");
    std::string name = "adam";
    read(o, "name", name, "optimizer");
    if (name != "adam") throw ConfigError("optimizer.name: only 'adam' is supported, got '" + name + "'");
    read(o, "lr", c.optimizer.lr, "optimizer");
    read(o, "beta1", c.optimizer.beta1, "optimizer");
    read(o, "beta2", c.optimizer.beta2, "optimizer");
    read(o, "eps", c.optimizer.eps, "optimizer");
  }
  read(j, "epochs", c.epochs, "config");
  read(j, "batch_size", c.batch_size, "config");
  read(j, "seed", c.seed, "config");
  read(j, "data", c.data, "config");
  if (j.contains("split")) {
    const auto& s = j.at("split");
    reject_unknown(s, {"test_fraction", "k_folds"}, "split");
    read(s, "test_fraction", c.split.test_fraction, "split");
    read(s, "k_folds", c.split.k_folds, "split");
  }
  read(j, "output_dir", c.output_dir, "config");
  read(j, "augment", c.augment, "config");
  if (j.contains("ablation_seeds")) {
    const auto& seeds = j.at("ablation_seeds");
    if (!seeds.is_array()) throw ConfigError("config.ablation_seeds: expected an array");
    c.ablation_seeds.clear();
    for (const auto& s : seeds) {
      if (!s.is_number_unsigned()) throw ConfigError("config.ablation_seeds: expected non-negative integers");
      c.ablation_seeds.push_back(s.get<std::uint64_t>());
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  if (!c.data.empty() && std::filesystem::path(c.data).is_relative())
    c.data = (file.parent_path() / c.data).lexically_normal().string();
  return c;
}

}  // namespace ear
