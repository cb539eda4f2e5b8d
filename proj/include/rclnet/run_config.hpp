#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rclnet/datapipe.hpp"
#include "rclnet/network.hpp"
#include "rclnet/training.hpp"

namespace rclnet {

/// Experiment configuration file: a flat JSON object holding the network
/// layout, optimizer settings, sampling weights and run bookkeeping. Unknown
/// keys are rejected; missing keys take the defaults below and are echoed
/// back so a run's effective configuration is always recorded.
struct RunConfig {
  NetworkConfig network;
  TrainConfig training;
  LevelWeights level_weights = LevelWeights::uniform();
  std::string manifest;
  std::uint64_t seed = 42;
  std::string output_dir = "out";
  int threads = 1;
};

namespace detail {

inline const char* head_name(HeadKind head) {
  return head == HeadKind::Regression ? "regression" : "classification";
}

inline HeadKind head_from_name(const std::string& name) {
  if (name == "regression") return HeadKind::Regression;
  if (name == "classification") return HeadKind::Classification;
  throw ConfigError("head must be \"regression\" or \"classification\", got \"" + name + "\"");
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["input_w"] = cfg.network.input_w;
  j["input_h"] = cfg.network.input_h;
  j["channels"] = cfg.network.channels;
  j["maps"] = cfg.network.maps;
  j["rcl_count"] = cfg.network.rcl_count;
  j["iterations"] = cfg.network.iterations;
  j["pool_specs"] = nlohmann::json::array();
  for (const PoolSpec& p : cfg.network.pool_specs)
    j["pool_specs"].push_back({p.pool_w, p.pool_h, p.stride_w, p.stride_h});
  j["head"] = detail::head_name(cfg.network.head);
  j["class_count"] = cfg.network.class_count;
  j["dropout_rate"] = cfg.network.dropout_rate;
  j["bn_epsilon"] = cfg.network.bn_epsilon;
  j["bn_momentum"] = cfg.network.bn_momentum;
  j["use_batchnorm"] = cfg.network.use_batchnorm;
  j["clamp_predictions"] = cfg.network.clamp_predictions;
  j["batch_size"] = cfg.training.batch_size;
  j["max_epochs"] = cfg.training.max_epochs;
  j["iters_per_epoch"] = cfg.training.iters_per_epoch;
  j["learning_rate"] = cfg.training.learning_rate;
  j["momentum"] = cfg.training.momentum;
  j["weight_decay"] = cfg.training.weight_decay;
  j["patience"] = cfg.training.patience;
  j["min_rel_improve"] = cfg.training.min_rel_improve;
  j["val_subjects"] = cfg.training.val_subjects;
  j["val_fraction"] = cfg.training.val_fraction;
  j["early_stop"] = cfg.training.early_stop;
  j["level_weights"] = cfg.level_weights.weights;
  j["manifest"] = cfg.manifest;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["threads"] = cfg.threads;
  return j;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "input_w") cfg.network.input_w = value.get<Index>();
      else if (key == "input_h") cfg.network.input_h = value.get<Index>();
      else if (key == "channels") cfg.network.channels = value.get<Index>();
      else if (key == "maps") cfg.network.maps = value.get<Index>();
      else if (key == "rcl_count") cfg.network.rcl_count = value.get<int>();
      else if (key == "iterations") cfg.network.iterations = value.get<int>();
      else if (key == "pool_specs") {
        cfg.network.pool_specs.clear();
        for (const auto& entry : value) {
          if (!entry.is_array() || entry.size() != 4)
            throw ConfigError("pool_specs entries must be [pool_w, pool_h, stride_w, stride_h]");
          cfg.network.pool_specs.push_back(
              {entry[0].get<int>(), entry[1].get<int>(), entry[2].get<int>(), entry[3].get<int>()});
        }
      } else if (key == "head") cfg.network.head = detail::head_from_name(value.get<std::string>());
      else if (key == "class_count") cfg.network.class_count = value.get<int>();
      else if (key == "dropout_rate") cfg.network.dropout_rate = value.get<double>();
      else if (key == "bn_epsilon") cfg.network.bn_epsilon = value.get<double>();
      else if (key == "bn_momentum") cfg.network.bn_momentum = value.get<double>();
      else if (key == "use_batchnorm") cfg.network.use_batchnorm = value.get<bool>();
      else if (key == "clamp_predictions") cfg.network.clamp_predictions = value.get<bool>();
      else if (key == "batch_size") cfg.training.batch_size = value.get<Index>();
      else if (key == "max_epochs") cfg.training.max_epochs = value.get<int>();
      else if (key == "iters_per_epoch") cfg.training.iters_per_epoch = value.get<Index>();
      else if (key == "learning_rate") cfg.training.learning_rate = value.get<double>();
      else if (key == "momentum") cfg.training.momentum = value.get<double>();
      else if (key == "weight_decay") cfg.training.weight_decay = value.get<double>();
      else if (key == "patience") cfg.training.patience = value.get<int>();
      else if (key == "min_rel_improve") cfg.training.min_rel_improve = value.get<double>();
      else if (key == "val_subjects") cfg.training.val_subjects = value.get<std::vector<int>>();
      else if (key == "val_fraction") cfg.training.val_fraction = value.get<double>();
      else if (key == "early_stop") cfg.training.early_stop = value.get<bool>();
      else if (key == "level_weights") {
        const auto values = value.get<std::vector<double>>();
        if (values.size() != kIntensityLevels)
          throw ConfigError("level_weights must hold exactly " +
                            std::to_string(kIntensityLevels) + " values");
        std::copy(values.begin(), values.end(), cfg.level_weights.weights.begin());
      } else if (key == "manifest") cfg.manifest = value.get<std::string>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else if (key == "output_dir") cfg.output_dir = value.get<std::string>();
      else if (key == "threads") cfg.threads = value.get<int>();
      else throw ConfigError("unknown config key \"" + key + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  cfg.training.seed = cfg.seed;
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace rclnet
