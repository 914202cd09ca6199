#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mogernn/evaluation.hpp"
#include "mogernn/model.hpp"
#include "mogernn/training.hpp"

// Self-describing JSON checkpoint: config echo, parameter tensors with
// shapes, normalization constants, role assignment and seeds. JSON keys
// serialize in a fixed order and doubles in shortest round-trip form, so an
// identical run writes byte-identical files.

namespace mogernn {

using nlohmann::json;

inline json model_config_to_json(const ModelConfig& c) {
  json experts = json::array();
  for (AggregatorKind k : c.experts) experts.push_back(aggregator_kind_name(k));
  return json{{"p", c.p},
              {"f", c.f},
              {"h2", c.h2},
              {"h_gate", c.h_gate},
              {"diffusion_steps", c.diffusion_steps},
              {"top_k", c.top_k},
              {"experts", experts},
              {"gating", gating_mode_name(c.gating)},
              {"gru_aggregator", aggregator_kind_name(c.gru_aggregator)},
              {"diffusion_transposed", c.diffusion_transposed},
              {"gru_uses_masked_adjacency", c.gru_uses_masked_adjacency},
              {"teacher_includes_masked", c.teacher_includes_masked}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.p = j.at("p").get<std::size_t>();
  c.f = j.at("f").get<std::size_t>();
  c.h2 = j.at("h2").get<std::size_t>();
  c.h_gate = j.at("h_gate").get<std::size_t>();
  c.diffusion_steps = j.at("diffusion_steps").get<std::size_t>();
  c.top_k = j.at("top_k").get<std::size_t>();
  c.experts.clear();
  for (const auto& e : j.at("experts")) c.experts.push_back(parse_aggregator_kind(e.get<std::string>()));
  c.gating = parse_gating_mode(j.at("gating").get<std::string>());
  c.gru_aggregator = parse_aggregator_kind(j.at("gru_aggregator").get<std::string>());
  c.diffusion_transposed = j.at("diffusion_transposed").get<bool>();
  c.gru_uses_masked_adjacency = j.at("gru_uses_masked_adjacency").get<bool>();
  c.teacher_includes_masked = j.at("teacher_includes_masked").get<bool>();
  return c;
}

inline json train_config_to_json(const TrainConfig& c) {
  return json{{"p", c.p},
              {"f", c.f},
              {"stride", c.stride},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"learning_rate", c.learning_rate},
              {"mask_rate", c.mask_rate},
              {"tf_end_epoch", c.tf_end_epoch},
              {"patience", c.patience},
              {"seed", c.seed},
              {"val_split", c.val_split}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.p = j.at("p").get<std::size_t>();
  c.f = j.at("f").get<std::size_t>();
  c.stride = j.at("stride").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.mask_rate = j.at("mask_rate").get<double>();
  c.tf_end_epoch = j.at("tf_end_epoch").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.val_split = j.at("val_split").get<double>();
  return c;
}

inline json params_to_json(MogernnModel& model) {
  json arr = json::array();
  model.visit_params([&](const std::string& name, Tensor& t) {
    json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["data"] = std::vector<double>(t.data().begin(), t.data().end());
    arr.push_back(std::move(entry));
  });
  return arr;
}

inline void params_from_json(const json& arr, MogernnModel& model) {
  std::size_t idx = 0;
  model.visit_params([&](const std::string& name, Tensor& t) {
    if (idx >= arr.size()) throw DataError("checkpoint: missing parameter " + name);
    const json& entry = arr.at(idx++);
    if (entry.at("name").get<std::string>() != name)
      throw DataError("checkpoint: expected parameter " + name + ", found " +
                      entry.at("name").get<std::string>());
    Shape shape = entry.at("shape").get<Shape>();
    if (shape != t.shape())
      throw DataError("checkpoint: parameter " + name + " has shape " + shape_str(shape) +
                      ", expected " + shape_str(t.shape()));
    auto values = entry.at("data").get<std::vector<double>>();
    if (values.size() != t.size()) throw DataError("checkpoint: parameter " + name + " size mismatch");
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  });
  if (idx != arr.size()) throw DataError("checkpoint: extra parameters present");
}

inline json roles_to_json(const RoleAssignment& roles, const std::vector<std::string>& sensor_ids) {
  json by_role;
  const Role kinds[4] = {Role::AAS, Role::VS, Role::FS, Role::NAS};
  for (Role r : kinds) {
    json ids = json::array();
    for (std::size_t i : roles.indices_of(r)) ids.push_back(sensor_ids.at(i));
    by_role[role_name(r)] = std::move(ids);
  }
  by_role["seed"] = roles.seed;
  return by_role;
}

inline RoleAssignment roles_from_json(const json& j, const std::vector<std::string>& sensor_ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < sensor_ids.size(); ++i) index[sensor_ids[i]] = i;
  RoleAssignment ra;
  ra.roles.assign(sensor_ids.size(), Role::AAS);
  ra.seed = j.value("seed", std::uint64_t{0});
  const Role kinds[4] = {Role::AAS, Role::VS, Role::FS, Role::NAS};
  for (Role r : kinds) {
    if (!j.contains(role_name(r))) continue;
    for (const auto& id : j.at(role_name(r))) {
      auto it = index.find(id.get<std::string>());
      if (it == index.end()) throw DataError("checkpoint roles: unknown sensor id " + id.get<std::string>());
      ra.roles[it->second] = r;
    }
  }
  return ra;
}

struct Checkpoint {
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  MogernnModel model;
  Normalization norm;
  RoleAssignment roles;                   // over the full dataset node set
  std::vector<std::string> sensor_ids;    // full dataset order
  double kappa = 0.0;
  std::optional<double> sigma;            // explicit σ override, if any
  double split_ratio = 0.7;
  std::size_t knn_k = 2;
  json cli_config;                        // resolved front-end config echo
};

inline json checkpoint_to_json(Checkpoint& ck) {
  json j;
  j["format"] = "mogernn-checkpoint-v1";
  j["model_config"] = model_config_to_json(ck.model_cfg);
  j["train_config"] = train_config_to_json(ck.train_cfg);
  j["normalization"] = {{"mean", ck.norm.mean}, {"std", ck.norm.std_dev}};
  j["roles"] = roles_to_json(ck.roles, ck.sensor_ids);
  j["sensor_ids"] = ck.sensor_ids;
  j["graph"] = {{"kappa", ck.kappa}};
  if (ck.sigma) j["graph"]["sigma"] = *ck.sigma;
  j["split_ratio"] = ck.split_ratio;
  j["knn_k"] = ck.knn_k;
  if (!ck.cli_config.is_null()) j["cli_config"] = ck.cli_config;
  j["params"] = params_to_json(ck.model);
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "mogernn-checkpoint-v1")
    throw DataError("not a mogernn checkpoint (bad format tag)");
  Checkpoint ck;
  ck.model_cfg = model_config_from_json(j.at("model_config"));
  ck.train_cfg = train_config_from_json(j.at("train_config"));
  ck.norm.mean = j.at("normalization").at("mean").get<double>();
  ck.norm.std_dev = j.at("normalization").at("std").get<double>();
  ck.sensor_ids = j.at("sensor_ids").get<std::vector<std::string>>();
  ck.roles = roles_from_json(j.at("roles"), ck.sensor_ids);
  ck.kappa = j.at("graph").at("kappa").get<double>();
  if (j.at("graph").contains("sigma")) ck.sigma = j.at("graph").at("sigma").get<double>();
  ck.split_ratio = j.at("split_ratio").get<double>();
  ck.knn_k = j.value("knn_k", std::size_t{2});
  if (j.contains("cli_config")) ck.cli_config = j.at("cli_config");
  Rng rng(0);  // placeholder values, immediately overwritten
  ck.model = MogernnModel::init(ck.model_cfg, rng);
  params_from_json(j.at("params"), ck.model);
  return ck;
}

inline void save_checkpoint(const std::string& path, Checkpoint& ck) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << checkpoint_to_json(ck).dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

// Serialized parameter block alone; used for byte-identity checks.
inline std::string params_bytes(MogernnModel& model) { return params_to_json(model).dump(); }

}  // namespace mogernn
