#include "bimvfi/config.hpp"

#include "bimvfi/data_synth.hpp"

#include <fstream>
#include <set>

namespace bimvfi {

namespace {

// Reads keys of one JSON object, remembering which ones were consumed so
// leftovers can be reported.
class StrictReader {
 public:
  StrictReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  [[nodiscard]] const Json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename Fn>
auto rethrow_as_config_error(Fn fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return {{"base_channels", c.base_channels},
          {"cost_radius", c.cost_radius},
          {"trunk_depth", c.trunk_depth},
          {"descriptor", to_string(c.descriptor)}};
}

Json to_json(const LossWeights& w) {
  return {{"char_teacher", w.char_teacher},     {"census_teacher", w.census_teacher},
          {"char_student", w.char_student},     {"census_student", w.census_student},
          {"smooth", w.smooth},                 {"reg", w.reg},
          {"distill", w.distill},               {"gamma_pho", w.gamma_pho},
          {"gamma_flo", w.gamma_flo},           {"charbonnier_eps", w.charbonnier_eps},
          {"census_patch", w.census_patch},     {"edge_lambda", w.edge_lambda}};
}

Json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"steps", c.steps},
          {"lr_init", c.lr_init},
          {"weight_decay", c.weight_decay},
          {"crop", c.crop},
          {"seed", c.seed},
          {"levels", c.levels},
          {"augment", c.augment},
          {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every},
          {"weights", to_json(c.weights)},
          {"model", to_json(c.model)}};
}

ModelConfig model_config_from_json(const Json& j, ModelConfig c) {
  StrictReader r(j, "model");
  r.get("base_channels", c.base_channels);
  r.get("cost_radius", c.cost_radius);
  r.get("trunk_depth", c.trunk_depth);
  std::string descriptor = to_string(c.descriptor);
  r.get("descriptor", descriptor);
  r.finish();
  return rethrow_as_config_error([&] {
    c.descriptor = descriptor_from_string(descriptor);
    c.validate();
    return c;
  });
}

LossWeights loss_weights_from_json(const Json& j, LossWeights w) {
  StrictReader r(j, "weights");
  r.get("char_teacher", w.char_teacher);
  r.get("census_teacher", w.census_teacher);
  r.get("char_student", w.char_student);
  r.get("census_student", w.census_student);
  r.get("smooth", w.smooth);
  r.get("reg", w.reg);
  r.get("distill", w.distill);
  r.get("gamma_pho", w.gamma_pho);
  r.get("gamma_flo", w.gamma_flo);
  r.get("charbonnier_eps", w.charbonnier_eps);
  r.get("census_patch", w.census_patch);
  r.get("edge_lambda", w.edge_lambda);
  r.finish();
  return rethrow_as_config_error([&] {
    w.validate();
    return w;
  });
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  StrictReader r(j, "train");
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("steps", c.steps);
  r.get("lr_init", c.lr_init);
  r.get("weight_decay", c.weight_decay);
  r.get("crop", c.crop);
  r.get("seed", c.seed);
  r.get("levels", c.levels);
  r.get("augment", c.augment);
  r.get("log_every", c.log_every);
  r.get("checkpoint_every", c.checkpoint_every);
  if (const Json* w = r.sub("weights")) c.weights = loss_weights_from_json(*w, c.weights);
  if (const Json* m = r.sub("model")) c.model = model_config_from_json(*m, c.model);
  r.finish();
  return rethrow_as_config_error([&] {
    c.validate();
    return c;
  });
}

Json to_json(const SynthConfig& c) {
  return {{"count", c.count},         {"size", c.size},         {"cases", c.cases},
          {"max_shift", c.max_shift}, {"random_t", c.random_t}, {"shared_endpoints", c.shared_endpoints},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const Json& j, SynthConfig c) {
  StrictReader r(j, "synth");
  r.get("count", c.count);
  r.get("size", c.size);
  r.get("cases", c.cases);
  r.get("max_shift", c.max_shift);
  r.get("random_t", c.random_t);
  r.get("shared_endpoints", c.shared_endpoints);
  r.get("seed", c.seed);
  r.finish();
  return rethrow_as_config_error([&] {
    c.validate();
    return c;
  });
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace bimvfi
