#include "confoundnet/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "confoundnet/error.hpp"

namespace confoundnet {

namespace {

template <typename T>
void read_field(const Json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

double number_or_nan(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

void require_known_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                        std::string_view where) {
  if (!object.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& item : object.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw ConfigError("unknown key '" + item.key() + "' in " + std::string(where));
    }
  }
}

Json to_json(const NetworkConfig& config) {
  Json conv = Json::array();
  for (const ConvLayerSpec& c : config.conv) {
    conv.push_back({{"filters", c.filters}, {"kernel", c.kernel}, {"pad", c.pad},
                    {"stride", c.stride}, {"pool", c.pool}});
  }
  return Json{{"channels", config.channels},
              {"height", config.height},
              {"width", config.width},
              {"conv", conv},
              {"hidden", config.hidden},
              {"classes", config.classes},
              {"pose_mode", std::string(to_string(config.pose_mode))},
              {"pose_tap", config.pose_tap ? Json(*config.pose_tap) : Json(nullptr)},
              {"init_std", config.init_std}};
}

NetworkConfig network_config_from_json(const Json& j) {
  constexpr std::string_view where = "network";
  require_known_keys(j, {"channels", "height", "width", "conv", "hidden", "classes", "pose_mode",
                         "pose_tap", "init_std"},
                     where);
  NetworkConfig config;
  read_field(j, "channels", config.channels, where);
  read_field(j, "height", config.height, where);
  read_field(j, "width", config.width, where);
  read_field(j, "hidden", config.hidden, where);
  read_field(j, "classes", config.classes, where);
  read_field(j, "init_std", config.init_std, where);
  if (j.contains("conv")) {
    if (!j["conv"].is_array()) throw ConfigError("network.conv must be an array");
    config.conv.clear();
    for (const Json& layer : j["conv"]) {
      require_known_keys(layer, {"filters", "kernel", "pad", "stride", "pool"}, "network.conv[]");
      ConvLayerSpec spec;
      read_field(layer, "filters", spec.filters, "network.conv[]");
      read_field(layer, "kernel", spec.kernel, "network.conv[]");
      read_field(layer, "pad", spec.pad, "network.conv[]");
      read_field(layer, "stride", spec.stride, "network.conv[]");
      read_field(layer, "pool", spec.pool, "network.conv[]");
      config.conv.push_back(spec);
    }
  }
  if (j.contains("pose_mode")) {
    const auto text = j["pose_mode"].is_string() ? j["pose_mode"].get<std::string>() : "";
    const auto mode = parse_pose_mode(text);
    if (!mode) throw ConfigError("network.pose_mode must be none, azimuth or quaternion");
    config.pose_mode = *mode;
  }
  if (j.contains("pose_tap") && !j["pose_tap"].is_null()) {
    std::size_t tap = 0;
    read_field(j, "pose_tap", tap, where);
    config.pose_tap = tap;
  }
  return config;
}

Json to_json(const HyperParams& hp) {
  return Json{{"batch_size", hp.batch_size}, {"momentum", hp.momentum},
              {"weight_decay", hp.weight_decay}, {"learning_rate", hp.learning_rate},
              {"lambda", hp.lambda}, {"epochs", hp.epochs},
              {"seed", hp.seed}, {"init_std", hp.init_std}};
}

HyperParams hyper_params_from_json(const Json& j) {
  constexpr std::string_view where = "train";
  require_known_keys(j, {"batch_size", "momentum", "weight_decay", "learning_rate", "lambda",
                         "epochs", "seed", "init_std"},
                     where);
  HyperParams hp;
  read_field(j, "batch_size", hp.batch_size, where);
  read_field(j, "momentum", hp.momentum, where);
  read_field(j, "weight_decay", hp.weight_decay, where);
  read_field(j, "learning_rate", hp.learning_rate, where);
  read_field(j, "lambda", hp.lambda, where);
  read_field(j, "epochs", hp.epochs, where);
  read_field(j, "seed", hp.seed, where);
  read_field(j, "init_std", hp.init_std, where);
  return hp;
}

Json to_json(const SynthConfig& cfg) {
  return Json{{"classes", cfg.classes},
              {"image_size", cfg.image_size},
              {"train_per_class", cfg.train_per_class},
              {"test_per_class", cfg.test_per_class},
              {"train_nuisance", cfg.train_nuisance},
              {"test_nuisance", cfg.test_nuisance},
              {"nuisance_jitter", cfg.nuisance_jitter},
              {"scale_per_degree", cfg.scale_per_degree},
              {"noise_std", cfg.noise_std},
              {"speckle_std", cfg.speckle_std},
              {"seed", cfg.seed}};
}

SynthConfig synth_config_from_json(const Json& j) {
  constexpr std::string_view where = "data.synthetic";
  require_known_keys(j, {"classes", "image_size", "train_per_class", "test_per_class",
                         "train_nuisance", "test_nuisance", "nuisance_jitter", "scale_per_degree",
                         "noise_std", "speckle_std", "seed"},
                     where);
  SynthConfig cfg;
  read_field(j, "classes", cfg.classes, where);
  read_field(j, "image_size", cfg.image_size, where);
  read_field(j, "train_per_class", cfg.train_per_class, where);
  read_field(j, "test_per_class", cfg.test_per_class, where);
  read_field(j, "train_nuisance", cfg.train_nuisance, where);
  read_field(j, "test_nuisance", cfg.test_nuisance, where);
  read_field(j, "nuisance_jitter", cfg.nuisance_jitter, where);
  read_field(j, "scale_per_degree", cfg.scale_per_degree, where);
  read_field(j, "noise_std", cfg.noise_std, where);
  read_field(j, "speckle_std", cfg.speckle_std, where);
  read_field(j, "seed", cfg.seed, where);
  return cfg;
}

Json to_json(const Metrics& metrics) {
  Json epochs = Json::array();
  for (const EpochRecord& r : metrics.epochs) {
    epochs.push_back({{"epoch", r.epoch},
                      {"combined_loss", number_or_null(r.combined_loss)},
                      {"class_loss", number_or_null(r.class_loss)},
                      {"pose_loss", number_or_null(r.pose_loss)},
                      {"train_acc", number_or_null(r.train_acc)},
                      {"test_acc", number_or_null(r.test_acc)},
                      {"mean_pose_err", r.mean_pose_err ? number_or_null(*r.mean_pose_err)
                                                        : Json(nullptr)}});
  }
  const auto counts = metrics.confusion.counts();
  return Json{{"epochs", epochs},
              {"confusion",
               {{"classes", metrics.confusion.classes()},
                {"counts", std::vector<std::size_t>(counts.begin(), counts.end())}}}};
}

Metrics metrics_from_json(const Json& j) {
  Metrics metrics;
  try {
    for (const Json& e : j.at("epochs")) {
      EpochRecord r;
      r.epoch = e.at("epoch").get<std::size_t>();
      r.combined_loss = number_or_nan(e.at("combined_loss"));
      r.class_loss = number_or_nan(e.at("class_loss"));
      r.pose_loss = number_or_nan(e.at("pose_loss"));
      r.train_acc = number_or_nan(e.at("train_acc"));
      r.test_acc = number_or_nan(e.at("test_acc"));
      if (!e.at("mean_pose_err").is_null()) r.mean_pose_err = e.at("mean_pose_err").get<double>();
      metrics.epochs.push_back(r);
    }
    const Json& conf = j.at("confusion");
    const auto classes = conf.at("classes").get<std::size_t>();
    metrics.confusion =
        ConfusionMatrix::from_counts(classes, conf.at("counts").get<std::vector<std::size_t>>());
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed metrics: ") + e.what());
  }
  return metrics;
}

}  // namespace confoundnet
