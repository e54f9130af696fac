#include "confoundnet_cli/run_config.hpp"

#include <fstream>

#include "confoundnet/error.hpp"

namespace confoundnet::cli {

namespace fs = std::filesystem;

NetworkConfig GradcheckSettings::default_network() {
  NetworkConfig net;
  net.height = 16;
  net.width = 16;
  net.conv = {{4, 3, 1, 1, true}, {6, 3, 1, 1, true}, {8, 3, 1, 1, true}};
  net.hidden = 10;
  net.classes = 4;
  net.pose_mode = PoseMode::azimuth;
  return net;
}

namespace {

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

DataSource data_from_json(const Json& j) {
  require_known_keys(j, {"synthetic", "path", "flip_augment"}, "data");
  DataSource data;
  if (j.contains("synthetic")) data.synthetic = synth_config_from_json(j["synthetic"]);
  if (j.contains("path") && !j["path"].is_null()) {
    if (!j["path"].is_string()) throw ConfigError("data.path must be a string");
    data.path = fs::path(j["path"].get<std::string>());
  }
  read(j, "flip_augment", data.flip_augment, "data");
  data.synthetic.validate();
  return data;
}

Json to_json(const DataSource& data) {
  return Json{{"synthetic", to_json(data.synthetic)},
              {"path", data.path ? Json(data.path->string()) : Json(nullptr)},
              {"flip_augment", data.flip_augment}};
}

GradcheckSettings gradcheck_from_json(const Json& j) {
  require_known_keys(j, {"instances", "eps", "smooth_tolerance", "tolerance", "seed", "network",
                         "init_std", "batch"},
                     "gradcheck");
  GradcheckSettings g;
  read(j, "instances", g.instances, "gradcheck");
  read(j, "eps", g.eps, "gradcheck");
  read(j, "smooth_tolerance", g.smooth_tolerance, "gradcheck");
  read(j, "tolerance", g.tolerance, "gradcheck");
  read(j, "seed", g.seed, "gradcheck");
  read(j, "init_std", g.init_std, "gradcheck");
  read(j, "batch", g.batch, "gradcheck");
  if (j.contains("network")) {
    Json net = to_json(GradcheckSettings::default_network());
    for (const auto& item : j["network"].items()) net[item.key()] = item.value();
    require_known_keys(j["network"], {"channels", "height", "width", "conv", "hidden", "classes",
                                      "pose_mode", "pose_tap", "init_std"},
                       "gradcheck.network");
    g.network = network_config_from_json(net);
  }
  if (g.instances == 0 || g.batch == 0) throw ConfigError("gradcheck.instances and batch must be positive");
  if (!(g.eps > 0.0)) throw ConfigError("gradcheck.eps must be positive");
  if (g.network.pose_mode == PoseMode::none) {
    throw ConfigError("gradcheck.network needs a pose head to check the combined objective");
  }
  g.network.init_std = g.init_std;
  g.network.validate();
  return g;
}

Json to_json(const GradcheckSettings& g) {
  Json net = to_json(g.network);
  net.erase("init_std");
  return Json{{"instances", g.instances},
              {"eps", g.eps},
              {"smooth_tolerance", g.smooth_tolerance},
              {"tolerance", g.tolerance},
              {"seed", g.seed},
              {"network", net},
              {"init_std", g.init_std},
              {"batch", g.batch}};
}

}  // namespace

RunConfig run_config_from_json(const Json& j) {
  require_known_keys(j, {"data", "network", "train", "output_dir", "ab_seeds", "gradcheck"}, "config");
  RunConfig config;
  if (j.contains("data")) config.data = data_from_json(j["data"]);
  if (j.contains("train")) config.train = hyper_params_from_json(j["train"]);
  config.train.validate();
  if (j.contains("network")) {
    const Json& net = j["network"];
    config.network = network_config_from_json(net);
    if (net.contains("init_std") && config.network.init_std != config.train.init_std) {
      throw ConfigError("network.init_std disagrees with train.init_std; set it in train only");
    }
  }
  config.network.init_std = config.train.init_std;
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string()) throw ConfigError("output_dir must be a string");
    config.output_dir = j["output_dir"].get<std::string>();
  }
  read(j, "ab_seeds", config.ab_seeds, "config");
  if (config.ab_seeds.empty()) throw ConfigError("ab_seeds must list at least one seed");
  if (j.contains("gradcheck")) config.gradcheck = gradcheck_from_json(j["gradcheck"]);
  return config;
}

Json to_json(const RunConfig& config) {
  Json net = to_json(config.network);
  net.erase("init_std");
  return Json{{"data", to_json(config.data)},
              {"network", net},
              {"train", to_json(config.train)},
              {"output_dir", config.output_dir.string()},
              {"ab_seeds", config.ab_seeds},
              {"gradcheck", to_json(config.gradcheck)}};
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void write_run_config(const RunConfig& config, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace confoundnet::cli
