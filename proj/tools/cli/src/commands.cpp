#include "confoundnet_cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "confoundnet/error.hpp"

namespace confoundnet::cli {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string signed_fixed(double v, int digits) {
  std::ostringstream s;
  s << std::showpos << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void write_metrics(const fs::path& dir, const Network& net, const HyperParams& hp,
                   const Metrics& metrics, const std::vector<std::string>& class_names) {
  ensure_dir(dir);
  checkpoint_save(net, hp, metrics, dir / kCheckpointFile, class_names);
  {
    auto f = open_output(dir / kMetricsFile);
    write_metrics_csv(f, metrics);
  }
  auto f = open_output(dir / kConfusionFile);
  write_confusion_csv(f, metrics.confusion, class_names);
}

void print_epoch(std::ostream& out, const EpochRecord& e) {
  out << "epoch " << e.epoch << "  loss " << fixed(e.combined_loss, 4) << "  class "
      << fixed(e.class_loss, 4) << "  pose " << fixed(e.pose_loss, 4) << "  train_acc "
      << fixed(e.train_acc, 2) << "  test_acc " << fixed(e.test_acc, 2);
  if (e.mean_pose_err) out << "  pose_err " << fixed(*e.mean_pose_err, 4);
  out << std::endl;
}

void print_confusion(std::ostream& out, const ConfusionMatrix& m,
                     const std::vector<std::string>& names) {
  const std::vector<double> pct = m.percent();
  out << "confusion (percent; rows truth, columns prediction)\n";
  for (std::size_t t = 0; t < m.classes(); ++t) {
    out << "  " << std::left << std::setw(12) << (t < names.size() ? names[t] : std::to_string(t))
        << std::right;
    for (std::size_t p = 0; p < m.classes(); ++p) out << std::setw(8) << fixed(pct[t * m.classes() + p], 2);
    out << "   (n=" << m.row_total(t) << ")\n";
  }
}

}  // namespace

RunConfig resolve_config(const Options& options, bool seed_sets_data) {
  RunConfig config = options.config ? load_run_config(*options.config) : RunConfig{};
  if (options.out) config.output_dir = *options.out;
  if (options.data) config.data.path = *options.data;
  if (options.seed) {
    if (seed_sets_data) {
      config.data.synthetic.seed = *options.seed;
    } else {
      config.train.seed = *options.seed;
    }
  }
  config.output_dir = fs::absolute(config.output_dir).lexically_normal();
  if (config.data.path) config.data.path = fs::absolute(*config.data.path).lexically_normal();
  return config;
}

PreparedData prepare_data(const DataSource& source) {
  const Dataset ds = source.path ? load_dataset(*source.path) : synth_generate(source.synthetic);
  PreparedData prepared;
  prepared.class_names = ds.class_names;
  std::vector<Chip> train = ds.split(Split::train);
  if (source.flip_augment) train = flip_augment(train);
  prepared.train = normalize(std::move(train));
  prepared.test = normalize(ds.split(Split::test));
  if (prepared.train.empty()) throw DataError("dataset has no training chips");
  return prepared;
}

NetworkConfig fit_network_to_data(const RunConfig& config, const PreparedData& data) {
  NetworkConfig net = config.network;
  const Chip& first = data.train.front();
  net.channels = first.image.dim(0);
  net.height = first.image.dim(1);
  net.width = first.image.dim(2);
  net.classes = data.class_names.size();
  net.init_std = config.train.init_std;
  net.validate();
  return net;
}

int cmd_gen_data(const Options& options, std::ostream& out) {
  RunConfig config = resolve_config(options, true);
  if (config.data.path) throw UsageError("gen-data writes synthetic chips; remove data.path");
  const fs::path dir = config.output_dir;
  if (fs::exists(dir) && !fs::is_empty(dir) && !options.force) {
    throw UsageError(dir.string() + " exists and is not empty (use --force to overwrite)");
  }
  const Dataset ds = synth_generate(config.data.synthetic);
  export_dataset(ds, dir);
  write_run_config(config, dir / kResolvedConfigFile);

  out << "wrote " << ds.chips.size() << " chips to " << dir.string() << '\n';
  out << std::left << std::setw(14) << "class" << std::right << std::setw(8) << "train"
      << std::setw(8) << "test" << '\n';
  for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
    std::size_t n_train = 0, n_test = 0;
    for (const Chip& chip : ds.chips) {
      if (chip.class_label != static_cast<int>(c)) continue;
      (chip.split == Split::train ? n_train : n_test) += 1;
    }
    out << std::left << std::setw(14) << ds.class_names[c] << std::right << std::setw(8) << n_train
        << std::setw(8) << n_test << '\n';
  }
  return 0;
}

int cmd_train(const Options& options, std::ostream& out) {
  RunConfig config = resolve_config(options);
  const PreparedData data = prepare_data(config.data);
  config.network = fit_network_to_data(config, data);
  ensure_dir(config.output_dir);
  write_run_config(config, config.output_dir / kResolvedConfigFile);

  out << "training " << (config.network.pose_mode == PoseMode::none ? "baseline" : "pose-aware")
      << " network on " << data.train.size() << " chips, seed " << config.train.seed << std::endl;
  const Network net = Network::build(config.network, config.train.seed);
  const TrainResult r =
      train(net, data.train, data.test, config.train, [&](const EpochRecord& e) { print_epoch(out, e); });
  write_metrics(config.output_dir, r.net, config.train, r.metrics, data.class_names);
  print_confusion(out, r.metrics.confusion, data.class_names);
  out << "wrote " << (config.output_dir / kCheckpointFile).string() << '\n';
  return 0;
}

int cmd_eval(const Options& options, std::ostream& out) {
  if (!options.checkpoint) throw UsageError("eval needs --checkpoint");
  const Checkpoint ck = checkpoint_load(*options.checkpoint);

  std::vector<Chip> test;
  std::vector<std::string> names = ck.class_names;
  if (options.data || options.config) {
    RunConfig config = resolve_config(options);
    PreparedData data = prepare_data(config.data);
    test = std::move(data.test);
    if (names.empty()) names = data.class_names;
  } else {
    throw UsageError("eval needs --data DIR or --config PATH to locate the test split");
  }
  if (test.empty()) throw DataError("dataset has no test chips");

  Network net = ck.net;
  if (options.strip_pose) {
    if (!net.has_pose_head()) throw StateError("--strip-pose given but the checkpoint has no pose head");
    Network stripped = net.strip_pose_head();
    std::vector<std::size_t> idx(std::min<std::size_t>(test.size(), 100));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const Tensor probe = make_batch(test, idx);
    const Tensor before = net.logits(probe);
    const Tensor after = stripped.logits(probe);
    if (!std::equal(before.data().begin(), before.data().end(), after.data().begin())) {
      throw VerificationError("class logits changed after removing the pose head");
    }
    out << "pose head removed; class logits unchanged on " << idx.size() << " probe chips\n";
    net = std::move(stripped);
  }

  const EvalResult r = evaluate(net, test, ck.hp.batch_size);
  out << "test chips " << r.confusion.total() << '\n';
  out << "accuracy " << std::setprecision(17) << r.accuracy << std::defaultfloat << '\n';
  if (r.mean_pose_error) out << "mean pose error (rad) " << std::setprecision(17) << *r.mean_pose_error << '\n';
  out << std::setprecision(6);
  print_confusion(out, r.confusion, names);
  if (options.out) {
    ensure_dir(*options.out);
    auto f = open_output(*options.out / kConfusionFile);
    write_confusion_csv(f, r.confusion, names);
  }
  return 0;
}

namespace {

struct AbRow {
  std::uint64_t seed = 0;
  double baseline = 0.0;
  double pose = 0.0;
  double pose_err = 0.0;
};

AbRow run_pair(const RunConfig& config, const PreparedData& data, std::uint64_t seed) {
  NetworkConfig pose_cfg = config.network;
  NetworkConfig base_cfg = pose_cfg;
  base_cfg.pose_mode = PoseMode::none;
  base_cfg.pose_tap.reset();
  const Network pose_net = Network::build(pose_cfg, seed);
  const Network base_net = Network::build(base_cfg, seed);
  if (!pose_net.strip_pose_head().same_parameters(base_net)) {
    throw VerificationError("seed " + std::to_string(seed) + ": shared parameters differ between the pair");
  }

  HyperParams hp = config.train;
  hp.seed = seed;
  HyperParams base_hp = hp;
  base_hp.lambda = 0.0;
  const fs::path dir = config.output_dir / ("seed_" + std::to_string(seed));

  const TrainResult base = train(base_net, data.train, data.test, base_hp);
  write_metrics(dir / "baseline", base.net, base_hp, base.metrics, data.class_names);
  const TrainResult pose = train(pose_net, data.train, data.test, hp);
  write_metrics(dir / "pose", pose.net, hp, pose.metrics, data.class_names);

  const EvalResult b = evaluate(base.net, data.test, hp.batch_size);
  const EvalResult p = evaluate(pose.net, data.test, hp.batch_size);
  return {seed, b.accuracy, p.accuracy, p.mean_pose_error.value_or(0.0)};
}

}  // namespace

int cmd_ab(const Options& options, std::ostream& out, std::ostream& warn) {
  RunConfig config = resolve_config(options);
  if (options.seed) config.ab_seeds = {*options.seed};
  if (config.ab_seeds.empty()) throw ConfigError("ab_seeds is empty");
  if (config.ab_seeds.size() < 2) {
    warn << "warning: A/B comparison with fewer than 2 seeds says little about the direction\n";
  }
  if (config.network.pose_mode == PoseMode::none) {
    throw ConfigError("A/B comparison needs network.pose_mode azimuth or quaternion");
  }
  const PreparedData data = prepare_data(config.data);
  config.network = fit_network_to_data(config, data);
  if (data.test.empty()) throw DataError("A/B comparison needs a test split");
  ensure_dir(config.output_dir);
  write_run_config(config, config.output_dir / kResolvedConfigFile);

  const std::size_t n = config.ab_seeds.size();
  std::vector<AbRow> rows(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  std::mutex out_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        rows[i] = run_pair(config, data, config.ab_seeds[i]);
        std::lock_guard lock(out_mutex);
        out << "seed " << rows[i].seed << " done" << std::endl;
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(worker_threads(), n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : failures) {
    if (e) std::rethrow_exception(e);
  }

  AbRow mean;
  for (const AbRow& r : rows) {
    mean.baseline += r.baseline / static_cast<double>(n);
    mean.pose += r.pose / static_cast<double>(n);
    mean.pose_err += r.pose_err / static_cast<double>(n);
  }

  {
    auto f = open_output(config.output_dir / kAbFile);
    f << "seed,baseline_acc,pose_acc,delta_pp,pose_err_rad\n" << std::setprecision(17);
    for (const AbRow& r : rows) {
      f << r.seed << ',' << r.baseline << ',' << r.pose << ',' << r.pose - r.baseline << ','
        << r.pose_err << '\n';
    }
    f << "mean," << mean.baseline << ',' << mean.pose << ',' << mean.pose - mean.baseline << ','
      << mean.pose_err << '\n';
  }

  out << std::setw(6) << "seed" << std::setw(12) << "baseline" << std::setw(12) << "pose-aware"
      << std::setw(10) << "delta" << std::setw(12) << "pose_err" << '\n';
  auto row = [&](const std::string& label, const AbRow& r) {
    out << std::setw(6) << label << std::setw(12) << fixed(r.baseline, 2) << std::setw(12)
        << fixed(r.pose, 2) << std::setw(10) << signed_fixed(r.pose - r.baseline, 2) << std::setw(12) << fixed(r.pose_err, 4) << '\n';
  };
  for (const AbRow& r : rows) row(std::to_string(r.seed), r);
  row("mean", mean);
  return 0;
}

std::size_t worker_threads() {
  const char* env = std::getenv("CONFOUNDNET_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (end == env || *end != '\0' || v == 0) return 1;
  return v;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose-aware convolutional network trainer"};
  app.require_subcommand(1);
  app.fallthrough();

  Options options;
  std::string config, out_dir, checkpoint, data;
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config, "JSON run config");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Seed override");
  app.add_flag("--force", options.force, "Overwrite a nonempty output directory");
  app.add_flag("--strip-pose", options.strip_pose, "Remove the pose head before evaluating");
  auto* ckpt_opt = app.add_option("--checkpoint", checkpoint, "Checkpoint file (eval)");
  auto* data_opt = app.add_option("--data", data, "Dataset directory");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  auto* train_cmd = app.add_subcommand("train", "Train one network");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  auto* grad = app.add_subcommand("gradcheck", "Verify every backward pass by finite differences");
  auto* ab = app.add_subcommand("ab", "Matched baseline vs pose-aware comparison");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  if (*config_opt) options.config = config;
  if (*out_opt) options.out = out_dir;
  if (*seed_opt) options.seed = seed;
  if (*ckpt_opt) options.checkpoint = checkpoint;
  if (*data_opt) options.data = data;

  try {
    if (*gen) return cmd_gen_data(options, out);
    if (*train_cmd) return cmd_train(options, out);
    if (*eval) return cmd_eval(options, out);
    if (*grad) return cmd_gradcheck(options, out);
    if (*ab) return cmd_ab(options, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace confoundnet::cli
