// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "confoundnet/checkpoint.hpp"
#include "confoundnet/data.hpp"
#include "confoundnet/error.hpp"
#include "confoundnet/kernels.hpp"
#include "confoundnet/network.hpp"
#include "confoundnet/pose.hpp"
#include "confoundnet_cli/commands.hpp"
#include "oracles/oracles.hpp"

namespace fs = std::filesystem;
using namespace confoundnet;
using namespace confoundnet::cli;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream l(line);
    for (std::string cell; std::getline(l, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

Quaternion random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

Quaternion negated(const Quaternion& q) { return {-q.w, -q.x, -q.y, -q.z}; }

/// Shared state between criteria: the trained runs are reused.
struct Context {
  fs::path workdir;
  fs::path config;
  RunConfig desk;
  fs::path train_dir;
  fs::path ab_dir;
  double train_seconds = 0.0;
  bool train_ok = false;
  std::string train_error;
};

Options options_for(const Context& ctx, const fs::path& out) {
  Options o;
  o.config = ctx.config;
  o.out = out;
  return o;
}

// 1. Gradient verification.
Outcome gradient_verification(const Context&) {
  const auto start = Clock::now();
  const GradcheckSettings settings;
  const std::vector<GradcheckLine> lines = run_gradcheck(settings);
  const double elapsed = seconds_since(start);
  Outcome o{elapsed < 120.0, ""};
  std::string worst;
  for (const GradcheckLine& l : lines) {
    const bool ok = l.passed() && l.instances >= 20 && l.checked > 0 && settings.eps == 1e-5;
    o.pass = o.pass && ok;
    if (!ok) worst += " " + l.component + "=" + fmt(l.max_rel_error, 3);
  }
  const bool smooth_ok = std::all_of(lines.begin(), lines.end(), [&](const GradcheckLine& l) {
    const bool smooth = l.component == "conv2d" || l.component == "fc" || l.component == "softmax_logloss";
    return !smooth || l.tolerance <= 1e-6;
  });
  o.pass = o.pass && smooth_ok && lines.size() == 8;
  o.detail = std::to_string(lines.size()) + " components, " + fmt(elapsed, 3) + " s" +
             (worst.empty() ? "" : ";" + worst);
  return o;
}

// 2. Rotation-metric suite.
Outcome rotation_metric(const Context&) {
  std::mt19937_64 rng(20170301);
  std::uniform_real_distribution<double> angle(-4.0 * std::numbers::pi, 4.0 * std::numbers::pi);
  constexpr int kSamples = 100000;
  std::size_t bad_range = 0, bad_sym = 0, bad_sign = 0, bad_tri = 0, bad_consistency = 0;
  const double half_pi = std::numbers::pi / 2.0;
  for (int i = 0; i < kSamples; ++i) {
    const Quaternion a = random_unit(rng), b = random_unit(rng), c = random_unit(rng);
    const double ab = quat_dist(a, b);
    if (!(ab >= 0.0 && ab <= half_pi)) ++bad_range;
    if (ab != quat_dist(b, a)) ++bad_sym;
    if (ab != quat_dist(a, negated(b))) ++bad_sign;
    if (quat_dist(a, c) > ab + quat_dist(b, c) + 1e-12) ++bad_tri;

    const Azimuth t1(angle(rng)), t2(angle(rng));
    const double az = azimuth_dist(t1, t2);
    if (!(az >= 0.0 && az <= half_pi)) ++bad_range;
    if (az != azimuth_dist(t2, t1)) ++bad_sym;
    if (std::abs(az - quat_dist(quat_from_azimuth(t1), quat_from_azimuth(t2))) > 1e-12) ++bad_consistency;
  }
  const double p0 = azimuth_dist(Azimuth(0.0), Azimuth(0.0));
  const double p1 = azimuth_dist(Azimuth(0.0), Azimuth(std::numbers::pi));
  const double p2 = azimuth_dist(Azimuth(0.0), Azimuth(std::numbers::pi / 2.0));
  const bool points = std::abs(p0) <= 1e-12 && std::abs(p1 - half_pi) <= 1e-12 &&
                      std::abs(p2 - std::numbers::pi / 4.0) <= 1e-12;
  const std::size_t failures = bad_range + bad_sym + bad_sign + bad_tri + bad_consistency;
  return {failures == 0 && points,
          "1e5 samples; violations range " + std::to_string(bad_range) + " symmetry " +
              std::to_string(bad_sym) + " sign " + std::to_string(bad_sign) + " triangle " +
              std::to_string(bad_tri) + " consistency " + std::to_string(bad_consistency) +
              "; analytic points " + (points ? "ok" : "off")};
}

// 3. Parameter-count identity.
Outcome parameter_count(const Context&) {
  std::mt19937_64 rng(33);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::size_t matched = 0;
  std::string last;
  for (int i = 0; i < 10; ++i) {
    NetworkConfig cfg;
    cfg.height = cfg.width = 8 * pick(1, 4);
    cfg.channels = pick(1, 3);
    cfg.conv.clear();
    const std::size_t layers = pick(1, 3);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t k = 2 * pick(0, 2) + 1;
      cfg.conv.push_back({pick(1, 12), k, k / 2, 1, l < 2});
    }
    cfg.hidden = pick(1, 200);
    cfg.classes = pick(2, 10);
    cfg.pose_mode = i % 2 == 0 ? PoseMode::azimuth : PoseMode::quaternion;
    NetworkConfig base = cfg;
    base.pose_mode = PoseMode::none;
    const std::size_t diff = Network::build(cfg, 1).parameter_count() - Network::build(base, 1).parameter_count();
    const std::size_t expected = (cfg.hidden + 1) * pose_dim(cfg.pose_mode);
    if (diff == expected) ++matched;
    last = "N(k)=" + std::to_string(cfg.hidden) + " p_d=" + std::to_string(pose_dim(cfg.pose_mode)) +
           " diff " + std::to_string(diff);
  }
  return {matched == 10, std::to_string(matched) + "/10 configs match; last " + last};
}

// 4. Head-removal contract.
Outcome head_removal(const Context& ctx) {
  // Trained weights when available: a fresh network's logits are nearly flat.
  NetworkConfig cfg = ctx.desk.network;
  cfg.init_std = ctx.desk.train.init_std;
  const Network net = ctx.train_ok ? checkpoint_load(ctx.train_dir / kCheckpointFile).net : Network::build(cfg, 4);
  const Network stripped = net.strip_pose_head();
  std::mt19937_64 rng(44);
  std::size_t identical = 0;
  for (int i = 0; i < 100; ++i) {
    const Tensor x = oracle::random_tensor(
        Shape{1, ctx.desk.network.channels, ctx.desk.network.height, ctx.desk.network.width}, rng);
    const Tensor a = net.logits(x), b = stripped.logits(x);
    if (std::equal(a.data().begin(), a.data().end(), b.data().begin())) ++identical;
  }
  if (!ctx.train_ok) return {false, "trained checkpoint unavailable: " + ctx.train_error};

  auto eval_line = [&](bool strip) {
    Options o = options_for(ctx, ctx.workdir / (strip ? "eval_stripped" : "eval_full"));
    o.checkpoint = ctx.train_dir / kCheckpointFile;
    o.strip_pose = strip;
    std::ostringstream out;
    cmd_eval(o, out);
    std::istringstream in(out.str());
    for (std::string line; std::getline(in, line);) {
      if (line.rfind("accuracy ", 0) == 0) return line;
    }
    return std::string("missing");
  };
  const std::string full = eval_line(false), cut = eval_line(true);
  return {identical == 100 && full == cut && full != "missing",
          std::to_string(identical) + "/100 logit rows bitwise equal; eval '" + full + "' vs stripped '" +
              cut + "'"};
}

// 5. Flip-augmentation contract.
Outcome flip_contract(const Context& ctx) {
  const Dataset ds = synth_generate(ctx.desk.data.synthetic);
  const std::vector<Chip> train = ds.split(Split::train);
  const std::vector<Chip> test = ds.split(Split::test);
  const std::vector<Chip> aug = flip_augment(train);
  bool ok = aug.size() == 2 * train.size();
  std::size_t bad_azimuth = 0, bad_double = 0, originals_changed = 0;
  const std::size_t n = train.size();
  for (std::size_t i = 0; i < aug.size() && ok; ++i) {
    const Chip& a = aug[i];
    if (!a.augmented) {
      const auto it = std::find_if(train.begin(), train.end(), [&](const Chip& c) { return c.name == a.name; });
      if (it == train.end() || !std::equal(a.image.data().begin(), a.image.data().end(), it->image.data().begin()) ||
          it->azimuth->radians() != a.azimuth->radians()) {
        ++originals_changed;
      }
    }
  }
  std::size_t flipped = 0;
  for (const Chip& a : aug) flipped += a.augmented ? 1 : 0;
  for (const Chip& c : train) {
    const Chip f = flip_chip(c);
    if (azimuth_dist(*f.azimuth, negate_azimuth(*c.azimuth)) != 0.0 ||
        f.azimuth->radians() != negate_azimuth(*c.azimuth).radians()) {
      ++bad_azimuth;
    }
    const Chip back = flip_chip(f);
    if (!std::equal(back.image.data().begin(), back.image.data().end(), c.image.data().begin()) ||
        back.azimuth->radians() != c.azimuth->radians()) {
      ++bad_double;
    }
  }
  bool test_rejected = false;
  try {
    flip_augment(test);
  } catch (const UsageError&) {
    test_rejected = true;
  }
  // The training pipeline only ever augments the train split.
  const PreparedData prepared = prepare_data(ctx.desk.data);
  const bool pipeline = prepared.train.size() == 2 * n && prepared.test.size() == test.size() &&
                        std::none_of(prepared.test.begin(), prepared.test.end(),
                                     [](const Chip& c) { return c.augmented; });
  ok = ok && flipped == n && bad_azimuth == 0 && bad_double == 0 && originals_changed == 0 &&
       test_rejected && pipeline;
  return {ok, std::to_string(n) + " -> " + std::to_string(aug.size()) + " train chips; azimuth mismatches " +
                  std::to_string(bad_azimuth) + ", double-flip mismatches " + std::to_string(bad_double) +
                  ", test split " + (test_rejected ? "rejected" : "accepted")};
}

// 6. Training sanity.
Outcome training_sanity(const Context& ctx) {
  if (!ctx.train_ok) return {false, "training failed: " + ctx.train_error};
  const auto rows = read_csv(ctx.train_dir / kMetricsFile);
  if (rows.size() < 3) return {false, "metrics file has too few rows"};
  const auto& first = rows[1];
  const auto& last = rows.back();
  const double loss0 = std::stod(first[1]), loss1 = std::stod(last[1]);
  const double err0 = std::stod(first[6]), err1 = std::stod(last[6]);
  const bool pass = loss1 < 0.5 * loss0 && err1 < 0.5 * err0 && ctx.train_seconds < 15 * 60;
  return {pass, "loss " + fmt(loss0) + " -> " + fmt(loss1) + ", pose error " + fmt(err0) + " -> " +
                    fmt(err1) + " rad, " + fmt(ctx.train_seconds, 4) + " s, final test acc " +
                    fmt(std::stod(last[5]))};
}

// 7. A/B direction.
Outcome ab_direction(const Context& ctx) {
  std::ostringstream out, warn;
  try {
    cmd_ab(options_for(ctx, ctx.ab_dir), out, warn);
  } catch (const std::exception& e) {
    return {false, std::string("ab failed: ") + e.what()};
  }
  const auto rows = read_csv(ctx.ab_dir / kAbFile);
  const auto& mean = rows.back();
  const std::size_t seeds = rows.size() - 2;
  const double base = std::stod(mean[1]), pose = std::stod(mean[2]), delta = std::stod(mean[3]);
  std::cout << out.str();
  const bool pass = seeds >= 5 && base >= 85.0 && base <= 97.0 && pose >= base - 0.5;
  return {pass, std::to_string(seeds) + " seeds; baseline mean " + fmt(base, 5) + "%, pose-aware mean " +
                    fmt(pose, 5) + "%, signed mean delta " + (delta >= 0 ? "+" : "") + fmt(delta, 4) +
                    " pp (reference on MSTAR: 99.03% -> 99.50%)"};
}

// 8. Determinism.
Outcome determinism(const Context& ctx) {
  std::vector<std::string> mismatches;
  auto compare = [&](const fs::path& a, const fs::path& b) {
    if (!fs::exists(a) || !fs::exists(b) || slurp(a) != slurp(b)) {
      mismatches.push_back(fs::relative(b, ctx.workdir).string());
    }
  };
  std::ostringstream sink;
  // gen-data twice.
  for (const char* d : {"gen_a", "gen_b"}) {
    Options o = options_for(ctx, ctx.workdir / d);
    o.force = true;
    cmd_gen_data(o, sink);
  }
  compare(ctx.workdir / "gen_a" / kMetadataFile, ctx.workdir / "gen_b" / kMetadataFile);
  for (const auto& e : fs::directory_iterator(ctx.workdir / "gen_a")) {
    if (e.path().extension() == ".pd") compare(e.path(), ctx.workdir / "gen_b" / e.path().filename());
  }
  // The full training run repeated inside the A/B comparison (seed matches).
  if (ctx.train_ok && ctx.desk.train.seed == ctx.desk.ab_seeds.front()) {
    const fs::path repeat = ctx.ab_dir / ("seed_" + std::to_string(ctx.desk.train.seed)) / "pose";
    for (const char* f : {kCheckpointFile, kMetricsFile, kConfusionFile}) compare(ctx.train_dir / f, repeat / f);
  } else {
    mismatches.push_back("no repeated training run available");
  }
  // eval twice.
  if (ctx.train_ok) {
    for (const char* d : {"eval_a", "eval_b"}) {
      Options o = options_for(ctx, ctx.workdir / d);
      o.checkpoint = ctx.train_dir / kCheckpointFile;
      cmd_eval(o, sink);
    }
    compare(ctx.workdir / "eval_a" / kConfusionFile, ctx.workdir / "eval_b" / kConfusionFile);
  }
  std::string detail = "gen-data, train and eval repeats byte-identical";
  if (!mismatches.empty()) detail = std::to_string(mismatches.size()) + " mismatches, first " + mismatches.front();
  return {mismatches.empty(), detail};
}

// 9. Oracle equivalence.
Outcome oracle_equivalence(const Context& ctx) {
  std::mt19937_64 rng(99);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  double conv_err = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t k = 2 * pick(0, 2) + 1, stride = pick(1, 2), pad = pick(0, k / 2);
    const std::size_t h = k + pick(0, 9), w = k + pick(0, 9);
    const std::size_t oh = (h + 2 * pad - k), ow = (w + 2 * pad - k);
    const std::size_t hh = oh % stride == 0 ? h : h + (stride - oh % stride);
    const std::size_t ww = ow % stride == 0 ? w : w + (stride - ow % stride);
    const Tensor in = oracle::random_tensor(Shape{pick(1, 3), pick(1, 4), hh, ww}, rng);
    const std::size_t filters = pick(1, 5);
    LayerParams p(Shape{filters, in.dim(1), k, k}, filters);
    p.weights = oracle::random_tensor(p.weights.shape(), rng);
    p.bias = oracle::random_tensor(Shape{filters}, rng);
    const Tensor out = conv2d_forward(in, p, stride, pad);
    std::size_t out_h = 0, out_w = 0;
    const auto ref = oracle::naive_conv(in, p.weights, p.bias.data(), stride, pad, out_h, out_w);
    conv_err = std::max(conv_err, oracle::max_abs_diff(out.data(), ref));
  }
  double softmax_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = pick(1, 8), c = pick(2, 6);
    const Tensor logits = oracle::random_tensor(Shape{n, c}, rng, -5.0, 5.0);
    std::vector<int> labels(n);
    for (int& l : labels) l = static_cast<int>(pick(0, c - 1));
    const double loss = softmax_logloss(logits, labels).loss;
    softmax_err = std::max(softmax_err,
                           static_cast<double>(std::abs(loss - oracle::direct_logloss(logits.data(), c, labels))));
  }
  const Dataset ds = synth_generate(ctx.desk.data.synthetic);
  const fs::path dir = ctx.workdir / "roundtrip";
  fs::remove_all(dir);
  export_dataset(ds, dir);
  const Dataset back = load_dataset(dir);
  double io_err = back.chips.size() == ds.chips.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < ds.chips.size() && std::isfinite(io_err); ++i) {
    const Chip& a = ds.chips[i];
    const Chip& b = back.chips[i];
    if (a.class_label != b.class_label || a.split != b.split || !b.azimuth) {
      io_err = INFINITY;
      break;
    }
    io_err = std::max(io_err, oracle::max_abs_diff(a.image.data(), b.image.data()));
    io_err = std::max(io_err, azimuth_dist(*a.azimuth, *b.azimuth));
    io_err = std::max(io_err, std::abs(a.nuisance - b.nuisance));
  }
  const bool pass = conv_err <= 1e-12 && softmax_err <= 1e-10 && io_err <= 1e-12;
  return {pass, "conv " + fmt(conv_err, 3) + " (50 shapes), softmax " + fmt(softmax_err, 3) +
                    " (100 batches), dataset round trip " + fmt(io_err, 3) + " (" +
                    std::to_string(ds.chips.size()) + " chips)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  Context ctx;
  std::string workdir = "acceptance_runs";
  std::string config = CONFOUNDNET_DESK_CONFIG;
  app.add_option("--workdir", workdir, "Scratch directory for runs");
  app.add_option("--config", config, "Desk-scale run config");
  CLI11_PARSE(app, argc, argv);

  ctx.workdir = fs::absolute(workdir);
  ctx.config = fs::absolute(config);
  fs::remove_all(ctx.workdir);
  fs::create_directories(ctx.workdir);
  ctx.train_dir = ctx.workdir / "train";
  ctx.ab_dir = ctx.workdir / "ab";
  try {
    ctx.desk = load_run_config(ctx.config);
  } catch (const std::exception& e) {
    std::cerr << "cannot load " << ctx.config << ": " << e.what() << '\n';
    return 2;
  }

  // The pose-aware training run shared by criteria 4, 6 and 8.
  {
    const auto start = Clock::now();
    try {
      std::ostringstream log;
      cmd_train(options_for(ctx, ctx.train_dir), log);
      ctx.train_ok = true;
    } catch (const std::exception& e) {
      ctx.train_error = e.what();
    }
    ctx.train_seconds = seconds_since(start);
  }

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome(const Context&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient verification", gradient_verification},
      {2, "rotation metric", rotation_metric},
      {3, "parameter-count identity", parameter_count},
      {4, "head removal", head_removal},
      {5, "flip augmentation", flip_contract},
      {6, "training sanity", training_sanity},
      {7, "A/B direction", ab_direction},
      {8, "determinism", determinism},
      {9, "oracle equivalence", oracle_equivalence},
  };
  // Criterion 8 compares against the A/B outputs, so results print in id
  // order after everything has run.
  std::vector<Outcome> results(criteria.size());
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      results[i] = criteria[i].run(ctx);
    } catch (const std::exception& e) {
      results[i] = {false, std::string("exception: ") + e.what()};
    }
  }
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    all = all && results[i].pass;
    std::cout << (results[i].pass ? "PASS" : "FAIL") << "  criterion " << criteria[i].id << "  "
              << criteria[i].name << ": " << results[i].detail << std::endl;
  }
  return all ? 0 : 1;
}
