#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>

#include "confoundnet/error.hpp"
#include "confoundnet/grad_check.hpp"
#include "confoundnet/kernels.hpp"
#include "confoundnet/network.hpp"
#include "confoundnet/pose.hpp"
#include "confoundnet_cli/commands.hpp"

namespace confoundnet::cli {

namespace {

using Rng = std::mt19937_64;

void fill_uniform(std::span<double> values, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : values) v = dist(rng);
}

std::vector<double> uniform_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  fill_uniform(v, rng);
  return v;
}

// Probe reduction in extended precision so the central difference is limited
// by the kernel's own rounding rather than by this sum.
double dot(std::span<const double> a, std::span<const double> b) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(acc);
}

std::vector<double> copy_of(std::span<const double> s) { return {s.begin(), s.end()}; }

/// Accumulates per-instance results into one report line.
struct Tally {
  GradcheckLine line;
  const GradientTamper& tamper;

  Tally(std::string name, double tol, const GradientTamper& t) : tamper(t) {
    line.component = std::move(name);
    line.tolerance = tol;
  }

  void check(const std::function<Probe()>& objective, std::span<double> values,
             std::vector<double> analytic, double eps) {
    if (tamper) tamper(line.component, analytic);
    const GradCheckResult r = grad_check(objective, values, analytic, eps);
    line.max_rel_error = std::max(line.max_rel_error, r.max_rel_error);
    line.checked += r.checked;
    line.skipped += r.skipped_nonsmooth;
  }
};

GradcheckLine check_conv(const GradcheckSettings& s, const GradientTamper& tamper) {
  Tally t("conv2d", s.smooth_tolerance, tamper);
  for (std::size_t k = 0; k < s.instances; ++k) {
    Rng rng(s.seed * 1000 + k);
    const std::size_t stride = 1 + k % 2, pad = (k / 2) % 2;
    Tensor in(Shape{2, 2, 7, 7});
    fill_uniform(in.data(), rng);
    LayerParams p(Shape{3, 2, 3, 3}, 3);
    fill_uniform(p.weights.data(), rng);
    fill_uniform(p.bias.data(), rng);
    Tensor out = conv2d_forward(in, p, stride, pad);
    const auto probe = uniform_vector(out.size(), rng);
    std::copy(probe.begin(), probe.end(), out.grad().begin());
    conv2d_backward(in, p, stride, pad, out);
    auto objective = [&] { return Probe{dot(conv2d_forward(in, p, stride, pad).data(), probe), 0}; };
    t.check(objective, in.data(), copy_of(in.grad()), s.eps);
    t.check(objective, p.weights.data(), copy_of(p.weights.grad()), s.eps);
    t.check(objective, p.bias.data(), copy_of(p.bias.grad()), s.eps);
    ++t.line.instances;
  }
  return t.line;
}

GradcheckLine check_relu(const GradcheckSettings& s, const GradientTamper& tamper) {
  Tally t("relu", s.tolerance, tamper);
  for (std::size_t k = 0; k < s.instances; ++k) {
    Rng rng(s.seed * 2000 + k);
    Tensor in(Shape{2, 3, 4, 4});
    fill_uniform(in.data(), rng);
    for (double& v : in.data()) {
      if (std::abs(v) < 1e-3) v = v < 0.0 ? -1e-3 : 1e-3;
    }
    Tensor out = relu_forward(in);
    const auto probe = uniform_vector(out.size(), rng);
    std::copy(probe.begin(), probe.end(), out.grad().begin());
    relu_backward(in, out);
    auto objective = [&] { return Probe{dot(relu_forward(in).data(), probe), 0}; };
    t.check(objective, in.data(), copy_of(in.grad()), s.eps);
    ++t.line.instances;
  }
  return t.line;
}

GradcheckLine check_pool(const GradcheckSettings& s, const GradientTamper& tamper) {
  Tally t("maxpool2", s.tolerance, tamper);
  for (std::size_t k = 0; k < s.instances; ++k) {
    Rng rng(s.seed * 3000 + k);
    Tensor in(Shape{2, 2, 4, 6});
    // Distinct values 0.01 apart keep every window clear of ties.
    std::vector<double> values(in.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.01 * static_cast<double>(i);
    std::shuffle(values.begin(), values.end(), rng);
    std::copy(values.begin(), values.end(), in.data().begin());
    PoolResult r = maxpool2_forward(in);
    const auto probe = uniform_vector(r.output.size(), rng);
    std::copy(probe.begin(), probe.end(), r.output.grad().begin());
    maxpool2_backward(in, r.argmax, r.output);
    auto objective = [&] { return Probe{dot(maxpool2_forward(in).output.data(), probe), 0}; };
    t.check(objective, in.data(), copy_of(in.grad()), s.eps);
    ++t.line.instances;
  }
  return t.line;
}

GradcheckLine check_fc(const GradcheckSettings& s, const GradientTamper& tamper) {
  Tally t("fc", s.smooth_tolerance, tamper);
  for (std::size_t k = 0; k < s.instances; ++k) {
    Rng rng(s.seed * 4000 + k);
    Tensor in(Shape{3, 7});
    fill_uniform(in.data(), rng);
    LayerParams p(Shape{5, 7}, 5);
    fill_uniform(p.weights.data(), rng);
    fill_uniform(p.bias.data(), rng);
    Tensor out = fc_forward(in, p);
    const auto probe = uniform_vector(out.size(), rng);
    std::copy(probe.begin(), probe.end(), out.grad().begin());
    fc_backward(in, p, out);
    auto objective = [&] { return Probe{dot(fc_forward(in, p).data(), probe), 0}; };
    t.check(objective, in.data(), copy_of(in.grad()), s.eps);
    t.check(objective, p.weights.data(), copy_of(p.weights.grad()), s.eps);
    t.check(objective, p.bias.data(), copy_of(p.bias.grad()), s.eps);
    ++t.line.instances;
  }
  return t.line;
}

GradcheckLine check_softmax(const GradcheckSettings& s, const GradientTamper& tamper) {
  Tally t("softmax_logloss", s.smooth_tolerance, tamper);
  for (std::size_t k = 0; k < s.instances; ++k) {
    Rng rng(s.seed * 5000 + k);
    Tensor logits(Shape{4, 5});
    fill_uniform(logits.data(), rng, -2.0, 2.0);
    std::uniform_int_distribution<int> label(0, 4);
    std::vector<int> labels(4);
    for (int& l : labels) l = label(rng);
    const ClassLoss r = softmax_logloss(logits, labels);
    auto objective = [&] { return Probe{softmax_logloss(logits, labels).loss, 0}; };
    t.check(objective, logits.data(), copy_of(r.grad.data()), s.eps);
    ++t.line.instances;
  }
  return t.line;
}

Quaternion random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Quaternion{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

GradcheckLine check_pose(const GradcheckSettings& s, PoseMode mode, const GradientTamper& tamper) {
  const std::size_t dim = pose_dim(mode);
  Tally t(std::string("pose_loss_") + std::string(to_string(mode)), s.tolerance, tamper);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < s.instances; ++k) {
    Rng rng(s.seed * 6000 + k + (dim == 4 ? 500 : 0));
    std::vector<Quaternion> truth;
    std::vector<double> raw;
    while (truth.size() < 8) {
      const Quaternion q = dim == 2 ? quat_from_azimuth(Azimuth(angle(rng))) : random_unit(rng);
      std::vector<double> p(dim);
      for (double& v : p) v = n(rng);
      // Stay clear of the arccos endpoints and the |dot| kink.
      const double d = std::abs(raw_to_quaternion(p).normalized().dot(q));
      if (d < 0.05 || d > 0.95) continue;
      truth.push_back(q);
      raw.insert(raw.end(), p.begin(), p.end());
    }
    const PoseLoss r = pose_loss(raw, dim, truth);
    auto objective = [&] { return Probe{pose_loss(raw, dim, truth).loss, 0}; };
    t.check(objective, raw, r.grad, s.eps);
    ++t.line.instances;
  }
  return t.line;
}

GradcheckLine check_combined(const GradcheckSettings& s, const GradientTamper& tamper) {
  Tally t("obj_combo", s.tolerance, tamper);
  NetworkConfig cfg = s.network;
  cfg.init_std = s.init_std;
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> bias_dist(0.0, 0.1);
  for (std::size_t k = 0; k < s.instances; ++k) {
    Rng rng(s.seed * 7000 + k);
    Network net = Network::build(cfg, s.seed * 7000 + k);
    for (LayerParams* p : net.parameters()) {
      for (double& b : p->bias.data()) b = bias_dist(rng);
    }
    Tensor batch(Shape{s.batch, cfg.channels, cfg.height, cfg.width});
    fill_uniform(batch.data(), rng);
    std::uniform_int_distribution<int> label(0, static_cast<int>(cfg.classes) - 1);
    std::vector<int> labels(s.batch);
    for (int& l : labels) l = label(rng);
    std::vector<Quaternion> truth;
    for (std::size_t i = 0; i < s.batch; ++i) {
      truth.push_back(pose_dim(cfg.pose_mode) == 2 ? quat_from_azimuth(Azimuth(angle(rng))) : random_unit(rng));
    }
    const double lambda = 1.0;

    ForwardCache cache = net.forward(batch);
    const CombinedLoss loss = combined_loss(cache.logits, &*cache.pose_raw, labels, truth, lambda);
    net.zero_grad();
    net.backward(cache, loss.grads);

    const std::size_t dim = net.pose_dim();
    auto objective = [&]() -> Probe {
      const ForwardCache c = net.forward(batch);
      std::uint64_t region = Network::activation_region(c);
      // The pose term has a kink where a prediction is orthogonal to its truth.
      for (std::size_t i = 0; i < s.batch; ++i) {
        const Quaternion q = raw_to_quaternion(c.pose_raw->data().subspan(i * dim, dim));
        region = region * 31 + (q.dot(truth[i]) >= 0.0 ? 1 : 0);
      }
      return {combined_loss(c.logits, &*c.pose_raw, labels, truth, lambda).total, region};
    };
    for (LayerParams* p : net.parameters()) {
      t.check(objective, p->weights.data(), copy_of(p->weights.grad()), s.eps);
      t.check(objective, p->bias.data(), copy_of(p->bias.grad()), s.eps);
    }
    ++t.line.instances;
  }
  return t.line;
}

}  // namespace

std::vector<GradcheckLine> run_gradcheck(const GradcheckSettings& settings,
                                         const GradientTamper& tamper) {
  return {check_conv(settings, tamper),
          check_relu(settings, tamper),
          check_pool(settings, tamper),
          check_fc(settings, tamper),
          check_softmax(settings, tamper),
          check_pose(settings, PoseMode::azimuth, tamper),
          check_pose(settings, PoseMode::quaternion, tamper),
          check_combined(settings, tamper)};
}

int cmd_gradcheck(const Options& options, std::ostream& out, const GradientTamper& tamper) {
  RunConfig config = resolve_config(options);
  if (options.seed) config.gradcheck.seed = *options.seed;
  const std::vector<GradcheckLine> lines = run_gradcheck(config.gradcheck, tamper);
  bool ok = true;
  for (const GradcheckLine& l : lines) {
    ok = ok && l.passed();
    out << std::left << std::setw(22) << l.component << " max_rel_err " << std::scientific
        << std::setprecision(3) << l.max_rel_error << "  tol " << l.tolerance << std::defaultfloat
        << "  instances " << l.instances << "  checked " << l.checked << "  skipped " << l.skipped
        << "  " << (l.passed() ? "PASS" : "FAIL") << '\n';
  }
  out << "gradcheck " << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? 0 : VerificationError("").exit_code();
}

}  // namespace confoundnet::cli
