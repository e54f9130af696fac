#include "confoundnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "confoundnet/error.hpp"

namespace confoundnet {

namespace {

std::uint64_t next_network_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

void fill_gaussian(Tensor& t, std::normal_distribution<double>& dist, std::mt19937_64& rng) {
  for (double& v : t.data()) v = dist(rng);
}

std::uint64_t fnv_mix(std::uint64_t hash, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    hash ^= (value >> (8 * i)) & 0xffU;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected) {
    throw FormatError(what + " has shape " + shape_string(t.shape()) + ", expected " +
                      shape_string(expected));
  }
}

}  // namespace

std::vector<Shape> NetworkConfig::hidden_shapes() const {
  if (channels == 0 || height == 0 || width == 0) {
    throw ConfigError("network input dimensions must be positive");
  }
  std::vector<Shape> shapes;
  std::size_t c = channels, h = height, w = width;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const ConvLayerSpec& spec = conv[i];
    const std::string where = "conv layer " + std::to_string(i);
    if (spec.filters == 0 || spec.kernel == 0 || spec.stride == 0) {
      throw ConfigError(where + ": filters, kernel and stride must be positive");
    }
    const std::size_t ph = h + 2 * spec.pad, pw = w + 2 * spec.pad;
    if (ph < spec.kernel || pw < spec.kernel) {
      throw ConfigError(where + ": kernel larger than padded input " + std::to_string(h) + "x" +
                        std::to_string(w));
    }
    if ((ph - spec.kernel) % spec.stride != 0 || (pw - spec.kernel) % spec.stride != 0) {
      throw ConfigError(where + ": stride does not divide the padded extent");
    }
    h = (ph - spec.kernel) / spec.stride + 1;
    w = (pw - spec.kernel) / spec.stride + 1;
    c = spec.filters;
    if (spec.pool) {
      if (h % 2 != 0 || w % 2 != 0) {
        throw ConfigError(where + ": pooling needs even spatial dims, got " + std::to_string(h) +
                          "x" + std::to_string(w));
      }
      h /= 2;
      w /= 2;
    }
    shapes.push_back(Shape{c, h, w});
  }
  if (hidden == 0) throw ConfigError("hidden width must be positive");
  shapes.push_back(Shape{hidden});
  return shapes;
}

void NetworkConfig::validate() const {
  (void)hidden_shapes();
  if (classes < 2) throw ConfigError("class count must be at least 2");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
  if (pose_tap && *pose_tap >= hidden_layer_count()) {
    throw ConfigError("pose tap " + std::to_string(*pose_tap) + " does not name a hidden layer (0.." +
                      std::to_string(hidden_layer_count() - 1) + ")");
  }
}

NetworkConfig NetworkConfig::mstar_preset() {
  NetworkConfig config;
  config.height = 128;
  config.width = 128;
  config.classes = 10;
  return config;
}

Network::Network(const Network& other)
    : config_(other.config_),
      seed_(other.seed_),
      trunk_(other.trunk_),
      class_head_(other.class_head_),
      pose_head_(other.pose_head_),
      stages_(other.stages_),
      hidden_outputs_(other.hidden_outputs_),
      id_(next_network_id()),
      generation_(0),
      trunk_evaluations_(0) {}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Network::Network(Network&& other) noexcept
    : config_(std::move(other.config_)),
      seed_(other.seed_),
      trunk_(std::move(other.trunk_)),
      class_head_(std::move(other.class_head_)),
      pose_head_(std::move(other.pose_head_)),
      stages_(std::move(other.stages_)),
      hidden_outputs_(std::move(other.hidden_outputs_)),
      id_(other.id_),
      generation_(other.generation_),
      trunk_evaluations_(other.trunk_evaluations_.load()) {}

Network& Network::operator=(Network&& other) noexcept {
  config_ = std::move(other.config_);
  seed_ = other.seed_;
  trunk_ = std::move(other.trunk_);
  class_head_ = std::move(other.class_head_);
  pose_head_ = std::move(other.pose_head_);
  stages_ = std::move(other.stages_);
  hidden_outputs_ = std::move(other.hidden_outputs_);
  id_ = other.id_;
  generation_ = other.generation_;
  trunk_evaluations_.store(other.trunk_evaluations_.load());
  return *this;
}

void Network::plan() {
  stages_.clear();
  hidden_outputs_.clear();
  std::size_t act = 0;
  for (std::size_t i = 0; i < config_.conv.size(); ++i) {
    stages_.push_back({StageKind::conv, i, i});
    stages_.push_back({StageKind::relu, 0, i});
    act += 2;
    if (config_.conv[i].pool) {
      stages_.push_back({StageKind::pool, 0, i});
      ++act;
    }
    hidden_outputs_.push_back(act);
  }
  stages_.push_back({StageKind::fc, config_.conv.size(), 0});
  stages_.push_back({StageKind::relu, 0, 0});
  act += 2;
  hidden_outputs_.push_back(act);
}

Network Network::build(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  const std::vector<Shape> shapes = config.hidden_shapes();
  Network net;
  net.config_ = config;
  net.seed_ = seed;
  net.id_ = next_network_id();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, config.init_std);
  std::size_t in_channels = config.channels;
  for (const ConvLayerSpec& spec : config.conv) {
    LayerParams p(Shape{spec.filters, in_channels, spec.kernel, spec.kernel}, spec.filters);
    fill_gaussian(p.weights, dist, rng);
    net.trunk_.push_back(std::move(p));
    in_channels = spec.filters;
  }
  const std::size_t flat = shape_size(config.conv.empty()
                                          ? Shape{config.channels, config.height, config.width}
                                          : shapes[config.conv.size() - 1]);
  LayerParams fc(Shape{config.hidden, flat}, config.hidden);
  fill_gaussian(fc.weights, dist, rng);
  net.trunk_.push_back(std::move(fc));

  net.class_head_ = LayerParams(Shape{config.classes, config.hidden}, config.classes);
  fill_gaussian(net.class_head_.weights, dist, rng);

  if (config.pose_mode != PoseMode::none) {
    const std::size_t tap_size = shape_size(shapes[config.tap_layer()]);
    LayerParams pose(Shape{confoundnet::pose_dim(config.pose_mode), tap_size},
                     confoundnet::pose_dim(config.pose_mode));
    fill_gaussian(pose.weights, dist, rng);
    net.pose_head_ = std::move(pose);
  }
  net.plan();
  return net;
}

Network Network::assemble(const NetworkConfig& config, std::uint64_t seed,
                          std::vector<LayerParams> trunk, LayerParams class_head,
                          std::optional<LayerParams> pose_head) {
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("stored network config is invalid: ") + e.what());
  }
  // A build from the same config yields the reference shapes.
  Network net = build(config, seed);
  if (trunk.size() != net.trunk_.size()) {
    throw FormatError("expected " + std::to_string(net.trunk_.size()) + " trunk layers, got " +
                      std::to_string(trunk.size()));
  }
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    const std::string where = "trunk layer " + std::to_string(i);
    require_shape(trunk[i].weights, net.trunk_[i].weights.shape(), where + " weights");
    require_shape(trunk[i].bias, net.trunk_[i].bias.shape(), where + " bias");
  }
  require_shape(class_head.weights, net.class_head_.weights.shape(), "class head weights");
  require_shape(class_head.bias, net.class_head_.bias.shape(), "class head bias");
  if (pose_head.has_value() != net.pose_head_.has_value()) {
    throw FormatError("pose head presence does not match the pose mode");
  }
  if (pose_head) {
    require_shape(pose_head->weights, net.pose_head_->weights.shape(), "pose head weights");
    require_shape(pose_head->bias, net.pose_head_->bias.shape(), "pose head bias");
  }
  auto reset_velocity = [](LayerParams& p) {
    p.weight_velocity.assign(p.weights.size(), 0.0);
    p.bias_velocity.assign(p.bias.size(), 0.0);
    p.zero_grad();
  };
  for (auto& p : trunk) reset_velocity(p);
  reset_velocity(class_head);
  if (pose_head) reset_velocity(*pose_head);
  net.trunk_ = std::move(trunk);
  net.class_head_ = std::move(class_head);
  net.pose_head_ = std::move(pose_head);
  return net;
}

std::vector<LayerParams*> Network::parameters() {
  std::vector<LayerParams*> out;
  for (auto& p : trunk_) out.push_back(&p);
  out.push_back(&class_head_);
  if (pose_head_) out.push_back(&*pose_head_);
  return out;
}

std::vector<const LayerParams*> Network::parameters() const {
  std::vector<const LayerParams*> out;
  for (const auto& p : trunk_) out.push_back(&p);
  out.push_back(&class_head_);
  if (pose_head_) out.push_back(&*pose_head_);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const LayerParams* p : parameters()) total += p->parameter_count();
  return total;
}

std::size_t Network::pose_head_parameter_count() const {
  return pose_head_ ? pose_head_->parameter_count() : 0;
}

ForwardCache Network::forward(const Tensor& batch) const {
  if (batch.rank() != 4 || batch.dim(1) != config_.channels || batch.dim(2) != config_.height ||
      batch.dim(3) != config_.width) {
    throw DimensionError("network expects N x " + std::to_string(config_.channels) + " x " +
                         std::to_string(config_.height) + " x " + std::to_string(config_.width) +
                         " input, got " + shape_string(batch.shape()));
  }
  ++trunk_evaluations_;
  ForwardCache cache;
  cache.generation = generation_;
  cache.network_id = id_;
  cache.activations.reserve(stages_.size() + 1);
  cache.activations.push_back(batch);
  cache.activations.back().zero_grad();
  for (const Stage& stage : stages_) {
    const Tensor& in = cache.activations.back();
    switch (stage.kind) {
      case StageKind::conv: {
        const ConvLayerSpec& spec = config_.conv[stage.conv_layer];
        cache.activations.push_back(conv2d_forward(in, trunk_[stage.param], spec.stride, spec.pad));
        break;
      }
      case StageKind::relu:
        cache.activations.push_back(relu_forward(in));
        break;
      case StageKind::pool: {
        PoolResult pooled = maxpool2_forward(in);
        cache.pool_argmax.push_back(std::move(pooled.argmax));
        cache.activations.push_back(std::move(pooled.output));
        break;
      }
      case StageKind::fc:
        cache.activations.push_back(fc_forward(in, trunk_[stage.param]));
        break;
    }
  }
  cache.logits = fc_forward(cache.activations.back(), class_head_);
  if (pose_head_) {
    cache.pose_raw = fc_forward(cache.activations[hidden_outputs_[config_.tap_layer()]], *pose_head_);
  }
  return cache;
}

void Network::backward(ForwardCache& cache, const HeadGrads& grads) {
  if (cache.network_id != id_ || cache.generation != generation_ ||
      cache.activations.size() != stages_.size() + 1) {
    throw StateError("forward cache is stale or belongs to another network");
  }
  if (grads.logits.shape() != cache.logits.shape()) {
    throw DimensionError("class gradient shape " + shape_string(grads.logits.shape()) +
                         " does not match logits " + shape_string(cache.logits.shape()));
  }
  for (Tensor& a : cache.activations) a.zero_grad();

  std::copy(grads.logits.data().begin(), grads.logits.data().end(), cache.logits.grad().begin());
  fc_backward(cache.activations.back(), class_head_, cache.logits);

  if (grads.pose) {
    if (!pose_head_ || !cache.pose_raw) throw StateError("pose gradient given but no pose head");
    if (grads.pose->shape() != cache.pose_raw->shape()) {
      throw DimensionError("pose gradient shape " + shape_string(grads.pose->shape()) +
                           " does not match pose output " + shape_string(cache.pose_raw->shape()));
    }
    std::copy(grads.pose->data().begin(), grads.pose->data().end(), cache.pose_raw->grad().begin());
    fc_backward(cache.activations[hidden_outputs_[config_.tap_layer()]], *pose_head_,
                *cache.pose_raw);
  }

  std::size_t pool_index = cache.pool_argmax.size();
  for (std::size_t k = stages_.size(); k-- > 0;) {
    const Stage& stage = stages_[k];
    Tensor& in = cache.activations[k];
    const Tensor& out = cache.activations[k + 1];
    switch (stage.kind) {
      case StageKind::conv: {
        const ConvLayerSpec& spec = config_.conv[stage.conv_layer];
        conv2d_backward(in, trunk_[stage.param], spec.stride, spec.pad, out);
        break;
      }
      case StageKind::relu:
        relu_backward(in, out);
        break;
      case StageKind::pool:
        maxpool2_backward(in, cache.pool_argmax[--pool_index], out);
        break;
      case StageKind::fc:
        fc_backward(in, trunk_[stage.param], out);
        break;
    }
  }
}

void Network::zero_grad() {
  for (LayerParams* p : parameters()) p->zero_grad();
}

Network Network::strip_pose_head() const {
  if (!pose_head_) throw StateError("network has no pose head to strip");
  Network stripped(*this);
  stripped.pose_head_.reset();
  stripped.config_.pose_mode = PoseMode::none;
  stripped.config_.pose_tap.reset();
  return stripped;
}

std::uint64_t Network::activation_region(const ForwardCache& cache) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  // ReLU inputs are the activations that are followed by an equal-shaped
  // non-negative copy; hashing the sign of every activation covers them.
  for (const Tensor& a : cache.activations) {
    std::uint64_t word = 0;
    std::size_t bits = 0;
    for (double v : a.data()) {
      word = (word << 1) | (v > 0.0 ? 1U : 0U);
      if (++bits == 64) {
        hash = fnv_mix(hash, word);
        word = 0;
        bits = 0;
      }
    }
    hash = fnv_mix(hash, word);
  }
  for (const auto& argmax : cache.pool_argmax) {
    for (std::size_t idx : argmax) hash = fnv_mix(hash, idx);
  }
  return hash;
}

bool Network::same_parameters(const Network& other) const {
  if (!(config_ == other.config_)) return false;
  const auto mine = parameters();
  const auto theirs = other.parameters();
  if (mine.size() != theirs.size()) return false;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (!std::equal(mine[i]->weights.data().begin(), mine[i]->weights.data().end(),
                    theirs[i]->weights.data().begin(), theirs[i]->weights.data().end()) ||
        !std::equal(mine[i]->bias.data().begin(), mine[i]->bias.data().end(),
                    theirs[i]->bias.data().begin(), theirs[i]->bias.data().end())) {
      return false;
    }
  }
  return true;
}

CombinedLoss combined_loss(const Tensor& logits, const Tensor* pose_raw,
                           std::span<const int> labels, std::span<const Quaternion> truth,
                           double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("lambda must be a finite nonnegative number");
  }
  ClassLoss cls = softmax_logloss(logits, labels);
  CombinedLoss result;
  result.class_loss = cls.loss;
  result.total = cls.loss;
  result.grads.logits = std::move(cls.grad);
  if (pose_raw == nullptr) return result;

  if (pose_raw->rank() != 2 || pose_raw->dim(0) != logits.dim(0)) {
    throw BatchError("pose output rows do not match logits rows");
  }
  if (truth.size() != pose_raw->dim(0)) {
    throw DataError("pose head present but " + std::to_string(truth.size()) +
                    " truth poses were given for " + std::to_string(pose_raw->dim(0)) + " rows");
  }
  PoseLoss pose = pose_loss(pose_raw->data(), pose_raw->dim(1), truth);
  result.pose_loss = pose.loss;
  result.pose_distances = std::move(pose.distances);
  result.total = cls.loss + lambda * pose.loss;
  if (lambda > 0.0) {
    Tensor g(pose_raw->shape());
    for (std::size_t i = 0; i < pose.grad.size(); ++i) g[i] = lambda * pose.grad[i];
    result.grads.pose = std::move(g);
  }
  return result;
}

}  // namespace confoundnet
