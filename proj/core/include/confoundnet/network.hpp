#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "confoundnet/kernels.hpp"
#include "confoundnet/pose.hpp"
#include "confoundnet/tensor.hpp"

namespace confoundnet {

struct ConvLayerSpec {
  std::size_t filters = 16;
  std::size_t kernel = 5;
  std::size_t pad = 2;
  std::size_t stride = 1;
  bool pool = true;
  bool operator==(const ConvLayerSpec&) const = default;
};

/// Architecture of the trunk plus its heads.
///
/// Hidden layers are numbered 0..conv.size(): one per convolution (output
/// taken after ReLU and optional pooling) and the fully connected hidden
/// layer last. The pose head reads whichever one `pose_tap` names; unset means
/// the top hidden layer.
struct NetworkConfig {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<ConvLayerSpec> conv = {{16, 5, 2, 1, true}, {32, 5, 2, 1, true}, {64, 5, 2, 1, true}};
  std::size_t hidden = 128;
  std::size_t classes = 4;
  PoseMode pose_mode = PoseMode::azimuth;
  std::optional<std::size_t> pose_tap;
  double init_std = 0.01;

  std::size_t hidden_layer_count() const noexcept { return conv.size() + 1; }
  std::size_t top_hidden() const noexcept { return conv.size(); }
  std::size_t tap_layer() const noexcept { return pose_tap.value_or(top_hidden()); }
  /// Output shape (without batch) of every hidden layer. Throws ConfigError
  /// when the geometry does not chain.
  std::vector<Shape> hidden_shapes() const;
  void validate() const;

  /// 128x128, 10-class geometry resembling the full-size SAR chip setup.
  static NetworkConfig mstar_preset();

  bool operator==(const NetworkConfig&) const = default;
};

/// Everything backward needs from one forward pass.
struct ForwardCache {
  /// activations[0] is the input batch; each later entry is one stage output.
  std::vector<Tensor> activations;
  std::vector<std::vector<std::size_t>> pool_argmax;
  Tensor logits;
  std::optional<Tensor> pose_raw;
  std::uint64_t generation = 0;
  std::uint64_t network_id = 0;
};

/// Upstream gradients at the two heads. The pose gradient, when present, is
/// already scaled by lambda; absent means the pose head receives nothing.
struct HeadGrads {
  Tensor logits;
  std::optional<Tensor> pose;
};

struct CombinedLoss {
  double total = 0.0;
  double class_loss = 0.0;
  /// Unweighted pose term; zero when no pose head is present.
  double pose_loss = 0.0;
  std::vector<double> pose_distances;
  HeadGrads grads;
};

/// obj_class + lambda * obj_pose with gradients at both heads. `pose_raw`
/// must be given exactly when the network has a pose head; `truth` then needs
/// one pose per row. With lambda == 0 the pose gradient is omitted.
CombinedLoss combined_loss(const Tensor& logits, const Tensor* pose_raw,
                           std::span<const int> labels, std::span<const Quaternion> truth,
                           double lambda);

class Network {
 public:
  /// Weights ~ N(0, init_std^2) drawn from a generator seeded with `seed`,
  /// trunk first, then the class head, then the pose head. Baseline and
  /// pose-aware builds from one seed therefore share every common parameter.
  static Network build(const NetworkConfig& config, std::uint64_t seed);

  /// Reassembles a network from stored parameters, checking every shape.
  static Network assemble(const NetworkConfig& config, std::uint64_t seed,
                          std::vector<LayerParams> trunk, LayerParams class_head,
                          std::optional<LayerParams> pose_head);

  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  ~Network() = default;

  const NetworkConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  bool has_pose_head() const noexcept { return pose_head_.has_value(); }
  std::size_t pose_dim() const noexcept { return confoundnet::pose_dim(config_.pose_mode); }

  std::span<LayerParams> trunk() noexcept { return trunk_; }
  std::span<const LayerParams> trunk() const noexcept { return trunk_; }
  LayerParams& class_head() noexcept { return class_head_; }
  const LayerParams& class_head() const noexcept { return class_head_; }
  LayerParams* pose_head() noexcept { return pose_head_ ? &*pose_head_ : nullptr; }
  const LayerParams* pose_head() const noexcept { return pose_head_ ? &*pose_head_ : nullptr; }

  /// Trunk, class head, pose head, in that order.
  std::vector<LayerParams*> parameters();
  std::vector<const LayerParams*> parameters() const;
  std::size_t parameter_count() const;
  std::size_t pose_head_parameter_count() const;

  ForwardCache forward(const Tensor& batch) const;
  Tensor logits(const Tensor& batch) const { return forward(batch).logits; }

  /// Accumulates parameter gradients. Throws StateError if the cache came
  /// from another network or from parameters that have since been updated.
  void backward(ForwardCache& cache, const HeadGrads& grads);

  void zero_grad();
  /// Invalidates outstanding forward caches; call after changing parameters.
  void mark_updated() noexcept { ++generation_; }
  std::uint64_t generation() const noexcept { return generation_; }

  /// Copy without the pose head. Throws StateError if there is none.
  Network strip_pose_head() const;

  /// Number of trunk evaluations since construction.
  std::uint64_t trunk_evaluations() const noexcept { return trunk_evaluations_.load(); }

  /// Hash of ReLU masks and pool winners recorded in a cache. Two caches with
  /// equal regions lie in the same piecewise-smooth piece of the network.
  static std::uint64_t activation_region(const ForwardCache& cache);

  /// Exact equality of configuration and every parameter value.
  bool same_parameters(const Network& other) const;

 private:
  enum class StageKind { conv, relu, pool, fc };
  struct Stage {
    StageKind kind;
    std::size_t param = 0;  // trunk index for conv/fc
    std::size_t conv_layer = 0;
  };

  Network() = default;
  void plan();

  NetworkConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<LayerParams> trunk_;
  LayerParams class_head_;
  std::optional<LayerParams> pose_head_;

  std::vector<Stage> stages_;
  /// Activation index holding each hidden layer's output.
  std::vector<std::size_t> hidden_outputs_;

  std::uint64_t id_ = 0;
  std::uint64_t generation_ = 0;
  mutable std::atomic<std::uint64_t> trunk_evaluations_{0};
};

}  // namespace confoundnet
