#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "confoundnet/data.hpp"
#include "confoundnet/network.hpp"

namespace confoundnet {

/// Optimizer and schedule settings. Defaults follow the reference training
/// recipe: batch 100, momentum 0.9, weight decay 5e-4, learning rate 1e-3,
/// lambda 1.0, init std 0.01.
struct HyperParams {
  std::size_t batch_size = 100;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double learning_rate = 0.001;
  double lambda = 1.0;
  std::size_t epochs = 12;
  std::uint64_t seed = 1;
  double init_std = 0.01;

  void validate() const;
  bool operator==(const HyperParams&) const = default;
};

/// Rows are truth, columns are predictions.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  /// Throws FormatError unless `counts` is classes x classes.
  static ConfusionMatrix from_counts(std::size_t classes, std::vector<std::size_t> counts);

  void add(std::size_t truth, std::size_t predicted);
  std::size_t classes() const noexcept { return classes_; }
  std::size_t count(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::size_t row_total(std::size_t truth) const;
  std::size_t total() const;
  std::size_t correct() const;
  /// Row-normalized percentages; empty truth rows stay all zero.
  std::vector<double> percent() const;
  std::span<const std::size_t> counts() const noexcept { return counts_; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_ = 0;
  std::vector<std::size_t> counts_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  // Per-chip means over the epoch's training pass.
  double combined_loss = 0.0;
  double class_loss = 0.0;
  double pose_loss = 0.0;
  double train_acc = 0.0;
  /// Test split after the epoch; NaN without a test split.
  double test_acc = 0.0;
  /// Mean test-split pose error in radians, when the network has a pose head.
  std::optional<double> mean_pose_err;

  bool operator==(const EpochRecord&) const = default;
};

struct Metrics {
  std::vector<EpochRecord> epochs;
  ConfusionMatrix confusion;
  bool operator==(const Metrics&) const = default;
};

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::optional<double> mean_pose_error;
};

/// v <- momentum v - lr (g + weight_decay w); w <- w + v, for weights and
/// biases alike. Throws DivergenceError carrying `step` if a gradient or the
/// updated parameters are not finite.
void sgd_step(Network& net, const HyperParams& hp, std::size_t step);

struct TrainResult {
  Network net;
  Metrics metrics;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch training on `train` with per-epoch evaluation on `test` (which
/// may be empty). Chips are expected to be normalized already.
TrainResult train(Network net, std::span<const Chip> train, std::span<const Chip> test,
                  const HyperParams& hp, const EpochCallback& on_epoch = {});

/// Accuracy in percent from argmax of the class logits. Pose error is reported
/// when the network has a pose head and every chip carries an azimuth.
EvalResult evaluate(const Network& net, std::span<const Chip> chips, std::size_t batch_size = 100);

/// Stacks chip images into an N x 1 x H x W batch.
Tensor make_batch(std::span<const Chip> chips, std::span<const std::size_t> order);

void write_metrics_csv(std::ostream& out, const Metrics& metrics);
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& confusion,
                         std::span<const std::string> class_names);

}  // namespace confoundnet
