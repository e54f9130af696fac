#include "confoundnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "confoundnet/error.hpp"

namespace confoundnet {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

bool all_have_azimuth(std::span<const Chip> chips) {
  return std::all_of(chips.begin(), chips.end(), [](const Chip& c) { return c.azimuth.has_value(); });
}

}  // namespace

void HyperParams::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("weight_decay must be nonnegative");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be nonnegative");
  if (!(init_std > 0.0) || !std::isfinite(init_std)) throw ConfigError("init_std must be positive");
}

ConfusionMatrix ConfusionMatrix::from_counts(std::size_t classes, std::vector<std::size_t> counts) {
  if (counts.size() != classes * classes) throw FormatError("confusion counts have the wrong size");
  ConfusionMatrix m(classes);
  m.counts_ = std::move(counts);
  return m;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) throw LabelError("confusion entry out of range");
  ++counts_[truth * classes_ + predicted];
}

std::size_t ConfusionMatrix::row_total(std::size_t truth) const {
  std::size_t total = 0;
  for (std::size_t p = 0; p < classes_; ++p) total += count(truth, p);
  return total;
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::correct() const {
  std::size_t total = 0;
  for (std::size_t c = 0; c < classes_; ++c) total += count(c, c);
  return total;
}

std::vector<double> ConfusionMatrix::percent() const {
  std::vector<double> pct(counts_.size(), 0.0);
  for (std::size_t t = 0; t < classes_; ++t) {
    const std::size_t row = row_total(t);
    if (row == 0) continue;
    for (std::size_t p = 0; p < classes_; ++p) {
      pct[t * classes_ + p] = 100.0 * static_cast<double>(count(t, p)) / static_cast<double>(row);
    }
  }
  return pct;
}

void sgd_step(Network& net, const HyperParams& hp, std::size_t step) {
  auto update = [&](Tensor& param, std::vector<double>& velocity, const char* what) {
    auto w = param.data();
    auto g = param.grad();
    for (double v : g) {
      if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite gradient in ") + what, step);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      velocity[i] = hp.momentum * velocity[i] - hp.learning_rate * (g[i] + hp.weight_decay * w[i]);
      w[i] += velocity[i];
    }
    for (double v : w) {
      if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite parameter in ") + what, step);
    }
  };
  for (LayerParams* p : net.parameters()) {
    update(p->weights, p->weight_velocity, "weights");
    update(p->bias, p->bias_velocity, "bias");
  }
  net.mark_updated();
}

Tensor make_batch(std::span<const Chip> chips, std::span<const std::size_t> order) {
  if (order.empty()) throw DataError("cannot build an empty batch");
  const Shape& image_shape = chips[order.front()].image.shape();
  Shape shape{order.size()};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  Tensor batch(shape);
  const std::size_t stride = shape_size(image_shape);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Tensor& img = chips[order[i]].image;
    if (img.shape() != image_shape) throw DimensionError("chips in a batch differ in shape");
    std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return batch;
}

EvalResult evaluate(const Network& net, std::span<const Chip> chips, std::size_t batch_size) {
  if (chips.empty()) throw DataError("cannot evaluate on an empty split");
  if (batch_size == 0) batch_size = 1;
  const std::size_t classes = net.config().classes;
  const bool pose = net.has_pose_head() && all_have_azimuth(chips);
  EvalResult result{0.0, ConfusionMatrix(classes), std::nullopt};
  double pose_sum = 0.0;
  std::vector<std::size_t> order;
  for (std::size_t start = 0; start < chips.size(); start += batch_size) {
    const std::size_t end = std::min(chips.size(), start + batch_size);
    order.resize(end - start);
    std::iota(order.begin(), order.end(), start);
    const ForwardCache cache = net.forward(make_batch(chips, order));
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t predicted = argmax_row(cache.logits.data().subspan(i * classes, classes));
      result.confusion.add(static_cast<std::size_t>(chips[order[i]].class_label), predicted);
    }
    if (pose) {
      const std::size_t dim = net.pose_dim();
      for (std::size_t i = 0; i < order.size(); ++i) {
        const auto raw = cache.pose_raw->data().subspan(i * dim, dim);
        const Quaternion q = raw_to_quaternion(raw);
        pose_sum += q.norm() < kPoseMinNorm
                        ? 0.5 * std::numbers::pi
                        : quat_dist(q, quat_from_azimuth(*chips[order[i]].azimuth));
      }
    }
  }
  result.accuracy = 100.0 * static_cast<double>(result.confusion.correct()) /
                    static_cast<double>(result.confusion.total());
  if (pose) result.mean_pose_error = pose_sum / static_cast<double>(chips.size());
  return result;
}

TrainResult train(Network net, std::span<const Chip> train, std::span<const Chip> test,
                  const HyperParams& hp, const EpochCallback& on_epoch) {
  hp.validate();
  if (train.empty()) throw DataError("training set is empty");
  const bool have_poses = all_have_azimuth(train);
  if (net.has_pose_head() && hp.lambda > 0.0 && !have_poses) {
    throw DataError("pose-aware training with lambda > 0 needs an azimuth for every training chip");
  }
  const bool use_pose = net.has_pose_head() && have_poses;
  const std::size_t classes = net.config().classes;
  for (const Chip& c : train) {
    if (c.class_label < 0 || static_cast<std::size_t>(c.class_label) >= classes) {
      throw LabelError("training chip '" + c.name + "' has label outside the network's classes");
    }
  }

  TrainResult result{std::move(net), {}};
  Network& model = result.net;
  std::mt19937_64 rng(hp.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;
  std::vector<Quaternion> truth;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double combined = 0.0, class_loss = 0.0, pose_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
      const std::span<const std::size_t> idx =
          std::span<const std::size_t>(order).subspan(start, std::min(hp.batch_size, order.size() - start));
      labels.clear();
      truth.clear();
      for (std::size_t i : idx) {
        labels.push_back(train[i].class_label);
        if (use_pose) truth.push_back(quat_from_azimuth(*train[i].azimuth));
      }
      try {
        model.zero_grad();
        ForwardCache cache = model.forward(make_batch(train, idx));
        const CombinedLoss loss = combined_loss(cache.logits, use_pose ? &*cache.pose_raw : nullptr,
                                                labels, truth, hp.lambda);
        model.backward(cache, loss.grads);
        sgd_step(model, hp, step);
        combined += loss.total;
        class_loss += loss.class_loss;
        pose_loss += loss.pose_loss;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          if (argmax_row(cache.logits.data().subspan(i * classes, classes)) ==
              static_cast<std::size_t>(labels[i])) {
            ++correct;
          }
        }
      } catch (const DivergenceError&) {
        throw;
      } catch (const NumericError& e) {
        throw DivergenceError(e.what(), step);
      }
      ++step;
    }
    const auto n = static_cast<double>(train.size());
    EpochRecord record;
    record.epoch = epoch;
    record.combined_loss = combined / n;
    record.class_loss = class_loss / n;
    record.pose_loss = pose_loss / n;
    record.train_acc = 100.0 * static_cast<double>(correct) / n;
    record.test_acc = std::numeric_limits<double>::quiet_NaN();
    if (!test.empty()) {
      const EvalResult eval = evaluate(model, test, hp.batch_size);
      record.test_acc = eval.accuracy;
      record.mean_pose_err = eval.mean_pose_error;
      result.metrics.confusion = eval.confusion;
    }
    result.metrics.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  if (result.metrics.confusion.classes() == 0) {
    result.metrics.confusion = evaluate(model, test.empty() ? train : test, hp.batch_size).confusion;
  }
  return result;
}

void write_metrics_csv(std::ostream& out, const Metrics& metrics) {
  out << "epoch,combined_loss,class_loss,pose_loss,train_acc,test_acc,mean_pose_err_rad\n";
  for (const EpochRecord& r : metrics.epochs) {
    out << r.epoch << ',' << format_double(r.combined_loss) << ',' << format_double(r.class_loss)
        << ',' << format_double(r.pose_loss) << ',' << format_double(r.train_acc) << ','
        << format_double(r.test_acc) << ','
        << (r.mean_pose_err ? format_double(*r.mean_pose_err) : std::string("nan")) << '\n';
  }
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& confusion,
                         std::span<const std::string> class_names) {
  const std::size_t classes = confusion.classes();
  auto name = [&](std::size_t i) {
    return i < class_names.size() ? class_names[i] : "class_" + std::to_string(i);
  };
  out << "truth";
  for (std::size_t c = 0; c < classes; ++c) out << ',' << name(c);
  out << ",count\n";
  const std::vector<double> pct = confusion.percent();
  for (std::size_t t = 0; t < classes; ++t) {
    out << name(t);
    for (std::size_t p = 0; p < classes; ++p) out << ',' << format_double(pct[t * classes + p]);
    out << ',' << confusion.row_total(t) << '\n';
  }
}

}  // namespace confoundnet
