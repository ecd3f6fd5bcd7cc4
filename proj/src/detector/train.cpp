#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "llts/detector.hpp"
#include "llts/errors.hpp"
#include "llts/rng.hpp"

namespace llts {

namespace {

constexpr std::uint64_t kStreamShuffle = 2000;

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  Rng rng(seed, kStreamShuffle + epoch);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

double cosine_lr(const TrainOptions& o, std::size_t step, std::size_t total) {
  const double floor = o.lr * o.lr_final_ratio;
  if (total <= 1) return o.lr;
  const double t = static_cast<double>(step) / static_cast<double>(total - 1);
  return floor + (o.lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

class Sgd {
 public:
  Sgd(ParamList params, double momentum) : params_(std::move(params)), momentum_(momentum) {
    for (const auto& p : params_) velocity_.emplace_back(p.tensor.numel(), 0.0);
  }

  /// Clips the global gradient norm to max_norm, applies the update and
  /// clears the gradients. Returns the pre-clip norm.
  double step(double lr, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params_)
      if (p.tensor.has_grad())
        for (double g : p.tensor.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    const double scale = norm > max_norm ? max_norm / norm : 1.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& t = params_[i].tensor;
      if (!t.has_grad()) continue;
      auto g = t.grad();
      auto v = std::span<double>(velocity_[i]);
      auto w = t.mutable_data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = momentum_ * v[k] + scale * g[k];
        w[k] -= lr * v[k];
      }
      t.zero_grad();
    }
    return norm;
  }

 private:
  ParamList params_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace

TrainResult train_loop(DetectorModel& m, std::span<const ImageSample> train, std::span<const ImageSample> eval_set,
                       const TrainOptions& opt, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (train.empty()) throw DataError("training set is empty");
  if (opt.batch_size == 0 || opt.epochs == 0) throw UsageError("batch_size and epochs must be positive");
  if (!(opt.lr > 0) || !(opt.momentum >= 0 && opt.momentum < 1) || !(opt.grad_clip > 0))
    throw UsageError("lr and grad_clip must be positive and momentum in [0, 1)");
  const std::size_t S = m.cfg.input_size;
  for (const ImageSample& s : train)
    if (s.image.shape() != Shape{3, S, S})
      throw ShapeError("training image " + s.id + " is " + shape_str(s.image.shape()) + ", model expects [3," +
                       std::to_string(S) + "," + std::to_string(S) + "]");

  const std::size_t grid = S / static_cast<std::size_t>(kHeadStride);
  const std::size_t per_epoch = (train.size() + opt.batch_size - 1) / opt.batch_size;
  std::size_t total_steps = per_epoch * opt.epochs;
  if (opt.max_steps > 0) total_steps = std::min(total_steps, opt.max_steps);

  Sgd sgd(m.params(), opt.momentum);
  TrainResult result;
  double first_loss = 0.0, epoch0_total = 0.0;

  for (std::size_t epoch = 0; epoch < opt.epochs && result.steps < total_steps; ++epoch) {
    const auto order = permutation(train.size(), opt.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t steps_this_epoch = 0;
    for (std::size_t b = 0; b < per_epoch && result.steps < total_steps; ++b) {
      std::vector<ImageSample> batch;
      std::vector<std::vector<LabelRecord>> labels;
      for (std::size_t i = b * opt.batch_size; i < std::min(train.size(), (b + 1) * opt.batch_size); ++i) {
        batch.push_back(train[order[i]]);
        labels.push_back(train[order[i]].labels);
      }
      TargetMap targets = assign_targets(labels, grid, kHeadStride);
      LossResult loss = detection_loss(model_forward(m, stack_images(batch)), targets);
      if (result.steps == 0) first_loss = loss.parts.total;
      if (loss.parts.total > opt.divergence_factor * first_loss) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "training diverged at step %zu: loss %.6g exceeds %.6g x initial %.6g",
                      result.steps, loss.parts.total, opt.divergence_factor, first_loss);
        throw DivergenceError(buf, result.trace);
      }
      loss.total.backward();
      sgd.step(cosine_lr(opt, result.steps, total_steps), opt.grad_clip);
      ++result.steps;
      ++steps_this_epoch;
      rec.box_loss += loss.parts.box_loss;
      rec.cls_loss += loss.parts.cls_loss;
      rec.total += loss.parts.total;
    }
    const double k = static_cast<double>(steps_this_epoch);
    rec.box_loss /= k;
    rec.cls_loss /= k;
    rec.total /= k;
    if (epoch == 0) epoch0_total = rec.total;
    rec.norm_loss = epoch0_total > 0 ? rec.total / epoch0_total : 0.0;
    rec.steps = result.steps;

    const bool last = epoch + 1 == opt.epochs || result.steps >= total_steps;
    if (!eval_set.empty() && opt.eval_every > 0 && ((epoch + 1) % opt.eval_every == 0 || last)) {
      rec.eval = evaluate_model(m, eval_set);
      if (opt.target_map50 > 0 && rec.eval->map50 >= opt.target_map50) result.reached_target = true;
    }
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (result.reached_target) break;
  }
  return result;
}

void write_trace_header(std::ostream& os) {
  os << "epoch,box_loss,cls_loss,norm_loss,precision,recall,mAP50,mAP50_95\n";
}

void write_trace_row(std::ostream& os, const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g", r.epoch, r.box_loss, r.cls_loss, r.norm_loss);
  os << buf;
  if (r.eval) {
    std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%.10g,%.10g", r.eval->prf.precision, r.eval->prf.recall,
                  r.eval->map50, r.eval->map50_95);
    os << buf;
  } else {
    os << ",,,,";
  }
  os << '\n';
}

}  // namespace llts
