#include "kdseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "kdseg/kernels.hpp"
#include "kdseg/metrics.hpp"

KDSEG_BEGIN_NAMESPACE

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr_initial > 0) || !std::isfinite(lr_initial)) throw ConfigError("lr_initial must be positive");
  if (!(lr_drop_factor >= 1) || !std::isfinite(lr_drop_factor)) throw ConfigError("lr_drop_factor must be >= 1");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (!(clip_norm >= 0) || !std::isfinite(clip_norm)) throw ConfigError("clip_norm must be >= 0");
  for (std::size_t i = 0; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] < 1) throw ConfigError("lr drop epochs must be positive");
    if (i > 0 && lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) {
      throw ConfigError("lr drop epochs must be strictly increasing");
    }
  }
  weights.validate();
  augmentation.validate();
}

double warmup_factor(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg) {
  const double ramp = static_cast<double>(cfg.warmup_epochs) * static_cast<double>(steps_per_epoch);
  if (ramp <= 0) return 1.0;
  return std::min(1.0, static_cast<double>(step + 1) / ramp);
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw UsageError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  }
  int drops = 0;
  for (int e : cfg.lr_drop_epochs) drops += e <= epoch;
  return cfg.lr_initial / std::pow(cfg.lr_drop_factor, drops);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0;
  for (const Tensor& p : params) {
    for (Scalar g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const Scalar f = static_cast<Scalar>(max_norm / norm);
    for (Tensor& p : params) {
      for (Scalar& g : p.grad()) g *= f;
    }
  }
  return norm;
}

void sgd_step(std::span<Tensor> params, OptimizerState& state, double lr, double momentum) {
  if (state.velocity.empty()) {
    for (const Tensor& p : params) state.velocity.emplace_back(p.size(), Scalar(0));
  }
  if (state.velocity.size() != params.size()) throw DimensionError("optimizer state does not match parameters");
  const KernelTable& k = active_kernels();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    std::vector<Scalar>& v = state.velocity[i];
    if (v.size() != p.size()) throw DimensionError("velocity buffer shape mismatch");
    if (!p.requires_grad()) continue;
    if (!p.has_grad()) p.zero_grad();
    k.momentum_update(p.size(), p.data().data(), v.data(), p.grad().data(), static_cast<Scalar>(lr),
                      static_cast<Scalar>(momentum));
  }
}

void write_report_csv(std::ostream& os, const TrainReport& report) {
  os << std::setprecision(9);
  os << "epoch,segmentation_loss,probability_loss,consistency_loss,total_loss,learning_rate,seconds\n";
  for (const EpochRecord& r : report.epochs) {
    os << r.epoch << ',' << r.segmentation_loss << ',' << r.probability_loss << ',' << r.consistency_loss << ','
       << r.total_loss << ',' << r.learning_rate << ',' << r.seconds << '\n';
  }
  if (report.val_miou) os << "val_miou," << *report.val_miou << '\n';
}

namespace {

// Shuffled, optionally augmented batches from one sample set.
class BatchStream {
 public:
  BatchStream(std::span<const Sample> samples, const TrainConfig& cfg, Rng rng)
      : samples_(samples), cfg_(cfg), rng_(std::move(rng)), order_(samples.size()) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  std::size_t batches_per_pass() const {
    return (samples_.size() + static_cast<std::size_t>(cfg_.batch_size) - 1) / static_cast<std::size_t>(cfg_.batch_size);
  }

  void start_pass() {
    rng_.shuffle(order_.begin(), order_.end());
    cursor_ = 0;
  }

  /// Next batch of the current pass; starts a new pass when exhausted.
  Batch next() {
    if (cursor_ >= order_.size()) start_pass();
    const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(cfg_.batch_size));
    std::vector<Sample> owned;
    owned.reserve(end - cursor_);
    for (std::size_t i = cursor_; i < end; ++i) {
      const Sample& s = samples_[order_[i]];
      owned.push_back(cfg_.augment ? augment(s, cfg_.augmentation, rng_) : s);
    }
    cursor_ = end;
    std::vector<const Sample*> ptrs;
    for (const Sample& s : owned) ptrs.push_back(&s);
    return make_batch(ptrs);
  }

 private:
  std::span<const Sample> samples_;
  const TrainConfig& cfg_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct StepLosses {
  double seg = 0, prob = 0, cons = 0;
};

// L_S plus the teacher terms for one batch. Returns an invalid Var when the
// batch contributes nothing (all IGNORE and no teacher terms).
Var batch_objective(Tape& tape, SegNetwork& student, const SegNetwork* teacher, const Batch& batch,
                    const LossWeights& w, StepLosses& out) {
  const Var x = tape.constant_ref(batch.images);
  const Var logits = student.forward(tape, x);
  Var total;
  if (batch.labels.count_labeled() > 0) {
    total = segmentation_loss(logits, batch.labels);
    out.seg = total.value()[0];
  }
  const bool distill = teacher != nullptr && (w.alpha != 0.0 || w.beta != 0.0);
  if (distill) {
    const Var t_logits = teacher->forward_inference(tape, x);
    const Var lp = probability_loss(softmax_channels(logits), softmax_channels(t_logits));
    const Var lc = consistency_loss(logits, t_logits);
    out.prob = lp.value()[0];
    out.cons = lc.value()[0];
    const Var bias = add(scale(lp, static_cast<Scalar>(w.alpha)), scale(lc, static_cast<Scalar>(w.beta)));
    total = total.valid() ? add(total, bias) : bias;
  }
  return total;
}

TrainReport run_training(SegNetwork& student, const SegNetwork* teacher, std::span<const Sample> labeled,
                         std::span<const Sample> pseudo, std::span<const Sample> val, const TrainConfig& cfg,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  if (labeled.empty()) throw ConfigError("training set is empty");
  if (teacher != nullptr && teacher->config().num_classes != student.config().num_classes) {
    throw ConfigError("teacher predicts " + std::to_string(teacher->config().num_classes) + " classes, student " +
                      std::to_string(student.config().num_classes));
  }
  const bool joint = !pseudo.empty() && cfg.weights.lambda > 0.0;

  BatchStream labeled_stream(labeled, cfg, Rng::derive(cfg.seed, "labeled-stream"));
  BatchStream pseudo_stream(pseudo, cfg, Rng::derive(cfg.seed, "pseudo-stream"));
  if (joint) pseudo_stream.start_pass();
  OptimizerState opt;
  TrainReport report;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double scheduled = lr_at(epoch, cfg);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = scheduled;
    labeled_stream.start_pass();
    const std::size_t steps = labeled_stream.batches_per_pass();
    for (std::size_t step = 0; step < steps; ++step) {
      const double lr = scheduled * warmup_factor(static_cast<std::size_t>(epoch) * steps + step, steps, cfg);
      rec.learning_rate = lr;
      // Batches must outlive the tape, which references their images.
      const Batch labeled_batch = labeled_stream.next();
      const Batch pseudo_batch = joint ? pseudo_stream.next() : Batch{};
      Tape tape;
      StepLosses lab;
      Var loss = batch_objective(tape, student, teacher, labeled_batch, cfg.weights, lab);
      if (joint) {
        StepLosses unl;
        const Var u = batch_objective(tape, student, teacher, pseudo_batch, cfg.weights, unl);
        if (u.valid()) loss = loss.valid() ? total_loss_joint(loss, u, cfg.weights.lambda) : scale(u, static_cast<Scalar>(cfg.weights.lambda));
      }
      rec.segmentation_loss += lab.seg;
      rec.probability_loss += lab.prob;
      rec.consistency_loss += lab.cons;
      if (!loss.valid()) continue;
      rec.total_loss += loss.value()[0];
      student.zero_grad();
      tape.backward(loss);
      if (cfg.clip_norm > 0) clip_grad_norm(student.parameters(), cfg.clip_norm);
      sgd_step(student.parameters(), opt, lr, cfg.momentum);
    }
    const double inv = 1.0 / static_cast<double>(steps);
    rec.segmentation_loss *= inv;
    rec.probability_loss *= inv;
    rec.consistency_loss *= inv;
    rec.total_loss *= inv;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!val.empty()) report.val_miou = miou(evaluate(student, val)).miou;
  return report;
}

}  // namespace

TrainReport train_standalone(SegNetwork& net, std::span<const Sample> train, std::span<const Sample> val,
                             const TrainConfig& cfg, const EpochCallback& on_epoch) {
  return run_training(net, nullptr, train, {}, val, cfg, on_epoch);
}

TrainReport train_distill(SegNetwork& student, const SegNetwork& teacher, std::span<const Sample> train,
                          std::span<const Sample> val, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  return run_training(student, &teacher, train, {}, val, cfg, on_epoch);
}

TrainReport train_distill_joint(SegNetwork& student, const SegNetwork& teacher, std::span<const Sample> labeled,
                                std::span<const Sample> pseudo, std::span<const Sample> val, const TrainConfig& cfg,
                                const EpochCallback& on_epoch) {
  if (pseudo.empty()) throw ConfigError("pseudo-labeled set is empty; joint training needs unlabeled data");
  return run_training(student, &teacher, labeled, pseudo, val, cfg, on_epoch);
}

KDSEG_END_NAMESPACE
