#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "kdseg/dataset.hpp"
#include "kdseg/losses.hpp"
#include "kdseg/models.hpp"

KDSEG_BEGIN_NAMESPACE

struct TrainConfig {
  int batch_size = 8;
  int epochs = 60;
  double lr_initial = 0.1;
  std::vector<int> lr_drop_epochs{30, 40, 50};
  double lr_drop_factor = 10.0;
  double momentum = 0.9;
  int warmup_epochs = 0;  // linear ramp from lr/steps up to lr, per step
  double clip_norm = 0;   // global gradient L2 norm cap, 0 = off
  LossWeights weights;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;

  void validate() const;
};

/// lr_initial / drop_factor^(number of drop epochs <= epoch).
double lr_at(int epoch, const TrainConfig& cfg);

/// Warmup multiplier for 0-based global `step` given `steps_per_epoch`:
/// min(1, (step + 1) / (warmup_epochs * steps_per_epoch)). 1 without warmup.
double warmup_factor(std::size_t step, std::size_t steps_per_epoch, const TrainConfig& cfg);

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

/// One velocity buffer per parameter tensor.
struct OptimizerState {
  std::vector<std::vector<Scalar>> velocity;
};

/// Classic momentum: v = momentum*v + g; p = p - lr*v. Parameters without a
/// gradient buffer are treated as having zero gradient.
void sgd_step(std::span<Tensor> params, OptimizerState& state, double lr, double momentum);

struct EpochRecord {
  int epoch = 0;
  double segmentation_loss = 0;
  double probability_loss = 0;
  double consistency_loss = 0;
  double total_loss = 0;
  double learning_rate = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::optional<double> val_miou;
};

void write_report_csv(std::ostream& os, const TrainReport& report);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Cross entropy only.
TrainReport train_standalone(SegNetwork& net, std::span<const Sample> train, std::span<const Sample> val,
                             const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// L_S + alpha*L_p + beta*L_c against a fixed teacher. With alpha = beta = 0
/// the teacher is never evaluated and the run equals train_standalone.
TrainReport train_distill(SegNetwork& student, const SegNetwork& teacher, std::span<const Sample> train,
                          std::span<const Sample> val, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Labeled loss + lambda * (same objective on teacher pseudo-labeled images).
/// Each step pairs one labeled batch with one pseudo batch; the pseudo stream
/// is shuffled independently and cycles.
TrainReport train_distill_joint(SegNetwork& student, const SegNetwork& teacher, std::span<const Sample> labeled,
                                std::span<const Sample> pseudo, std::span<const Sample> val, const TrainConfig& cfg,
                                const EpochCallback& on_epoch = {});

KDSEG_END_NAMESPACE
