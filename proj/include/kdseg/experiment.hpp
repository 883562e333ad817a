#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kdseg/dataset.hpp"
#include "kdseg/trainer.hpp"

KDSEG_BEGIN_NAMESPACE

/// Rows of the ablation ladder, in table order.
enum class Method { kTeacher, kBaseline, kProbability, kProbabilityConsistency, kUnlabeled };

const char* method_label(Method method);

/// The 60-epoch 30/40/50 schedule with lr_initial 0.03, alpha 4, beta 1e-4,
/// a 3-epoch warmup and gradient norm clipped at 5.
TrainConfig desk_train_config();

struct AblationConfig {
  DatasetSpec data;  // seed is replaced by each run seed
  std::vector<std::uint64_t> seeds{1, 2, 3};
  TrainConfig student = desk_train_config();  // weights are the distillation settings
  TrainConfig teacher = desk_train_config();
  double threshold = 0.7;
  std::vector<double> lambda_sweep;   // extra +unlabeled runs at these lambdas (width 1.0)
  std::vector<double> width_sweep;    // extra baseline / +Lp+Lc pairs at these widths
  /// When set, one dataset and one teacher built from this seed serve every
  /// student seed; otherwise each seed gets its own dataset and teacher.
  std::optional<std::uint64_t> shared_seed;
  /// Pre-trained teacher to use instead of training one (shared mode only).
  std::filesystem::path teacher_checkpoint;
  int bench_size = 32;
  int bench_iterations = 300;
  int bench_warmup = 30;
  int bench_repeats = 5;  // interleaved rounds over all trained networks

  void validate() const;
};

struct AblationRun {
  Method method = Method::kBaseline;
  double width = 1.0;
  double lambda = 0.0;  // only meaningful for kUnlabeled
  std::uint64_t seed = 0;
  double miou = 0;
  double images_per_second = 0;
  double seconds = 0;
};

struct AblationSummaryRow {
  Method method = Method::kBaseline;
  double width = 1.0;
  double lambda = 0.0;
  int count = 0;
  double miou_mean = 0;
  double miou_spread = 0;  // sample standard deviation, 0 for a single seed
  double fps_mean = 0;
  double fps_spread = 0;
};

struct AblationResult {
  std::vector<AblationRun> runs;

  /// Aggregates runs sharing (method, width, lambda), in first-seen order.
  std::vector<AblationSummaryRow> summary() const;
  /// Mean mIoU of one cell; throws UsageError when absent.
  double mean_miou(Method method, double width = 1.0, double lambda = -1.0) const;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs the five-row ladder on every seed plus the optional sweeps. Data,
/// teacher and pseudo-labels live under work_dir/seed-<s> (or shared-<s>).
AblationResult run_ablation(const AblationConfig& cfg, const std::filesystem::path& work_dir,
                            const ProgressFn& progress = {});

/// Five-row ladder table with mean±spread mIoU and FPS.
void write_ablation_markdown(std::ostream& os, const AblationResult& result);
/// One line per individual run.
void write_ablation_csv(std::ostream& os, const AblationResult& result);
/// mean mIoU per lambda of the +unlabeled runs at width 1.0.
void write_lambda_csv(std::ostream& os, const AblationResult& result);
/// Baseline vs +Lp+Lc mean mIoU per width.
void write_width_csv(std::ostream& os, const AblationResult& result);

KDSEG_END_NAMESPACE
