#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "kdseg/dataset.hpp"
#include "kdseg/labels.hpp"
#include "kdseg/models.hpp"

KDSEG_BEGIN_NAMESPACE

/// counts[g * n + p] = pixels with ground truth g predicted as p.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n) : num_classes(n), counts(static_cast<std::size_t>(n) * n, 0) {}

  std::uint64_t& at(int gt, int pred) { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
  std::uint64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;
};

/// Adds one count per non-IGNORE ground-truth pixel.
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);

struct IouResult {
  std::vector<std::optional<double>> per_class;  // nullopt for zero-union classes
  double miou = 0;
  double pixel_accuracy = 0;
};

/// Mean IoU over classes with a non-empty union. Throws UsageError when the
/// matrix holds no pixels.
IouResult miou(const ConfusionMatrix& cm);

/// Per-pixel argmax of logits [B,n,H,W] (lowest index wins ties).
LabelMap argmax_labels(const Tensor& logits);

/// Runs the network over un-augmented samples at native size.
ConfusionMatrix evaluate(const SegNetwork& net, std::span<const Sample> samples, int batch_size = 16);

struct BenchResult {
  double images_per_second = 0;
  int height = 0;
  int width = 0;
  int iterations = 0;
  int warmup = 0;
};

/// Single-threaded forward timing on a fixed random batch-of-one input.
BenchResult benchmark(const SegNetwork& net, int height, int width, int iterations, int warmup);

void write_metrics_report(std::ostream& os, const IouResult& result, const std::optional<BenchResult>& bench);
void write_metrics_csv(std::ostream& os, const IouResult& result, const std::optional<BenchResult>& bench);

KDSEG_END_NAMESPACE
