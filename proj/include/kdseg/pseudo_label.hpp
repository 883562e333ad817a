#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kdseg/dataset.hpp"
#include "kdseg/labels.hpp"
#include "kdseg/models.hpp"

KDSEG_BEGIN_NAMESPACE

inline constexpr double kDefaultPseudoThreshold = 0.7;

struct PseudoLabelBatch {
  LabelMap labels;
  double kept_fraction = 0;  // non-IGNORE pixels / all pixels
  double threshold = 0;
};

/// Throws ConfigError unless threshold is in (0, 1].
void validate_threshold(double threshold);

/// Labels each pixel with its argmax class when the max probability is at
/// least `threshold`, IGNORE otherwise. Ties go to the lowest class index.
PseudoLabelBatch pseudo_labels_from_probabilities(const Tensor& probabilities, double threshold);

/// Runs the teacher (no gradient tracking) and thresholds its softmax output.
PseudoLabelBatch generate_pseudo_labels(const SegNetwork& teacher, const Tensor& images, double threshold);

struct PseudoLabelStat {
  std::string image;
  double kept_fraction = 0;
  bool ok = false;
  std::string error;
};

struct PseudoLabelSummary {
  std::vector<PseudoLabelStat> images;
  double kept_fraction = 0;  // over all successfully processed pixels
  std::size_t failures = 0;
};

/// Writes one PGM label file per input image into `label_dir` and a paired
/// manifest at `manifest_out`. Per-image failures are recorded and skipped.
PseudoLabelSummary pseudo_label_dataset(const SegNetwork& teacher, const Manifest& input,
                                        const std::filesystem::path& manifest_out, double threshold);

KDSEG_END_NAMESPACE
