#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "kdseg/scalar.hpp"

KDSEG_BEGIN_NAMESPACE

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// Per-pixel class indices for a batch, laid out [B, H, W].
struct LabelMap {
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int b, int h, int w, std::uint8_t fill = kIgnoreLabel)
      : batch(b), height(h), width(w), labels(static_cast<std::size_t>(b) * h * w, fill) {}

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
  std::uint8_t& at(int b, int y, int x) { return labels[b * plane() + static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int b, int y, int x) const { return labels[b * plane() + static_cast<std::size_t>(y) * width + x]; }

  std::size_t count_labeled() const noexcept {
    std::size_t n = 0;
    for (std::uint8_t v : labels) n += v != kIgnoreLabel;
    return n;
  }

  /// Throws LabelError if any non-IGNORE entry is >= num_classes.
  void validate(int num_classes) const;

  bool operator==(const LabelMap&) const = default;
};

KDSEG_END_NAMESPACE
