#include "kdseg/pseudo_label.hpp"

#include <cmath>

KDSEG_BEGIN_NAMESPACE

void validate_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ConfigError("pseudo-label threshold must be in (0, 1], got " + std::to_string(threshold));
  }
}

PseudoLabelBatch pseudo_labels_from_probabilities(const Tensor& probabilities, double threshold) {
  validate_threshold(threshold);
  if (probabilities.ndim() != 4) throw DimensionError("pseudo labels need [B,n,H,W] probabilities");
  const int b = probabilities.dim(0), n = probabilities.dim(1);
  PseudoLabelBatch out;
  out.threshold = threshold;
  out.labels = LabelMap(b, probabilities.dim(2), probabilities.dim(3));
  const std::size_t plane = out.labels.plane();
  // Compared at the precision of the probabilities, so p == 0.7f passes 0.7.
  const Scalar cut = static_cast<Scalar>(threshold);
  std::size_t kept = 0;
  for (int i = 0; i < b; ++i) {
    const Scalar* base = probabilities.data().data() + static_cast<std::size_t>(i) * n * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      for (int k = 1; k < n; ++k) {
        if (base[k * plane + p] > base[best * plane + p]) best = k;
      }
      if (base[best * plane + p] >= cut) {
        out.labels.labels[i * plane + p] = static_cast<std::uint8_t>(best);
        ++kept;
      }
    }
  }
  out.kept_fraction = out.labels.size() ? static_cast<double>(kept) / static_cast<double>(out.labels.size()) : 0.0;
  return out;
}

PseudoLabelBatch generate_pseudo_labels(const SegNetwork& teacher, const Tensor& images, double threshold) {
  validate_threshold(threshold);
  Tape tape;
  const Var probs = softmax_channels(teacher.forward_inference(tape, tape.constant_ref(images)));
  return pseudo_labels_from_probabilities(probs.value(), threshold);
}

PseudoLabelSummary pseudo_label_dataset(const SegNetwork& teacher, const Manifest& input,
                                        const std::filesystem::path& manifest_out, double threshold) {
  validate_threshold(threshold);
  namespace fs = std::filesystem;
  const fs::path root = manifest_out.parent_path().empty() ? fs::path(".") : manifest_out.parent_path();
  const std::string label_subdir = manifest_out.stem().string() + "_labels";
  std::error_code ec;
  fs::create_directories(root / label_subdir, ec);
  if (ec) throw IoError("cannot create " + (root / label_subdir).string() + ": " + ec.message());

  PseudoLabelSummary summary;
  Manifest out;
  out.root = root;
  std::size_t kept_pixels = 0, total_pixels = 0;
  for (std::size_t i = 0; i < input.entries.size(); ++i) {
    const ManifestEntry& entry = input.entries[i];
    PseudoLabelStat stat;
    stat.image = entry.image;
    try {
      Tensor image = read_ppm(input.resolve(entry.image));
      const Shape s = image.shape();
      const Tensor batch(Shape{1, s[0], s[1], s[2]}, std::vector<Scalar>(image.data().begin(), image.data().end()));
      const PseudoLabelBatch labels = generate_pseudo_labels(teacher, batch, threshold);
      const std::string rel = label_subdir + "/" + fs::path(entry.image).stem().string() + "_" + std::to_string(i) + ".pgm";
      write_pgm(labels.labels, root / rel);
      ManifestEntry paired;
      paired.image = fs::relative(fs::absolute(input.resolve(entry.image)), fs::absolute(root)).generic_string();
      paired.label = rel;
      out.entries.push_back(std::move(paired));
      stat.kept_fraction = labels.kept_fraction;
      stat.ok = true;
      kept_pixels += labels.labels.count_labeled();
      total_pixels += labels.labels.size();
    } catch (const Error& e) {
      stat.error = e.what();
      ++summary.failures;
    }
    summary.images.push_back(std::move(stat));
  }
  write_manifest(out, manifest_out);
  summary.kept_fraction = total_pixels ? static_cast<double>(kept_pixels) / static_cast<double>(total_pixels) : 0.0;
  return summary;
}

KDSEG_END_NAMESPACE
