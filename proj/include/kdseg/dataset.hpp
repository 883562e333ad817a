#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdseg/labels.hpp"
#include "kdseg/random.hpp"
#include "kdseg/tensor.hpp"

KDSEG_BEGIN_NAMESPACE

/// One image [3,H,W] with values in [0,1] and its [1,H,W] label map.
struct Sample {
  Tensor image;
  LabelMap labels;

  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }
};

struct ManifestEntry {
  std::string image;
  std::optional<std::string> label;  // nullopt marks an unlabeled entry

  bool operator==(const ManifestEntry&) const = default;
};

/// Ordered (image, label) pairs; paths are relative to `root`.
struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  bool empty() const noexcept { return entries.empty(); }
  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

/// Text format: one `image<TAB>label` line per entry, `-` for no label.
/// The root is the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

// Netpbm IO. Images are binary P6, labels binary P5, both with maxval 255.

Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const Tensor& image, const std::filesystem::path& path);
/// Raw 8-bit label plane [1,H,W]; 255 is IGNORE.
LabelMap read_pgm(const std::filesystem::path& path);
void write_pgm(const LabelMap& labels, const std::filesystem::path& path);

/// Reads an entry's image and, if present, its labels (validated against
/// num_classes). Unlabeled entries get an all-IGNORE map.
Sample read_sample(const Manifest& manifest, const ManifestEntry& entry, int num_classes);
void write_sample(const Sample& sample, const std::filesystem::path& image_path,
                  const std::optional<std::filesystem::path>& label_path);
std::vector<Sample> load_samples(const Manifest& manifest, int num_classes);

// --- synthetic scenes -------------------------------------------------------

enum class ShapeKind { kDisk, kSquare, kTriangle };

/// Shape kind drawn for a foreground class (classes 1.. cycle through kinds).
ShapeKind shape_kind_for_class(int cls);

struct SceneShape {
  int cls = 1;
  double cx = 0, cy = 0;  // centre in pixel units
  double radius = 4;      // disk radius, square half-side, triangle circumradius
  double rotation = 0;    // triangles only
  double color[3] = {1, 0, 0};
};

struct Scene {
  int size = 32;
  double background[2][3] = {{0.2, 0.2, 0.2}, {0.4, 0.4, 0.4}};
  double stripe_frequency = 0.3;
  double stripe_angle = 0;
  double noise_sigma = 0.05;
  std::vector<SceneShape> shapes;  // painted in order
};

/// Base colour of a foreground class; shapes jitter around it.
void class_base_color(int cls, int num_classes, double out[3]);

/// True when the pixel centre (x+0.5, y+0.5) lies inside the shape.
bool shape_contains(const SceneShape& shape, int x, int y);

/// Rasterizes a scene; noise is drawn from `rng`.
Sample render_scene(const Scene& scene, Rng& rng);
/// Draws a random scene with 1-4 shapes whose centres are well separated.
Scene random_scene(int size, int num_classes, Rng& rng);

struct DatasetSpec {
  int num_train = 500;
  int num_val = 100;
  int num_unlabeled = 500;
  int size = 32;
  int num_classes = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetManifests {
  std::filesystem::path train;
  std::filesystem::path val;
  std::filesystem::path unlabeled;
};

/// Writes train/val/unlabeled splits under out_dir and returns the manifest paths.
DatasetManifests generate_synthetic_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

// --- augmentation ------------------------------------------------------------

struct AugmentConfig {
  double flip_probability = 0.5;
  double scale_min = 0.5;
  double scale_max = 1.5;
  int target_size = 32;

  void validate() const;
};

/// Deterministic geometric transform: optional horizontal flip, nearest
/// resize by `scale`, then centre crop or zero pad (labels padded with
/// IGNORE) to target x target.
Sample apply_geometry(const Sample& sample, bool flip, double scale, int target_size);

/// Draws flip and scale from `rng` and applies them.
Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng);

struct Batch {
  Tensor images;    // [B,3,H,W]
  LabelMap labels;  // [B,H,W]
};

/// Stacks samples of identical size.
Batch make_batch(std::span<const Sample* const> samples);

KDSEG_END_NAMESPACE
