#include <algorithm>
#include <cmath>
#include <cstdio>

#include "kdseg/dataset.hpp"

KDSEG_BEGIN_NAMESPACE

namespace {

constexpr double kPi = 3.14159265358979323846;

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

std::string index_name(int i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.%s", i, ext);
  return buf;
}

}  // namespace

ShapeKind shape_kind_for_class(int cls) {
  if (cls < 1) throw LabelError("background has no shape kind");
  return static_cast<ShapeKind>((cls - 1) % 3);
}

bool shape_contains(const SceneShape& shape, int x, int y) {
  const double dx = x + 0.5 - shape.cx;
  const double dy = y + 0.5 - shape.cy;
  switch (shape_kind_for_class(shape.cls)) {
    case ShapeKind::kDisk:
      return dx * dx + dy * dy <= shape.radius * shape.radius;
    case ShapeKind::kSquare:
      return std::abs(dx) <= shape.radius && std::abs(dy) <= shape.radius;
    case ShapeKind::kTriangle: {
      // Equilateral triangle: inside all three edge half-planes.
      for (int k = 0; k < 3; ++k) {
        const double a = shape.rotation + 2.0 * kPi * k / 3.0 + kPi / 3.0;
        const double nx = std::cos(a), ny = std::sin(a);
        if (dx * nx + dy * ny > 0.5 * shape.radius) return false;
      }
      return true;
    }
  }
  return false;
}

Sample render_scene(const Scene& scene, Rng& rng) {
  const int n = scene.size;
  Sample s;
  s.image = Tensor(Shape{3, n, n});
  s.labels = LabelMap(1, n, n, 0);
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  const double ca = std::cos(scene.stripe_angle), sa = std::sin(scene.stripe_angle);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double t = 0.5 + 0.5 * std::sin(scene.stripe_frequency * (x * ca + y * sa));
      const std::size_t p = static_cast<std::size_t>(y) * n + x;
      for (int c = 0; c < 3; ++c) {
        s.image[c * plane + p] = static_cast<Scalar>(scene.background[0][c] * (1 - t) + scene.background[1][c] * t);
      }
    }
  }
  for (const SceneShape& shape : scene.shapes) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        if (!shape_contains(shape, x, y)) continue;
        const std::size_t p = static_cast<std::size_t>(y) * n + x;
        for (int c = 0; c < 3; ++c) s.image[c * plane + p] = static_cast<Scalar>(shape.color[c]);
        s.labels.labels[p] = static_cast<std::uint8_t>(shape.cls);
      }
    }
  }
  if (scene.noise_sigma > 0) {
    for (Scalar& v : s.image.data()) {
      v = static_cast<Scalar>(std::clamp(v + scene.noise_sigma * rng.normal(), 0.0, 1.0));
    }
  }
  return s;
}

void class_base_color(int cls, int num_classes, double out[3]) {
  if (cls < 1 || cls >= num_classes) throw LabelError("class has no base colour");
  // Evenly spaced saturated hues.
  const double hue = 6.0 * (cls - 1) / (num_classes - 1);
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double q = 1.0 - f;
  const double rgb[6][3] = {{1, f, 0}, {q, 1, 0}, {0, 1, f}, {0, q, 1}, {f, 0, 1}, {1, 0, q}};
  for (int c = 0; c < 3; ++c) out[c] = 0.1 + 0.8 * rgb[sector][c];
}

Scene random_scene(int size, int num_classes, Rng& rng) {
  Scene scene;
  scene.size = size;
  // Low-saturation background so shape colours stand out.
  for (auto& bg : scene.background) {
    const double grey = rng.uniform(0.25, 0.75);
    for (double& c : bg) c = std::clamp(grey + rng.uniform(-0.06, 0.06), 0.0, 1.0);
  }
  scene.stripe_frequency = rng.uniform(0.2, 1.2);
  scene.stripe_angle = rng.uniform(0.0, kPi);
  scene.noise_sigma = rng.uniform(0.02, 0.06);

  const double unit = size / 32.0;
  const int count = rng.uniform_int(1, 4);
  const double min_gap = 7.0 * unit;
  for (int i = 0; i < count; ++i) {
    SceneShape shape;
    shape.cls = rng.uniform_int(1, num_classes - 1);
    shape.radius = rng.uniform(3.0, 7.0) * unit;
    shape.rotation = rng.uniform(0.0, 2.0 * kPi);
    bool placed = false;
    for (int attempt = 0; attempt < 50 && !placed; ++attempt) {
      shape.cx = rng.uniform(shape.radius * 0.5, size - shape.radius * 0.5);
      shape.cy = rng.uniform(shape.radius * 0.5, size - shape.radius * 0.5);
      placed = std::all_of(scene.shapes.begin(), scene.shapes.end(), [&](const SceneShape& o) {
        return std::hypot(o.cx - shape.cx, o.cy - shape.cy) >= min_gap;
      });
    }
    if (!placed) continue;
    class_base_color(shape.cls, num_classes, shape.color);
    for (double& c : shape.color) c = std::clamp(c + rng.uniform(-0.1, 0.1), 0.0, 1.0);
    scene.shapes.push_back(shape);
  }
  return scene;
}

void DatasetSpec::validate() const {
  if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be in [2, 255]");
  if (num_train < 0 || num_val < 0 || num_unlabeled < 0) throw ConfigError("split sizes must be non-negative");
  if (size < 8) throw ConfigError("image size must be at least 8");
}

DatasetManifests generate_synthetic_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  DatasetManifests result{out_dir / "train.txt", out_dir / "val.txt", out_dir / "unlabeled.txt"};
  struct Split {
    const char* name;
    int count;
    bool labeled;
    fs::path manifest;
  };
  const Split splits[] = {{"train", spec.num_train, true, result.train},
                          {"val", spec.num_val, true, result.val},
                          {"unlabeled", spec.num_unlabeled, false, result.unlabeled}};
  for (const Split& split : splits) {
    const fs::path img_dir = out_dir / split.name / "images";
    const fs::path lbl_dir = out_dir / split.name / "labels";
    fs::create_directories(img_dir, ec);
    if (ec) throw IoError("cannot create " + img_dir.string() + ": " + ec.message());
    if (split.labeled) {
      fs::create_directories(lbl_dir, ec);
      if (ec) throw IoError("cannot create " + lbl_dir.string() + ": " + ec.message());
    }
    Manifest manifest;
    manifest.root = out_dir;
    for (int i = 0; i < split.count; ++i) {
      Rng rng = Rng::derive(spec.seed, std::string(split.name) + "/" + std::to_string(i));
      const Scene scene = random_scene(spec.size, spec.num_classes, rng);
      const Sample sample = render_scene(scene, rng);
      ManifestEntry entry;
      entry.image = std::string(split.name) + "/images/" + index_name(i, "ppm");
      if (split.labeled) entry.label = std::string(split.name) + "/labels/" + index_name(i, "pgm");
      write_sample(sample, manifest.resolve(entry.image),
                   entry.label ? std::optional<fs::path>(manifest.resolve(*entry.label)) : std::nullopt);
      manifest.entries.push_back(std::move(entry));
    }
    write_manifest(manifest, split.manifest);
  }
  return result;
}

void AugmentConfig::validate() const {
  if (!(flip_probability >= 0 && flip_probability <= 1)) throw ConfigError("flip_probability must be in [0,1]");
  if (!(scale_min > 0 && scale_min <= scale_max)) throw ConfigError("need 0 < scale_min <= scale_max");
  if (target_size < 1) throw ConfigError("target_size must be positive");
}

Sample apply_geometry(const Sample& sample, bool flip, double scale, int target_size) {
  const int h = sample.height(), w = sample.width();
  const int rh = std::max(1, static_cast<int>(std::lround(h * scale)));
  const int rw = std::max(1, static_cast<int>(std::lround(w * scale)));
  const int top = floor_div(rh - target_size, 2);
  const int left = floor_div(rw - target_size, 2);
  const std::size_t src_plane = static_cast<std::size_t>(h) * w;
  const std::size_t dst_plane = static_cast<std::size_t>(target_size) * target_size;

  Sample out;
  out.image = Tensor(Shape{3, target_size, target_size});
  out.labels = LabelMap(1, target_size, target_size);
  for (int y = 0; y < target_size; ++y) {
    const int ry = y + top;
    if (ry < 0 || ry >= rh) continue;
    const int sy = std::min(h - 1, static_cast<int>((ry + 0.5) * h / rh));
    for (int x = 0; x < target_size; ++x) {
      const int rx = x + left;
      if (rx < 0 || rx >= rw) continue;
      int sx = std::min(w - 1, static_cast<int>((rx + 0.5) * w / rw));
      if (flip) sx = w - 1 - sx;
      const std::size_t src = static_cast<std::size_t>(sy) * w + sx;
      const std::size_t dst = static_cast<std::size_t>(y) * target_size + x;
      for (int c = 0; c < 3; ++c) out.image[c * dst_plane + dst] = sample.image[c * src_plane + src];
      out.labels.labels[dst] = sample.labels.labels[src];
    }
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  const bool flip = rng.bernoulli(cfg.flip_probability);
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  return apply_geometry(sample, flip, scale, cfg.target_size);
}

Batch make_batch(std::span<const Sample* const> samples) {
  if (samples.empty()) throw UsageError("make_batch needs at least one sample");
  const int h = samples[0]->height(), w = samples[0]->width();
  const int b = static_cast<int>(samples.size());
  Batch batch{Tensor(Shape{b, 3, h, w}), LabelMap(b, h, w)};
  const std::size_t img = static_cast<std::size_t>(3) * h * w;
  for (int i = 0; i < b; ++i) {
    const Sample& s = *samples[static_cast<std::size_t>(i)];
    if (s.height() != h || s.width() != w) throw DimensionError("make_batch: samples differ in size");
    std::copy(s.image.data().begin(), s.image.data().end(), batch.images.data().begin() + static_cast<std::ptrdiff_t>(i * img));
    std::copy(s.labels.labels.begin(), s.labels.labels.end(),
              batch.labels.labels.begin() + static_cast<std::ptrdiff_t>(i * batch.labels.plane()));
  }
  return batch;
}

KDSEG_END_NAMESPACE
