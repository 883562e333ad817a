#include "kdseg/metrics.hpp"

#include <chrono>
#include <iomanip>
#include <ostream>

#include "kdseg/random.hpp"

KDSEG_BEGIN_NAMESPACE

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts) t += c;
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw DimensionError("cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  if (pred.batch != gt.batch || pred.height != gt.height || pred.width != gt.width) {
    throw DimensionError("accumulate: prediction and ground truth differ in shape");
  }
  const int n = cm.num_classes;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt.labels[i];
    if (g == kIgnoreLabel) continue;
    const int p = pred.labels[i];
    if (g >= n || p >= n) throw LabelError("accumulate: label outside the confusion matrix");
    ++cm.at(g, p);
  }
}

IouResult miou(const ConfusionMatrix& cm) {
  const int n = cm.num_classes;
  const std::uint64_t total = cm.total();
  if (total == 0) throw UsageError("mIoU is undefined for an empty confusion matrix");
  IouResult r;
  r.per_class.resize(static_cast<std::size_t>(n));
  double sum = 0;
  int counted = 0;
  std::uint64_t correct = 0;
  for (int k = 0; k < n; ++k) {
    const std::uint64_t tp = cm.at(k, k);
    std::uint64_t fp = 0, fn = 0;
    for (int j = 0; j < n; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    correct += tp;
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(k)] = iou;
    sum += iou;
    ++counted;
  }
  r.miou = sum / counted;
  r.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return r;
}

LabelMap argmax_labels(const Tensor& logits) {
  if (logits.ndim() != 4) throw DimensionError("argmax_labels expects [B,n,H,W]");
  const int b = logits.dim(0), n = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  LabelMap out(b, h, w, 0);
  const std::size_t plane = out.plane();
  for (int i = 0; i < b; ++i) {
    const Scalar* base = logits.data().data() + static_cast<std::size_t>(i) * n * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      for (int k = 1; k < n; ++k) {
        if (base[k * plane + p] > base[best * plane + p]) best = k;
      }
      out.labels[i * plane + p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

ConfusionMatrix evaluate(const SegNetwork& net, std::span<const Sample> samples, int batch_size) {
  ConfusionMatrix cm(net.config().num_classes);
  std::vector<const Sample*> group;
  auto flush = [&]() {
    if (group.empty()) return;
    const Batch batch = make_batch(group);
    accumulate(cm, argmax_labels(net.infer(batch.images)), batch.labels);
    group.clear();
  };
  for (const Sample& s : samples) {
    if (!group.empty() && (s.height() != group[0]->height() || s.width() != group[0]->width())) flush();
    group.push_back(&s);
    if (static_cast<int>(group.size()) >= batch_size) flush();
  }
  flush();
  return cm;
}

BenchResult benchmark(const SegNetwork& net, int height, int width, int iterations, int warmup) {
  if (iterations <= 0) throw UsageError("benchmark needs at least one timed iteration");
  if (warmup < 0) throw UsageError("warmup must be non-negative");
  const int m = net.config().size_multiple();
  if (height <= 0 || width <= 0 || height % m != 0 || width % m != 0) {
    throw DimensionError("benchmark input " + std::to_string(height) + "x" + std::to_string(width) +
                         " is not a multiple of " + std::to_string(m));
  }
  Rng rng(12345);
  Tensor input(Shape{1, net.config().input_channels, height, width});
  for (Scalar& v : input.data()) v = static_cast<Scalar>(rng.uniform());
  for (int i = 0; i < warmup; ++i) (void)net.infer(input);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < iterations; ++i) (void)net.infer(input);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return BenchResult{iterations / std::max(secs, 1e-12), height, width, iterations, warmup};
}

void write_metrics_report(std::ostream& os, const IouResult& result, const std::optional<BenchResult>& bench) {
  os << std::fixed << std::setprecision(4);
  os << "class  IoU\n";
  for (std::size_t k = 0; k < result.per_class.size(); ++k) {
    os << std::setw(5) << k << "  ";
    if (result.per_class[k]) {
      os << *result.per_class[k] << '\n';
    } else {
      os << "n/a\n";
    }
  }
  os << "mIoU            " << result.miou << '\n';
  os << "pixel accuracy  " << result.pixel_accuracy << '\n';
  if (bench) {
    os << std::setprecision(2) << "throughput      " << bench->images_per_second << " images/s at " << bench->height
       << "x" << bench->width << '\n';
  }
}

void write_metrics_csv(std::ostream& os, const IouResult& result, const std::optional<BenchResult>& bench) {
  os << std::setprecision(8);
  os << "class,iou\n";
  for (std::size_t k = 0; k < result.per_class.size(); ++k) {
    os << k << ',';
    if (result.per_class[k]) os << *result.per_class[k];
    os << '\n';
  }
  os << "miou," << result.miou << '\n';
  os << "pixel_accuracy," << result.pixel_accuracy << '\n';
  if (bench) os << "fps," << bench->images_per_second << '\n';
}

KDSEG_END_NAMESPACE
