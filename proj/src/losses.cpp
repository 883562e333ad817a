#include "kdseg/losses.hpp"

#include <cmath>
#include <string>

KDSEG_BEGIN_NAMESPACE

void LabelMap::validate(int num_classes) const {
  for (std::uint8_t v : labels) {
    if (v != kIgnoreLabel && v >= num_classes) {
      throw LabelError("label " + std::to_string(v) + " out of range for " + std::to_string(num_classes) +
                       " classes");
    }
  }
}

void LossWeights::validate() const {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(lambda)) {
    throw ConfigError("loss weights must be finite");
  }
  if (alpha < 0 || beta < 0 || lambda < 0) throw ConfigError("loss weights must be non-negative");
}

namespace {

void require_maps(const Var& v, const char* what) {
  if (v.value().ndim() != 4) {
    throw DimensionError(std::string(what) + " must be [B,C,H,W], got " + shape_str(v.shape()));
  }
}

// sum((a - b)^2) / (B*H*W); gradient flows into `a` only.
Var squared_error_per_pixel(Var a, Var b, const char* op) {
  require_maps(a, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (&a.tape() != &b.tape()) throw UsageError(std::string(op) + ": operands on different tapes");
  const Shape& s = a.shape();
  const double norm = static_cast<double>(s[0]) * s[2] * s[3];
  const auto av = a.value().data();
  const auto bv = b.value().data();
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  const int a_id = a.id(), b_id = b.id();
  return a.tape().record(op, Tensor::scalar(static_cast<Scalar>(acc / norm)), {a_id},
                         [a_id, b_id, norm](Tape& t, int self) {
    const Scalar g = t.grad(self)[0];
    const auto x = t.value(a_id).data();
    const auto y = t.value(b_id).data();
    auto d = t.grad(a_id);
    const Scalar k = static_cast<Scalar>(2.0 / norm) * g;
    for (std::size_t i = 0; i < x.size(); ++i) d[i] += k * (x[i] - y[i]);
  });
}

constexpr int kNeighbours[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}};

}  // namespace

Var segmentation_loss(Var student_logits, const LabelMap& labels) {
  require_maps(student_logits, "segmentation_loss logits");
  const Tensor& l = student_logits.value();
  const int batch = l.dim(0), n = l.dim(1), h = l.dim(2), w = l.dim(3);
  if (labels.batch != batch || labels.height != h || labels.width != w) {
    throw DimensionError("segmentation_loss: logits " + shape_str(l.shape()) + " vs labels [" +
                         std::to_string(labels.batch) + "," + std::to_string(labels.height) + "," +
                         std::to_string(labels.width) + "]");
  }
  labels.validate(n);
  const std::size_t kept = labels.count_labeled();
  if (kept == 0) throw DegenerateBatchError("segmentation_loss: every pixel is IGNORE");

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const Scalar* x = l.data().data();
  double acc = 0;
  for (int b = 0; b < batch; ++b) {
    const Scalar* base = x + static_cast<std::size_t>(b) * n * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint8_t y = labels.labels[b * plane + p];
      if (y == kIgnoreLabel) continue;
      double mx = base[p];
      for (int k = 1; k < n; ++k) mx = std::max(mx, static_cast<double>(base[k * plane + p]));
      double z = 0;
      for (int k = 0; k < n; ++k) z += std::exp(base[k * plane + p] - mx);
      acc += std::log(z) + mx - base[y * plane + p];
    }
  }
  const double inv = 1.0 / static_cast<double>(kept);
  const int in_id = student_logits.id();
  return student_logits.tape().record(
      "segmentation_loss", Tensor::scalar(static_cast<Scalar>(acc * inv)), {in_id},
      [in_id, labels, batch, n, plane, inv](Tape& t, int self) {
        const Scalar g = t.grad(self)[0] * static_cast<Scalar>(inv);
        const Scalar* xv = t.value(in_id).data().data();
        Scalar* d = t.grad(in_id).data();
        for (int b = 0; b < batch; ++b) {
          const std::size_t off = static_cast<std::size_t>(b) * n * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            const std::uint8_t y = labels.labels[b * plane + p];
            if (y == kIgnoreLabel) continue;
            Scalar mx = xv[off + p];
            for (int k = 1; k < n; ++k) mx = std::max(mx, xv[off + k * plane + p]);
            Scalar z = 0;
            for (int k = 0; k < n; ++k) z += std::exp(xv[off + k * plane + p] - mx);
            for (int k = 0; k < n; ++k) {
              const Scalar prob = std::exp(xv[off + k * plane + p] - mx) / z;
              d[off + k * plane + p] += g * (prob - (k == y ? Scalar(1) : Scalar(0)));
            }
          }
        }
      });
}

Var probability_loss(Var p_student, Var p_teacher) {
  return squared_error_per_pixel(p_student, p_teacher, "probability_loss");
}

Var consistency_map(Var logits) {
  require_maps(logits, "consistency_map logits");
  const Tensor& l = logits.value();
  const int batch = l.dim(0), n = l.dim(1), h = l.dim(2), w = l.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(Shape{batch, 1, h, w});
  const Scalar* x = l.data().data();
  Scalar* c = out.data().data();
  for (int b = 0; b < batch; ++b) {
    const Scalar* base = x + static_cast<std::size_t>(b) * n * plane;
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        const std::size_t centre = static_cast<std::size_t>(py) * w + px;
        Scalar acc = 0;
        for (const auto& off : kNeighbours) {
          const int qy = py + off[0], qx = px + off[1];
          if (qy < 0 || qy >= h || qx < 0 || qx >= w) continue;
          const std::size_t nb = static_cast<std::size_t>(qy) * w + qx;
          for (int k = 0; k < n; ++k) {
            const Scalar d = base[k * plane + nb] - base[k * plane + centre];
            acc += d * d;
          }
        }
        c[b * plane + centre] = acc;
      }
    }
  }
  const int in_id = logits.id();
  return logits.tape().record("consistency_map", std::move(out), {in_id},
                              [in_id, batch, n, h, w, plane](Tape& t, int self) {
    const Scalar* g = t.grad(self).data();
    const Scalar* xv = t.value(in_id).data().data();
    Scalar* d = t.grad(in_id).data();
    for (int b = 0; b < batch; ++b) {
      const std::size_t off_b = static_cast<std::size_t>(b) * n * plane;
      for (int py = 0; py < h; ++py) {
        for (int px = 0; px < w; ++px) {
          const std::size_t centre = static_cast<std::size_t>(py) * w + px;
          const Scalar gc = Scalar(2) * g[b * plane + centre];
          if (gc == Scalar(0)) continue;
          for (const auto& off : kNeighbours) {
            const int qy = py + off[0], qx = px + off[1];
            if (qy < 0 || qy >= h || qx < 0 || qx >= w) continue;
            const std::size_t nb = static_cast<std::size_t>(qy) * w + qx;
            for (int k = 0; k < n; ++k) {
              const Scalar diff = xv[off_b + k * plane + nb] - xv[off_b + k * plane + centre];
              d[off_b + k * plane + nb] += gc * diff;
              d[off_b + k * plane + centre] -= gc * diff;
            }
          }
        }
      }
    }
  });
}

Var consistency_loss(Var l_student, Var l_teacher) {
  if (l_student.shape() != l_teacher.shape()) {
    throw DimensionError("consistency_loss: shape " + shape_str(l_student.shape()) + " vs " +
                         shape_str(l_teacher.shape()));
  }
  return squared_error_per_pixel(consistency_map(l_student), consistency_map(l_teacher),
                                 "consistency_loss");
}

Var knowledge_bias(Var p_student, Var p_teacher, Var l_student, Var l_teacher, const LossWeights& w) {
  w.validate();
  const Var lp = probability_loss(p_student, p_teacher);
  const Var lc = consistency_loss(l_student, l_teacher);
  return add(scale(lp, static_cast<Scalar>(w.alpha)), scale(lc, static_cast<Scalar>(w.beta)));
}

LossTerms total_loss_labeled(Var student_logits, Var teacher_logits, const LabelMap& labels,
                             const LossWeights& w) {
  w.validate();
  if (teacher_logits.requires_grad()) {
    throw UsageError("teacher logits must be computed without gradient tracking");
  }
  LossTerms terms;
  terms.segmentation = segmentation_loss(student_logits, labels);
  terms.probability = probability_loss(softmax_channels(student_logits), softmax_channels(teacher_logits));
  terms.consistency = consistency_loss(student_logits, teacher_logits);
  const Var bias = add(scale(terms.probability, static_cast<Scalar>(w.alpha)),
                       scale(terms.consistency, static_cast<Scalar>(w.beta)));
  terms.total = add(terms.segmentation, bias);
  return terms;
}

Var total_loss_joint(Var labeled, Var unlabeled, double lambda) {
  if (!(lambda >= 0) || !std::isfinite(lambda)) {
    throw ConfigError("lambda must be a finite non-negative value");
  }
  return add(labeled, scale(unlabeled, static_cast<Scalar>(lambda)));
}

KDSEG_END_NAMESPACE
