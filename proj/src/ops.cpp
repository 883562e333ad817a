#include <algorithm>
#include <cmath>
#include <vector>

#include "kdseg/kernels.hpp"
#include "kdseg/tensor.hpp"

KDSEG_BEGIN_NAMESPACE

namespace {

Tape& common_tape(std::initializer_list<Var> vars) {
  Tape* tape = nullptr;
  for (const Var& v : vars) {
    Tape& t = v.tape();
    if (tape != nullptr && tape != &t) throw UsageError("operands recorded on different tapes");
    tape = &t;
  }
  return *tape;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank4(const Var& x, const char* op) {
  if (x.value().ndim() != 4) {
    throw DimensionError(std::string(op) + " expects a [B,C,H,W] tensor, got " + shape_str(x.shape()));
  }
}

struct ConvGeometry {
  int channels, height, width;
  int kh, kw, stride, padding;
  int out_h, out_w;
  int rows() const { return channels * kh * kw; }
  int cols() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
};

// Output columns ox with 0 <= ox*stride - padding + kx < width form [lo, hi).
void valid_span(const ConvGeometry& g, int kx, int& lo, int& hi) {
  const int off = kx - g.padding;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  hi = g.width - off <= 0 ? 0 : (g.width - off - 1) / g.stride + 1;
  hi = std::min(hi, g.out_w);
  lo = std::min(lo, hi);
}

void im2col(const ConvGeometry& g, const Scalar* src, Scalar* col) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        Scalar* out = col + static_cast<std::ptrdiff_t>((c * g.kh + ky) * g.kw + kx) * cols;
        int lo = 0, hi = 0;
        valid_span(g, kx, lo, hi);
        const int off = kx - g.padding;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          Scalar* orow = out + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(orow, orow + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* irow = src + (static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width;
          std::fill(orow, orow + lo, Scalar(0));
          if (g.stride == 1) {
            std::copy(irow + lo + off, irow + hi + off, orow + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) orow[ox] = irow[ox * g.stride + off];
          }
          std::fill(orow + hi, orow + g.out_w, Scalar(0));
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const Scalar* col, Scalar* dst) {
  const int cols = g.cols();
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const Scalar* in = col + static_cast<std::ptrdiff_t>((c * g.kh + ky) * g.kw + kx) * cols;
        int lo = 0, hi = 0;
        valid_span(g, kx, lo, hi);
        const int off = kx - g.padding;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          Scalar* drow = dst + (static_cast<std::ptrdiff_t>(c) * g.height + iy) * g.width;
          const Scalar* irow = in + oy * g.out_w;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) drow[ox + off] += irow[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) drow[ox * g.stride + off] += irow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias, int stride, int padding) {
  Tape& tape = common_tape({input, kernel, bias});
  require_rank4(input, "conv2d input");
  if (kernel.value().ndim() != 4) throw DimensionError("conv2d kernel must be [Cout,Cin,Kh,Kw]");
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  const int batch = xs[0];
  const int cout = ks[0];
  if (ks[1] != xs[1]) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, got " +
                         std::to_string(xs[1]));
  }
  if (bias.value().ndim() != 1 || bias.shape()[0] != cout) {
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(cout) + "]");
  }
  if (ks[2] % 2 == 0 || ks[3] % 2 == 0) throw ConfigError("conv2d: kernel sizes must be odd");
  if (stride <= 0 || padding < 0) throw ConfigError("conv2d: stride must be positive, padding non-negative");
  // Output size is floor((H + 2p - K) / stride) + 1, as in the common frameworks.
  const int span_h = xs[2] + 2 * padding - ks[2];
  const int span_w = xs[3] + 2 * padding - ks[3];
  if (span_h < 0 || span_w < 0) {
    throw ConfigError("conv2d: input " + shape_str(xs) + " with kernel " + shape_str(ks) + " and padding " +
                      std::to_string(padding) + " gives an empty output");
  }
  const ConvGeometry geo{xs[1], xs[2], xs[3], ks[2], ks[3], stride, padding,
                         span_h / stride + 1, span_w / stride + 1};

  const KernelTable& kt = active_kernels();
  const int rows = geo.rows();
  const int cols = geo.cols();
  const std::size_t in_plane = static_cast<std::size_t>(geo.channels) * geo.height * geo.width;
  const std::size_t out_plane = static_cast<std::size_t>(cout) * cols;

  Tensor out(Shape{batch, cout, geo.out_h, geo.out_w});
  std::vector<Scalar> col(geo.is_pointwise() ? 0 : static_cast<std::size_t>(rows) * cols);
  const Scalar* x = input.value().data().data();
  const Scalar* w = kernel.value().data().data();
  const Scalar* bvals = bias.value().data().data();
  for (int b = 0; b < batch; ++b) {
    const Scalar* src = x + b * in_plane;
    const Scalar* colp = src;
    if (!geo.is_pointwise()) {
      im2col(geo, src, col.data());
      colp = col.data();
    }
    Scalar* dst = out.data().data() + b * out_plane;
    for (int co = 0; co < cout; ++co) std::fill(dst + co * cols, dst + (co + 1) * cols, bvals[co]);
    kt.gemm(cout, cols, rows, w, rows, 1, colp, cols, dst, cols, true);
  }

  const int in_id = input.id(), k_id = kernel.id(), b_id = bias.id();
  return tape.record("conv2d", std::move(out), {in_id, k_id, b_id},
                     [=](Tape& t, int self) {
    const KernelTable& k = active_kernels();
    const Scalar* g = t.grad(self).data();
    const Scalar* xin = t.value(in_id).data().data();
    const Scalar* wk = t.value(k_id).data().data();
    std::vector<Scalar> buf(geo.is_pointwise() ? 0 : static_cast<std::size_t>(rows) * cols);
    if (t.needs_grad(b_id)) {
      Scalar* db = t.grad(b_id).data();
      for (int b = 0; b < batch; ++b) {
        for (int co = 0; co < cout; ++co) {
          const Scalar* gp = g + b * out_plane + static_cast<std::size_t>(co) * cols;
          double acc = 0;
          for (int q = 0; q < cols; ++q) acc += gp[q];
          db[co] += static_cast<Scalar>(acc);
        }
      }
    }
    if (t.needs_grad(k_id)) {
      Scalar* dw = t.grad(k_id).data();
      for (int b = 0; b < batch; ++b) {
        const Scalar* colp = xin + b * in_plane;
        if (!geo.is_pointwise()) {
          im2col(geo, colp, buf.data());
          colp = buf.data();
        }
        k.gemm_abt(cout, rows, cols, g + b * out_plane, cols, colp, cols, dw, rows);
      }
    }
    if (t.needs_grad(in_id)) {
      Scalar* dx = t.grad(in_id).data();
      for (int b = 0; b < batch; ++b) {
        if (geo.is_pointwise()) {
          k.gemm(rows, cols, cout, wk, 1, rows, g + b * out_plane, cols, dx + b * in_plane, cols, true);
        } else {
          k.gemm(rows, cols, cout, wk, 1, rows, g + b * out_plane, cols, buf.data(), cols, false);
          col2im_add(geo, buf.data(), dx + b * in_plane);
        }
      }
    }
  });
}

Var relu(Var x) {
  Tape& tape = x.tape();
  Tensor out = x.value();
  out.set_requires_grad(false);
  for (Scalar& v : out.data()) v = v > Scalar(0) ? v : Scalar(0);
  const int in_id = x.id();
  return tape.record("relu", std::move(out), {in_id}, [in_id](Tape& t, int self) {
    const auto xv = t.value(in_id).data();
    const auto g = t.grad(self);
    auto dx = t.grad(in_id);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > Scalar(0)) dx[i] += g[i];
    }
  });
}

Var softmax_channels(Var logits) {
  Tape& tape = logits.tape();
  require_rank4(logits, "softmax_channels");
  const Tensor& in = logits.value();
  if (!in.all_finite()) throw NumericError("softmax_channels: non-finite logits");
  const int batch = in.dim(0), n = in.dim(1);
  if (n < 2) throw DimensionError("softmax_channels needs at least 2 classes");
  const std::size_t plane = static_cast<std::size_t>(in.dim(2)) * in.dim(3);
  Tensor out(in.shape());
  const Scalar* x = in.data().data();
  Scalar* y = out.data().data();
  for (int b = 0; b < batch; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * n * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      Scalar mx = x[base + p];
      for (int k = 1; k < n; ++k) mx = std::max(mx, x[base + k * plane + p]);
      Scalar total = 0;
      for (int k = 0; k < n; ++k) {
        const Scalar e = std::exp(x[base + k * plane + p] - mx);
        y[base + k * plane + p] = e;
        total += e;
      }
      for (int k = 0; k < n; ++k) y[base + k * plane + p] /= total;
    }
  }
  const int in_id = logits.id();
  return tape.record("softmax_channels", std::move(out), {in_id},
                     [in_id, batch, n, plane](Tape& t, int self) {
    const Scalar* yv = t.value(self).data().data();
    const Scalar* g = t.grad(self).data();
    Scalar* dx = t.grad(in_id).data();
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * n * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        Scalar dot = 0;
        for (int k = 0; k < n; ++k) dot += g[base + k * plane + p] * yv[base + k * plane + p];
        for (int k = 0; k < n; ++k) {
          const std::size_t i = base + k * plane + p;
          dx[i] += yv[i] * (g[i] - dot);
        }
      }
    }
  });
}

Var upsample_nearest2x(Var x) {
  Tape& tape = x.tape();
  require_rank4(x, "upsample_nearest2x");
  const Tensor& in = x.value();
  const int planes = in.dim(0) * in.dim(1), h = in.dim(2), w = in.dim(3);
  Tensor out(Shape{in.dim(0), in.dim(1), 2 * h, 2 * w});
  const Scalar* src = in.data().data();
  Scalar* dst = out.data().data();
  for (int p = 0; p < planes; ++p) {
    for (int r = 0; r < 2 * h; ++r) {
      const Scalar* srow = src + (static_cast<std::size_t>(p) * h + r / 2) * w;
      Scalar* drow = dst + (static_cast<std::size_t>(p) * 2 * h + r) * 2 * w;
      for (int c = 0; c < 2 * w; ++c) drow[c] = srow[c / 2];
    }
  }
  const int in_id = x.id();
  return tape.record("upsample_nearest2x", std::move(out), {in_id},
                     [in_id, planes, h, w](Tape& t, int self) {
    const Scalar* g = t.grad(self).data();
    Scalar* dx = t.grad(in_id).data();
    for (int p = 0; p < planes; ++p) {
      for (int r = 0; r < 2 * h; ++r) {
        const Scalar* grow = g + (static_cast<std::size_t>(p) * 2 * h + r) * 2 * w;
        Scalar* drow = dx + (static_cast<std::size_t>(p) * h + r / 2) * w;
        for (int c = 0; c < 2 * w; ++c) drow[c / 2] += grow[c];
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = common_tape({a, b});
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.set_requires_grad(false);
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < bv.size(); ++i) out[i] += bv[i];
  const int a_id = a.id(), b_id = b.id();
  return tape.record("add", std::move(out), {a_id, b_id}, [a_id, b_id](Tape& t, int self) {
    const auto g = t.grad(self);
    for (int id : {a_id, b_id}) {
      if (!t.needs_grad(id)) continue;
      auto d = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = common_tape({a, b});
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  out.set_requires_grad(false);
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < bv.size(); ++i) out[i] *= bv[i];
  const int a_id = a.id(), b_id = b.id();
  return tape.record("mul", std::move(out), {a_id, b_id}, [a_id, b_id](Tape& t, int self) {
    const auto g = t.grad(self);
    const auto av = t.value(a_id).data();
    const auto bv2 = t.value(b_id).data();
    if (t.needs_grad(a_id)) {
      auto d = t.grad(a_id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv2[i];
    }
    if (t.needs_grad(b_id)) {
      auto d = t.grad(b_id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(Var x, Scalar factor) {
  Tape& tape = x.tape();
  Tensor out = x.value();
  out.set_requires_grad(false);
  for (Scalar& v : out.data()) v *= factor;
  const int in_id = x.id();
  return tape.record("scale", std::move(out), {in_id}, [in_id, factor](Tape& t, int self) {
    const auto g = t.grad(self);
    auto d = t.grad(in_id);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * g[i];
  });
}

Var sum(Var x) {
  Tape& tape = x.tape();
  double acc = 0;
  for (Scalar v : x.value().data()) acc += v;
  const int in_id = x.id();
  return tape.record("sum", Tensor::scalar(static_cast<Scalar>(acc)), {in_id}, [in_id](Tape& t, int self) {
    const Scalar g = t.grad(self)[0];
    for (Scalar& d : t.grad(in_id)) d += g;
  });
}

KDSEG_END_NAMESPACE
