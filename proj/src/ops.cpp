#include "seaseg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>

namespace seaseg {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Maps every element of shape `a` to an element of the broadcast operand `b`.
struct Broadcast {
  enum class Kind { kSame, kScalar, kStrided } kind = Kind::kSame;
  Shape a;
  std::array<std::int64_t, 4> bstride{};

  Broadcast(const Shape& a_shape, const Shape& b_shape, const char* op) : a(a_shape) {
    if (a_shape == b_shape) {
      kind = Kind::kSame;
    } else if (shape_numel(b_shape) == 1) {
      kind = Kind::kScalar;
    } else if (a_shape.size() == 4 && b_shape.size() == 4) {
      kind = Kind::kStrided;
      std::int64_t stride = 1;
      for (int d = 3; d >= 0; --d) {
        if (b_shape[d] == a_shape[d]) {
          bstride[d] = stride;
        } else if (b_shape[d] == 1) {
          bstride[d] = 0;
        } else {
          throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b_shape) + " to " +
                           shape_str(a_shape));
        }
        stride *= b_shape[d];
      }
    } else {
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a_shape) + " vs " +
                       shape_str(b_shape));
    }
  }

  // f(index into a, index into b), visited in increasing a-index order.
  template <typename F>
  void each(F&& f) const {
    const std::int64_t n = shape_numel(a);
    switch (kind) {
      case Kind::kSame:
        for (std::int64_t i = 0; i < n; ++i) f(i, i);
        break;
      case Kind::kScalar:
        for (std::int64_t i = 0; i < n; ++i) f(i, std::int64_t{0});
        break;
      case Kind::kStrided: {
        std::int64_t i = 0;
        for (int n0 = 0; n0 < a[0]; ++n0)
          for (int c = 0; c < a[1]; ++c)
            for (int h = 0; h < a[2]; ++h) {
              const std::int64_t base = n0 * bstride[0] + c * bstride[1] + h * bstride[2];
              for (int w = 0; w < a[3]; ++w, ++i) f(i, base + w * bstride[3]);
            }
        break;
      }
    }
  }
};

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected N×C×H×W, got " + shape_str(s));
}

template <typename T>
Var<T> binary(OpKind kind, Var<T> a, Var<T> b, const char* name) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Broadcast bc(av.shape(), bv.shape(), name);
  Tensor<T> out(av.shape());
  const T* pa = av.ptr();
  const T* pb = bv.ptr();
  T* po = out.ptr();
  switch (kind) {
    case OpKind::kAdd: bc.each([&](std::int64_t i, std::int64_t j) { po[i] = pa[i] + pb[j]; }); break;
    case OpKind::kSub: bc.each([&](std::int64_t i, std::int64_t j) { po[i] = pa[i] - pb[j]; }); break;
    default: bc.each([&](std::int64_t i, std::int64_t j) { po[i] = pa[i] * pb[j]; }); break;
  }
  Tape<T>* tape = a.tape;
  const int ia = a.id, ib = b.id;
  return tape->record(kind, {ia, ib}, std::move(out),
                      [tape, ia, ib, kind, bc](const Tensor<T>& g, const GradSlots<T>& slots) {
                        const T* pg = g.ptr();
                        if (Tensor<T>* da = slots.get(0)) {
                          T* pd = da->ptr();
                          if (kind == OpKind::kMul || kind == OpKind::kGate) {
                            const T* pb = tape->value(ib).ptr();
                            bc.each([&](std::int64_t i, std::int64_t j) { pd[i] += pg[i] * pb[j]; });
                          } else {
                            bc.each([&](std::int64_t i, std::int64_t) { pd[i] += pg[i]; });
                          }
                        }
                        if (Tensor<T>* db = slots.get(1)) {
                          T* pd = db->ptr();
                          if (kind == OpKind::kMul || kind == OpKind::kGate) {
                            const T* pa = tape->value(ia).ptr();
                            bc.each([&](std::int64_t i, std::int64_t j) { pd[j] += pg[i] * pa[i]; });
                          } else if (kind == OpKind::kSub) {
                            bc.each([&](std::int64_t i, std::int64_t j) { pd[j] -= pg[i]; });
                          } else {
                            bc.each([&](std::int64_t i, std::int64_t j) { pd[j] += pg[i]; });
                          }
                        }
                      });
}

template <typename T>
void im2col(const T* x, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, T* cols) {
  const std::int64_t plane = static_cast<std::int64_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<std::int64_t>(c) * height * width;
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw) {
        T* row = cols + ((static_cast<std::int64_t>(c) * kernel + kh) * kernel + kw) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + kh;
          T* dst = row + static_cast<std::int64_t>(oh) * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::int64_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kw;
            dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int height, int width, int kernel, int stride, int pad,
            int out_h, int out_w, T* x) {
  const std::int64_t plane = static_cast<std::int64_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* xc = x + static_cast<std::int64_t>(c) * height * width;
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw) {
        const T* row = cols + ((static_cast<std::int64_t>(c) * kernel + kh) * kernel + kw) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= height) continue;
          const T* src = row + static_cast<std::int64_t>(oh) * out_w;
          T* dst = xc + static_cast<std::int64_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kw;
            if (iw >= 0 && iw < width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Source index pairs and weights for 2x bilinear upsampling along one axis.
struct UpsampleAxis {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;

  explicit UpsampleAxis(int in) {
    const int out = in * 2;
    i0.resize(out);
    i1.resize(out);
    w0.resize(out);
    w1.resize(out);
    for (int o = 0; o < out; ++o) {
      double src = (o + 0.5) / 2.0 - 0.5;
      if (src < 0) src = 0;
      const int lo = std::min(static_cast<int>(src), in - 1);
      const double frac = src - lo;
      i0[o] = lo;
      i1[o] = std::min(lo + 1, in - 1);
      w1[o] = frac;
      w0[o] = 1.0 - frac;
    }
  }
};

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(OpKind::kAdd, a, b, "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(OpKind::kSub, a, b, "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(OpKind::kMul, a, b, "mul");
}

template <typename T>
Var<T> gate(Var<T> x, Var<T> weights) {
  return binary(OpKind::kGate, x, weights, "gate");
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * factor;
  return a.tape->record(OpKind::kScale, {a.id}, std::move(out),
                        [factor](const Tensor<T>& g, const GradSlots<T>& slots) {
                          Tensor<T>* d = slots.get(0);
                          for (std::int64_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i] * factor;
                        });
}

template <typename T>
Var<T> elu(Var<T> a, T alpha) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) {
    const T x = av[i];
    out[i] = x > T(0) ? x : alpha * std::expm1(x);
  }
  Tape<T>* tape = a.tape;
  const int ia = a.id;
  return tape->record(OpKind::kElu, {ia}, std::move(out),
                      [tape, ia, alpha](const Tensor<T>& g, const GradSlots<T>& slots) {
                        const Tensor<T>& x = tape->value(ia);
                        Tensor<T>* d = slots.get(0);
                        for (std::int64_t i = 0; i < g.numel(); ++i) {
                          (*d)[i] += g[i] * (x[i] > T(0) ? T(1) : alpha * std::exp(x[i]));
                        }
                      });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) {
    const T x = av[i];
    if (x >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      out[i] = e / (T(1) + e);
    }
  }
  return a.tape->record(OpKind::kSigmoid, {a.id}, std::move(out),
                        [](const Tensor<T>& g, const GradSlots<T>& slots) {
                          const Tensor<T>& s = slots.output();
                          Tensor<T>* d = slots.get(0);
                          for (std::int64_t i = 0; i < g.numel(); ++i) (*d)[i] += g[i] * s[i] * (T(1) - s[i]);
                        });
}

template <typename T>
Var<T> maximum(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ShapeError("maximum: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  }
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = std::max(av[i], bv[i]);
  Tape<T>* tape = a.tape;
  const int ia = a.id, ib = b.id;
  return tape->record(OpKind::kMaximum, {ia, ib}, std::move(out),
                      [tape, ia, ib](const Tensor<T>& g, const GradSlots<T>& slots) {
                        const Tensor<T>& x = tape->value(ia);
                        const Tensor<T>& y = tape->value(ib);
                        Tensor<T>* da = slots.get(0);
                        Tensor<T>* db = slots.get(1);
                        // Ties route to the first operand.
                        for (std::int64_t i = 0; i < g.numel(); ++i) {
                          if (x[i] >= y[i]) {
                            if (da) (*da)[i] += g[i];
                          } else if (db) {
                            (*db)[i] += g[i];
                          }
                        }
                      });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> bias, int stride,
              int padding) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  require_rank4(xv.shape(), "conv2d input");
  require_rank4(wv.shape(), "conv2d weight");
  if (stride <= 0) throw ValidationError("conv2d: stride must be positive, got " + std::to_string(stride));
  if (padding < 0) throw ValidationError("conv2d: negative padding");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int o = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != c) {
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " has " + std::to_string(c) +
                     " channels but weight " + shape_str(wv.shape()) + " expects " +
                     std::to_string(wv.dim(1)));
  }
  if (wv.dim(3) != k) throw ShapeError("conv2d: non-square kernel " + shape_str(wv.shape()));
  if (h + 2 * padding < k || wd + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " does not fit input " +
                     shape_str(xv.shape()) + " with padding " + std::to_string(padding));
  }
  if (bias && bias->value().numel() != o) {
    throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " for " + std::to_string(o) + " outputs");
  }
  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (wd + 2 * padding - k) / stride + 1;
  const std::int64_t ckk = static_cast<std::int64_t>(c) * k * k;
  const std::int64_t plane = static_cast<std::int64_t>(oh) * ow;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);

  Tensor<T> out(Shape{n, o, oh, ow});
  AlignedVector<T> cols(pointwise ? 0 : static_cast<std::size_t>(ckk * plane));
  Eigen::Map<const MatR<T>> wm(wv.ptr(), o, ckk);
  for (int b = 0; b < n; ++b) {
    const T* xb = xv.ptr() + static_cast<std::int64_t>(b) * c * h * wd;
    const T* colp = xb;
    if (!pointwise) {
      im2col(xb, c, h, wd, k, stride, padding, oh, ow, cols.data());
      colp = cols.data();
    }
    Eigen::Map<const MatR<T>> cm(colp, ckk, plane);
    Eigen::Map<MatR<T>> ym(out.ptr() + static_cast<std::int64_t>(b) * o * plane, o, plane);
    ym.noalias() = wm * cm;
    if (bias) {
      const T* pb = bias->value().ptr();
      for (int oc = 0; oc < o; ++oc) ym.row(oc).array() += pb[oc];
    }
  }

  Tape<T>* tape = x.tape;
  std::vector<int> inputs{x.id, w.id};
  if (bias) inputs.push_back(bias->id);
  const int ix = x.id, iw = w.id;
  const bool has_bias = bias.has_value();
  return tape->record(
      OpKind::kConv2d, std::move(inputs), std::move(out),
      [=](const Tensor<T>& g, const GradSlots<T>& slots) {
        const Tensor<T>& xv = tape->value(ix);
        const Tensor<T>& wv = tape->value(iw);
        Tensor<T>* dx = slots.get(0);
        Tensor<T>* dw = slots.get(1);
        Tensor<T>* db = has_bias ? slots.get(2) : nullptr;
        Eigen::Map<const MatR<T>> wm(wv.ptr(), o, ckk);
        AlignedVector<T> cols(pointwise ? 0 : static_cast<std::size_t>(ckk * plane));
        AlignedVector<T> dcols(pointwise || !dx ? 0 : static_cast<std::size_t>(ckk * plane));
        for (int b = 0; b < n; ++b) {
          Eigen::Map<const MatR<T>> gm(g.ptr() + static_cast<std::int64_t>(b) * o * plane, o, plane);
          const std::int64_t xoff = static_cast<std::int64_t>(b) * c * h * wd;
          if (dw) {
            const T* colp = xv.ptr() + xoff;
            if (!pointwise) {
              im2col(xv.ptr() + xoff, c, h, wd, k, stride, padding, oh, ow, cols.data());
              colp = cols.data();
            }
            Eigen::Map<const MatR<T>> cm(colp, ckk, plane);
            Eigen::Map<MatR<T>> dwm(dw->ptr(), o, ckk);
            dwm.noalias() += gm * cm.transpose();
          }
          if (dx) {
            if (pointwise) {
              Eigen::Map<MatR<T>> dxm(dx->ptr() + xoff, c, plane);
              dxm.noalias() += wm.transpose() * gm;
            } else {
              Eigen::Map<MatR<T>> dcm(dcols.data(), ckk, plane);
              dcm.noalias() = wm.transpose() * gm;
              col2im(dcols.data(), c, h, wd, k, stride, padding, oh, ow, dx->ptr() + xoff);
            }
          }
          if (db) {
            for (int oc = 0; oc < o; ++oc) {
              const T* gr = g.ptr() + (static_cast<std::int64_t>(b) * o + oc) * plane;
              T acc = 0;
              for (std::int64_t p = 0; p < plane; ++p) acc += gr[p];
              (*db)[oc] += acc;
            }
          }
        }
      });
}

template <typename T>
Var<T> maxpool2x2(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_rank4(xv.shape(), "maxpool2x2");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h < 1 || w < 1 || h % 2 || w % 2) {
    throw ShapeError("maxpool2x2: spatial size must be even, got " + shape_str(xv.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  Tensor<T> out(Shape{n, c, oh, ow});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  std::int64_t oi = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::int64_t base = static_cast<std::int64_t>(p) * h * w;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx, ++oi) {
        std::int64_t best = base + static_cast<std::int64_t>(2 * y) * w + 2 * xx;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::int64_t idx = base + static_cast<std::int64_t>(2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        out[oi] = xv[best];
        argmax[static_cast<std::size_t>(oi)] = best;
      }
    }
  }
  return x.tape->record(OpKind::kMaxPool, {x.id}, std::move(out),
                        [argmax = std::move(argmax)](const Tensor<T>& g, const GradSlots<T>& slots) {
                          Tensor<T>* d = slots.get(0);
                          for (std::int64_t i = 0; i < g.numel(); ++i) {
                            (*d)[argmax[static_cast<std::size_t>(i)]] += g[i];
                          }
                        });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_rank4(xv.shape(), "global_avg_pool");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial size " + shape_str(xv.shape()));
  Tensor<T> out(Shape{n, c, 1, 1});
  for (int p = 0; p < n * c; ++p) {
    const T* src = xv.ptr() + p * hw;
    T acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += src[i];
    out[p] = acc / static_cast<T>(hw);
  }
  return x.tape->record(OpKind::kGlobalAvgPool, {x.id}, std::move(out),
                        [n, c, hw](const Tensor<T>& g, const GradSlots<T>& slots) {
                          Tensor<T>* d = slots.get(0);
                          for (int p = 0; p < n * c; ++p) {
                            const T v = g[p] / static_cast<T>(hw);
                            T* dst = d->ptr() + p * hw;
                            for (std::int64_t i = 0; i < hw; ++i) dst[i] += v;
                          }
                        });
}

template <typename T>
Var<T> upsample_bilinear2x(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_rank4(xv.shape(), "upsample_bilinear2x");
  const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h < 1 || w < 1) throw ShapeError("upsample_bilinear2x: empty input " + shape_str(xv.shape()));
  const UpsampleAxis ay(h), ax(w);
  const int oh = 2 * h, ow = 2 * w;
  Tensor<T> out(Shape{n, c, oh, ow});
  for (int p = 0; p < n * c; ++p) {
    const T* src = xv.ptr() + static_cast<std::int64_t>(p) * h * w;
    T* dst = out.ptr() + static_cast<std::int64_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const T* r0 = src + static_cast<std::int64_t>(ay.i0[y]) * w;
      const T* r1 = src + static_cast<std::int64_t>(ay.i1[y]) * w;
      const T wy0 = static_cast<T>(ay.w0[y]), wy1 = static_cast<T>(ay.w1[y]);
      for (int xx = 0; xx < ow; ++xx) {
        const T wx0 = static_cast<T>(ax.w0[xx]), wx1 = static_cast<T>(ax.w1[xx]);
        dst[static_cast<std::int64_t>(y) * ow + xx] =
            wy0 * (wx0 * r0[ax.i0[xx]] + wx1 * r0[ax.i1[xx]]) +
            wy1 * (wx0 * r1[ax.i0[xx]] + wx1 * r1[ax.i1[xx]]);
      }
    }
  }
  return x.tape->record(
      OpKind::kUpsample, {x.id}, std::move(out),
      [n, c, h, w, ay, ax](const Tensor<T>& g, const GradSlots<T>& slots) {
        Tensor<T>* d = slots.get(0);
        const int oh = 2 * h, ow = 2 * w;
        for (int p = 0; p < n * c; ++p) {
          const T* gp = g.ptr() + static_cast<std::int64_t>(p) * oh * ow;
          T* dp = d->ptr() + static_cast<std::int64_t>(p) * h * w;
          for (int y = 0; y < oh; ++y) {
            T* r0 = dp + static_cast<std::int64_t>(ay.i0[y]) * w;
            T* r1 = dp + static_cast<std::int64_t>(ay.i1[y]) * w;
            const T wy0 = static_cast<T>(ay.w0[y]), wy1 = static_cast<T>(ay.w1[y]);
            for (int xx = 0; xx < ow; ++xx) {
              const T v = gp[static_cast<std::int64_t>(y) * ow + xx];
              const T wx0 = static_cast<T>(ax.w0[xx]), wx1 = static_cast<T>(ax.w1[xx]);
              r0[ax.i0[xx]] += v * wy0 * wx0;
              r0[ax.i1[xx]] += v * wy0 * wx1;
              r1[ax.i0[xx]] += v * wy1 * wx0;
              r1[ax.i1[xx]] += v * wy1 * wx1;
            }
          }
        }
      });
}

template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BnRunning<T>& running, BnMode mode,
                 const BnOptions& options) {
  const Tensor<T>& xv = x.value();
  require_rank4(xv.shape(), "batchnorm");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  const std::int64_t count = n * hw;
  if (count == 0) throw ShapeError("batchnorm: zero-size batch " + shape_str(xv.shape()));
  if (gamma.value().numel() != c || beta.value().numel() != c || running.mean.numel() != c ||
      running.var.numel() != c) {
    throw ShapeError("batchnorm: " + std::to_string(c) + " channels but gamma " +
                     shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()) + ", running " +
                     shape_str(running.mean.shape()));
  }
  const T* pg = gamma.value().ptr();
  const T* pb = beta.value().ptr();
  std::vector<T> mean(c), inv_std(c);
  if (mode == BnMode::kTrain) {
    const double m = options.cumulative ? 1.0 / static_cast<double>(running.batches + 1) : options.momentum;
    for (int ch = 0; ch < c; ++ch) {
      double s = 0;
      for (int b = 0; b < n; ++b) {
        const T* src = xv.ptr() + (static_cast<std::int64_t>(b) * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) s += src[i];
      }
      const double mu = s / static_cast<double>(count);
      double v = 0;
      for (int b = 0; b < n; ++b) {
        const T* src = xv.ptr() + (static_cast<std::int64_t>(b) * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) v += (src[i] - mu) * (src[i] - mu);
      }
      v /= static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(v + options.eps));
      running.mean[ch] = static_cast<T>((1.0 - m) * running.mean[ch] + m * mu);
      running.var[ch] = static_cast<T>((1.0 - m) * running.var[ch] + m * v);
    }
    ++running.batches;
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = running.mean[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running.var[ch]) + options.eps));
    }
  }
  Tensor<T> out(xv.shape());
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * hw;
      const T a = pg[ch] * inv_std[ch];
      const T shift = pb[ch] - a * mean[ch];
      for (std::int64_t i = 0; i < hw; ++i) out[off + i] = a * xv[off + i] + shift;
    }
  }
  Tape<T>* tape = x.tape;
  const int ix = x.id, igam = gamma.id;
  const bool train = mode == BnMode::kTrain;
  return tape->record(
      OpKind::kBatchNorm, {x.id, gamma.id, beta.id}, std::move(out),
      [=, mean = std::move(mean), inv_std = std::move(inv_std)](const Tensor<T>& g,
                                                                   const GradSlots<T>& slots) {
        const Tensor<T>& xv = tape->value(ix);
        const T* pgam = tape->value(igam).ptr();
        Tensor<T>* dx = slots.get(0);
        Tensor<T>* dgamma = slots.get(1);
        Tensor<T>* dbeta = slots.get(2);
        for (int ch = 0; ch < c; ++ch) {
          double sum_g = 0, sum_gx = 0;
          for (int b = 0; b < n; ++b) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              const double xhat = (xv[off + i] - mean[ch]) * inv_std[ch];
              sum_g += g[off + i];
              sum_gx += g[off + i] * xhat;
            }
          }
          if (dgamma) (*dgamma)[ch] += static_cast<T>(sum_gx);
          if (dbeta) (*dbeta)[ch] += static_cast<T>(sum_g);
          if (!dx) continue;
          const double scale = static_cast<double>(pgam[ch]) * inv_std[ch];
          const double mg = sum_g / static_cast<double>(count);
          const double mgx = sum_gx / static_cast<double>(count);
          for (int b = 0; b < n; ++b) {
            const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              if (train) {
                const double xhat = (xv[off + i] - mean[ch]) * inv_std[ch];
                (*dx)[off + i] += static_cast<T>(scale * (g[off + i] - mg - xhat * mgx));
              } else {
                (*dx)[off + i] += static_cast<T>(scale * g[off + i]);
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require_rank4(av.shape(), "concat_channels");
  require_rank4(bv.shape(), "concat_channels");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
    throw ShapeError("concat_channels: spatial/batch mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  const int n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(av.dim(2)) * av.dim(3);
  Tensor<T> out(Shape{n, ca + cb, av.dim(2), av.dim(3)});
  for (int s = 0; s < n; ++s) {
    std::copy_n(av.ptr() + s * ca * hw, ca * hw, out.ptr() + s * (ca + cb) * hw);
    std::copy_n(bv.ptr() + s * cb * hw, cb * hw, out.ptr() + (s * (ca + cb) + ca) * hw);
  }
  return a.tape->record(OpKind::kConcat, {a.id, b.id}, std::move(out),
                        [n, ca, cb, hw](const Tensor<T>& g, const GradSlots<T>& slots) {
                          Tensor<T>* da = slots.get(0);
                          Tensor<T>* db = slots.get(1);
                          for (int s = 0; s < n; ++s) {
                            const T* src = g.ptr() + s * (ca + cb) * hw;
                            if (da) {
                              T* dst = da->ptr() + s * ca * hw;
                              for (std::int64_t i = 0; i < ca * hw; ++i) dst[i] += src[i];
                            }
                            if (db) {
                              T* dst = db->ptr() + s * cb * hw;
                              for (std::int64_t i = 0; i < cb * hw; ++i) dst[i] += src[ca * hw + i];
                            }
                          }
                        });
}

template <typename T>
Var<T> softmax_channels(Var<T> x) {
  const Tensor<T>& xv = x.value();
  require_rank4(xv.shape(), "softmax_channels");
  const int n = xv.dim(0), c = xv.dim(1);
  const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor<T> out(xv.shape());
  for (int s = 0; s < n; ++s) {
    const T* src = xv.ptr() + s * c * hw;
    T* dst = out.ptr() + s * c * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      T mx = src[i];
      for (int ch = 1; ch < c; ++ch) mx = std::max(mx, src[ch * hw + i]);
      T total = 0;
      for (int ch = 0; ch < c; ++ch) {
        const T e = std::exp(src[ch * hw + i] - mx);
        dst[ch * hw + i] = e;
        total += e;
      }
      for (int ch = 0; ch < c; ++ch) dst[ch * hw + i] /= total;
    }
  }
  return x.tape->record(
      OpKind::kSoftmax, {x.id}, std::move(out),
      [n, c, hw](const Tensor<T>& g, const GradSlots<T>& slots) {
        const Tensor<T>& p = slots.output();
        Tensor<T>* d = slots.get(0);
        for (int s = 0; s < n; ++s) {
          const std::int64_t base = s * c * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            T dot = 0;
            for (int ch = 0; ch < c; ++ch) dot += g[base + ch * hw + i] * p[base + ch * hw + i];
            for (int ch = 0; ch < c; ++ch) {
              const std::int64_t j = base + ch * hw + i;
              (*d)[j] += p[j] * (g[j] - dot);
            }
          }
        }
      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  T acc = 0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
  return x.tape->record(OpKind::kSum, {x.id}, Tensor<T>::scalar(acc),
                        [](const Tensor<T>& g, const GradSlots<T>& slots) {
                          Tensor<T>* d = slots.get(0);
                          const T v = g[0];
                          for (std::int64_t i = 0; i < d->numel(); ++i) (*d)[i] += v;
                        });
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights) {
  const Tensor<T>& xv = x.value();
  if (weights.shape() != xv.shape()) {
    throw ShapeError("weighted_sum: weights " + shape_str(weights.shape()) + " vs input " +
                     shape_str(xv.shape()));
  }
  T acc = 0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) acc += xv[i] * weights[i];
  return x.tape->record(OpKind::kWeightedSum, {x.id}, Tensor<T>::scalar(acc),
                        [weights](const Tensor<T>& g, const GradSlots<T>& slots) {
                          Tensor<T>* d = slots.get(0);
                          const T v = g[0];
                          for (std::int64_t i = 0; i < d->numel(); ++i) (*d)[i] += v * weights[i];
                        });
}

#define SEASEG_INSTANTIATE_OPS(T)                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                   \
  template Var<T> gate(Var<T>, Var<T>);                                                  \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> elu(Var<T>, T);                                                        \
  template Var<T> sigmoid(Var<T>);                                                       \
  template Var<T> maximum(Var<T>, Var<T>);                                               \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, int, int); \
  template Var<T> maxpool2x2(Var<T>);                                                    \
  template Var<T> global_avg_pool(Var<T>);                                               \
  template Var<T> upsample_bilinear2x(Var<T>);                                           \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, BnRunning<T>&, BnMode, const BnOptions&); \
  template Var<T> concat_channels(Var<T>, Var<T>);                                       \
  template Var<T> softmax_channels(Var<T>);                                              \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> weighted_sum(Var<T>, const Tensor<T>&);

SEASEG_INSTANTIATE_OPS(float)
SEASEG_INSTANTIATE_OPS(double)

}  // namespace seaseg
