#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "borderflow/autodiff.hpp"
#include "borderflow/kernels.hpp"

namespace borderflow {
namespace {

Tape& same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
  return a.tape();
}

constexpr std::size_t kMaxRank = 4;

struct Broadcast {
  Shape out;
  std::array<std::size_t, kMaxRank> dims{};
  std::array<std::size_t, kMaxRank> stride_a{};
  std::array<std::size_t, kMaxRank> stride_b{};
};

std::array<std::size_t, kMaxRank> padded(const Shape& s) {
  std::array<std::size_t, kMaxRank> p{1, 1, 1, 1};
  const std::size_t off = kMaxRank - s.size();
  for (std::size_t i = 0; i < s.size(); ++i) p[off + i] = s[i];
  return p;
}

std::array<std::size_t, kMaxRank> broadcast_strides(const Shape& s, const std::array<std::size_t, kMaxRank>& dims) {
  const auto p = padded(s);
  std::array<std::size_t, kMaxRank> st{};
  std::size_t acc = 1;
  for (std::size_t i = kMaxRank; i-- > 0;) {
    st[i] = (p[i] == 1 && dims[i] != 1) ? 0 : acc;
    acc *= p[i];
  }
  return st;
}

Broadcast make_broadcast(const Shape& a, const Shape& b) {
  Broadcast bc;
  bc.out = broadcast_shapes(a, b);
  bc.dims = padded(bc.out);
  bc.stride_a = broadcast_strides(a, bc.dims);
  bc.stride_b = broadcast_strides(b, bc.dims);
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const auto& d = bc.dims;
  std::size_t o = 0;
  for (std::size_t i0 = 0; i0 < d[0]; ++i0)
    for (std::size_t i1 = 0; i1 < d[1]; ++i1)
      for (std::size_t i2 = 0; i2 < d[2]; ++i2)
        for (std::size_t i3 = 0; i3 < d[3]; ++i3, ++o) {
          const std::size_t ia = i0 * bc.stride_a[0] + i1 * bc.stride_a[1] + i2 * bc.stride_a[2] + i3 * bc.stride_a[3];
          const std::size_t ib = i0 * bc.stride_b[0] + i1 * bc.stride_b[1] + i2 * bc.stride_b[2] + i3 * bc.stride_b[3];
          f(o, ia, ib);
        }
}

enum class BinaryKind { add, sub, mul, div };

Var binary(Var a, Var b, BinaryKind kind) {
  Tape& tape = same_tape(a, b);
  const Array& va = a.value();
  const Array& vb = b.value();
  if (kind == BinaryKind::div) {
    for (double v : vb.values())
      if (v == 0.0) throw DomainError("div: zero denominator");
  }
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinaryKind::add: return x + y;
      case BinaryKind::sub: return x - y;
      case BinaryKind::mul: return x * y;
      case BinaryKind::div: return x / y;
    }
    return 0.0;
  };
  Array out;
  if (va.shape() == vb.shape()) {
    out = Array(va.shape());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = apply(va[i], vb[i]);
  } else {
    const Broadcast bc = make_broadcast(va.shape(), vb.shape());
    out = Array(bc.out);
    for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = apply(va[ia], vb[ib]); });
  }
  const std::size_t ida = a.id(), idb = b.id();
  return tape.record(std::move(out), {ida, idb}, [kind, ida, idb](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    const Array& xa = t.value_of(ida);
    const Array& xb = t.value_of(idb);
    const bool need_a = t.requires_grad(ida), need_b = t.requires_grad(idb);
    auto grads = [&](std::size_t o, std::size_t ia, std::size_t ib, Array* ga, Array* gb) {
      const double go = g[o];
      switch (kind) {
        case BinaryKind::add:
          if (ga) (*ga)[ia] += go;
          if (gb) (*gb)[ib] += go;
          break;
        case BinaryKind::sub:
          if (ga) (*ga)[ia] += go;
          if (gb) (*gb)[ib] -= go;
          break;
        case BinaryKind::mul:
          if (ga) (*ga)[ia] += go * xb[ib];
          if (gb) (*gb)[ib] += go * xa[ia];
          break;
        case BinaryKind::div:
          if (ga) (*ga)[ia] += go / xb[ib];
          if (gb) (*gb)[ib] -= go * xa[ia] / (xb[ib] * xb[ib]);
          break;
      }
    };
    Array* ga = need_a ? &t.grad_buffer(ida) : nullptr;
    Array* gb = need_b ? &t.grad_buffer(idb) : nullptr;
    if (xa.shape() == xb.shape()) {
      for (std::size_t i = 0; i < g.size(); ++i) grads(i, i, i, ga, gb);
    } else {
      const Broadcast bc = make_broadcast(xa.shape(), xb.shape());
      for_each_broadcast(bc, [&](std::size_t o, std::size_t ia, std::size_t ib) { grads(o, ia, ib, ga, gb); });
    }
  });
}

// Elementwise unary op; derivative expressed from input x and output y.
template <class Fwd, class Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Tape& tape = a.tape();
  const Array& va = a.value();
  Array out(va.shape());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  const std::size_t ida = a.id();
  return tape.record(std::move(out), {ida}, [ida, deriv](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    const Array& x = t.value_of(ida);
    const Array& y = t.value_of(self);
    Array& gx = t.grad_buffer(ida);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
  });
}

void require_rank(Var x, std::size_t rank, const char* op) {
  if (x.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  if (a.size() > kMaxRank || b.size() > kMaxRank) throw ShapeError("broadcast: rank above 4");
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("broadcast: incompatible shapes " + shape_string(a) + " and " + shape_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

Var add(Var a, Var b) { return binary(a, b, BinaryKind::add); }
Var sub(Var a, Var b) { return binary(a, b, BinaryKind::sub); }
Var mul(Var a, Var b) { return binary(a, b, BinaryKind::mul); }
Var div(Var a, Var b) { return binary(a, b, BinaryKind::div); }

Var scale(Var a, double k) {
  return unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
  return unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values())
    if (!(v > 0.0)) throw DomainError("log: non-positive operand");
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var elu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); }, [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  Tape& t = a.tape();
  Var one = t.constant(Array::scalar(1.0));
  return div(one, add_scalar(exp(neg(a)), 1.0));
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ida = a.id();
  return a.tape().record(Array::scalar(s), {ida}, [ida](Tape& t, std::size_t self) {
    const double g = t.out_grad(self)[0];
    for (auto& v : t.grad_buffer(ida).values()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty array");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_per_sample(Var a) {
  if (a.rank() < 1) throw ShapeError("sum_per_sample: scalar input");
  const std::size_t n = a.dim(0);
  const std::size_t per = n == 0 ? 0 : a.value().size() / n;
  Array out(Shape{n});
  const Array& va = a.value();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < per; ++k) s += va[i * per + k];
    out[i] = s;
  }
  const std::size_t ida = a.id();
  return a.tape().record(std::move(out), {ida}, [ida, n, per](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    Array& gx = t.grad_buffer(ida);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < per; ++k) gx[i * per + k] += g[i];
  });
}

Var logsumexp(Var a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("logsumexp: axis out of range for " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  if (len == 0) throw ShapeError("logsumexp over empty axis");
  Shape os = s;
  os[axis] = 1;
  Array out(os);
  const Array& va = a.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) m = std::max(m, va[(o * len + k) * inner + in]);
      double acc = 0.0;
      for (std::size_t k = 0; k < len; ++k) acc += std::exp(va[(o * len + k) * inner + in] - m);
      out[o * inner + in] = m + std::log(acc);
    }
  const std::size_t ida = a.id();
  return a.tape().record(std::move(out), {ida}, [ida, outer, inner, len](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    const Array& y = t.value_of(self);
    const Array& x = t.value_of(ida);
    Array& gx = t.grad_buffer(ida);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const double go = g[o * inner + in], lse = y[o * inner + in];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t idx = (o * len + k) * inner + in;
          gx[idx] += go * std::exp(x[idx] - lse);
        }
      }
  });
}

Var log_softmax(Var a, std::size_t axis) { return sub(a, logsumexp(a, axis)); }

Var softmax(Var a, std::size_t axis) { return exp(log_softmax(a, axis)); }

Var linear(Var x, Var weight, Var bias) {
  Tape& tape = same_tape(x, weight);
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t n = x.dim(0), k = x.dim(1), m = weight.dim(0);
  if (weight.dim(1) != k || bias.shape() != Shape{m})
    throw ShapeError("linear: x " + shape_string(x.shape()) + " weight " + shape_string(weight.shape()) + " bias " +
                     shape_string(bias.shape()));
  Array out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = bias.value()[j];
  kernels::gemm({false, true, n, m, k, 1.0, x.value().data(), k, weight.value().data(), k, 1.0, out.data(), m});
  const std::size_t idx = x.id(), idw = weight.id(), idb = bias.id();
  return tape.record(std::move(out), {idx, idw, idb}, [=](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    if (t.requires_grad(idx)) {
      Array& gx = t.grad_buffer(idx);
      kernels::gemm({false, false, n, k, m, 1.0, g.data(), m, t.value_of(idw).data(), k, 1.0, gx.data(), k});
    }
    if (t.requires_grad(idw)) {
      Array& gw = t.grad_buffer(idw);
      kernels::gemm({true, false, m, k, n, 1.0, g.data(), m, t.value_of(idx).data(), k, 1.0, gw.data(), k});
    }
    if (t.requires_grad(idb)) {
      Array& gb = t.grad_buffer(idb);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
    }
  });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  Tape& tape = same_tape(x, weight);
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const std::size_t n = x.dim(0), c = x.dim(1), o = weight.dim(0), kh = weight.dim(2);
  if (weight.dim(1) != c || weight.dim(3) != kh || bias.shape() != Shape{o})
    throw ShapeError("conv2d: x " + shape_string(x.shape()) + " weight " + shape_string(weight.shape()) + " bias " +
                     shape_string(bias.shape()));
  if (stride == 0) throw ShapeError("conv2d: zero stride");
  const kernels::ConvGeometry geo{c, x.dim(2), x.dim(3), kh, stride, pad};
  if (geo.height + 2 * pad < kh || geo.width + 2 * pad < kh) throw ShapeError("conv2d: kernel larger than input");
  const std::size_t oh = geo.out_height(), ow = geo.out_width(), plane = oh * ow, ckk = c * kh * kh;
  const bool direct = kh == 1 && stride == 1 && pad == 0;

  Array out(Shape{n, o, oh, ow});
  std::vector<double> cols(direct ? 0 : ckk * plane);
  const Array& vx = x.value();
  const Array& vw = weight.value();
  const Array& vb = bias.value();
  for (std::size_t s = 0; s < n; ++s) {
    const double* img = vx.data() + s * c * geo.height * geo.width;
    const double* col = img;
    if (!direct) {
      kernels::im2col(geo, img, cols.data());
      col = cols.data();
    }
    double* dst = out.data() + s * o * plane;
    for (std::size_t ch = 0; ch < o; ++ch) std::fill(dst + ch * plane, dst + (ch + 1) * plane, vb[ch]);
    kernels::gemm({false, false, o, plane, ckk, 1.0, vw.data(), ckk, col, plane, 1.0, dst, plane});
  }

  const std::size_t idx = x.id(), idw = weight.id(), idb = bias.id();
  return tape.record(std::move(out), {idx, idw, idb}, [=](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    const Array& xv = t.value_of(idx);
    const Array& wv = t.value_of(idw);
    const bool need_x = t.requires_grad(idx), need_w = t.requires_grad(idw), need_b = t.requires_grad(idb);
    Array* gx = need_x ? &t.grad_buffer(idx) : nullptr;
    Array* gw = need_w ? &t.grad_buffer(idw) : nullptr;
    Array* gb = need_b ? &t.grad_buffer(idb) : nullptr;
    std::vector<double> colbuf(direct ? 0 : ckk * plane);
    std::vector<double> dcol(need_x && !direct ? ckk * plane : 0);
    for (std::size_t s = 0; s < n; ++s) {
      const double* gout = g.data() + s * o * plane;
      if (gb)
        for (std::size_t ch = 0; ch < o; ++ch) {
          double acc = 0.0;
          for (std::size_t p = 0; p < plane; ++p) acc += gout[ch * plane + p];
          (*gb)[ch] += acc;
        }
      const double* img = xv.data() + s * c * geo.height * geo.width;
      if (gw) {
        const double* col = img;
        if (!direct) {
          kernels::im2col(geo, img, colbuf.data());
          col = colbuf.data();
        }
        kernels::gemm({false, true, o, ckk, plane, 1.0, gout, plane, col, plane, 1.0, gw->data(), ckk});
      }
      if (gx) {
        double* gimg = gx->data() + s * c * geo.height * geo.width;
        if (direct) {
          kernels::gemm({true, false, ckk, plane, o, 1.0, wv.data(), ckk, gout, plane, 1.0, gimg, plane});
        } else {
          kernels::gemm({true, false, ckk, plane, o, 1.0, wv.data(), ckk, gout, plane, 0.0, dcol.data(), plane});
          kernels::col2im_add(geo, dcol.data(), gimg);
        }
      }
    }
  });
}

Var upsample_bilinear(Var x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 4, "upsample_bilinear");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == 0 || w == 0 || out_h == 0 || out_w == 0) throw ShapeError("upsample_bilinear: empty extent");
  Array out(Shape{n, c, out_h, out_w});
  kernels::upsample_bilinear(x.value().data(), n * c, h, w, out_h, out_w, out.data());
  const std::size_t idx = x.id();
  return x.tape().record(std::move(out), {idx}, [=](Tape& t, std::size_t self) {
    kernels::upsample_bilinear_adjoint_add(t.out_grad(self).data(), n * c, h, w, out_h, out_w,
                                           t.grad_buffer(idx).data());
  });
}

Var reshape(Var x, Shape shape) {
  Array out = x.value().reshaped(std::move(shape));
  const std::size_t idx = x.id();
  return x.tape().record(std::move(out), {idx}, [idx](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    Array& gx = t.grad_buffer(idx);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather(Var x, Shape out_shape, std::shared_ptr<const std::vector<std::size_t>> index) {
  if (shape_size(out_shape) != index->size()) throw ShapeError("gather: index length does not match output shape");
  const Array& vx = x.value();
  Array out(std::move(out_shape));
  for (std::size_t i = 0; i < index->size(); ++i) {
    const std::size_t src = (*index)[i];
    if (src >= vx.size()) throw ShapeError("gather: index out of range");
    out[i] = vx[src];
  }
  const std::size_t idx = x.id();
  return x.tape().record(std::move(out), {idx}, [idx, index](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    Array& gx = t.grad_buffer(idx);
    for (std::size_t i = 0; i < index->size(); ++i) gx[(*index)[i]] += g[i];
  });
}

Var squeeze2x2(Var x) {
  require_rank(x, 4, "squeeze2x2");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("squeeze2x2: odd spatial extent " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  auto index = std::make_shared<std::vector<std::size_t>>(n * c * h * w);
  std::size_t i = 0;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < 4; ++q)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xx = 0; xx < ow; ++xx)
            (*index)[i++] = ((s * c + ch) * h + 2 * y + q / 2) * w + 2 * xx + q % 2;
  return gather(x, Shape{n, 4 * c, oh, ow}, std::move(index));
}

Var unsqueeze2x2(Var x) {
  require_rank(x, 4, "unsqueeze2x2");
  const std::size_t n = x.dim(0), c4 = x.dim(1), oh = x.dim(2), ow = x.dim(3);
  if (c4 % 4) throw ShapeError("unsqueeze2x2: channel count not divisible by 4");
  const std::size_t c = c4 / 4, h = 2 * oh, w = 2 * ow;
  auto index = std::make_shared<std::vector<std::size_t>>(n * c4 * oh * ow);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::size_t q = (y % 2) * 2 + xx % 2;
          (*index)[((s * c + ch) * h + y) * w + xx] = ((s * c4 + ch * 4 + q) * oh + y / 2) * ow + xx / 2;
        }
  return gather(x, Shape{n, c, h, w}, std::move(index));
}

Var slice_channels(Var x, std::size_t begin, std::size_t end) {
  if (x.rank() < 2 || begin >= end || end > x.dim(1))
    throw ShapeError("slice_channels: bad range for " + shape_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.value().size() / (n * c);
  Shape os = x.shape();
  os[1] = end - begin;
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(n * (end - begin) * inner);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = begin; ch < end; ++ch)
      for (std::size_t k = 0; k < inner; ++k) index->push_back((s * c + ch) * inner + k);
  return gather(x, std::move(os), std::move(index));
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.size() < 2) throw ShapeError("concat_channels: rank below 2");
  const std::size_t n = s0[0];
  const std::size_t inner = shape_size(s0) / (s0[0] * s0[1]);
  std::size_t total = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    Shape s = p.shape();
    if (s.size() != s0.size() || s[0] != n || shape_size(s) / (s[0] * s[1]) != inner)
      throw ShapeError("concat_channels: incompatible " + shape_string(s) + " vs " + shape_string(s0));
    total += s[1];
    ids.push_back(p.id());
    same_tape(parts[0], p);
  }
  Shape os = s0;
  os[1] = total;
  Array out(os);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t c = p.dim(1);
    const Array& v = p.value();
    for (std::size_t s = 0; s < n; ++s)
      std::copy_n(v.data() + s * c * inner, c * inner, out.data() + (s * total + off) * inner);
    off += c;
  }
  return parts[0].tape().record(std::move(out), ids, [ids, offsets, n, total, inner](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Array& gp = t.grad_buffer(ids[k]);
      const std::size_t c = t.value_of(ids[k]).dim(1);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < c * inner; ++i) gp[s * c * inner + i] += g[(s * total + offsets[k]) * inner + i];
    }
  });
}

Var crop(Var x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  require_rank(x, 4, "crop");
  const std::size_t n = x.dim(0), c = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (top + h > H || left + w > W) throw ShapeError("crop: window outside " + shape_string(x.shape()));
  auto index = std::make_shared<std::vector<std::size_t>>();
  index->reserve(n * c * h * w);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) index->push_back(((s * c + ch) * H + top + y) * W + left + xx);
  return gather(x, Shape{n, c, h, w}, std::move(index));
}

Var pad_into(Var x, std::size_t height, std::size_t width, const std::vector<std::size_t>& tops,
             const std::vector<std::size_t>& lefts) {
  require_rank(x, 4, "pad_into");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (tops.size() != n || lefts.size() != n) throw ShapeError("pad_into: one offset per sample required");
  for (std::size_t s = 0; s < n; ++s)
    if (tops[s] + h > height || lefts[s] + w > width) throw ShapeError("pad_into: patch exceeds canvas");
  Array out(Shape{n, c, height, width}, 0.0);
  const Array& vx = x.value();
  std::vector<std::size_t> dst_of_src(vx.size());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::size_t src = ((s * c + ch) * h + y) * w + xx;
          const std::size_t dst = ((s * c + ch) * height + tops[s] + y) * width + lefts[s] + xx;
          out[dst] = vx[src];
          dst_of_src[src] = dst;
        }
  const std::size_t idx = x.id();
  return x.tape().record(std::move(out), {idx}, [idx, dst_of_src = std::move(dst_of_src)](Tape& t, std::size_t self) {
    const Array& g = t.out_grad(self);
    Array& gx = t.grad_buffer(idx);
    for (std::size_t i = 0; i < dst_of_src.size(); ++i) gx[i] += g[dst_of_src[i]];
  });
}

}  // namespace borderflow
