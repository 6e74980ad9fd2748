#include "gocnn/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace gocnn {
namespace {

// C[M,N] += A[M,K] * B[K,N], all row-major. The j-loop is the hot path and
// auto-vectorizes; shapes here are small enough that no blocking is needed.
void matmul_acc(double* c, const double* a, const double* b, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<long long>(i) * n;
    const double* arow = a + static_cast<long long>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<long long>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Patch matrix [Cin*kh*kw, OH*OW] for one image [Cin,H,W].
void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh,
            int ow, double* col) {
  for (int c = 0; c < cin; ++c) {
    const double* xc = x + static_cast<long long>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col + (static_cast<long long>(c) * kh * kw + ki * kw + kj) *
                                (static_cast<long long>(oh) * ow);
        for (int i = 0; i < oh; ++i) {
          const int ih = i * stride - pad + ki;
          double* dst = row + static_cast<long long>(i) * ow;
          if (ih < 0 || ih >= h) {
            for (int j = 0; j < ow; ++j) dst[j] = 0.0;
            continue;
          }
          const double* src = xc + static_cast<long long>(ih) * w;
          for (int j = 0; j < ow; ++j) {
            const int iw = j * stride - pad + kj;
            dst[j] = (iw >= 0 && iw < w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Transposed variant [OH*OW, Cin*kh*kw]; used for the weight gradient.
void im2col_t(const double* x, int cin, int h, int w, int kh, int kw, int stride, int pad, int oh,
              int ow, double* colt) {
  const int ckk = cin * kh * kw;
  for (int i = 0; i < oh; ++i) {
    for (int j = 0; j < ow; ++j) {
      double* row = colt + (static_cast<long long>(i) * ow + j) * ckk;
      for (int c = 0; c < cin; ++c) {
        const double* xc = x + static_cast<long long>(c) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
          const int ih = i * stride - pad + ki;
          double* dst = row + (c * kh + ki) * kw;
          if (ih < 0 || ih >= h) {
            for (int kj = 0; kj < kw; ++kj) dst[kj] = 0.0;
            continue;
          }
          const double* src = xc + static_cast<long long>(ih) * w;
          for (int kj = 0; kj < kw; ++kj) {
            const int iw = j * stride - pad + kj;
            dst[kj] = (iw >= 0 && iw < w) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of a patch-gradient matrix back onto the input image.
void col2im_acc(const double* col, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, double* dx) {
  for (int c = 0; c < cin; ++c) {
    double* dxc = dx + static_cast<long long>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col + (static_cast<long long>(c) * kh * kw + ki * kw + kj) *
                                      (static_cast<long long>(oh) * ow);
        for (int i = 0; i < oh; ++i) {
          const int ih = i * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          const double* src = row + static_cast<long long>(i) * ow;
          double* dst = dxc + static_cast<long long>(ih) * w;
          for (int j = 0; j < ow; ++j) {
            const int iw = j * stride - pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[j];
          }
        }
      }
    }
  }
}

[[noreturn]] void shape_error(const std::string& msg) { throw std::invalid_argument(msg); }

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument("tape: invalid var handle");
  }
  return nodes_[static_cast<size_t>(v.id)];
}

Tape::Node& Tape::node(Var v) { return const_cast<Node&>(std::as_const(*this).node(v)); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backprop backprop) {
  bool rg = false;
  for (Var in : inputs) rg = rg || requires_grad(in);
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

bool Tape::grad_defined(Var v) const { return node(v).grad_defined; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.grad_defined) {
    throw std::invalid_argument("tape: gradient not computed for this var (shape " +
                                shape_to_string(n.value.shape()) + ")");
  }
  return n.grad;
}

Tensor Tape::grad_or_zero(Var v) const {
  const Node& n = node(v);
  if (n.grad_defined) return n.grad;
  return Tensor(n.value.shape());
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = node(v);
  if (!n.grad_defined) {
    n.grad = Tensor(n.value.shape());
    n.grad_defined = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    shape_error("backward: loss must be scalar, got shape " + shape_to_string(ln.value.shape()));
  }
  if (!ln.requires_grad) {
    // Loss does not depend on any differentiable leaf; nothing to propagate.
    return;
  }
  for (auto& n : nodes_) {
    n.grad = Tensor();
    n.grad_defined = false;
  }
  grad_buffer(loss)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.requires_grad && n.grad_defined && n.backprop) {
      n.backprop(*this, Var{id});
    }
  }
}

Var Tape::conv2d(Var input, Var weight, Var bias, int stride, int pad) {
  const Tensor& x = value(input);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  if (x.rank() != 4 || w.rank() != 4 || b.rank() != 1) {
    shape_error("conv2d: expected input rank 4, weight rank 4, bias rank 1; got input " +
                shape_to_string(x.shape()) + ", weight " + shape_to_string(w.shape()) +
                ", bias " + shape_to_string(b.shape()));
  }
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    shape_error("conv2d: input channels " + std::to_string(cin) + " do not match weight channels " +
                std::to_string(w.dim(1)) + " (input " + shape_to_string(x.shape()) + ", weight " +
                shape_to_string(w.shape()) + ")");
  }
  if (b.dim(0) != cout) {
    shape_error("conv2d: bias length " + std::to_string(b.dim(0)) + " does not match " +
                std::to_string(cout) + " output channels");
  }
  if (stride < 1) shape_error("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) shape_error("conv2d: pad must be >= 0, got " + std::to_string(pad));
  if (kh > h + 2 * pad || kw > wid + 2 * pad) {
    shape_error("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                " exceeds padded input " + std::to_string(h + 2 * pad) + "x" +
                std::to_string(wid + 2 * pad));
  }
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wid + 2 * pad - kw) / stride + 1;
  const int ckk = cin * kh * kw;
  const long long plane = static_cast<long long>(oh) * ow;

  Tensor out({batch, cout, oh, ow});
  std::vector<double> col(static_cast<size_t>(ckk) * plane);
  for (int n = 0; n < batch; ++n) {
    im2col(x.data() + static_cast<long long>(n) * cin * h * wid, cin, h, wid, kh, kw, stride, pad,
           oh, ow, col.data());
    double* on = out.data() + static_cast<long long>(n) * cout * plane;
    for (int c = 0; c < cout; ++c) {
      const double bv = b[c];
      double* dst = on + static_cast<long long>(c) * plane;
      for (long long j = 0; j < plane; ++j) dst[j] = bv;
    }
    matmul_acc(on, w.data(), col.data(), cout, ckk, static_cast<int>(plane));
  }

  return record(std::move(out), {input, weight, bias},
                [=](Tape& t, Var out_var) {
                  const Tensor& g = t.grad(out_var);
                  const Tensor& xv = t.value(input);
                  const Tensor& wv = t.value(weight);
                  const long long pl = static_cast<long long>(oh) * ow;
                  if (t.requires_grad(bias)) {
                    Tensor& db = t.grad_buffer(bias);
                    for (int n = 0; n < batch; ++n) {
                      const double* gn = g.data() + static_cast<long long>(n) * cout * pl;
                      for (int c = 0; c < cout; ++c) {
                        double s = 0.0;
                        const double* row = gn + static_cast<long long>(c) * pl;
                        for (long long j = 0; j < pl; ++j) s += row[j];
                        db[c] += s;
                      }
                    }
                  }
                  if (t.requires_grad(weight)) {
                    Tensor& dw = t.grad_buffer(weight);
                    std::vector<double> colt(static_cast<size_t>(pl) * ckk);
                    for (int n = 0; n < batch; ++n) {
                      im2col_t(xv.data() + static_cast<long long>(n) * cin * h * wid, cin, h, wid,
                               kh, kw, stride, pad, oh, ow, colt.data());
                      matmul_acc(dw.data(), g.data() + static_cast<long long>(n) * cout * pl,
                                 colt.data(), cout, static_cast<int>(pl), ckk);
                    }
                  }
                  if (t.requires_grad(input)) {
                    Tensor& dx = t.grad_buffer(input);
                    // W^T once, then one GEMM + scatter per image.
                    std::vector<double> wt(static_cast<size_t>(ckk) * cout);
                    for (int c = 0; c < cout; ++c)
                      for (int p = 0; p < ckk; ++p)
                        wt[static_cast<size_t>(p) * cout + c] =
                            wv[static_cast<long long>(c) * ckk + p];
                    std::vector<double> dcol(static_cast<size_t>(ckk) * pl);
                    for (int n = 0; n < batch; ++n) {
                      std::fill(dcol.begin(), dcol.end(), 0.0);
                      matmul_acc(dcol.data(), wt.data(),
                                 g.data() + static_cast<long long>(n) * cout * pl, ckk, cout,
                                 static_cast<int>(pl));
                      col2im_acc(dcol.data(), cin, h, wid, kh, kw, stride, pad, oh, ow,
                                 dx.data() + static_cast<long long>(n) * cin * h * wid);
                    }
                  }
                });
}

Var Tape::relu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (long long i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return record(std::move(out), {x}, [x](Tape& t, Var out_var) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(out_var);
    const Tensor& xv2 = t.value(x);
    Tensor& dx = t.grad_buffer(x);
    for (long long i = 0; i < g.size(); ++i) {
      if (xv2[i] > 0.0) dx[i] += g[i];  // subgradient at 0 is 0
    }
  });
}

Var Tape::avg_pool2x2(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4) shape_error("avg_pool2x2: expected rank 4, got " + shape_to_string(xv.shape()));
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    shape_error("avg_pool2x2: spatial dims must be even, got " + shape_to_string(xv.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  Tensor out({batch, ch, oh, ow});
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      const double* src = xv.data() + (static_cast<long long>(n) * ch + c) * h * w;
      double* dst = out.data() + (static_cast<long long>(n) * ch + c) * oh * ow;
      for (int i = 0; i < oh; ++i) {
        const double* r0 = src + static_cast<long long>(2 * i) * w;
        const double* r1 = r0 + w;
        for (int j = 0; j < ow; ++j) {
          dst[static_cast<long long>(i) * ow + j] =
              0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
        }
      }
    }
  }
  return record(std::move(out), {x}, [x, batch, ch, h, w, oh, ow](Tape& t, Var out_var) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(out_var);
    Tensor& dx = t.grad_buffer(x);
    for (int n = 0; n < batch; ++n) {
      for (int c = 0; c < ch; ++c) {
        const double* gs = g.data() + (static_cast<long long>(n) * ch + c) * oh * ow;
        double* ds = dx.data() + (static_cast<long long>(n) * ch + c) * h * w;
        for (int i = 0; i < oh; ++i) {
          double* r0 = ds + static_cast<long long>(2 * i) * w;
          double* r1 = r0 + w;
          for (int j = 0; j < ow; ++j) {
            const double v = 0.25 * gs[static_cast<long long>(i) * ow + j];
            r0[2 * j] += v;
            r0[2 * j + 1] += v;
            r1[2 * j] += v;
            r1[2 * j + 1] += v;
          }
        }
      }
    }
  });
}

Var Tape::global_avg_pool(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4) {
    shape_error("global_avg_pool: expected rank 4, got " + shape_to_string(xv.shape()));
  }
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const long long plane = static_cast<long long>(h) * w;
  Tensor out({batch, ch});
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      const double* src = xv.data() + (static_cast<long long>(n) * ch + c) * plane;
      double s = 0.0;
      for (long long j = 0; j < plane; ++j) s += src[j];
      out[static_cast<long long>(n) * ch + c] = s / static_cast<double>(plane);
    }
  }
  return record(std::move(out), {x}, [x, batch, ch, plane](Tape& t, Var out_var) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(out_var);
    Tensor& dx = t.grad_buffer(x);
    for (int n = 0; n < batch; ++n) {
      for (int c = 0; c < ch; ++c) {
        const double v = g[static_cast<long long>(n) * ch + c] / static_cast<double>(plane);
        double* dst = dx.data() + (static_cast<long long>(n) * ch + c) * plane;
        for (long long j = 0; j < plane; ++j) dst[j] += v;
      }
    }
  });
}

Var Tape::fully_connected(Var input, Var weight, Var bias) {
  const Tensor& x = value(input);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
    shape_error("fully_connected: expected input rank 2, weight rank 2, bias rank 1; got input " +
                shape_to_string(x.shape()) + ", weight " + shape_to_string(w.shape()) + ", bias " +
                shape_to_string(b.shape()));
  }
  const int batch = x.dim(0), d = x.dim(1), k = w.dim(0);
  if (w.dim(1) != d || b.dim(0) != k) {
    shape_error("fully_connected: dimension mismatch, input " + shape_to_string(x.shape()) +
                ", weight " + shape_to_string(w.shape()) + ", bias " + shape_to_string(b.shape()));
  }
  Tensor out({batch, k});
  for (int n = 0; n < batch; ++n) {
    const double* xn = x.data() + static_cast<long long>(n) * d;
    double* on = out.data() + static_cast<long long>(n) * k;
    for (int i = 0; i < k; ++i) {
      const double* wi = w.data() + static_cast<long long>(i) * d;
      double s = b[i];
      for (int j = 0; j < d; ++j) s += wi[j] * xn[j];
      on[i] = s;
    }
  }
  return record(std::move(out), {input, weight, bias},
                [input, weight, bias, batch, d, k](Tape& t, Var out_var) {
                  const Tensor& g = t.grad(out_var);
                  const Tensor& xv = t.value(input);
                  const Tensor& wv = t.value(weight);
                  if (t.requires_grad(bias)) {
                    Tensor& db = t.grad_buffer(bias);
                    for (int n = 0; n < batch; ++n)
                      for (int i = 0; i < k; ++i) db[i] += g[static_cast<long long>(n) * k + i];
                  }
                  if (t.requires_grad(weight)) {
                    Tensor& dw = t.grad_buffer(weight);
                    for (int n = 0; n < batch; ++n) {
                      const double* xn = xv.data() + static_cast<long long>(n) * d;
                      const double* gn = g.data() + static_cast<long long>(n) * k;
                      for (int i = 0; i < k; ++i) {
                        const double gv = gn[i];
                        if (gv == 0.0) continue;
                        double* wi = dw.data() + static_cast<long long>(i) * d;
                        for (int j = 0; j < d; ++j) wi[j] += gv * xn[j];
                      }
                    }
                  }
                  if (t.requires_grad(input)) {
                    Tensor& dx = t.grad_buffer(input);
                    for (int n = 0; n < batch; ++n) {
                      const double* gn = g.data() + static_cast<long long>(n) * k;
                      double* xn = dx.data() + static_cast<long long>(n) * d;
                      for (int i = 0; i < k; ++i) {
                        const double gv = gn[i];
                        if (gv == 0.0) continue;
                        const double* wi = wv.data() + static_cast<long long>(i) * d;
                        for (int j = 0; j < d; ++j) xn[j] += gv * wi[j];
                      }
                    }
                  }
                });
}

Var Tape::slice_channels(Var x, int c_begin, int c_end) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4) {
    shape_error("slice_channels: expected rank 4, got " + shape_to_string(xv.shape()));
  }
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (c_begin < 0 || c_end > ch || c_begin >= c_end) {
    shape_error("slice_channels: range [" + std::to_string(c_begin) + "," + std::to_string(c_end) +
                ") invalid for " + std::to_string(ch) + " channels");
  }
  const int cs = c_end - c_begin;
  const long long plane = static_cast<long long>(h) * w;
  Tensor out({batch, cs, h, w});
  for (int n = 0; n < batch; ++n) {
    const double* src = xv.data() + (static_cast<long long>(n) * ch + c_begin) * plane;
    double* dst = out.data() + static_cast<long long>(n) * cs * plane;
    std::copy(src, src + static_cast<long long>(cs) * plane, dst);
  }
  return record(std::move(out), {x}, [x, batch, ch, cs, c_begin, plane](Tape& t, Var out_var) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(out_var);
    Tensor& dx = t.grad_buffer(x);
    for (int n = 0; n < batch; ++n) {
      const double* src = g.data() + static_cast<long long>(n) * cs * plane;
      double* dst = dx.data() + (static_cast<long long>(n) * ch + c_begin) * plane;
      for (long long j = 0; j < static_cast<long long>(cs) * plane; ++j) dst[j] += src[j];
    }
  });
}

Var Tape::slice_cols(Var m, int c_begin, int c_end) {
  const Tensor& mv = value(m);
  if (mv.rank() != 2) shape_error("slice_cols: expected rank 2, got " + shape_to_string(mv.shape()));
  const int rows = mv.dim(0), cols = mv.dim(1);
  if (c_begin < 0 || c_end > cols || c_begin >= c_end) {
    shape_error("slice_cols: range [" + std::to_string(c_begin) + "," + std::to_string(c_end) +
                ") invalid for " + std::to_string(cols) + " columns");
  }
  const int cs = c_end - c_begin;
  Tensor out({rows, cs});
  for (int i = 0; i < rows; ++i) {
    const double* src = mv.data() + static_cast<long long>(i) * cols + c_begin;
    std::copy(src, src + cs, out.data() + static_cast<long long>(i) * cs);
  }
  return record(std::move(out), {m}, [m, rows, cols, cs, c_begin](Tape& t, Var out_var) {
    if (!t.requires_grad(m)) return;
    const Tensor& g = t.grad(out_var);
    Tensor& dm = t.grad_buffer(m);
    for (int i = 0; i < rows; ++i) {
      const double* src = g.data() + static_cast<long long>(i) * cs;
      double* dst = dm.data() + static_cast<long long>(i) * cols + c_begin;
      for (int j = 0; j < cs; ++j) dst[j] += src[j];
    }
  });
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0)) {
    shape_error("concat_cols: expected matching rank-2 batches, got " +
                shape_to_string(av.shape()) + " and " + shape_to_string(bv.shape()));
  }
  const int rows = av.dim(0), d1 = av.dim(1), d2 = bv.dim(1);
  Tensor out({rows, d1 + d2});
  for (int i = 0; i < rows; ++i) {
    double* dst = out.data() + static_cast<long long>(i) * (d1 + d2);
    std::copy(av.data() + static_cast<long long>(i) * d1, av.data() + static_cast<long long>(i + 1) * d1, dst);
    std::copy(bv.data() + static_cast<long long>(i) * d2, bv.data() + static_cast<long long>(i + 1) * d2,
              dst + d1);
  }
  return record(std::move(out), {a, b}, [a, b, rows, d1, d2](Tape& t, Var out_var) {
    const Tensor& g = t.grad(out_var);
    if (t.requires_grad(a)) {
      Tensor& da = t.grad_buffer(a);
      for (int i = 0; i < rows; ++i) {
        const double* src = g.data() + static_cast<long long>(i) * (d1 + d2);
        double* dst = da.data() + static_cast<long long>(i) * d1;
        for (int j = 0; j < d1; ++j) dst[j] += src[j];
      }
    }
    if (t.requires_grad(b)) {
      Tensor& db = t.grad_buffer(b);
      for (int i = 0; i < rows; ++i) {
        const double* src = g.data() + static_cast<long long>(i) * (d1 + d2) + d1;
        double* dst = db.data() + static_cast<long long>(i) * d2;
        for (int j = 0; j < d2; ++j) dst[j] += src[j];
      }
    }
  });
}

Var Tape::mask_mul(Var x, Tensor mask) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4) shape_error("mask_mul: expected rank 4, got " + shape_to_string(xv.shape()));
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const bool per_sample = mask.rank() == 3;
  if (per_sample) {
    if (mask.dim(0) != batch || mask.dim(1) != h || mask.dim(2) != w) {
      shape_error("mask_mul: mask " + shape_to_string(mask.shape()) +
                  " does not match features " + shape_to_string(xv.shape()));
    }
  } else if (mask.rank() == 2) {
    if (mask.dim(0) != h || mask.dim(1) != w) {
      shape_error("mask_mul: mask " + shape_to_string(mask.shape()) +
                  " does not match feature resolution " + std::to_string(h) + "x" +
                  std::to_string(w));
    }
  } else {
    shape_error("mask_mul: mask must be [H,W] or [B,H,W], got " + shape_to_string(mask.shape()));
  }
  const long long plane = static_cast<long long>(h) * w;
  Tensor out(xv.shape());
  for (int n = 0; n < batch; ++n) {
    const double* m = mask.data() + (per_sample ? static_cast<long long>(n) * plane : 0);
    for (int c = 0; c < ch; ++c) {
      const double* src = xv.data() + (static_cast<long long>(n) * ch + c) * plane;
      double* dst = out.data() + (static_cast<long long>(n) * ch + c) * plane;
      for (long long j = 0; j < plane; ++j) dst[j] = src[j] * m[j];
    }
  }
  return record(std::move(out), {x},
                [x, batch, ch, plane, per_sample, mask = std::move(mask)](Tape& t, Var out_var) {
                  if (!t.requires_grad(x)) return;
                  const Tensor& g = t.grad(out_var);
                  Tensor& dx = t.grad_buffer(x);
                  for (int n = 0; n < batch; ++n) {
                    const double* m = mask.data() + (per_sample ? static_cast<long long>(n) * plane : 0);
                    for (int c = 0; c < ch; ++c) {
                      const long long off = (static_cast<long long>(n) * ch + c) * plane;
                      for (long long j = 0; j < plane; ++j) dx[off + j] += g[off + j] * m[j];
                    }
                  }
                });
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) {
    shape_error("add: shape mismatch " + shape_to_string(av.shape()) + " vs " +
                shape_to_string(bv.shape()));
  }
  Tensor out(av.shape());
  for (long long i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return record(std::move(out), {a, b}, [a, b](Tape& t, Var out_var) {
    const Tensor& g = t.grad(out_var);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor& d = t.grad_buffer(v);
      for (long long i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) {
    shape_error("mul: shape mismatch " + shape_to_string(av.shape()) + " vs " +
                shape_to_string(bv.shape()));
  }
  Tensor out(av.shape());
  for (long long i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return record(std::move(out), {a, b}, [a, b](Tape& t, Var out_var) {
    const Tensor& g = t.grad(out_var);
    if (t.requires_grad(a)) {
      Tensor& da = t.grad_buffer(a);
      const Tensor& bv2 = t.value(b);
      for (long long i = 0; i < g.size(); ++i) da[i] += g[i] * bv2[i];
    }
    if (t.requires_grad(b)) {
      Tensor& db = t.grad_buffer(b);
      const Tensor& av2 = t.value(a);
      for (long long i = 0; i < g.size(); ++i) db[i] += g[i] * av2[i];
    }
  });
}

Var Tape::scale(Var x, double c) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (long long i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  return record(std::move(out), {x}, [x, c](Tape& t, Var out_var) {
    if (!t.requires_grad(x)) return;
    const Tensor& g = t.grad(out_var);
    Tensor& dx = t.grad_buffer(x);
    for (long long i = 0; i < g.size(); ++i) dx[i] += c * g[i];
  });
}

Var Tape::sum(Var x) {
  const Tensor& xv = value(x);
  double s = 0.0;
  for (long long i = 0; i < xv.size(); ++i) s += xv[i];
  return record(Tensor::scalar(s), {x}, [x](Tape& t, Var out_var) {
    if (!t.requires_grad(x)) return;
    const double g = t.grad(out_var)[0];
    Tensor& dx = t.grad_buffer(x);
    for (long long i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

Var Tape::squared_mean(Var x) {
  const Tensor& xv = value(x);
  const double n = static_cast<double>(xv.size());
  double s = 0.0;
  for (long long i = 0; i < xv.size(); ++i) s += xv[i] * xv[i];
  return record(Tensor::scalar(s / n), {x}, [x, n](Tape& t, Var out_var) {
    if (!t.requires_grad(x)) return;
    const double g = t.grad(out_var)[0];
    const Tensor& xv2 = t.value(x);
    Tensor& dx = t.grad_buffer(x);
    const double k = 2.0 * g / n;
    for (long long i = 0; i < dx.size(); ++i) dx[i] += k * xv2[i];
  });
}

}  // namespace gocnn
