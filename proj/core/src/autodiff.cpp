#include "corrtrack/autodiff.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "corrtrack/errors.hpp"

namespace corrtrack::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMat = Eigen::Map<const EMat>;
using MMat = Eigen::Map<EMat>;

void check_same_tape(Value a, Value b) {
  if (a.tape != b.tape) throw Error("values from different tapes");
}

int64_t last_dim(const Tensor& t) { return t.dim(static_cast<int>(t.rank() - 1)); }

int64_t rows_of(const Tensor& t) {
  return t.size() / last_dim(t);
}

}  // namespace

Value Tape::make(Tensor v, bool requires_grad) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Value{this, static_cast<int32_t>(nodes_.size() - 1)};
}

void Tape::backward(Value root) {
  if (!root.ok() || root.tape != this) throw Error("backward on foreign value");
  if (val(root).size() != 1) throw Error("backward root must be scalar");
  for (auto& n : nodes_) {
    if (n.requires_grad) {
      n.grad = Tensor(n.value.shape());
    }
  }
  Node& r = nodes_[static_cast<size_t>(root.id)];
  if (!r.requires_grad) return;  // nothing reachable requires grad
  r.grad[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backprop) n.backprop(*this);
  }
}

namespace {

// Registers a unary elementwise op with derivative dval(out_index).
template <typename F, typename DF>
Value unary_op(Value a, F f, DF df) {
  Tape& t = *a.tape;
  const Tensor& x = t.val(a);
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  Value out = t.make(std::move(y), t.requires_grad(a));
  if (t.requires_grad(a)) {
    const int32_t aid = a.id, oid = out.id;
    t.set_backprop(out, [aid, oid, df](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& x = tp.val(aid);
      const Tensor& y = tp.val(oid);
      Tensor& ga = tp.grad_mut(aid);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace

Value add(Value a, Value b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& xa = t.val(a);
  const Tensor& xb = t.val(b);
  require_same_shape(xa, xb, "add");
  Tensor y(xa.shape());
  for (int64_t i = 0; i < xa.size(); ++i) y[i] = xa[i] + xb[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [aid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      if (tp.id_requires_grad(aid)) {
        Tensor& ga = tp.grad_mut(aid);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (tp.id_requires_grad(bid)) {
        Tensor& gb = tp.grad_mut(bid);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Value sub(Value a, Value b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& xa = t.val(a);
  const Tensor& xb = t.val(b);
  require_same_shape(xa, xb, "sub");
  Tensor y(xa.shape());
  for (int64_t i = 0; i < xa.size(); ++i) y[i] = xa[i] - xb[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [aid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      if (tp.id_requires_grad(aid)) {
        Tensor& ga = tp.grad_mut(aid);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (tp.id_requires_grad(bid)) {
        Tensor& gb = tp.grad_mut(bid);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Value mul(Value a, Value b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& xa = t.val(a);
  const Tensor& xb = t.val(b);
  require_same_shape(xa, xb, "mul");
  Tensor y(xa.shape());
  for (int64_t i = 0; i < xa.size(); ++i) y[i] = xa[i] * xb[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [aid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xa = tp.val(aid);
      const Tensor& xb = tp.val(bid);
      if (tp.id_requires_grad(aid)) {
        Tensor& ga = tp.grad_mut(aid);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
      }
      if (tp.id_requires_grad(bid)) {
        Tensor& gb = tp.grad_mut(bid);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
      }
    });
  }
  return out;
}

Value min2(Value a, Value b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& xa = t.val(a);
  const Tensor& xb = t.val(b);
  require_same_shape(xa, xb, "min2");
  Tensor y(xa.shape());
  for (int64_t i = 0; i < xa.size(); ++i) y[i] = xa[i] <= xb[i] ? xa[i] : xb[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [aid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xa = tp.val(aid);
      const Tensor& xb = tp.val(bid);
      for (int64_t i = 0; i < g.size(); ++i) {
        if (xa[i] <= xb[i]) {
          if (tp.id_requires_grad(aid)) tp.grad_mut(aid)[i] += g[i];
        } else {
          if (tp.id_requires_grad(bid)) tp.grad_mut(bid)[i] += g[i];
        }
      }
    });
  }
  return out;
}

Value scale(Value a, double c) {
  return unary_op(a, [c](double x) { return c * x; },
                  [c](double, double) { return c; });
}

Value add_const(Value a, double c) {
  return unary_op(a, [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

Value exp_(Value a) {
  return unary_op(a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Value log_(Value a) {
  return unary_op(a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Value tanh_(Value a) {
  return unary_op(a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Value one_plus_exp(Value a) {
  return unary_op(a, [](double x) { return 1.0 + std::exp(x); },
                  [](double, double y) { return y - 1.0; });
}

Value reshape(Value a, std::vector<int64_t> shape) {
  Tape& t = *a.tape;
  const Tensor& x = t.val(a);
  if (shape_numel(shape) != x.size()) throw ShapeMismatch("reshape element count");
  Tensor y(shape);
  for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i];
  Value out = t.make(std::move(y), t.requires_grad(a));
  if (t.requires_grad(a)) {
    const int32_t aid = a.id, oid = out.id;
    t.set_backprop(out, [aid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      Tensor& ga = tp.grad_mut(aid);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Value sum(Value a) {
  Tape& t = *a.tape;
  const Tensor& x = t.val(a);
  double s = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor y({1});
  y[0] = s;
  Value out = t.make(std::move(y), t.requires_grad(a));
  if (t.requires_grad(a)) {
    const int32_t aid = a.id, oid = out.id;
    t.set_backprop(out, [aid, oid](Tape& tp) {
      const double g = tp.grad_mut(oid)[0];
      Tensor& ga = tp.grad_mut(aid);
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

Value mean(Value a) {
  const int64_t n = a.tape->val(a).size();
  if (n == 0) throw Error("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Value weighted_sum(Value a, Tensor weights) {
  Tape& t = *a.tape;
  const Tensor& x = t.val(a);
  if (weights.size() != x.size()) throw ShapeMismatch("weighted_sum weights");
  double s = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) s += weights[i] * x[i];
  Tensor y({1});
  y[0] = s;
  Value out = t.make(std::move(y), t.requires_grad(a));
  if (t.requires_grad(a)) {
    const int32_t aid = a.id, oid = out.id;
    auto w = std::make_shared<Tensor>(std::move(weights));
    t.set_backprop(out, [aid, oid, w](Tape& tp) {
      const double g = tp.grad_mut(oid)[0];
      Tensor& ga = tp.grad_mut(aid);
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g * (*w)[i];
    });
  }
  return out;
}

Value div_scalar(Value a, Value s) {
  check_same_tape(a, s);
  Tape& t = *a.tape;
  const Tensor& x = t.val(a);
  const Tensor& sv = t.val(s);
  if (sv.size() != 1) throw ShapeMismatch("div_scalar denominator must be scalar");
  const double d = sv[0];
  Tensor y(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i] / d;
  const bool rg = t.requires_grad(a) || t.requires_grad(s);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, sid = s.id, oid = out.id;
    t.set_backprop(out, [aid, sid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& x = tp.val(aid);
      const double d = tp.val(sid)[0];
      if (tp.id_requires_grad(aid)) {
        Tensor& ga = tp.grad_mut(aid);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / d;
      }
      if (tp.id_requires_grad(sid)) {
        double acc = 0.0;
        for (int64_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
        tp.grad_mut(sid)[0] += -acc / (d * d);
      }
    });
  }
  return out;
}

Value conv3x3_same(Value x, Value w, Value b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  const Tensor& bv = t.val(b);
  if (xv.rank() != 3) throw ShapeMismatch("conv3x3 input must be HWC");
  if (wv.rank() != 4 || wv.dim(0) != 3 || wv.dim(1) != 3) throw ShapeMismatch("conv3x3 weight must be 3x3xCinxCout");
  const int64_t H = xv.dim(0), W = xv.dim(1), Cin = xv.dim(2), Cout = wv.dim(3);
  if (wv.dim(2) != Cin) throw ShapeMismatch("conv3x3 Cin mismatch");
  if (bv.size() != Cout) throw ShapeMismatch("conv3x3 bias size");

  Tensor y({H, W, Cout});
  for (int64_t yy = 0; yy < H; ++yy) {
    for (int64_t xx = 0; xx < W; ++xx) {
      double* op = &y.at(yy, xx, 0);
      for (int64_t co = 0; co < Cout; ++co) op[co] = bv[co];
      for (int64_t dy = -1; dy <= 1; ++dy) {
        const int64_t sy = yy + dy;
        if (sy < 0 || sy >= H) continue;
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t sx = xx + dx;
          if (sx < 0 || sx >= W) continue;
          const double* ip = &xv.at(sy, sx, 0);
          const double* wp = &wv.at(dy + 1, dx + 1, 0, 0);
          for (int64_t ci = 0; ci < Cin; ++ci) {
            const double xin = ip[ci];
            const double* wrow = wp + ci * Cout;
            for (int64_t co = 0; co < Cout; ++co) op[co] += xin * wrow[co];
          }
        }
      }
    }
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t xid = x.id, wid = w.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [xid, wid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xv = tp.val(xid);
      const Tensor& wv = tp.val(wid);
      const int64_t H = xv.dim(0), W = xv.dim(1), Cin = xv.dim(2), Cout = wv.dim(3);
      const bool need_x = tp.id_requires_grad(xid);
      const bool need_w = tp.id_requires_grad(wid);
      const bool need_b = tp.id_requires_grad(bid);
      Tensor* gx = need_x ? &tp.grad_mut(xid) : nullptr;
      Tensor* gw = need_w ? &tp.grad_mut(wid) : nullptr;
      Tensor* gb = need_b ? &tp.grad_mut(bid) : nullptr;
      for (int64_t yy = 0; yy < H; ++yy) {
        for (int64_t xx = 0; xx < W; ++xx) {
          const double* gp = &g.at(yy, xx, 0);
          if (need_b) {
            for (int64_t co = 0; co < Cout; ++co) (*gb)[co] += gp[co];
          }
          for (int64_t dy = -1; dy <= 1; ++dy) {
            const int64_t sy = yy + dy;
            if (sy < 0 || sy >= H) continue;
            for (int64_t dx = -1; dx <= 1; ++dx) {
              const int64_t sx = xx + dx;
              if (sx < 0 || sx >= W) continue;
              const double* ip = &xv.at(sy, sx, 0);
              const double* wp = &wv.at(dy + 1, dx + 1, 0, 0);
              for (int64_t ci = 0; ci < Cin; ++ci) {
                const double* wrow = wp + ci * Cout;
                if (need_x) {
                  double acc = 0.0;
                  for (int64_t co = 0; co < Cout; ++co) acc += gp[co] * wrow[co];
                  gx->at(sy, sx, ci) += acc;
                }
                if (need_w) {
                  const double xin = ip[ci];
                  double* gwrow = &gw->at(dy + 1, dx + 1, ci, 0);
                  for (int64_t co = 0; co < Cout; ++co) gwrow[co] += gp[co] * xin;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Value pixelwise_linear(Value x, Value w, Value b) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  const Tensor& wv = t.val(w);
  const Tensor& bv = t.val(b);
  const int64_t Cin = last_dim(xv);
  if (wv.rank() != 2 || wv.dim(0) != Cin) throw ShapeMismatch("pixelwise_linear weight");
  const int64_t Cout = wv.dim(1);
  if (bv.size() != Cout) throw ShapeMismatch("pixelwise_linear bias");
  const int64_t N = rows_of(xv);

  std::vector<int64_t> oshape = xv.shape();
  oshape.back() = Cout;
  Tensor y(oshape);
  {
    CMat xm(xv.data(), N, Cin);
    CMat wm(wv.data(), Cin, Cout);
    MMat ym(y.data(), N, Cout);
    ym.noalias() = xm * wm;
    for (int64_t i = 0; i < N; ++i)
      for (int64_t c = 0; c < Cout; ++c) y[i * Cout + c] += bv[c];
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t xid = x.id, wid = w.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [xid, wid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xv = tp.val(xid);
      const Tensor& wv = tp.val(wid);
      const int64_t Cin = wv.dim(0), Cout = wv.dim(1);
      const int64_t N = xv.size() / Cin;
      CMat gm(g.data(), N, Cout);
      CMat xm(xv.data(), N, Cin);
      CMat wm(wv.data(), Cin, Cout);
      if (tp.id_requires_grad(xid)) {
        MMat gx(tp.grad_mut(xid).data(), N, Cin);
        gx.noalias() += gm * wm.transpose();
      }
      if (tp.id_requires_grad(wid)) {
        MMat gw(tp.grad_mut(wid).data(), Cin, Cout);
        gw.noalias() += xm.transpose() * gm;
      }
      if (tp.id_requires_grad(bid)) {
        Tensor& gb = tp.grad_mut(bid);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < Cout; ++c) gb[c] += g[i * Cout + c];
      }
    });
  }
  return out;
}

Value pixelwise_linear_ctx(Value x, Value ctx, Value w, Value b) {
  check_same_tape(x, ctx);
  check_same_tape(x, w);
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  const Tensor& cv = t.val(ctx);
  const Tensor& wv = t.val(w);
  const Tensor& bv = t.val(b);
  const int64_t Cin = last_dim(xv);
  const int64_t K = cv.size();
  if (wv.rank() != 2 || wv.dim(0) != Cin + K) throw ShapeMismatch("pixelwise_linear_ctx weight");
  const int64_t Cout = wv.dim(1);
  if (bv.size() != Cout) throw ShapeMismatch("pixelwise_linear_ctx bias");
  const int64_t N = rows_of(xv);

  std::vector<int64_t> oshape = xv.shape();
  oshape.back() = Cout;
  Tensor y(oshape);
  {
    CMat xm(xv.data(), N, Cin);
    CMat wx(wv.data(), Cin, Cout);                   // top block
    CMat wc(wv.data() + Cin * Cout, K, Cout);        // ctx block
    Eigen::Map<const Eigen::RowVectorXd> cm(cv.data(), K);
    MMat ym(y.data(), N, Cout);
    ym.noalias() = xm * wx;
    Eigen::RowVectorXd ctx_out = cm * wc;
    for (int64_t i = 0; i < N; ++i)
      for (int64_t c = 0; c < Cout; ++c) y[i * Cout + c] += ctx_out[c] + bv[c];
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(ctx) || t.requires_grad(w) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t xid = x.id, cid = ctx.id, wid = w.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [xid, cid, wid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xv = tp.val(xid);
      const Tensor& cv = tp.val(cid);
      const Tensor& wv = tp.val(wid);
      const int64_t K = cv.size();
      const int64_t Cin = wv.dim(0) - K, Cout = wv.dim(1);
      const int64_t N = xv.size() / Cin;
      CMat gm(g.data(), N, Cout);
      CMat xm(xv.data(), N, Cin);
      CMat wx(wv.data(), Cin, Cout);
      CMat wc(wv.data() + Cin * Cout, K, Cout);
      if (tp.id_requires_grad(xid)) {
        MMat gx(tp.grad_mut(xid).data(), N, Cin);
        gx.noalias() += gm * wx.transpose();
      }
      if (tp.id_requires_grad(cid)) {
        Eigen::VectorXd colsum = gm.colwise().sum().transpose();
        Eigen::Map<Eigen::VectorXd> gc(tp.grad_mut(cid).data(), K);
        gc.noalias() += wc * colsum;
      }
      if (tp.id_requires_grad(wid)) {
        MMat gwx(tp.grad_mut(wid).data(), Cin, Cout);
        gwx.noalias() += xm.transpose() * gm;
        MMat gwc(tp.grad_mut(wid).data() + Cin * Cout, K, Cout);
        Eigen::Map<const Eigen::VectorXd> cm(cv.data(), K);
        gwc.noalias() += cm * gm.colwise().sum();
      }
      if (tp.id_requires_grad(bid)) {
        Tensor& gb = tp.grad_mut(bid);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < Cout; ++c) gb[c] += g[i * Cout + c];
      }
    });
  }
  return out;
}

Value mean_over_pixels(Value x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  if (xv.rank() != 3) throw ShapeMismatch("mean_over_pixels input must be HWC");
  const int64_t C = xv.dim(2);
  const int64_t N = xv.size() / C;
  Tensor y({C});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t c = 0; c < C; ++c) y[c] += xv[i * C + c];
  for (int64_t c = 0; c < C; ++c) y[c] /= static_cast<double>(N);
  Value out = t.make(std::move(y), t.requires_grad(x));
  if (t.requires_grad(x)) {
    const int32_t xid = x.id, oid = out.id;
    t.set_backprop(out, [xid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      Tensor& gx = tp.grad_mut(xid);
      const int64_t C = g.size();
      const int64_t N = gx.size() / C;
      const double inv = 1.0 / static_cast<double>(N);
      for (int64_t i = 0; i < N; ++i)
        for (int64_t c = 0; c < C; ++c) gx[i * C + c] += g[c] * inv;
    });
  }
  return out;
}

namespace {

// Tile ranges: dim split into `grid` contiguous bands, remainder spread over
// the leading bands.
std::vector<std::pair<int64_t, int64_t>> tile_bounds(int64_t dim, int64_t grid) {
  std::vector<std::pair<int64_t, int64_t>> out;
  const int64_t base = dim / grid;
  const int64_t rem = dim % grid;
  int64_t at = 0;
  for (int64_t g = 0; g < grid; ++g) {
    const int64_t len = base + (g < rem ? 1 : 0);
    out.emplace_back(at, at + len);
    at += len;
  }
  return out;
}

}  // namespace

Value mean_over_tiles(Value x, int64_t grid_y, int64_t grid_x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  if (xv.rank() != 3) throw ShapeMismatch("mean_over_tiles input must be HWC");
  const int64_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  if (grid_y < 1 || grid_x < 1 || grid_y > H || grid_x > W) {
    throw ShapeMismatch("mean_over_tiles grid does not fit the image");
  }
  const auto ys = tile_bounds(H, grid_y);
  const auto xs = tile_bounds(W, grid_x);
  Tensor y({grid_y * grid_x * C});
  int64_t out_at = 0;
  for (const auto& [y0, y1] : ys) {
    for (const auto& [x0, x1] : xs) {
      const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
      for (int64_t yy = y0; yy < y1; ++yy) {
        for (int64_t xx = x0; xx < x1; ++xx) {
          for (int64_t c = 0; c < C; ++c) y[out_at + c] += xv.at(yy, xx, c) * inv;
        }
      }
      out_at += C;
    }
  }
  Value out = t.make(std::move(y), t.requires_grad(x));
  if (t.requires_grad(x)) {
    const int32_t xid = x.id, oid = out.id;
    t.set_backprop(out, [xid, oid, grid_y, grid_x](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xv = tp.val(xid);
      Tensor& gx = tp.grad_mut(xid);
      const int64_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
      const auto ys = tile_bounds(H, grid_y);
      const auto xs = tile_bounds(W, grid_x);
      int64_t out_at = 0;
      for (const auto& [y0, y1] : ys) {
        for (const auto& [x0, x1] : xs) {
          const double inv = 1.0 / static_cast<double>((y1 - y0) * (x1 - x0));
          for (int64_t yy = y0; yy < y1; ++yy) {
            for (int64_t xx = x0; xx < x1; ++xx) {
              for (int64_t c = 0; c < C; ++c) gx.at(yy, xx, c) += g[out_at + c] * inv;
            }
          }
          out_at += C;
        }
      }
    });
  }
  return out;
}

Value concat_channels(Value a, Value b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& xa = t.val(a);
  const Tensor& xb = t.val(b);
  if (xa.rank() != 3 || xb.rank() != 3 || xa.dim(0) != xb.dim(0) || xa.dim(1) != xb.dim(1)) {
    throw ShapeMismatch("concat_channels inputs");
  }
  const int64_t H = xa.dim(0), W = xa.dim(1), Ca = xa.dim(2), Cb = xb.dim(2);
  Tensor y({H, W, Ca + Cb});
  const int64_t N = H * W;
  for (int64_t i = 0; i < N; ++i) {
    for (int64_t c = 0; c < Ca; ++c) y[i * (Ca + Cb) + c] = xa[i * Ca + c];
    for (int64_t c = 0; c < Cb; ++c) y[i * (Ca + Cb) + Ca + c] = xb[i * Cb + c];
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, bid = b.id, oid = out.id;
    const int64_t Ca_ = Ca, Cb_ = Cb;
    t.set_backprop(out, [aid, bid, oid, Ca_, Cb_](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const int64_t N = g.size() / (Ca_ + Cb_);
      if (tp.id_requires_grad(aid)) {
        Tensor& ga = tp.grad_mut(aid);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < Ca_; ++c) ga[i * Ca_ + c] += g[i * (Ca_ + Cb_) + c];
      }
      if (tp.id_requires_grad(bid)) {
        Tensor& gb = tp.grad_mut(bid);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < Cb_; ++c) gb[i * Cb_ + c] += g[i * (Ca_ + Cb_) + Ca_ + c];
      }
    });
  }
  return out;
}

Value slice_channels(Value x, int64_t c0, int64_t c1) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  const int64_t C = last_dim(xv);
  if (c0 < 0 || c1 > C || c0 >= c1) throw ShapeMismatch("slice_channels range");
  const int64_t N = rows_of(xv);
  const int64_t Cs = c1 - c0;
  std::vector<int64_t> oshape = xv.shape();
  oshape.back() = Cs;
  Tensor y(oshape);
  for (int64_t i = 0; i < N; ++i)
    for (int64_t c = 0; c < Cs; ++c) y[i * Cs + c] = xv[i * C + c0 + c];
  Value out = t.make(std::move(y), t.requires_grad(x));
  if (t.requires_grad(x)) {
    const int32_t xid = x.id, oid = out.id;
    t.set_backprop(out, [xid, oid, c0, Cs, C](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      Tensor& gx = tp.grad_mut(xid);
      const int64_t N = g.size() / Cs;
      for (int64_t i = 0; i < N; ++i)
        for (int64_t c = 0; c < Cs; ++c) gx[i * C + c0 + c] += g[i * Cs + c];
    });
  }
  return out;
}

Value l2_normalize_rows(Value x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  const int64_t C = last_dim(xv);
  const int64_t N = rows_of(xv);
  Tensor y(xv.shape());
  // Smooth normalization: y = x / sqrt(|x|^2 + eps). Keeps the row finite
  // and the gradient defined for arbitrary parameters.
  constexpr double kEps = 1e-24;
  for (int64_t i = 0; i < N; ++i) {
    double s = kEps;
    for (int64_t c = 0; c < C; ++c) s += xv[i * C + c] * xv[i * C + c];
    const double inv = 1.0 / std::sqrt(s);
    for (int64_t c = 0; c < C; ++c) y[i * C + c] = xv[i * C + c] * inv;
  }
  Value out = t.make(std::move(y), t.requires_grad(x));
  if (t.requires_grad(x)) {
    const int32_t xid = x.id, oid = out.id;
    t.set_backprop(out, [xid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xv = tp.val(xid);
      Tensor& gx = tp.grad_mut(xid);
      const int64_t C = xv.dim(static_cast<int>(xv.rank() - 1));
      const int64_t N = xv.size() / C;
      constexpr double kEps = 1e-24;
      for (int64_t i = 0; i < N; ++i) {
        double s = kEps, gdotx = 0.0;
        for (int64_t c = 0; c < C; ++c) {
          s += xv[i * C + c] * xv[i * C + c];
          gdotx += g[i * C + c] * xv[i * C + c];
        }
        const double inv = 1.0 / std::sqrt(s);
        const double inv3 = inv * inv * inv;
        for (int64_t c = 0; c < C; ++c) {
          gx[i * C + c] += g[i * C + c] * inv - xv[i * C + c] * gdotx * inv3;
        }
      }
    });
  }
  return out;
}

Value rownorm(Value x) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  const int64_t C = last_dim(xv);
  const int64_t N = rows_of(xv);
  std::vector<int64_t> oshape = xv.shape();
  oshape.pop_back();
  if (oshape.empty()) oshape.push_back(1);
  Tensor y(oshape);
  for (int64_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (int64_t c = 0; c < C; ++c) s += xv[i * C + c] * xv[i * C + c];
    y[i] = std::sqrt(s);
  }
  Value out = t.make(std::move(y), t.requires_grad(x));
  if (t.requires_grad(x)) {
    const int32_t xid = x.id, oid = out.id;
    t.set_backprop(out, [xid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xv = tp.val(xid);
      const Tensor& y = tp.val(oid);
      Tensor& gx = tp.grad_mut(xid);
      const int64_t C = xv.dim(static_cast<int>(xv.rank() - 1));
      const int64_t N = xv.size() / C;
      for (int64_t i = 0; i < N; ++i) {
        if (y[i] <= 0.0) continue;  // zero row: subgradient 0
        const double s = g[i] / y[i];
        for (int64_t c = 0; c < C; ++c) gx[i * C + c] += s * xv[i * C + c];
      }
    });
  }
  return out;
}

namespace {

struct BilinearTap {
  int64_t idx;     // flat pixel index
  double weight;
};

// 4 taps for a fractional (x, y) against a W x H grid. The valid domain is
// the image footprint [-0.5, W-0.5] x [-0.5, H-0.5]; coordinates between the
// border pixel center and the footprint edge clamp to the edge pixel.
void bilinear_taps(double px, double py, int64_t W, int64_t H, BilinearTap taps[4]) {
  if (px < -0.5 || py < -0.5 || px > W - 0.5 || py > H - 0.5) {
    throw OutOfBounds("bilinear sample outside image");
  }
  px = std::clamp(px, 0.0, static_cast<double>(W - 1));
  py = std::clamp(py, 0.0, static_cast<double>(H - 1));
  const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(px)), W - 1);
  const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(py)), H - 1);
  const int64_t x1 = std::min<int64_t>(x0 + 1, W - 1);
  const int64_t y1 = std::min<int64_t>(y0 + 1, H - 1);
  const double fx = px - static_cast<double>(x0);
  const double fy = py - static_cast<double>(y0);
  taps[0] = {y0 * W + x0, (1.0 - fx) * (1.0 - fy)};
  taps[1] = {y0 * W + x1, fx * (1.0 - fy)};
  taps[2] = {y1 * W + x0, (1.0 - fx) * fy};
  taps[3] = {y1 * W + x1, fx * fy};
}

}  // namespace

Value gather_bilinear(Value x, Tensor points) {
  Tape& t = *x.tape;
  const Tensor& xv = t.val(x);
  if (xv.rank() != 3) throw ShapeMismatch("gather_bilinear input must be HWC");
  if (points.rank() != 2 || points.dim(1) != 2) throw ShapeMismatch("points must be N x 2");
  const int64_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  const int64_t N = points.dim(0);
  Tensor y({N, C});
  for (int64_t i = 0; i < N; ++i) {
    BilinearTap taps[4];
    bilinear_taps(points.at(i, 0), points.at(i, 1), W, H, taps);
    for (const auto& tap : taps) {
      if (tap.weight == 0.0) continue;
      const double* src = xv.data() + tap.idx * C;
      for (int64_t c = 0; c < C; ++c) y.at(i, c) += tap.weight * src[c];
    }
  }
  Value out = t.make(std::move(y), t.requires_grad(x));
  if (t.requires_grad(x)) {
    const int32_t xid = x.id, oid = out.id;
    auto pts = std::make_shared<Tensor>(std::move(points));
    t.set_backprop(out, [xid, oid, pts](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xv = tp.val(xid);
      Tensor& gx = tp.grad_mut(xid);
      const int64_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
      const int64_t N = pts->dim(0);
      for (int64_t i = 0; i < N; ++i) {
        BilinearTap taps[4];
        bilinear_taps(pts->at(i, 0), pts->at(i, 1), W, H, taps);
        for (const auto& tap : taps) {
          if (tap.weight == 0.0) continue;
          double* dst = gx.data() + tap.idx * C;
          for (int64_t c = 0; c < C; ++c) dst[c] += tap.weight * g.at(i, c);
        }
      }
    });
  }
  return out;
}

Value matmul_nt(Value a, Value b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& xa = t.val(a);
  const Tensor& xb = t.val(b);
  if (xa.rank() != 2 || xb.rank() != 2 || xa.dim(1) != xb.dim(1)) {
    throw ShapeMismatch("matmul_nt needs [M,K] and [N,K]");
  }
  const int64_t M = xa.dim(0), N = xb.dim(0), K = xa.dim(1);
  Tensor y({M, N});
  {
    CMat am(xa.data(), M, K);
    CMat bm(xb.data(), N, K);
    MMat ym(y.data(), M, N);
    ym.noalias() = am * bm.transpose();
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [aid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xa = tp.val(aid);
      const Tensor& xb = tp.val(bid);
      const int64_t M = xa.dim(0), N = xb.dim(0), K = xa.dim(1);
      CMat gm(g.data(), M, N);
      CMat am(xa.data(), M, K);
      CMat bm(xb.data(), N, K);
      if (tp.id_requires_grad(aid)) {
        MMat ga(tp.grad_mut(aid).data(), M, K);
        ga.noalias() += gm * bm;
      }
      if (tp.id_requires_grad(bid)) {
        MMat gb(tp.grad_mut(bid).data(), N, K);
        gb.noalias() += gm.transpose() * am;
      }
    });
  }
  return out;
}

Value rowwise_dot(Value a, Value b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& xa = t.val(a);
  const Tensor& xb = t.val(b);
  require_same_shape(xa, xb, "rowwise_dot");
  const int64_t K = last_dim(xa);
  const int64_t N = rows_of(xa);
  Tensor y({N});
  for (int64_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (int64_t c = 0; c < K; ++c) s += xa[i * K + c] * xb[i * K + c];
    y[i] = s;
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, bid = b.id, oid = out.id;
    t.set_backprop(out, [aid, bid, oid](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& xa = tp.val(aid);
      const Tensor& xb = tp.val(bid);
      const int64_t N = g.size();
      const int64_t K = xa.size() / N;
      if (tp.id_requires_grad(aid)) {
        Tensor& ga = tp.grad_mut(aid);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < K; ++c) ga[i * K + c] += g[i] * xb[i * K + c];
      }
      if (tp.id_requires_grad(bid)) {
        Tensor& gb = tp.grad_mut(bid);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t c = 0; c < K; ++c) gb[i * K + c] += g[i] * xa[i * K + c];
      }
    });
  }
  return out;
}

Value concat_rows(Value a, Value b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& xa = t.val(a);
  const Tensor& xb = t.val(b);
  if (xa.rank() != 2 || xb.rank() != 2 || xa.dim(1) != xb.dim(1)) {
    throw ShapeMismatch("concat_rows inputs");
  }
  const int64_t M = xa.dim(0), N = xb.dim(0), K = xa.dim(1);
  Tensor y({M + N, K});
  for (int64_t i = 0; i < xa.size(); ++i) y[i] = xa[i];
  for (int64_t i = 0; i < xb.size(); ++i) y[M * K + i] = xb[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  Value out = t.make(std::move(y), rg);
  if (rg) {
    const int32_t aid = a.id, bid = b.id, oid = out.id;
    const int64_t offset = M * K;
    t.set_backprop(out, [aid, bid, oid, offset](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      if (tp.id_requires_grad(aid)) {
        Tensor& ga = tp.grad_mut(aid);
        for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (tp.id_requires_grad(bid)) {
        Tensor& gb = tp.grad_mut(bid);
        for (int64_t i = 0; i < gb.size(); ++i) gb[i] += g[offset + i];
      }
    });
  }
  return out;
}

Value logsumexp_cols_scaled(Value s, double tau) {
  Tape& t = *s.tape;
  const Tensor& sv = t.val(s);
  if (sv.rank() != 2) throw ShapeMismatch("logsumexp_cols input must be [M,N]");
  const int64_t M = sv.dim(0), N = sv.dim(1);
  if (M == 0) throw Error("logsumexp over empty set");
  Tensor y({N});
  for (int64_t j = 0; j < N; ++j) {
    double mx = -1e300;
    for (int64_t i = 0; i < M; ++i) mx = std::max(mx, tau * sv.at(i, j));
    double acc = 0.0;
    for (int64_t i = 0; i < M; ++i) acc += std::exp(tau * sv.at(i, j) - mx);
    y[j] = mx + std::log(acc);
  }
  Value out = t.make(std::move(y), t.requires_grad(s));
  if (t.requires_grad(s)) {
    const int32_t sid = s.id, oid = out.id;
    t.set_backprop(out, [sid, oid, tau](Tape& tp) {
      const Tensor& g = tp.grad_mut(oid);
      const Tensor& sv = tp.val(sid);
      const Tensor& y = tp.val(oid);
      Tensor& gs = tp.grad_mut(sid);
      const int64_t M = sv.dim(0), N = sv.dim(1);
      for (int64_t j = 0; j < N; ++j) {
        for (int64_t i = 0; i < M; ++i) {
          gs.at(i, j) += g[j] * tau * std::exp(tau * sv.at(i, j) - y[j]);
        }
      }
    });
  }
  return out;
}

Value bce_logits_weighted_sum(Value logits, Tensor labels, Tensor weights) {
  Tape& t = *logits.tape;
  const Tensor& lv = t.val(logits);
  if (labels.size() != lv.size() || weights.size() != lv.size()) {
    throw ShapeMismatch("bce labels/weights size");
  }
  double acc = 0.0;
  for (int64_t i = 0; i < lv.size(); ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    const double l = lv[i];
    const double y = labels[i];
    // Stable BCE-with-logits: max(l,0) - l*y + log(1+exp(-|l|)).
    acc += w * (std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l))));
  }
  Tensor out_t({1});
  out_t[0] = acc;
  Value out = t.make(std::move(out_t), t.requires_grad(logits));
  if (t.requires_grad(logits)) {
    const int32_t lid = logits.id, oid = out.id;
    auto lab = std::make_shared<Tensor>(std::move(labels));
    auto wt = std::make_shared<Tensor>(std::move(weights));
    t.set_backprop(out, [lid, oid, lab, wt](Tape& tp) {
      const double g = tp.grad_mut(oid)[0];
      const Tensor& lv = tp.val(lid);
      Tensor& gl = tp.grad_mut(lid);
      for (int64_t i = 0; i < lv.size(); ++i) {
        const double w = (*wt)[i];
        if (w == 0.0) continue;
        const double sig = 1.0 / (1.0 + std::exp(-lv[i]));
        gl[i] += g * w * (sig - (*lab)[i]);
      }
    });
  }
  return out;
}

}  // namespace corrtrack::ad
