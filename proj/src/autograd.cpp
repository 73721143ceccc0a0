#include "bimvfi/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "bimvfi/params.hpp"
#include "bimvfi/sampling.hpp"

namespace bimvfi::ag {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(const ParamStore& store, int index) {
  if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return {this, it->second};
  Var v = leaf(store.value(index));
  param_nodes_.emplace(index, v.id());
  return v;
}

Var Graph::make(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.graph() != this) throw std::logic_error("Graph::make: input from another graph");
    needs = needs || in.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad_of(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) {
    n.grad = Tensor(n.value.channels(), n.value.height(), n.value.width());
  }
  return n.grad;
}

const Tensor* Graph::grad_if_any(int id) const {
  const Node& n = nodes_[id];
  return n.grad.empty() ? nullptr : &n.grad;
}

void Graph::backward(Var scalar) {
  if (scalar.graph() != this || scalar.value().size() != 1) {
    throw std::invalid_argument("Graph::backward: expects a scalar node of this graph");
  }
  grad_of(scalar.id())[0] += 1.0;
  for (int id = scalar.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
  }
}

void Graph::accumulate_parameter_grads(std::vector<Tensor>& grads) const {
  for (const auto& [param, node] : param_nodes_) {
    if (const Tensor* g = grad_if_any(node)) grads.at(param) += *g;
  }
}

namespace {

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("autograd: invalid Var");
  return *a.graph();
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.channels(), a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

inline double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var add(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "ag::add");
  Tensor out = a.value();
  out += b.value();
  const int ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return g.make(std::move(out), ins, [ia, ib](Graph& gr, const Tensor& go) {
    if (gr.requires_grad(ia)) gr.grad_of(ia) += go;
    if (gr.requires_grad(ib)) gr.grad_of(ib) += go;
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "ag::sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return g.make(std::move(out), ins, [ia, ib](Graph& gr, const Tensor& go) {
    if (gr.requires_grad(ia)) gr.grad_of(ia) += go;
    if (gr.requires_grad(ib)) {
      Tensor& gb = gr.grad_of(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "ag::mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return g.make(std::move(out), ins, [ia, ib](Graph& gr, const Tensor& go) {
    if (gr.requires_grad(ia)) {
      Tensor& ga = gr.grad_of(ia);
      const Tensor& bv = gr.value(ib);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (gr.requires_grad(ib)) {
      Tensor& gb = gr.grad_of(ib);
      const Tensor& av = gr.value(ia);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  out *= s;
  const int ia = a.id();
  const Var ins[] = {a};
  return g.make(std::move(out), ins, [ia, s](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  });
}

Var add_scalar(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = map_values(a.value(), [s](double v) { return v + s; });
  const int ia = a.id();
  const Var ins[] = {a};
  return g.make(std::move(out), ins, [ia](Graph& gr, const Tensor& go) { gr.grad_of(ia) += go; });
}

Var silu(Var a) {
  Graph& g = graph_of(a);
  Tensor out = map_values(a.value(), [](double v) { return v * sigmoid_scalar(v); });
  const int ia = a.id();
  const Var ins[] = {a};
  return g.make(std::move(out), ins, [ia](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_of(ia);
    const Tensor& av = gr.value(ia);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double s = sigmoid_scalar(av[i]);
      ga[i] += go[i] * s * (1.0 + av[i] * (1.0 - s));
    }
  });
}

Var sigmoid(Var a) {
  Graph& g = graph_of(a);
  Tensor out = map_values(a.value(), sigmoid_scalar);
  const int ia = a.id();
  const int io = static_cast<int>(g.size());
  const Var ins[] = {a};
  return g.make(std::move(out), ins, [ia, io](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_of(ia);
    const Tensor& y = gr.value(io);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Var detach(Var a) { return graph_of(a).constant(a.value()); }

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("ag::concat: no inputs");
  Graph& g = graph_of(parts.front());
  std::vector<const Tensor*> values;
  std::vector<int> ids;
  std::vector<int> offsets;
  int offset = 0;
  for (const Var& p : parts) {
    values.push_back(&p.value());
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += p.channels();
  }
  Tensor out = concat_channels(values);
  return g.make(std::move(out), parts, [ids, offsets](Graph& gr, const Tensor& go) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!gr.requires_grad(ids[k])) continue;
      Tensor& gp = gr.grad_of(ids[k]);
      const double* src = go.data() + offsets[k] * go.plane_size();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
    }
  });
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_channels(Var a, int first, int count) {
  Graph& g = graph_of(a);
  Tensor out = a.value().slice_channels(first, count);
  const int ia = a.id();
  const Var ins[] = {a};
  return g.make(std::move(out), ins, [ia, first](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_of(ia);
    double* dst = ga.data() + first * ga.plane_size();
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i];
  });
}

Var sum_all(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const int ia = a.id();
  const Var ins[] = {a};
  return g.make(Tensor(1, 1, 1, s), ins, [ia](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_of(ia);
    for (auto& v : ga.values()) v += go[0];
  });
}

Var add_scalars(std::span<const Var> terms) {
  if (terms.empty()) throw std::invalid_argument("ag::add_scalars: no terms");
  Graph& g = graph_of(terms.front());
  double s = 0.0;
  std::vector<int> ids;
  for (const Var& t : terms) {
    if (t.value().size() != 1) throw std::invalid_argument("ag::add_scalars: non-scalar term");
    s += t.value()[0];
    ids.push_back(t.id());
  }
  return g.make(Tensor(1, 1, 1, s), terms, [ids](Graph& gr, const Tensor& go) {
    for (int id : ids) {
      if (gr.requires_grad(id)) gr.grad_of(id)[0] += go[0];
    }
  });
}

Var dot_constant(Var a, const Tensor& w) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), w, "ag::dot_constant");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += a.value()[i] * w[i];
  const int ia = a.id();
  const Var ins[] = {a};
  return g.make(Tensor(1, 1, 1, s), ins, [ia, w](Graph& gr, const Tensor& go) {
    Tensor& ga = gr.grad_of(ia);
    for (std::size_t i = 0; i < w.size(); ++i) ga[i] += go[0] * w[i];
  });
}

// -- convolution ---------------------------------------------------------------

namespace {

struct ConvGeom {
  int cin, h, w, k, stride, pad, out_h, out_w;
  [[nodiscard]] int rows() const { return cin * k * k; }
  [[nodiscard]] int cols() const { return out_h * out_w; }
  [[nodiscard]] bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const Tensor& x, const ConvGeom& g, RowMat& cols) {
  cols.resize(g.rows(), g.cols());
  for (int c = 0; c < g.cin; ++c) {
    const double* src = x.plane(c).data();
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* dst = cols.data() + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          double* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= g.h) {
            std::fill_n(row, g.out_w, 0.0);
            continue;
          }
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            row[ox] = (ix >= 0 && ix < g.w) ? src[iy * g.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const RowMat& cols, const ConvGeom& g, Tensor& dx) {
  for (int c = 0; c < g.cin; ++c) {
    double* dst = dx.plane(c).data();
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* src = cols.data() + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const double* row = src + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) dst[iy * g.w + ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, int stride, int padding) {
  Graph& gr = graph_of(x);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const int k = static_cast<int>(std::lround(std::sqrt(wv.width())));
  if (k * k != wv.width() || wv.height() != xv.channels() || stride < 1) {
    throw std::invalid_argument("ag::conv2d: weight " + wv.shape_string() +
                                " incompatible with input " + xv.shape_string());
  }
  ConvGeom geo{xv.channels(), xv.height(), xv.width(), k, stride, padding, 0, 0};
  geo.out_h = (geo.h + 2 * padding - k) / stride + 1;
  geo.out_w = (geo.w + 2 * padding - k) / stride + 1;
  if (geo.out_h <= 0 || geo.out_w <= 0) throw std::invalid_argument("ag::conv2d: input too small");
  const int cout = wv.channels();
  if (bias.valid() && (bias.value().channels() != cout || bias.value().plane_size() != 1)) {
    throw std::invalid_argument("ag::conv2d: bias shape " + bias.value().shape_string());
  }

  Tensor out(cout, geo.out_h, geo.out_w);
  MatMap y(out.data(), cout, geo.cols());
  ConstMatMap wm(wv.data(), cout, geo.rows());
  if (geo.pointwise()) {
    y.noalias() = wm * ConstMatMap(xv.data(), geo.rows(), geo.cols());
  } else {
    RowMat cols;
    im2col(xv, geo, cols);
    y.noalias() = wm * cols;
  }
  if (bias.valid()) {
    for (int o = 0; o < cout; ++o) y.row(o).array() += bias.value()[o];
  }

  const int ix = x.id(), iw = weight.id(), ib = bias.valid() ? bias.id() : -1;
  std::vector<Var> ins{x, weight};
  if (bias.valid()) ins.push_back(bias);
  return gr.make(std::move(out), ins, [geo, cout, ix, iw, ib](Graph& g, const Tensor& go) {
    ConstMatMap gy(go.data(), cout, geo.cols());
    const Tensor& xv = g.value(ix);
    const bool need_x = g.requires_grad(ix);
    const bool need_w = g.requires_grad(iw);
    RowMat cols;
    if (need_w && !geo.pointwise()) im2col(xv, geo, cols);
    if (need_w) {
      MatMap gw(g.grad_of(iw).data(), cout, geo.rows());
      if (geo.pointwise()) {
        gw.noalias() += gy * ConstMatMap(xv.data(), geo.rows(), geo.cols()).transpose();
      } else {
        gw.noalias() += gy * cols.transpose();
      }
    }
    if (ib >= 0 && g.requires_grad(ib)) {
      Tensor& gb = g.grad_of(ib);
      // Plain loop: a vectorised reduction would round differently depending
      // on buffer alignment and break run-to-run reproducibility.
      for (int o = 0; o < cout; ++o) {
        const double* row = go.plane(o).data();
        double s = 0.0;
        for (int i = 0; i < geo.cols(); ++i) s += row[i];
        gb[o] += s;
      }
    }
    if (need_x) {
      ConstMatMap wm(g.value(iw).data(), cout, geo.rows());
      if (geo.pointwise()) {
        MatMap gx(g.grad_of(ix).data(), geo.rows(), geo.cols());
        gx.noalias() += wm.transpose() * gy;
      } else {
        RowMat gcols = wm.transpose() * gy;
        col2im(gcols, geo, g.grad_of(ix));
      }
    }
  });
}

// -- sampling ------------------------------------------------------------------

Var warp(Var src, Var flow) {
  Graph& g = graph_of(src);
  Tensor out = sampling::warp(src.value(), flow.value());
  const int is = src.id(), iflow = flow.id();
  const Var ins[] = {src, flow};
  return g.make(std::move(out), ins, [is, iflow](Graph& gr, const Tensor& go) {
    Tensor* gs = gr.requires_grad(is) ? &gr.grad_of(is) : nullptr;
    Tensor* gf = gr.requires_grad(iflow) ? &gr.grad_of(iflow) : nullptr;
    sampling::warp_backward(gr.value(is), gr.value(iflow), go, gs, gf);
  });
}

Var resize(Var a, int out_h, int out_w) {
  Graph& g = graph_of(a);
  if (a.height() == out_h && a.width() == out_w) return a;
  Tensor out = sampling::resize(a.value(), out_h, out_w);
  const int ia = a.id();
  const Var ins[] = {a};
  return g.make(std::move(out), ins, [ia](Graph& gr, const Tensor& go) {
    sampling::resize_backward(go, gr.grad_of(ia));
  });
}

Var resample_flow(Var flow, double factor) {
  if (flow.channels() != 2) throw std::invalid_argument("ag::resample_flow: expects 2 channels");
  if (factor == 0.5 && (flow.height() % 2 != 0 || flow.width() % 2 != 0)) {
    throw std::invalid_argument("ag::resample_flow: factor 0.5 needs even dimensions");
  }
  const int h = static_cast<int>(std::lround(flow.height() * factor));
  const int w = static_cast<int>(std::lround(flow.width() * factor));
  return scale(resize(flow, h, w), factor);
}

Var softmax_groups9(Var logits) {
  Graph& g = graph_of(logits);
  const Tensor& lv = logits.value();
  if (lv.channels() % 9 != 0) throw std::invalid_argument("ag::softmax_groups9: channels not a multiple of 9");
  const int groups = lv.channels() / 9;
  const std::size_t plane = lv.plane_size();
  Tensor out(lv.channels(), lv.height(), lv.width());
  for (int s = 0; s < groups; ++s) {
    for (std::size_t p = 0; p < plane; ++p) {
      double m = -std::numeric_limits<double>::infinity();
      for (int n = 0; n < 9; ++n) m = std::max(m, lv[(n * groups + s) * plane + p]);
      double z = 0.0;
      for (int n = 0; n < 9; ++n) {
        const double e = std::exp(lv[(n * groups + s) * plane + p] - m);
        out[(n * groups + s) * plane + p] = e;
        z += e;
      }
      for (int n = 0; n < 9; ++n) out[(n * groups + s) * plane + p] /= z;
    }
  }
  const int il = logits.id();
  const int io = static_cast<int>(g.size());
  const Var ins[] = {logits};
  return g.make(std::move(out), ins, [il, io, groups, plane](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(io);
    Tensor& gl = gr.grad_of(il);
    for (int s = 0; s < groups; ++s) {
      for (std::size_t p = 0; p < plane; ++p) {
        double dot = 0.0;
        for (int n = 0; n < 9; ++n) {
          const std::size_t i = (n * groups + s) * plane + p;
          dot += y[i] * go[i];
        }
        for (int n = 0; n < 9; ++n) {
          const std::size_t i = (n * groups + s) * plane + p;
          gl[i] += y[i] * (go[i] - dot);
        }
      }
    }
  });
}

Var convex_upsample(Var flow, Var kernels, int factor) {
  Graph& g = graph_of(flow);
  Tensor out = sampling::convex_upsample(flow.value(), kernels.value(), factor);
  const int iflow = flow.id(), ik = kernels.id();
  const Var ins[] = {flow, kernels};
  return g.make(std::move(out), ins, [iflow, ik, factor](Graph& gr, const Tensor& go) {
    Tensor* gf = gr.requires_grad(iflow) ? &gr.grad_of(iflow) : nullptr;
    Tensor* gk = gr.requires_grad(ik) ? &gr.grad_of(ik) : nullptr;
    sampling::convex_upsample_backward(gr.value(iflow), gr.value(ik), factor, go, gf, gk);
  });
}

Var cost_volume(Var a, Var b, int radius) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "cost_volume");
  if (radius < 0) throw std::invalid_argument("cost_volume: negative radius");
  const int side = 2 * radius + 1;
  const int h = av.height(), w = av.width(), c = av.channels();
  const double norm = 1.0 / std::sqrt(static_cast<double>(c));
  Tensor out(side * side, h, w);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      double* dst = out.plane((dy + radius) * side + dx + radius).data();
      for (int ch = 0; ch < c; ++ch) {
        const double* pa = av.plane(ch).data();
        const double* pb = bv.plane(ch).data();
        for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
          for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) {
            dst[y * w + x] += pa[y * w + x] * pb[(y + dy) * w + x + dx];
          }
        }
      }
      for (int i = 0; i < h * w; ++i) dst[i] *= norm;
    }
  }
  const int ia = a.id(), ib = b.id();
  const Var ins[] = {a, b};
  return g.make(std::move(out), ins, [ia, ib, radius, norm](Graph& gr, const Tensor& go) {
    const Tensor& av = gr.value(ia);
    const Tensor& bv = gr.value(ib);
    Tensor* ga = gr.requires_grad(ia) ? &gr.grad_of(ia) : nullptr;
    Tensor* gb = gr.requires_grad(ib) ? &gr.grad_of(ib) : nullptr;
    const int side = 2 * radius + 1;
    const int h = av.height(), w = av.width();
    for (int dy = -radius; dy <= radius; ++dy) {
      for (int dx = -radius; dx <= radius; ++dx) {
        const double* gd = go.plane((dy + radius) * side + dx + radius).data();
        for (int ch = 0; ch < av.channels(); ++ch) {
          const double* pa = av.plane(ch).data();
          const double* pb = bv.plane(ch).data();
          double* qa = ga ? ga->plane(ch).data() : nullptr;
          double* qb = gb ? gb->plane(ch).data() : nullptr;
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) {
              const double gv = gd[y * w + x] * norm;
              const int j = (y + dy) * w + x + dx;
              if (qa) qa[y * w + x] += gv * pb[j];
              if (qb) qb[j] += gv * pa[y * w + x];
            }
          }
        }
      }
    }
  });
}

}  // namespace bimvfi::ag
