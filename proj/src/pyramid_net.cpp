#include "bimvfi/pyramid_net.hpp"

#include <algorithm>
#include <cmath>

#include "bimvfi/sampling.hpp"

namespace bimvfi {

using ag::Graph;
using ag::Var;

const char* to_string(DescriptorMode m) {
  return m == DescriptorMode::kBiM ? "bim" : "time_index";
}

DescriptorMode descriptor_from_string(const std::string& s) {
  if (s == "bim") return DescriptorMode::kBiM;
  if (s == "time_index") return DescriptorMode::kTimeIndex;
  throw std::invalid_argument("unknown descriptor mode '" + s + "' (expected bim or time_index)");
}

void ModelConfig::validate() const {
  if (base_channels < 4) throw std::invalid_argument("ModelConfig: base_channels must be >= 4");
  if (cost_radius < 0) throw std::invalid_argument("ModelConfig: cost_radius must be >= 0");
  if (trunk_depth < 1) throw std::invalid_argument("ModelConfig: trunk_depth must be >= 1");
}

int level_count_for_resolution(int height, int width) {
  if (height < 32 || width < 32) {
    throw std::invalid_argument("level_count_for_resolution: both sides must be >= 32");
  }
  const double octaves = std::log2(static_cast<double>(std::max(height, width)) / 256.0);
  return std::max(1, 3 + static_cast<int>(std::lround(octaves)));
}

int required_divisor(int levels) {
  if (levels < 1) throw std::invalid_argument("required_divisor: levels must be >= 1");
  return 4 << (levels - 1);
}

namespace {

constexpr double kActGain = 1.41421356237;
constexpr double kHeadGain = 0.1;
constexpr int kKernelChannelsX2 = 9 * 4;
constexpr int kKernelChannelsX4 = 9 * 16;

}  // namespace

PyramidNet::PyramidNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  build(rng);
}

PyramidNet::PyramidNet(const ModelConfig& config, ParamStore params) : config_(config) {
  config_.validate();
  Rng rng(0);
  build(rng);
  if (params.size() != params_.size()) {
    throw std::invalid_argument("PyramidNet: parameter count does not match the configuration");
  }
  for (int i = 0; i < params_.size(); ++i) {
    const int j = params.find(params_.name(i));
    if (j < 0 || !params.value(j).same_shape(params_.value(i))) {
      throw std::invalid_argument("PyramidNet: missing or mis-shaped parameter " + params_.name(i));
    }
    params_.value(i) = params.value(j);
  }
}

PyramidNet::ConvSpec PyramidNet::add_conv(const std::string& name, int in, int out, int k, int stride,
                                          double gain, double bias_init, Rng& rng) {
  ConvSpec c;
  c.weight = params_.add(name + ".weight", init_conv_weight(out, in, k, gain, rng));
  c.bias = params_.add(name + ".bias", Tensor(out, 1, 1, bias_init));
  c.stride = stride;
  c.pad = k / 2;
  convs_.emplace_back(name, c);
  return c;
}

void PyramidNet::build(Rng& rng) {
  const int c = config_.base_channels;
  const int cq = std::max(1, c / 4);
  const auto [c0, c1, c2] = config_.context_channels();
  const int u0 = c / 2;
  const int u1 = c;
  const int u2 = c;

  add_conv("mfe.0", 3, c / 2, 3, 2, kActGain, 0.0, rng);
  add_conv("mfe.1", c / 2, c, 3, 2, kActGain, 0.0, rng);
  add_conv("mfe.2", c, c, 3, 1, 1.0, 0.0, rng);

  add_conv("cfe.0", 3, c0, 3, 1, kActGain, 0.0, rng);
  add_conv("cfe.1", c0, c1, 3, 2, kActGain, 0.0, rng);
  add_conv("cfe.2", c1, c2, 3, 2, kActGain, 0.0, rng);

  add_conv("bimfn.mask", 1, cq, 3, 1, kActGain, 0.0, rng);
  const int trunk_in = 2 * c + 2 * config_.cost_channels() + cq;
  for (int i = 0; i < config_.trunk_depth; ++i) {
    add_conv("bimfn.trunk." + std::to_string(i), i == 0 ? trunk_in : c, c, 3, 1, kActGain, 0.0, rng);
  }
  add_conv("dem.0", 1, c, 3, 1, kActGain, 0.0, rng);
  add_conv("dem.1", c, c, 1, 1, 1.0, 1.0, rng);
  if (config_.descriptor == DescriptorMode::kBiM) {
    add_conv("aem.0", 2, c, 3, 1, kActGain, 0.0, rng);
    add_conv("aem.1", c, c, 1, 1, 1.0, 1.0, rng);
  }
  add_conv("mconv", c, 4, 3, 1, kHeadGain, 0.0, rng);

  add_conv("caun.0", 2 * c0, c1, 3, 2, kActGain, 0.0, rng);
  add_conv("caun.1", c1 + 2 * c1, c, 3, 2, kActGain, 0.0, rng);
  add_conv("caun.2", c + 2 * c2 + 4, c, 3, 1, kActGain, 0.0, rng);
  add_conv("caun.head", c, 2 * (kKernelChannelsX2 + kKernelChannelsX4), 1, 1, kHeadGain, 0.0, rng);

  add_conv("sn.e0", 6 + 2 * c0, u0, 3, 1, kActGain, 0.0, rng);
  add_conv("sn.down1", u0, u1, 3, 2, kActGain, 0.0, rng);
  add_conv("sn.e1", u1 + 2 * c1, u1, 3, 1, kActGain, 0.0, rng);
  add_conv("sn.down2", u1, u2, 3, 2, kActGain, 0.0, rng);
  add_conv("sn.e2", u2 + 2 * c2, u2, 3, 1, kActGain, 0.0, rng);
  add_conv("sn.d1", u2 + u1, u1, 3, 1, kActGain, 0.0, rng);
  add_conv("sn.d0", u1 + u0, u0, 3, 1, kActGain, 0.0, rng);
  add_conv("sn.head", u0, 4, 3, 1, kHeadGain, 0.0, rng);

  reads_.assign(params_.size(), 0);
}

const PyramidNet::ConvSpec& PyramidNet::spec(const std::string& name) const {
  for (const auto& [n, c] : convs_) {
    if (n == name) return c;
  }
  throw std::logic_error("PyramidNet: unknown layer " + name);
}

void PyramidNet::reset_parameter_reads() const { std::ranges::fill(reads_, 0); }

Var PyramidNet::conv(Graph& g, const ConvSpec& c, Var x) const {
  ++reads_[c.weight];
  ++reads_[c.bias];
  return ag::conv2d(x, g.parameter(params_, c.weight), g.parameter(params_, c.bias), c.stride, c.pad);
}

Var PyramidNet::conv_act(Graph& g, const ConvSpec& c, Var x) const { return ag::silu(conv(g, c, x)); }

// -- feature extraction ----------------------------------------------------------

namespace {

void require_divisible(const Tensor& img, int d, const char* what) {
  if (img.height() % d != 0 || img.width() % d != 0) {
    throw std::invalid_argument(std::string(what) + ": image " + img.shape_string() +
                                " must have sides divisible by " + std::to_string(d));
  }
}

}  // namespace

Var PyramidNet::extract_motion_features(Graph& g, Var image) const {
  require_channels(image.value(), 3, "extract_motion_features");
  require_divisible(image.value(), 4, "extract_motion_features");
  Var x = conv_act(g, spec("mfe.0"), image);
  x = conv_act(g, spec("mfe.1"), x);
  return conv(g, spec("mfe.2"), x);
}

std::array<Var, 3> PyramidNet::extract_context_features(Graph& g, Var image) const {
  require_channels(image.value(), 3, "extract_context_features");
  require_divisible(image.value(), 4, "extract_context_features");
  Var f0 = conv_act(g, spec("cfe.0"), image);
  Var f1 = conv_act(g, spec("cfe.1"), f0);
  Var f2 = conv_act(g, spec("cfe.2"), f1);
  return {f0, f1, f2};
}

EncodedFrame PyramidNet::encode(Graph& g, const Tensor& image, int levels) const {
  require_divisible(image, required_divisor(levels), "encode");
  EncodedFrame out;
  Tensor level = image;
  for (int l = 0; l < levels; ++l) {
    if (l > 0) level = sampling::resize(level, level.height() / 2, level.width() / 2);
    Var img = g.constant(level);
    out.pyramid.push_back(img);
    out.features.push_back({extract_motion_features(g, img), extract_context_features(g, img)});
  }
  return out;
}

// -- BiMFN -------------------------------------------------------------------------

std::pair<Var, Var> PyramidNet::embed_bim(Graph& g, const BiMField& bim) const {
  Tensor ratio = bim.tensor().slice_channels(0, 1);
  Var fr = conv(g, spec("dem.1"), conv_act(g, spec("dem.0"), g.constant(std::move(ratio))));
  if (config_.descriptor == DescriptorMode::kTimeIndex) {
    return {fr, g.constant(Tensor(config_.base_channels, bim.height(), bim.width(), 1.0))};
  }
  Tensor trig(2, bim.height(), bim.width());
  const auto phi = bim.tensor().plane(1);
  for (std::size_t i = 0; i < phi.size(); ++i) {
    trig.plane(0)[i] = std::sin(phi[i]);
    trig.plane(1)[i] = std::cos(phi[i]);
  }
  Var fphi = conv(g, spec("aem.1"), conv_act(g, spec("aem.0"), g.constant(std::move(trig))));
  return {fr, fphi};
}

Var PyramidNet::bim_mconv(Graph& g, Var fv, Var fr, Var fphi) const {
  require_same_shape(fv.value(), fr.value(), "bim_mconv(F_R)");
  require_same_shape(fv.value(), fphi.value(), "bim_mconv(F_Phi)");
  return conv(g, spec("mconv"), ag::mul(ag::mul(fv, fr), fphi));
}

BimfnOutput PyramidNet::bimfn_forward(Graph& g, Var motion_a, Var motion_b, const RecurrentInput& prev,
                                      const BiMField& bim) const {
  require_same_shape(motion_a.value(), motion_b.value(), "bimfn_forward");
  const int h = motion_a.height();
  const int w = motion_a.width();
  if (bim.height() != h || bim.width() != w) {
    throw std::invalid_argument("bimfn_forward: BiM " + bim.tensor().shape_string() +
                                " does not match feature resolution " + motion_a.value().shape_string());
  }
  BimfnOutput out;
  Var mask_down;
  if (prev.flows.to_prev.valid()) {
    out.prior.to_prev = ag::resample_flow(prev.flows.to_prev, 0.5);
    out.prior.to_next = ag::resample_flow(prev.flows.to_next, 0.5);
    mask_down = ag::resize(prev.mask_logits, h, w);
    if (out.prior.to_prev.height() != h || out.prior.to_prev.width() != w) {
      throw std::invalid_argument("bimfn_forward: previous flows do not match this level");
    }
  } else {
    out.prior.to_prev = g.constant(Tensor(2, h, w));
    out.prior.to_next = g.constant(Tensor(2, h, w));
    mask_down = g.constant(Tensor(1, h, w));
  }

  Var fa = ag::warp(motion_a, out.prior.to_prev);
  Var fb = ag::warp(motion_b, out.prior.to_next);
  Var cost_ab = ag::cost_volume(fa, fb, config_.cost_radius);
  Var cost_ba = ag::cost_volume(fb, fa, config_.cost_radius);
  Var mask_code = conv_act(g, spec("bimfn.mask"), mask_down);

  Var x = ag::concat({fa, fb, cost_ab, cost_ba, mask_code});
  x = conv_act(g, spec("bimfn.trunk.0"), x);
  for (int i = 1; i < config_.trunk_depth; ++i) {
    x = ag::add(x, conv_act(g, spec("bimfn.trunk." + std::to_string(i)), x));
  }
  const auto [fr, fphi] = embed_bim(g, bim);
  Var res = bim_mconv(g, x, fr, fphi);
  out.residual.to_prev = ag::slice_channels(res, 0, 2);
  out.residual.to_next = ag::slice_channels(res, 2, 2);
  out.flows.to_prev = ag::add(out.prior.to_prev, out.residual.to_prev);
  out.flows.to_next = ag::add(out.prior.to_next, out.residual.to_next);
  return out;
}

// -- CAUN --------------------------------------------------------------------------

CaunOutput PyramidNet::caun_forward(Graph& g, const FlowPairVar& flows, const std::array<Var, 3>& ctx_a,
                                    const std::array<Var, 3>& ctx_b) const {
  require_same_spatial(flows.to_prev.value(), ctx_a[2].value(), "caun_forward");
  CaunOutput out;
  out.coarse = flows;
  const Var up2_a = ag::resample_flow(flows.to_prev, 2.0);
  const Var up2_b = ag::resample_flow(flows.to_next, 2.0);
  const Var up4_a = ag::resample_flow(flows.to_prev, 4.0);
  const Var up4_b = ag::resample_flow(flows.to_next, 4.0);

  Var x0 = ag::concat({ag::warp(ctx_a[0], up4_a), ag::warp(ctx_b[0], up4_b)});
  Var x1 = conv_act(g, spec("caun.0"), x0);
  x1 = ag::concat({x1, ag::warp(ctx_a[1], up2_a), ag::warp(ctx_b[1], up2_b)});
  Var x2 = conv_act(g, spec("caun.1"), x1);
  x2 = ag::concat({x2, ag::warp(ctx_a[2], flows.to_prev), ag::warp(ctx_b[2], flows.to_next),
                   flows.to_prev, flows.to_next});
  x2 = conv_act(g, spec("caun.2"), x2);
  Var logits = conv(g, spec("caun.head"), x2);

  int offset = 0;
  for (int d = 0; d < 2; ++d) {
    out.kernels_x2[d] = ag::softmax_groups9(ag::slice_channels(logits, offset, kKernelChannelsX2));
    offset += kKernelChannelsX2;
  }
  for (int d = 0; d < 2; ++d) {
    out.kernels_x4[d] = ag::softmax_groups9(ag::slice_channels(logits, offset, kKernelChannelsX4));
    offset += kKernelChannelsX4;
  }
  out.mid.to_prev = ag::convex_upsample(flows.to_prev, out.kernels_x2[0], 2);
  out.mid.to_next = ag::convex_upsample(flows.to_next, out.kernels_x2[1], 2);
  out.fine.to_prev = ag::convex_upsample(flows.to_prev, out.kernels_x4[0], 4);
  out.fine.to_next = ag::convex_upsample(flows.to_next, out.kernels_x4[1], 4);
  return out;
}

// -- synthesis ---------------------------------------------------------------------

SynthesisOutput PyramidNet::synthesis_forward(Graph& g, Var image_a, Var image_b, const CaunOutput& f,
                                              const std::array<Var, 3>& ctx_a,
                                              const std::array<Var, 3>& ctx_b) const {
  require_same_spatial(image_a.value(), f.fine.to_prev.value(), "synthesis_forward");
  const Var warped_a = ag::warp(image_a, f.fine.to_prev);
  const Var warped_b = ag::warp(image_b, f.fine.to_next);

  Var e0 = conv_act(g, spec("sn.e0"), ag::concat({warped_a, warped_b, ag::warp(ctx_a[0], f.fine.to_prev),
                                                  ag::warp(ctx_b[0], f.fine.to_next)}));
  Var e1 = conv_act(g, spec("sn.down1"), e0);
  e1 = conv_act(g, spec("sn.e1"),
                ag::concat({e1, ag::warp(ctx_a[1], f.mid.to_prev), ag::warp(ctx_b[1], f.mid.to_next)}));
  Var e2 = conv_act(g, spec("sn.down2"), e1);
  e2 = conv_act(g, spec("sn.e2"),
                ag::concat({e2, ag::warp(ctx_a[2], f.coarse.to_prev), ag::warp(ctx_b[2], f.coarse.to_next)}));
  Var d1 = conv_act(g, spec("sn.d1"), ag::concat({ag::resize(e2, e1.height(), e1.width()), e1}));
  Var d0 = conv_act(g, spec("sn.d0"), ag::concat({ag::resize(d1, e0.height(), e0.width()), e0}));
  Var head = conv(g, spec("sn.head"), d0);

  SynthesisOutput out;
  out.mask_logits = ag::slice_channels(head, 0, 1);
  out.residual_image = ag::slice_channels(head, 1, 3);
  out.image = ag::add(ag::sigmoid_blend(warped_a, warped_b, out.mask_logits), out.residual_image);
  return out;
}

// -- recurrent controller ------------------------------------------------------------

std::vector<LevelState> PyramidNet::pyramid_forward(Graph& g, const EncodedFrame& a, const EncodedFrame& b,
                                                    const BimProvider& bim, int levels) const {
  if (levels < 1 || static_cast<int>(a.features.size()) < levels ||
      static_cast<int>(b.features.size()) < levels) {
    throw std::invalid_argument("pyramid_forward: frames were encoded with fewer levels than requested");
  }
  std::vector<LevelState> states(levels);
  RecurrentInput prev;
  for (int l = levels - 1; l >= 0; --l) {
    const FeatureSet& fa = a.features[l];
    const FeatureSet& fb = b.features[l];
    LevelState& s = states[l];
    s.level = l;
    s.bimfn = bimfn_forward(g, fa.motion, fb.motion, prev, bim(l, fa.motion.width(), fa.motion.height()));
    s.caun = caun_forward(g, s.bimfn.flows, fa.context, fb.context);
    s.synthesis = synthesis_forward(g, a.pyramid[l], b.pyramid[l], s.caun, fa.context, fb.context);
    prev.flows = s.caun.fine;
    prev.mask_logits = s.synthesis.mask_logits;
  }
  return states;
}

namespace ag {

Var sigmoid_blend(Var a, Var b, Var m) {
  Graph& g = *a.graph();
  require_same_shape(a.value(), b.value(), "sigmoid_blend");
  require_same_spatial(a.value(), m.value(), "sigmoid_blend(mask)");
  require_channels(m.value(), 1, "sigmoid_blend(mask)");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const auto mv = m.value().plane(0);
  Tensor out(av.channels(), av.height(), av.width());
  const std::size_t plane = av.plane_size();
  for (int c = 0; c < av.channels(); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-mv[i]));
      const std::size_t k = c * plane + i;
      out[k] = av[k] * s + bv[k] * (1.0 - s);
    }
  }
  const int ia = a.id(), ib = b.id(), im = m.id();
  const Var ins[] = {a, b, m};
  return g.make(std::move(out), ins, [ia, ib, im](Graph& gr, const Tensor& go) {
    const Tensor& av = gr.value(ia);
    const Tensor& bv = gr.value(ib);
    const auto mv = gr.value(im).plane(0);
    Tensor* ga = gr.requires_grad(ia) ? &gr.grad_of(ia) : nullptr;
    Tensor* gb = gr.requires_grad(ib) ? &gr.grad_of(ib) : nullptr;
    Tensor* gm = gr.requires_grad(im) ? &gr.grad_of(im) : nullptr;
    const std::size_t plane = av.plane_size();
    for (int c = 0; c < av.channels(); ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-mv[i]));
        const std::size_t k = c * plane + i;
        if (ga) (*ga)[k] += go[k] * s;
        if (gb) (*gb)[k] += go[k] * (1.0 - s);
        if (gm) (*gm)[i] += go[k] * (av[k] - bv[k]) * s * (1.0 - s);
      }
    }
  });
}

}  // namespace ag
}  // namespace bimvfi
