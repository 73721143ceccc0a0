#include "bimvfi/kdvcf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace bimvfi {

using ag::Graph;
using ag::Var;

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (!(lr_init > 0.0)) throw std::invalid_argument("TrainConfig: lr_init must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (levels < 1) throw std::invalid_argument("TrainConfig: levels must be >= 1");
  if (log_every < 1) throw std::invalid_argument("TrainConfig: log_every must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 0");
  const int d = required_divisor(levels);
  if (crop < d || crop % d != 0) {
    throw std::invalid_argument("TrainConfig: crop " + std::to_string(crop) + " must be a multiple of " +
                                std::to_string(d) + " for " + std::to_string(levels) + " levels");
  }
  weights.validate();
  model.validate();
}

void TripletBatch::validate() const {
  require_same_shape(i0.tensor(), it.tensor(), "TripletBatch(It)");
  require_same_shape(i0.tensor(), i1.tensor(), "TripletBatch(I1)");
  if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("TripletBatch: t must lie in (0, 1)");
  if (flow_to_prev) require_same_spatial(i0.tensor(), flow_to_prev->tensor(), "TripletBatch(flow)");
  if (flow_to_next) require_same_spatial(i0.tensor(), flow_to_next->tensor(), "TripletBatch(flow)");
  if (bim) require_same_spatial(i0.tensor(), bim->tensor(), "TripletBatch(bim)");
  if (valid) require_same_spatial(i0.tensor(), *valid, "TripletBatch(valid)");
}

// -- processes ---------------------------------------------------------------------

EncodedTriplet encode_triplet(Graph& g, const PyramidNet& net, const TripletBatch& b, int levels) {
  b.validate();
  return {net.encode(g, b.i0.tensor(), levels), net.encode(g, b.it.tensor(), levels),
          net.encode(g, b.i1.tensor(), levels)};
}

std::vector<TeacherLevel> teacher_pass(Graph& g, const PyramidNet& net, const EncodedTriplet& enc, int levels,
                                       Rng& rng) {
  if (static_cast<int>(enc.it.features.size()) < levels) {
    throw std::invalid_argument("teacher_pass: frames were encoded with fewer levels than requested");
  }
  std::vector<TeacherLevel> out(levels);
  for (int l = levels - 1; l >= 0; --l) {
    const FeatureSet& f0 = enc.i0.features[l];
    const FeatureSet& ft = enc.it.features[l];
    const FeatureSet& f1 = enc.i1.features[l];
    const int w = ft.motion.width();
    const int h = ft.motion.height();

    RecurrentInput first;
    RecurrentInput second;
    if (l + 1 < levels) {
      const TeacherLevel& prev = out[l + 1];
      first = {{prev.flows.to_prev, prev.self_flows.to_prev}, prev.mask_logits};
      second = {{prev.self_flows.to_next, prev.flows.to_next}, prev.mask_logits};
    }
    const BimfnOutput a = net.bimfn_forward(g, f0.motion, ft.motion, first, teacher_bim(TeacherPair::kFirst, w, h, rng));
    const BimfnOutput b =
        net.bimfn_forward(g, ft.motion, f1.motion, second, teacher_bim(TeacherPair::kSecond, w, h, rng));

    TeacherLevel& s = out[l];
    s.coarse = {a.flows.to_prev, b.flows.to_next};
    const CaunOutput caun = net.caun_forward(g, s.coarse, f0.context, f1.context);
    const SynthesisOutput syn =
        net.synthesis_forward(g, enc.i0.pyramid[l], enc.i1.pyramid[l], caun, f0.context, f1.context);
    s.flows = caun.fine;
    s.self_flows = {ag::resample_flow(a.flows.to_next, 4.0), ag::resample_flow(b.flows.to_prev, 4.0)};
    s.mask_logits = syn.mask_logits;
    s.image = syn.image;
  }
  return out;
}

std::vector<BiMField> build_student_bim(std::span<const TeacherLevel> teacher, double eps, Rng& rng) {
  std::vector<BiMField> out;
  out.reserve(teacher.size());
  for (const TeacherLevel& l : teacher) {
    out.push_back(bim_from_flows(FlowField(l.coarse.to_prev.value()), FlowField(l.coarse.to_next.value()), eps, rng));
  }
  return out;
}

std::vector<LevelState> student_pass(Graph& g, const PyramidNet& net, const EncodedFrame& i0,
                                     const EncodedFrame& i1, std::span<const BiMField> bim, int levels) {
  if (static_cast<int>(bim.size()) < levels) {
    throw std::invalid_argument("student_pass: need one BiM per level");
  }
  return net.pyramid_forward(
      g, i0, i1,
      [bim](int level, int w, int h) {
        const BiMField& f = bim[level];
        if (f.width() != w || f.height() != h) {
          throw std::invalid_argument("student_pass: BiM " + f.tensor().shape_string() +
                                      " does not match level " + std::to_string(level));
        }
        return f;
      },
      levels);
}

Frame interpolate_with(const PyramidNet& net, const Frame& i0, const Frame& i1, const BimProvider& bim,
                       int levels) {
  require_same_shape(i0.tensor(), i1.tensor(), "interpolate");
  Graph g;
  const EncodedFrame e0 = net.encode(g, i0.tensor(), levels);
  const EncodedFrame e1 = net.encode(g, i1.tensor(), levels);
  const auto states = net.pyramid_forward(g, e0, e1, bim, levels);
  Tensor img = states[0].synthesis.image.value();
  for (auto& v : img.values()) v = std::clamp(v, 0.0, 1.0);
  return Frame(std::move(img));
}

Frame interpolate(const PyramidNet& net, const Frame& i0, const Frame& i1, double t, int levels,
                  FlowField* to_prev, FlowField* to_next) {
  require_same_shape(i0.tensor(), i1.tensor(), "interpolate");
  Graph g;
  const EncodedFrame e0 = net.encode(g, i0.tensor(), levels);
  const EncodedFrame e1 = net.encode(g, i1.tensor(), levels);
  const auto states =
      net.pyramid_forward(g, e0, e1, [t](int, int w, int h) { return uniform_bim(t, w, h); }, levels);
  if (to_prev) *to_prev = FlowField(states[0].flows().to_prev.value());
  if (to_next) *to_next = FlowField(states[0].flows().to_next.value());
  Tensor img = states[0].synthesis.image.value();
  for (auto& v : img.values()) v = std::clamp(v, 0.0, 1.0);
  return Frame(std::move(img));
}

// -- optimiser -------------------------------------------------------------------------

AdamW::AdamW(const ParamStore& params, double wd)
    : weight_decay(wd), m_(params.zeros_like()), v_(params.zeros_like()) {}

void AdamW::apply(ParamStore& params, std::span<const Tensor> grads, double lr) {
  if (static_cast<int>(grads.size()) != params.size() || static_cast<int>(m_.size()) != params.size()) {
    throw std::invalid_argument("AdamW: gradient/moment count does not match the parameters");
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
  for (int i = 0; i < params.size(); ++i) {
    Tensor& p = params.value(i);
    const Tensor& gr = grads[i];
    require_same_shape(p, gr, "AdamW");
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] -= lr * weight_decay * p[k];
      m[k] = beta1 * m[k] + (1.0 - beta1) * gr[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * gr[k] * gr[k];
      p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
    }
  }
}

TrainState::TrainState(const TrainConfig& config)
    : net(config.model, config.seed),
      optimizer(net.params(), config.weight_decay),
      rng(config.seed ^ 0x9e3779b97f4a7c15ULL),
      step(0) {}

TrainState::TrainState(PyramidNet n, AdamW opt, Rng r, int s)
    : net(std::move(n)), optimizer(std::move(opt)), rng(r), step(s) {}

double lr_schedule(int step, int total_steps, double lr_init) {
  if (total_steps < 1) throw std::invalid_argument("lr_schedule: total_steps must be >= 1");
  if (step < 0 || step > total_steps) throw std::invalid_argument("lr_schedule: step outside [0, total_steps]");
  if (step == total_steps) return 0.0;
  return lr_init * 0.5 * (1.0 + std::cos(std::numbers::pi * step / total_steps));
}

// -- losses --------------------------------------------------------------------------------

const char* LossReport::term_name(int i) {
  static constexpr const char* kNames[kTerms] = {"char_teacher", "census_teacher", "smooth", "reg",
                                                 "char_student", "census_student", "distill", "total"};
  return kNames[i];
}

double LossReport::term(int i) const { return const_cast<LossReport*>(this)->term(i); }

double& LossReport::term(int i) {
  switch (i) {
    case 0: return char_teacher;
    case 1: return census_teacher;
    case 2: return smooth;
    case 3: return reg;
    case 4: return char_student;
    case 5: return census_student;
    case 6: return distill;
    case 7: return total;
    default: throw std::out_of_range("LossReport: term index");
  }
}

namespace {

// Adds w * term to `sum` and the weighted value to `report`; zero weights skip the term.
template <typename Fn>
void add_term(std::vector<Var>& sum, double& report, double w, double level_gamma, Fn make) {
  if (w == 0.0) return;
  Var v = ag::scale(make(), w);
  report += level_gamma * v.value()[0];
  sum.push_back(v);
}

Var sum_or_zero(Graph& g, const std::vector<Var>& terms) {
  if (terms.empty()) return g.constant(Tensor(1, 1, 1));
  return ag::add_scalars(terms);
}

}  // namespace

SampleLoss sample_loss(Graph& g, const PyramidNet& net, const TripletBatch& b, const TrainConfig& config,
                       Rng& rng) {
  const int levels = config.levels;
  const LossWeights& w = config.weights;
  const EncodedTriplet enc = encode_triplet(g, net, b, levels);
  const std::vector<TeacherLevel> teacher = teacher_pass(g, net, enc, levels, rng);

  std::vector<BiMField> bim;
  if (net.config().descriptor == DescriptorMode::kBiM) {
    bim = build_student_bim(teacher, kDefaultBimEps, rng);
  } else {
    for (const TeacherLevel& l : teacher) {
      bim.push_back(uniform_bim(b.t, l.coarse.to_prev.width(), l.coarse.to_prev.height()));
    }
  }
  const std::vector<LevelState> student = student_pass(g, net, enc.i0, enc.i1, bim, levels);

  SampleLoss out;
  std::vector<LevelLossTerms<Var>> terms;
  double gp = 1.0;
  double gf = 1.0;
  for (int l = 0; l < levels; ++l) {
    const Var target = enc.it.pyramid[l];
    const Tensor& target_img = target.value();
    const TeacherLevel& tl = teacher[l];
    const FlowPairVar& sf = student[l].flows();
    const Var student_img = student[l].synthesis.image;
    LossReport& r = out.report;

    std::vector<Var> pho_t, pho_s, flo_t, flo_s;
    add_term(pho_t, r.char_teacher, w.char_teacher, gp,
             [&] { return ag::charbonnier(tl.image, target, w.charbonnier_eps); });
    add_term(pho_t, r.census_teacher, w.census_teacher, gp,
             [&] { return ag::census(tl.image, target, w.census_patch); });
    add_term(flo_t, r.smooth, w.smooth, gf, [&] {
      return ag::add(ag::smoothness(tl.flows.to_prev, target_img, w.edge_lambda),
                     ag::smoothness(tl.flows.to_next, target_img, w.edge_lambda));
    });
    add_term(flo_t, r.reg, w.reg, gf, [&] {
      return ag::add(ag::zero_flow_reg(tl.self_flows.to_prev), ag::zero_flow_reg(tl.self_flows.to_next));
    });
    add_term(pho_s, r.char_student, w.char_student, gp,
             [&] { return ag::charbonnier(student_img, target, w.charbonnier_eps); });
    add_term(pho_s, r.census_student, w.census_student, gp,
             [&] { return ag::census(student_img, target, w.census_patch); });
    add_term(flo_s, r.distill, w.distill, gf,
             [&] { return ag::distillation(sf.to_prev, sf.to_next, tl.flows.to_prev, tl.flows.to_next); });

    terms.push_back({sum_or_zero(g, pho_t), sum_or_zero(g, pho_s), sum_or_zero(g, flo_t), sum_or_zero(g, flo_s)});
    gp *= w.gamma_pho;
    gf *= w.gamma_flo;
  }
  out.total = ag::total_loss(terms, w);
  out.report.total = out.total.value()[0];
  return out;
}

LossReport batch_gradients(const PyramidNet& net, std::span<const TripletBatch> batch, const TrainConfig& config,
                           Rng& rng, std::vector<Tensor>& grads) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  grads = net.params().zeros_like();
  LossReport mean;
  for (const TripletBatch& b : batch) {
    Graph g;
    const SampleLoss sl = sample_loss(g, net, b, config, rng);
    for (int i = 0; i < LossReport::kTerms; ++i) {
      if (!std::isfinite(sl.report.term(i))) throw NonFiniteLoss(LossReport::term_name(i));
      mean.term(i) += sl.report.term(i);
    }
    g.backward(sl.total);
    g.accumulate_parameter_grads(grads);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (int i = 0; i < LossReport::kTerms; ++i) mean.term(i) *= inv;
  for (Tensor& t : grads) t *= inv;
  for (const Tensor& t : grads) {
    if (!t.all_finite()) throw NonFiniteLoss("gradient");
  }
  return mean;
}

LossReport train_step(std::span<const TripletBatch> batch, TrainState& state, const TrainConfig& config) {
  std::vector<Tensor> grads;
  const LossReport r = batch_gradients(state.net, batch, config, state.rng, grads);
  state.optimizer.weight_decay = config.weight_decay;
  state.optimizer.apply(state.net.params(), grads, lr_schedule(state.step, config.steps, config.lr_init));
  ++state.step;
  return r;
}

std::vector<TripletBatch> draw_batch(std::span<const TripletBatch> data, Rng& rng, const TrainConfig& config) {
  if (data.empty()) throw std::invalid_argument("draw_batch: empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<TripletBatch> batch;
  batch.reserve(config.batch_size);
  for (int i = 0; i < config.batch_size; ++i) {
    const TripletBatch& b = data[pick(rng)];
    if (config.augment) {
      batch.push_back(augment_triplet(b, rng, config.crop));
    } else if (b.i0.height() == config.crop && b.i0.width() == config.crop) {
      batch.push_back(b);
    } else {
      if (b.i0.height() < config.crop || b.i0.width() < config.crop) {
        throw std::invalid_argument("draw_batch: frame smaller than the crop");
      }
      batch.push_back(
          crop_triplet(b, (b.i0.height() - config.crop) / 2, (b.i0.width() - config.crop) / 2, config.crop));
    }
  }
  return batch;
}

void train(std::span<const TripletBatch> data, TrainState& state, const TrainConfig& config,
           const StepHook& on_step) {
  config.validate();
  while (state.step < config.steps) {
    const std::vector<TripletBatch> batch = draw_batch(data, state.rng, config);
    const LossReport r = train_step(batch, state, config);
    if (on_step) on_step(state.step, r);
  }
}

// -- augmentation ------------------------------------------------------------------------

namespace {

// Pulls every output pixel (y, x) from source pixel src(y, x).
template <typename Src>
Tensor remap(const Tensor& t, int out_h, int out_w, Src src) {
  Tensor out(t.channels(), out_h, out_w);
  for (int c = 0; c < t.channels(); ++c) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        const auto [sy, sx] = src(y, x);
        out.at(c, y, x) = t.at(c, sy, sx);
      }
    }
  }
  return out;
}

// Geometric transform of a whole triplet. Flow vectors map through the 2x2
// matrix (a b; c d); `mirrors` flips the orientation of the BiM angle.
template <typename Src>
TripletBatch transform(const TripletBatch& b, int out_h, int out_w, Src src, double a, double bb, double c,
                       double d, bool mirrors) {
  TripletBatch o;
  o.t = b.t;
  o.i0 = Frame(remap(b.i0.tensor(), out_h, out_w, src));
  o.it = Frame(remap(b.it.tensor(), out_h, out_w, src));
  o.i1 = Frame(remap(b.i1.tensor(), out_h, out_w, src));
  auto map_flow = [&](const FlowField& f) {
    Tensor r = remap(f.tensor(), out_h, out_w, src);
    for (std::size_t i = 0; i < r.plane_size(); ++i) {
      const double u = r.plane(0)[i];
      const double v = r.plane(1)[i];
      r.plane(0)[i] = a * u + bb * v;
      r.plane(1)[i] = c * u + d * v;
    }
    return FlowField(std::move(r));
  };
  if (b.flow_to_prev) o.flow_to_prev = map_flow(*b.flow_to_prev);
  if (b.flow_to_next) o.flow_to_next = map_flow(*b.flow_to_next);
  if (b.bim) {
    Tensor r = remap(b.bim->tensor(), out_h, out_w, src);
    if (mirrors) {
      for (double& phi : r.plane(1)) phi = canonical_angle(-phi);
    }
    o.bim = BiMField(std::move(r));
  }
  if (b.valid) o.valid = remap(*b.valid, out_h, out_w, src);
  return o;
}

}  // namespace

TripletBatch crop_triplet(const TripletBatch& b, int y, int x, int size) {
  const int h = b.i0.height();
  const int w = b.i0.width();
  if (size < 1 || y < 0 || x < 0 || y + size > h || x + size > w) {
    throw std::invalid_argument("crop_triplet: " + std::to_string(size) + "px crop at (" + std::to_string(x) + ", " +
                                std::to_string(y) + ") does not fit " + std::to_string(w) + "x" + std::to_string(h));
  }
  return transform(
      b, size, size, [y, x](int yy, int xx) { return std::pair{yy + y, xx + x}; }, 1, 0, 0, 1, false);
}

TripletBatch flip_horizontal(const TripletBatch& b) {
  const int w = b.i0.width();
  return transform(
      b, b.i0.height(), w, [w](int y, int x) { return std::pair{y, w - 1 - x}; }, -1, 0, 0, 1, true);
}

TripletBatch flip_vertical(const TripletBatch& b) {
  const int h = b.i0.height();
  return transform(
      b, h, b.i0.width(), [h](int y, int x) { return std::pair{h - 1 - y, x}; }, 1, 0, 0, -1, true);
}

TripletBatch rotate90(const TripletBatch& b, int quarter_turns) {
  TripletBatch out = b;
  for (int k = 0; k < ((quarter_turns % 4) + 4) % 4; ++k) {
    const int h = out.i0.height();
    // Source pixel (x, y) lands at (h - 1 - y, x), so (u, v) becomes (-v, u).
    out = transform(
        out, out.i0.width(), h, [h](int y, int x) { return std::pair{h - 1 - x, y}; }, 0, -1, 1, 0, false);
  }
  return out;
}

TripletBatch reverse_time(const TripletBatch& b) {
  TripletBatch o = b;
  std::swap(o.i0, o.i1);
  std::swap(o.flow_to_prev, o.flow_to_next);
  o.t = 1.0 - b.t;
  if (o.bim) {
    for (double& r : o.bim->tensor().plane(0)) r = 1.0 - r;
    for (double& phi : o.bim->tensor().plane(1)) phi = canonical_angle(-phi);
  }
  return o;
}

TripletBatch permute_channels(const TripletBatch& b, std::array<int, 3> perm) {
  std::array<int, 3> sorted = perm;
  std::ranges::sort(sorted);
  if (sorted != std::array<int, 3>{0, 1, 2}) throw std::invalid_argument("permute_channels: not a permutation");
  TripletBatch o = b;
  for (Frame* f : {&o.i0, &o.it, &o.i1}) {
    const Tensor src = f->tensor();
    for (int c = 0; c < 3; ++c) std::ranges::copy(src.plane(perm[c]), f->tensor().plane(c).begin());
  }
  return o;
}

TripletBatch augment_triplet(const TripletBatch& b, Rng& rng, int crop) {
  b.validate();
  if (crop > b.i0.height() || crop > b.i0.width()) {
    throw std::invalid_argument("augment_triplet: crop larger than the frame");
  }
  std::uniform_int_distribution<int> ys(0, b.i0.height() - crop);
  std::uniform_int_distribution<int> xs(0, b.i0.width() - crop);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> turns(0, 3);
  const int y = ys(rng);
  const int x = xs(rng);
  TripletBatch o = crop_triplet(b, y, x, crop);
  if (coin(rng)) o = flip_horizontal(o);
  if (coin(rng)) o = flip_vertical(o);
  o = rotate90(o, turns(rng));
  if (coin(rng)) o = reverse_time(o);
  std::array<int, 3> perm{0, 1, 2};
  std::shuffle(perm.begin(), perm.end(), rng);
  return permute_channels(o, perm);
}

}  // namespace bimvfi
