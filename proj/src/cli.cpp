#include "bimvfi/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "bimvfi/checkpoint.hpp"
#include "bimvfi/metrics.hpp"

namespace bimvfi::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// Shortest text that reads back to the same double.
std::string exact(double v) {
  for (const char* p : {"%.15g", "%.16g"}) {
    const std::string s = fmt(p, v);
    if (std::strtod(s.c_str(), nullptr) == v) return s;
  }
  return fmt("%.17g", v);
}

std::ofstream open_for_writing(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw UserError("cannot write " + p.string());
  return out;
}

// Top-level keys of a run config file that are not part of a nested block.
void reject_unknown(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

TripletDataset open_dataset(const fs::path& root, std::ostream& log) {
  if (root.empty()) throw UserError("no dataset given (use --data or the config key \"data\")");
  if (!fs::is_directory(root)) throw UserError("dataset " + root.string() + " is not a directory");
  return load_triplet_dataset(root, ".png", -1, [&log](const std::string& m) { log << "warning: " << m << '\n'; });
}

}  // namespace

// -- synth ---------------------------------------------------------------------------------

void cmd_synth(const SynthOptions& opt, std::ostream& log) {
  if (opt.out.empty()) throw UserError("synth: --out is required");
  const std::vector<SynthItem> items = generate_synthetic_set(opt.config);
  fs::create_directories(opt.out);
  std::ofstream manifest = open_for_writing(opt.out / "manifest.txt");
  manifest << "# item t case d angle; size " << opt.config.size << ", seed " << opt.config.seed << '\n';
  for (std::size_t i = 0; i < items.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "item_%04zu", i);
    save_triplet(opt.out / name, items[i].batch);
    manifest << name << " t=" << exact(items[i].spec.t) << " case=" << static_cast<int>(items[i].motion_case)
             << " d=" << exact(items[i].spec.d) << " angle=" << exact(items[i].spec.angle) << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing the manifest");
  log << "wrote " << items.size() << " triplets to " << opt.out.string() << '\n';
}

// -- train ---------------------------------------------------------------------------------

void cmd_train(const TrainOptions& opt, std::ostream& log) {
  if (opt.out.empty()) throw UserError("train: --out is required");
  const TrainConfig& cfg = opt.config;
  cfg.validate();
  const std::vector<TripletBatch> data = open_dataset(opt.data, log).load_all();
  if (data.empty()) throw UserError("dataset " + opt.data.string() + " holds no usable triplets");
  for (const TripletBatch& b : data) {
    if (b.i0.height() < cfg.crop || b.i0.width() < cfg.crop) {
      throw UserError("crop " + std::to_string(cfg.crop) + " exceeds a " + b.i0.tensor().shape_string() + " frame");
    }
  }

  TrainState state = [&] {
    if (!opt.resume) return TrainState(cfg);
    const Checkpoint c = load_checkpoint(*opt.resume);
    if (!(c.config.model == cfg.model)) throw UserError("resume: checkpoint model differs from the configured model");
    return train_state_from(c);
  }();

  fs::create_directories(opt.out);
  {
    Json resolved = to_json(cfg);
    std::ofstream f = open_for_writing(opt.out / "config.json");
    f << Json{{"train", resolved}, {"data", opt.data.string()}, {"deterministic", opt.deterministic}}.dump(2)
      << '\n';
  }
  std::ofstream csv = open_for_writing(opt.out / "loss.csv");
  csv << "step,term,value\n";

  train(data, state, cfg, [&](int step, const LossReport& r) {
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      for (int i = 0; i < LossReport::kTerms; ++i) {
        csv << step << ',' << LossReport::term_name(i) << ',' << exact(r.term(i)) << '\n';
      }
      csv.flush();
      log << "step " << step << "/" << cfg.steps << " loss " << fmt("%.5f", r.total) << '\n';
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
      char name[40];
      std::snprintf(name, sizeof name, "checkpoint_%06d.ckpt", step);
      save_checkpoint(opt.out / name, cfg, state.net, &state);
    }
  });
  save_checkpoint(opt.out / "final.ckpt", cfg, state.net, &state);
  if (!csv) throw std::runtime_error("failed writing loss.csv");
  log << "saved " << (opt.out / "final.ckpt").string() << '\n';
}

// -- inference -------------------------------------------------------------------------------

Tensor reflect_pad(const Tensor& t, int top, int bottom, int left, int right) {
  if (top < 0 || bottom < 0 || left < 0 || right < 0) throw std::invalid_argument("reflect_pad: negative padding");
  const int h = t.height();
  const int w = t.width();
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
  };
  Tensor out(t.channels(), h + top + bottom, w + left + right);
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = t.at(c, mirror(y - top, h), mirror(x - left, w));
  return out;
}

Frame infer_frame(const PyramidNet& net, const Frame& i0, const Frame& i1, double t, int levels,
                  FlowField* to_prev, FlowField* to_next) {
  require_same_shape(i0.tensor(), i1.tensor(), "infer_frame");
  const int h = i0.height();
  const int w = i0.width();
  if (levels <= 0) levels = level_count_for_resolution(h, w);
  const int div = required_divisor(levels);
  const int ph = (div - h % div) % div;
  const int pw = (div - w % div) % div;
  if (ph == 0 && pw == 0) return interpolate(net, i0, i1, t, levels, to_prev, to_next);

  const int top = ph / 2, left = pw / 2;
  const Frame a(reflect_pad(i0.tensor(), top, ph - top, left, pw - left));
  const Frame b(reflect_pad(i1.tensor(), top, ph - top, left, pw - left));
  FlowField fp, fn;
  const Frame padded = interpolate(net, a, b, t, levels, &fp, &fn);
  auto crop = [&](const Tensor& x) {
    Tensor o(x.channels(), h, w);
    for (int c = 0; c < x.channels(); ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) o.at(c, y, xx) = x.at(c, y + top, xx + left);
    return o;
  };
  if (to_prev) *to_prev = FlowField(crop(fp.tensor()));
  if (to_next) *to_next = FlowField(crop(fn.tensor()));
  return Frame(crop(padded.tensor()));
}

std::vector<double> parse_times(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos) {
      throw UserError("--t: cannot parse '" + item + "'");
    }
    if (!(v >= 0.0 && v <= 1.0)) throw UserError("--t: " + item + " lies outside [0, 1]");
    out.push_back(v);
  }
  if (out.empty()) throw UserError("--t: no times given");
  return out;
}

std::vector<fs::path> cmd_infer(const InferOptions& opt, std::ostream& log) {
  if (opt.out.empty()) throw UserError("infer: --out is required");
  if (opt.checkpoint.empty() || opt.i0.empty() || opt.i1.empty()) {
    throw UserError("infer: --checkpoint, --i0 and --i1 are required");
  }
  const PyramidNet net = network_from(load_checkpoint(opt.checkpoint));
  const Frame i0 = read_png(opt.i0);
  const Frame i1 = read_png(opt.i1);
  if (!i0.tensor().same_shape(i1.tensor())) throw UserError("infer: input frames differ in size");
  fs::create_directories(opt.out);
  std::vector<fs::path> written;
  for (double t : opt.times) {
    FlowField fp, fn;
    const Frame img = infer_frame(net, i0, i1, t, opt.levels, &fp, &fn);
    const std::string tag = fmt("%.3f", t);
    double max_mag = 1.0;
    for (const FlowField* f : {&fp, &fn})
      for (int y = 0; y < f->height(); ++y)
        for (int x = 0; x < f->width(); ++x) max_mag = std::max(max_mag, std::hypot(f->u(y, x), f->v(y, x)));
    const fs::path frame = opt.out / ("frame_" + tag + ".png");
    write_png(frame, img);
    write_png(opt.out / ("flow_to_prev_" + tag + ".png"), flow_to_color(fp, max_mag));
    write_png(opt.out / ("flow_to_next_" + tag + ".png"), flow_to_color(fn, max_mag));
    written.push_back(frame);
    log << "t=" << tag << " -> " << frame.string() << '\n';
  }
  return written;
}

// -- eval ------------------------------------------------------------------------------------

std::vector<EvalRow> cmd_eval(const EvalOptions& opt, std::ostream& log) {
  if (opt.out.empty()) throw UserError("eval: --out is required");
  if (opt.checkpoint.empty()) throw UserError("eval: --checkpoint is required");
  const PyramidNet net = network_from(load_checkpoint(opt.checkpoint));
  const TripletDataset ds = open_dataset(opt.data, log);

  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::optional<TripletBatch> b = ds.load(i);
    if (!b) continue;
    FlowField fp, fn;
    const Frame img = infer_frame(net, b->i0, b->i1, b->t, opt.levels, &fp, &fn);
    EvalRow row;
    row.item = fs::relative(ds.item_dir(i), opt.data).string();
    row.t = b->t;
    row.psnr = psnr(img.tensor(), b->it.tensor());
    row.ssim = ssim(img.tensor(), b->it.tensor());
    if (b->flow_to_prev && b->flow_to_next) {
      const Tensor* mask = b->valid ? &*b->valid : nullptr;
      row.epe = 0.5 * (endpoint_error(fp, *b->flow_to_prev, mask) + endpoint_error(fn, *b->flow_to_next, mask));
    }
    rows.push_back(row);
  }

  std::ofstream csv = open_for_writing(opt.out);
  csv << "item,t,psnr,ssim,epe\n";
  double sp = 0.0, ss = 0.0, se = 0.0;
  int ne = 0;
  for (const EvalRow& r : rows) {
    csv << r.item << ',' << exact(r.t) << ',' << exact(r.psnr) << ',' << exact(r.ssim) << ','
        << (r.epe ? exact(*r.epe) : "") << '\n';
    sp += r.psnr;
    ss += r.ssim;
    if (r.epe) {
      se += *r.epe;
      ++ne;
    }
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    csv << "mean,," << exact(sp / n) << ',' << exact(ss / n) << ',' << (ne > 0 ? exact(se / ne) : "") << '\n';
    log << "items " << rows.size() << "  psnr " << fmt("%.3f", sp / n) << "  ssim " << fmt("%.4f", ss / n);
    if (ne > 0) log << "  epe " << fmt("%.3f", se / ne);
    log << '\n';
  } else {
    log << "dataset is empty\n";
  }
  if (!csv) throw std::runtime_error("failed writing " + opt.out.string());
  return rows;
}

// -- command line ------------------------------------------------------------------------------

namespace {

Json load_config(const std::string& path) { return path.empty() ? Json::object() : read_json_file(path); }

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bidirectional-motion video frame interpolation"};
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    std::string out;
  };
  auto add_common = [](CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "random seed (overrides the config)");
    sub->add_flag("--deterministic", c.deterministic, "bit-reproducible execution (always on; accepted for scripts)");
    sub->add_option("--out", c.out, "output directory or file");
  };

  Common synth_c, train_c, infer_c, eval_c;
  std::optional<int> synth_count;
  std::string train_data, train_resume;
  std::optional<int> train_steps;
  std::string infer_ckpt, infer_i0, infer_i1, infer_t;
  std::optional<int> infer_levels, eval_levels;
  std::string eval_ckpt, eval_data;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic triplet dataset");
  add_common(synth, synth_c);
  synth->add_option("--count", synth_count, "number of triplets");

  CLI::App* trn = app.add_subcommand("train", "train a model");
  add_common(trn, train_c);
  trn->add_option("--data", train_data, "dataset directory");
  trn->add_option("--resume", train_resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  trn->add_option("--steps", train_steps, "total optimisation steps");

  CLI::App* inf = app.add_subcommand("infer", "interpolate frames between two images");
  add_common(inf, infer_c);
  inf->add_option("--checkpoint", infer_ckpt, "trained checkpoint");
  inf->add_option("--i0", infer_i0, "first frame (PNG)");
  inf->add_option("--i1", infer_i1, "second frame (PNG)");
  inf->add_option("--t", infer_t, "comma-separated times in [0, 1]");
  inf->add_option("--levels", infer_levels, "pyramid levels (default: from the resolution)");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_common(ev, eval_c);
  ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint");
  ev->add_option("--data", eval_data, "dataset directory");
  ev->add_option("--levels", eval_levels, "pyramid levels (default: from the resolution)");

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << '\n';
      return kExitUser;
    }

    if (synth->parsed()) {
      SynthOptions o;
      o.config = synth_config_from_json(load_config(synth_c.config));
      if (synth_c.seed) o.config.seed = *synth_c.seed;
      if (synth_count) o.config.count = *synth_count;
      o.config.validate();
      o.out = synth_c.out;
      cmd_synth(o, out);
    } else if (trn->parsed()) {
      const Json j = load_config(train_c.config);
      reject_unknown(j, {"data", "resume", "train"}, "run config");
      TrainOptions o;
      o.config = j.contains("train") ? train_config_from_json(j.at("train")) : TrainConfig{};
      std::string data, resume;
      read_key(j, "data", data, "run config");
      read_key(j, "resume", resume, "run config");
      if (!train_data.empty()) data = train_data;
      if (!train_resume.empty()) resume = train_resume;
      if (train_c.seed) o.config.seed = *train_c.seed;
      if (train_steps) o.config.steps = *train_steps;
      try {
        o.config.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      o.data = data;
      if (!resume.empty()) o.resume = resume;
      o.out = train_c.out;
      o.deterministic = train_c.deterministic;
      cmd_train(o, out);
    } else if (inf->parsed()) {
      const Json j = load_config(infer_c.config);
      reject_unknown(j, {"checkpoint", "i0", "i1", "t", "levels"}, "infer config");
      InferOptions o;
      std::string ckpt, i0, i1, times;
      read_key(j, "checkpoint", ckpt, "infer config");
      read_key(j, "i0", i0, "infer config");
      read_key(j, "i1", i1, "infer config");
      read_key(j, "t", times, "infer config");
      read_key(j, "levels", o.levels, "infer config");
      if (!infer_ckpt.empty()) ckpt = infer_ckpt;
      if (!infer_i0.empty()) i0 = infer_i0;
      if (!infer_i1.empty()) i1 = infer_i1;
      if (!infer_t.empty()) times = infer_t;
      if (infer_levels) o.levels = *infer_levels;
      o.checkpoint = ckpt;
      o.i0 = i0;
      o.i1 = i1;
      if (!times.empty()) o.times = parse_times(times);
      o.out = infer_c.out;
      (void)cmd_infer(o, out);
    } else if (ev->parsed()) {
      const Json j = load_config(eval_c.config);
      reject_unknown(j, {"checkpoint", "data", "levels"}, "eval config");
      EvalOptions o;
      std::string ckpt, data;
      read_key(j, "checkpoint", ckpt, "eval config");
      read_key(j, "data", data, "eval config");
      read_key(j, "levels", o.levels, "eval config");
      if (!eval_ckpt.empty()) ckpt = eval_ckpt;
      if (!eval_data.empty()) data = eval_data;
      if (eval_levels) o.levels = *eval_levels;
      o.checkpoint = ckpt;
      o.data = data;
      o.out = eval_c.out;
      (void)cmd_eval(o, out);
    }
    return kExitOk;
  } catch (const NonFiniteLoss& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  } catch (const std::invalid_argument& e) {  // includes ConfigError
    err << "error: " << e.what() << '\n';
    return kExitUser;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUser;
  } catch (const std::runtime_error& e) {  // UserError and unreadable inputs
    err << "error: " << e.what() << '\n';
    return kExitUser;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace bimvfi::cli
