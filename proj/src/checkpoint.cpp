#include "bimvfi/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bimvfi/config.hpp"

namespace bimvfi {

namespace {

constexpr char kMagic[8] = {'B', 'I', 'M', 'V', 'F', 'I', '0', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const Tensor& t) {
    pod<std::int32_t>(t.channels());
    pod<std::int32_t>(t.height());
    pod<std::int32_t>(t.width());
    out_.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ULL << 30)) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    check();
    return s;
  }
  Tensor tensor() {
    const auto c = pod<std::int32_t>();
    const auto h = pod<std::int32_t>();
    const auto w = pod<std::int32_t>();
    if (c < 0 || h < 0 || w < 0) fail("negative tensor dimension");
    Tensor t(c, h, w);
    in_.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    check();
    return t;
  }
  [[noreturn]] void fail(const std::string& what) const { throw std::runtime_error(path_ + ": " + what); }

 private:
  void check() const {
    if (!in_) fail("truncated checkpoint");
  }
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const PyramidNet& net,
                     const TrainState* state) {
  if (!(net.config() == config.model)) {
    throw std::invalid_argument("save_checkpoint: network and training config disagree on the model");
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    Writer w(out);
    out.write(kMagic, sizeof(kMagic));
    w.pod(kVersion);
    w.str(to_json(config).dump());
    const ParamStore& p = net.params();
    w.pod<std::uint32_t>(p.size());
    for (int i = 0; i < p.size(); ++i) {
      w.str(p.name(i));
      w.tensor(p.value(i));
    }
    w.pod<std::uint8_t>(state ? 1 : 0);
    if (state) {
      AdamW opt = state->optimizer;
      w.pod<std::int32_t>(state->step);
      w.pod<std::int64_t>(opt.steps_taken());
      for (const Tensor& t : opt.first_moment()) w.tensor(t);
      for (const Tensor& t : opt.second_moment()) w.tensor(t);
      std::ostringstream rng;
      rng << state->rng;
      w.str(rng.str());
    }
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("not a checkpoint (bad magic)");
  if (const auto v = r.pod<std::uint32_t>(); v != kVersion) r.fail("unsupported version " + std::to_string(v));
  Checkpoint c;
  try {
    c.config = train_config_from_json(Json::parse(r.str()));
  } catch (const std::exception& e) {
    r.fail(std::string("bad embedded config: ") + e.what());
  }
  const auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    c.params.add(std::move(name), r.tensor());
  }
  if (r.pod<std::uint8_t>() != 0) {
    Checkpoint::Resume s;
    s.step = r.pod<std::int32_t>();
    s.optimizer_steps = r.pod<std::int64_t>();
    for (std::uint32_t i = 0; i < n; ++i) s.first_moment.push_back(r.tensor());
    for (std::uint32_t i = 0; i < n; ++i) s.second_moment.push_back(r.tensor());
    s.rng_state = r.str();
    c.resume = std::move(s);
  }
  return c;
}

PyramidNet network_from(const Checkpoint& c) { return PyramidNet(c.config.model, c.params); }

TrainState train_state_from(const Checkpoint& c) {
  if (!c.resume) throw std::invalid_argument("checkpoint carries no training state");
  PyramidNet net = network_from(c);
  AdamW opt(net.params(), c.config.weight_decay);
  for (int i = 0; i < net.params().size(); ++i) {
    require_same_shape(opt.first_moment()[i], c.resume->first_moment.at(i), "checkpoint moments");
    opt.first_moment()[i] = c.resume->first_moment[i];
    opt.second_moment()[i] = c.resume->second_moment.at(i);
  }
  opt.set_steps_taken(c.resume->optimizer_steps);
  Rng rng;
  std::istringstream is(c.resume->rng_state);
  is >> rng;
  if (!is) throw std::runtime_error("checkpoint: corrupt rng state");
  return TrainState(std::move(net), std::move(opt), rng, c.resume->step);
}

}  // namespace bimvfi
