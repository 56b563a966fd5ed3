#include "gsc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gsc {

static_assert(std::endian::native == std::endian::little, "checkpoints are written on little-endian hosts");

namespace {

constexpr char kMagic[4] = {'G', 'S', 'C', 'K'};

class Writer {
 public:
  explicit Writer(bool single) : single_(single) {}

  template <typename T>
  void raw(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void u32(std::uint64_t v) {
    if (v > UINT32_MAX) throw std::length_error("checkpoint field exceeds 32 bits");
    raw(std::uint32_t(v));
  }
  template <typename Derived>
  void array(const Eigen::DenseBase<Derived>& a) {
    for (Index i = 0; i < a.size(); ++i) {
      const double v = double(a.derived().data()[i]);
      if (single_) raw(float(v));
      else raw(v);
    }
  }
  void zeros(Index n) {
    for (Index i = 0; i < n; ++i) {
      if (single_) raw(0.0f);
      else raw(0.0);
    }
  }
  std::string& bytes() { return out_; }

 private:
  bool single_;
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, bool single) : bytes_(bytes), single_(single) {}

  template <typename T>
  T raw() {
    if (pos_ + sizeof(T) > bytes_.size()) throw FormatError("checkpoint is truncated");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  template <typename Derived>
  void array(Eigen::DenseBase<Derived>& a) {
    for (Index i = 0; i < a.size(); ++i) a.derived().data()[i] = single_ ? double(raw<float>()) : raw<double>();
  }
  void set_single(bool s) { single_ = s; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  bool single_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename Scalar>
Checkpoint Checkpoint::from_state(const TrainState<Scalar>& state, const std::string& config_text) {
  Checkpoint c;
  c.params = state.params.template cast<double>();
  c.adam.first = state.adam.first.template cast<double>();
  c.adam.second = state.adam.second.template cast<double>();
  c.adam.step = state.adam.step;
  c.adam.hyper = state.adam.hyper;
  c.rng_state = state.rng_state;
  c.epoch = std::uint32_t(state.epoch);
  c.backtracks = std::uint32_t(state.backtracks);
  c.best_loss = state.best_loss;
  if (state.best)
    c.best = Snapshot<double>{state.best->params.template cast<double>(), state.best->first.template cast<double>(),
                              state.best->second.template cast<double>(), state.best->step};
  c.single_precision = std::is_same_v<Scalar, float>;
  c.config_text = config_text;
  return c;
}

template <typename Scalar>
TrainState<Scalar> Checkpoint::state() const {
  TrainState<Scalar> s;
  s.params = params.cast<Scalar>();
  s.adam.first = adam.first.cast<Scalar>();
  s.adam.second = adam.second.cast<Scalar>();
  s.adam.step = adam.step;
  s.adam.hyper = adam.hyper;
  if (s.adam.first.size() != s.params.size()) s.adam = AdamState<Scalar>(s.params.size());
  s.rng_state = rng_state;
  s.epoch = int(epoch);
  s.backtracks = int(backtracks);
  s.best_loss = best_loss;
  if (best)
    s.best = Snapshot<Scalar>{best->params.cast<Scalar>(), best->first.cast<Scalar>(), best->second.cast<Scalar>(),
                              best->step};
  return s;
}

std::string encode_checkpoint(const Checkpoint& c) {
  const ModelParams<double>& p = c.params;
  p.validate();
  Writer w(c.single_precision);
  w.bytes().append(kMagic, 4);
  w.raw(std::uint16_t(c.single_precision ? 1 : 2));
  w.u32(std::uint64_t(p.m()));
  w.u32(std::uint64_t(p.p()));
  w.u32(std::uint64_t(p.unroll()));
  w.u32(std::uint64_t(p.nu_raw.size()));
  w.u32(p.sigma_levels.size());
  w.u32(std::uint32_t(p.variant));
  w.u32(std::uint64_t(p.patch_side));
  w.u32(std::uint64_t(p.channels));
  w.array(p.D);
  w.array(p.C);
  w.array(p.W);
  w.array(p.lambda);
  w.array(p.kappa);
  w.array(p.nu_raw);
  for (const auto& l : p.blind_lambda) w.array(l);
  const Index n = p.size();
  if (c.adam.first.size() == n && c.adam.second.size() == n) {
    w.array(c.adam.first);
    w.array(c.adam.second);
  } else {
    w.zeros(2 * n);
  }
  w.raw(std::uint64_t(c.rng_state));
  w.raw(std::uint32_t(c.epoch));
  // Trailer.
  w.raw(std::uint64_t(c.adam.step));
  w.raw(std::uint32_t(c.backtracks));
  w.raw(double(c.best_loss));
  w.raw(std::uint8_t(c.best ? 1 : 0));
  if (c.best) {
    require_shape(c.best->params.size() == n && c.best->first.size() == n && c.best->second.size() == n,
                  "checkpoint: snapshot size mismatch");
    w.array(c.best->params);
    w.array(c.best->first);
    w.array(c.best->second);
    w.raw(std::uint64_t(c.best->step));
  }
  w.raw(double(p.csr_gamma));
  for (double s : p.sigma_levels) w.raw(s);
  w.u32(c.config_text.size());
  w.bytes() += c.config_text;
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  Reader r(bytes, false);
  for (int i = 0; i < 4; ++i) r.raw<char>();
  const auto version = r.raw<std::uint16_t>();
  if (version != 1 && version != 2) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  r.set_single(version == 1);
  Checkpoint c;
  c.single_precision = version == 1;
  const Index m = r.raw<std::uint32_t>(), p = r.raw<std::uint32_t>(), k = r.raw<std::uint32_t>();
  const Index refreshes = r.raw<std::uint32_t>(), levels = r.raw<std::uint32_t>();
  const auto variant = r.raw<std::uint32_t>();
  if (variant > 2) throw FormatError("checkpoint has an unknown variant");
  ModelParams<double>& mp = c.params;
  mp.variant = Variant(variant);
  mp.patch_side = int(r.raw<std::uint32_t>());
  mp.channels = int(r.raw<std::uint32_t>());
  const std::uint64_t total = std::uint64_t(m) * p * 3 + std::uint64_t(p) * k * (1 + levels) + m + refreshes;
  if (total * (version == 1 ? 4 : 8) > bytes.size()) throw FormatError("checkpoint is truncated");
  mp.C.resize(m, p);
  mp.D.resize(m, p);
  mp.W.resize(m, p);
  mp.lambda.resize(p, k);
  mp.kappa.resize(m);
  mp.nu_raw.resize(refreshes);
  r.array(mp.D);
  r.array(mp.C);
  r.array(mp.W);
  r.array(mp.lambda);
  r.array(mp.kappa);
  r.array(mp.nu_raw);
  mp.blind_lambda.assign(std::size_t(levels), Matrix<double>(p, k));
  for (auto& l : mp.blind_lambda) r.array(l);
  const Index n = mp.size();
  c.adam.first.resize(n);
  c.adam.second.resize(n);
  r.array(c.adam.first);
  r.array(c.adam.second);
  c.rng_state = r.raw<std::uint64_t>();
  c.epoch = r.raw<std::uint32_t>();
  c.adam.step = r.raw<std::uint64_t>();
  c.backtracks = r.raw<std::uint32_t>();
  c.best_loss = r.raw<double>();
  if (r.raw<std::uint8_t>()) {
    Snapshot<double> s;
    s.params.resize(n);
    s.first.resize(n);
    s.second.resize(n);
    r.array(s.params);
    r.array(s.first);
    r.array(s.second);
    s.step = r.raw<std::uint64_t>();
    c.best = std::move(s);
  }
  mp.csr_gamma = r.raw<double>();
  mp.sigma_levels.resize(std::size_t(levels));
  for (auto& s : mp.sigma_levels) s = r.raw<double>();
  const auto len = r.raw<std::uint32_t>();
  for (std::uint32_t i = 0; i < len; ++i) c.config_text.push_back(r.raw<char>());
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  try {
    mp.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint is inconsistent: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

template Checkpoint Checkpoint::from_state<float>(const TrainState<float>&, const std::string&);
template Checkpoint Checkpoint::from_state<double>(const TrainState<double>&, const std::string&);
template TrainState<float> Checkpoint::state<float>() const;
template TrainState<double> Checkpoint::state<double>() const;

}  // namespace gsc
