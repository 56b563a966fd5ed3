#include "gsc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace gsc {

Variant parse_variant(const std::string& name) {
  if (name == "sc") return Variant::kSC;
  if (name == "groupsc") return Variant::kGroupSC;
  if (name == "csr") return Variant::kCSR;
  throw std::invalid_argument("unknown variant '" + name + "' (expected sc, groupsc or csr)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kSC: return "sc";
    case Variant::kGroupSC: return "groupsc";
    case Variant::kCSR: return "csr";
  }
  return "unknown";
}

std::string blind_lambda_name(double sigma) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "lambda@%g", sigma);
  return buf;
}

template <typename Scalar>
Index ModelParams<Scalar>::size() const {
  Index n = C.size() + D.size() + W.size() + lambda.size() + kappa.size() + nu_raw.size();
  for (const auto& l : blind_lambda) n += l.size();
  return n;
}

namespace {

template <typename Scalar, typename Fn>
void for_each_part(ModelParams<Scalar>& p, Fn&& fn) {
  fn(p.C.data(), p.C.size());
  fn(p.D.data(), p.D.size());
  fn(p.W.data(), p.W.size());
  fn(p.lambda.data(), p.lambda.size());
  fn(p.kappa.data(), p.kappa.size());
  fn(p.nu_raw.data(), p.nu_raw.size());
  for (auto& l : p.blind_lambda) fn(l.data(), l.size());
}

}  // namespace

template <typename Scalar>
Vector<Scalar> ModelParams<Scalar>::flatten() const {
  Vector<Scalar> v(size());
  Index offset = 0;
  for_each_part(const_cast<ModelParams&>(*this), [&](Scalar* data, Index n) {
    std::copy(data, data + n, v.data() + offset);
    offset += n;
  });
  return v;
}

template <typename Scalar>
void ModelParams<Scalar>::unflatten(const Vector<Scalar>& v) {
  require_shape(v.size() == size(), "unflatten: size mismatch");
  Index offset = 0;
  for_each_part(*this, [&](Scalar* data, Index n) {
    std::copy(v.data() + offset, v.data() + offset + n, data);
    offset += n;
  });
}

template <typename Scalar>
void ModelParams<Scalar>::validate() const {
  const Index m = D.rows(), p = D.cols();
  require_shape(patch_side >= 1 && (channels == 1 || channels == 3), "model: bad patch geometry");
  require_shape(m == Index(channels) * patch_side * patch_side, "model: dictionary rows do not match patch size");
  require_shape(C.rows() == m && C.cols() == p && W.rows() == m && W.cols() == p, "model: C, D, W shapes differ");
  require_shape(p >= 1, "model: empty dictionary");
  require_shape(lambda.rows() == p && lambda.cols() >= 1, "model: thresholds must be p x K with K >= 1");
  require_shape(kappa.size() == m, "model: kappa must have m entries");
  require_shape(blind_lambda.size() == sigma_levels.size(), "model: blind level count mismatch");
  for (const auto& l : blind_lambda)
    require_shape(l.rows() == p && l.cols() == lambda.cols(), "model: blind thresholds must be p x K");
  for (std::size_t i = 1; i < sigma_levels.size(); ++i)
    require_shape(sigma_levels[i] > sigma_levels[i - 1], "model: noise levels must be increasing");
  if (!(csr_gamma >= 0)) throw std::invalid_argument("model: csr gamma must be >= 0");
}

template <typename Scalar>
template <typename Other>
ModelParams<Other> ModelParams<Scalar>::cast() const {
  ModelParams<Other> out;
  out.variant = variant;
  out.patch_side = patch_side;
  out.channels = channels;
  out.C = C.template cast<Other>();
  out.D = D.template cast<Other>();
  out.W = W.template cast<Other>();
  out.lambda = lambda.template cast<Other>();
  out.kappa = kappa.template cast<Other>();
  out.nu_raw = nu_raw.template cast<Other>();
  out.csr_gamma = csr_gamma;
  out.sigma_levels = sigma_levels;
  for (const auto& l : blind_lambda) out.blind_lambda.push_back(l.template cast<Other>());
  return out;
}

namespace {

template <typename Scalar>
const Matrix<Scalar>& level_lambda(const ModelParams<Scalar>& params, int level) {
  if (level < 0) return params.lambda;
  if (std::size_t(level) >= params.blind_lambda.size()) throw std::out_of_range("no such noise level");
  return params.blind_lambda[std::size_t(level)];
}

}  // namespace

template <typename Scalar>
ParamVars<Scalar> bind(const ModelParams<Scalar>& params, Tape<Scalar>& tape, int level) {
  ParamVars<Scalar> v;
  v.C = tape.parameter("C", params.C);
  v.D = tape.parameter("D", params.D);
  v.W = tape.parameter("W", params.W);
  v.lambda = tape.parameter("lambda", params.lambda);
  v.kappa = tape.parameter("kappa", params.kappa);
  v.nu_raw = tape.parameter("nu_raw", params.nu_raw);
  for (std::size_t l = 0; l < params.blind_lambda.size(); ++l) {
    Var<Scalar> b = tape.parameter(blind_lambda_name(params.sigma_levels[l]), params.blind_lambda[l]);
    if (int(l) == level) v.lambda = b;
  }
  if (level >= int(params.blind_lambda.size())) throw std::out_of_range("no such noise level");
  return v;
}

template <typename Scalar>
ParamVars<Scalar> constants(const ModelParams<Scalar>& params, int level) {
  ParamVars<Scalar> v;
  v.C = Var<Scalar>::constant(params.C);
  v.D = Var<Scalar>::constant(params.D);
  v.W = Var<Scalar>::constant(params.W);
  v.lambda = Var<Scalar>::constant(level_lambda(params, level));
  v.kappa = Var<Scalar>::constant(params.kappa);
  v.nu_raw = Var<Scalar>::constant(params.nu_raw);
  return v;
}

template <typename Scalar>
Vector<Scalar> flatten_gradients(const ModelParams<Scalar>& params, const Tape<Scalar>& tape) {
  Vector<Scalar> g(params.size());
  Index offset = 0;
  auto put = [&](const std::string& name) {
    const Matrix<Scalar>& m = tape.gradient(name);
    std::copy(m.data(), m.data() + m.size(), g.data() + offset);
    offset += m.size();
  };
  for (const char* name : {"C", "D", "W", "lambda", "kappa", "nu_raw"}) put(name);
  for (double s : params.sigma_levels) put(blind_lambda_name(s));
  return g;
}

int refresh_count(Variant variant, int unroll, int update_period) {
  if (variant == Variant::kSC) return 0;
  return Schedule{update_period}.refreshes(unroll);
}

template <typename Scalar>
Var<Scalar> unrolled_forward(const ParamVars<Scalar>& vars, Variant variant, Scalar csr_gamma, int patch_side,
                             const Observation<Scalar>& obs, const InferenceConfig& config,
                             const Matrix<Scalar>* fixed_similarity, Trace<Scalar>* trace) {
  const int K = int(vars.lambda.cols());
  if (K < 1) throw std::invalid_argument("unrolled_forward: K must be >= 1");
  PatchSet<Scalar> ps = obs.mask ? extract_masked(obs.y, *obs.mask, patch_side) : extract(obs.y, patch_side);
  const PatchGeometry& g = ps.geometry;
  require_shape(vars.D.rows() == g.dim(), "unrolled_forward: dictionary does not match patch size");
  const Index p = vars.D.cols();
  const Var<Scalar> yc = Var<Scalar>::constant(ps.centered);
  Matrix<Scalar> residual_mask;
  if (obs.mask) residual_mask = extract_raw(*obs.mask, g);

  const bool nonlocal = variant != Variant::kSC;
  const Schedule schedule{config.update_period};
  Matrix<Scalar> window;
  Var<Scalar> sigma;
  if (nonlocal) {
    if (fixed_similarity) {
      require_shape(fixed_similarity->rows() == g.count() && fixed_similarity->cols() == g.count(),
                    "unrolled_forward: fixed similarity must be N x N");
      sigma = Var<Scalar>::constant(*fixed_similarity);
    } else {
      window = window_mask<Scalar>(g, config.window);
      const Image<Scalar>& start = obs.init ? *obs.init : obs.y;
      require_shape(start.same_shape(obs.y), "unrolled_forward: initial estimate shape mismatch");
      Var<Scalar> x0 = Var<Scalar>::constant(extract_raw(start, g));
      if (config.center_distance) x0 = center_columns(x0);
      sigma = compute_similarity(x0, vars.kappa, window);
    }
  }

  Var<Scalar> codes = Var<Scalar>::constant(Matrix<Scalar>::Zero(p, g.count()));
  int refresh_index = 0;
  if (trace) {
    trace->codes.clear();
    trace->sigma.clear();
    trace->patches = ps;
  }
  for (int k = 0; k < K; ++k) {
    if (nonlocal && !fixed_similarity && schedule.refresh(k)) {
      // At k = 0 the estimate is still the starting image, so the refresh
      // would reproduce the initial similarities exactly.
      if (k > 0) {
        if (vars.nu_raw.rows() < 1) throw std::invalid_argument("unrolled_forward: model has no averaging weights");
        const Var<Scalar> decoded = matmul(vars.W, codes);
        Var<Scalar> estimate = config.middle_averaging
                                   ? patch_extract(patch_average(decoded, ps.mean, g), g)
                                   : add_column_offsets(decoded, ps.mean);
        if (config.center_distance) estimate = center_columns(estimate);
        const Var<Scalar> fresh = compute_similarity(estimate, vars.kappa, window);
        const Index slot = std::min<Index>(refresh_index, vars.nu_raw.rows() - 1);
        sigma = online_average(sigma, fresh, vars.nu_raw, slot);
      }
      ++refresh_index;
    }
    if (trace && nonlocal) trace->sigma.push_back(sigma.value());

    Var<Scalar> r = sub(yc, matmul(vars.D, codes));
    if (obs.mask) r = mask_mul(r, residual_mask);
    const Var<Scalar> b = add(codes, matmul_tn(vars.C, r));
    const Var<Scalar> lam = column(vars.lambda, k);
    switch (variant) {
      case Variant::kSC:
        codes = soft_threshold(b, lam);
        break;
      case Variant::kGroupSC:
        codes = relaxed_group_shrink(b, sigma, lam);
        break;
      case Variant::kCSR: {
        const Var<Scalar> beta = code_average(codes, sigma);
        codes = csr_prox(b, beta, lam, csr_gamma);
        break;
      }
    }
    if (trace) trace->codes.push_back(codes.value());
  }
  return patch_average(matmul(vars.W, codes), ps.mean, g);
}

namespace {

template <typename Scalar>
Image<Scalar> to_image(const Var<Scalar>& column, const Image<Scalar>& like) {
  Image<Scalar> out(like.height, like.width, like.channels);
  out.data = column.value().col(0);
  return out;
}

}  // namespace

template <typename Scalar>
Image<Scalar> infer(const ModelParams<Scalar>& params, const Observation<Scalar>& obs, const InferenceConfig& config,
                    int level, Trace<Scalar>* trace) {
  params.validate();
  require_shape(obs.y.channels == params.channels, "infer: image channels do not match the model");
  if (params.blind() && level < 0) level = select_blind_lambda(obs.y, params);
  const ParamVars<Scalar> vars = constants(params, level);
  return to_image(unrolled_forward<Scalar>(vars, params.variant, Scalar(params.csr_gamma), params.patch_side, obs, config,
                                   nullptr, trace),
                  obs.y);
}

namespace {

template <typename Scalar>
Image<Scalar> infer_checked(const Image<Scalar>& y, const ModelParams<Scalar>& params, const InferenceConfig& config,
                            Variant expected) {
  if (params.variant != expected)
    throw std::invalid_argument(std::string("model variant is ") + variant_name(params.variant) + ", expected " +
                                variant_name(expected));
  return infer(params, Observation<Scalar>{y, std::nullopt, std::nullopt}, config);
}

}  // namespace

template <typename Scalar>
Image<Scalar> infer_sc(const Image<Scalar>& y, const ModelParams<Scalar>& params, const InferenceConfig& config) {
  return infer_checked(y, params, config, Variant::kSC);
}

template <typename Scalar>
Image<Scalar> infer_groupsc(const Image<Scalar>& y, const ModelParams<Scalar>& params, const InferenceConfig& config) {
  return infer_checked(y, params, config, Variant::kGroupSC);
}

template <typename Scalar>
Image<Scalar> infer_csr(const Image<Scalar>& y, const ModelParams<Scalar>& params, const InferenceConfig& config) {
  return infer_checked(y, params, config, Variant::kCSR);
}

template <typename Scalar>
Observation<Scalar> demosaick_observation(const Image<Scalar>& observed, const Image<Scalar>& mask,
                                          DemosaickInit init) {
  require_shape(observed.same_shape(mask), "demosaick: mask shape mismatch");
  Observation<Scalar> obs{observed, mask, std::nullopt};
  if (init == DemosaickInit::kBilinear) {
    obs.init = bilinear_demosaick(observed, mask);
  } else {
    Image<Scalar> zero_filled = observed;
    zero_filled.data = observed.data.cwiseProduct(mask.data);
    obs.init = std::move(zero_filled);
  }
  return obs;
}

template <typename Scalar>
Image<Scalar> infer_demosaick(const Image<Scalar>& observed, const Image<Scalar>& mask,
                              const ModelParams<Scalar>& params, const InferenceConfig& config) {
  return infer(params, demosaick_observation(observed, mask, config.demosaick_init), config);
}

template <typename Scalar>
double estimate_noise_sigma(const Image<Scalar>& image) {
  if (image.height < 2 || image.width < 2) throw DataError("noise estimate needs at least a 2x2 image");
  // Luminance as the channel mean; its noise std is sigma / sqrt(c).
  const double gain = std::sqrt(double(image.channels));
  auto lum = [&](int r, int c) {
    double s = 0;
    for (int ch = 0; ch < image.channels; ++ch) s += double(image.at(r, c, ch));
    return s / image.channels * gain;
  };
  std::vector<double> hh;
  hh.reserve(std::size_t(image.height / 2) * (image.width / 2));
  for (int r = 0; r + 1 < image.height; r += 2)
    for (int c = 0; c + 1 < image.width; c += 2)
      hh.push_back(std::abs(lum(r, c) - lum(r, c + 1) - lum(r + 1, c) + lum(r + 1, c + 1)) / 2.0);
  auto mid = hh.begin() + std::ptrdiff_t(hh.size() / 2);
  std::nth_element(hh.begin(), mid, hh.end());
  double median = *mid;
  if (hh.size() % 2 == 0) {
    const double below = *std::max_element(hh.begin(), mid);
    median = 0.5 * (median + below);
  }
  return median / 0.6745 * 255.0;
}

int nearest_level(const std::vector<double>& levels, double sigma_hat) {
  if (levels.empty()) throw std::invalid_argument("no noise levels to choose from");
  int best = 0;
  double best_gap = std::abs(levels[0] - sigma_hat);
  for (std::size_t i = 1; i < levels.size(); ++i) {
    const double gap = std::abs(levels[i] - sigma_hat);
    if (gap < best_gap || (gap == best_gap && levels[i] > levels[std::size_t(best)])) {
      best = int(i);
      best_gap = gap;
    }
  }
  return best;
}

template <typename Scalar>
int select_blind_lambda(const Image<Scalar>& y, const ModelParams<Scalar>& params) {
  if (!params.blind()) throw std::invalid_argument("model has no blind threshold sets");
  return nearest_level(params.sigma_levels, estimate_noise_sigma(y));
}

std::vector<int> block_starts(int extent, int block, int stride) {
  if (block < 1 || stride < 1) throw std::invalid_argument("block size and stride must be >= 1");
  if (stride > block) throw std::invalid_argument("stride must not exceed the block size");
  if (extent <= block) return {0};
  std::vector<int> starts;
  for (int s = 0; s + block < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - block);
  return starts;
}

template <typename Scalar>
Image<Scalar> process_blocks(const Observation<Scalar>& obs, int block, int stride, int threads,
                             const std::function<Image<Scalar>(const Observation<Scalar>&)>& restore_block) {
  const Image<Scalar>& y = obs.y;
  const std::vector<int> rows = block_starts(y.height, block, stride);
  const std::vector<int> cols = block_starts(y.width, block, stride);
  const int bh = std::min(block, y.height), bw = std::min(block, y.width);
  const Index count = Index(rows.size() * cols.size());
  std::vector<Image<Scalar>> outputs(static_cast<std::size_t>(count));
  parallel_for(count, threads, [&](Index b) {
    const int r0 = rows[std::size_t(b) / cols.size()], c0 = cols[std::size_t(b) % cols.size()];
    Observation<Scalar> sub{y.crop(r0, c0, bh, bw), std::nullopt, std::nullopt};
    if (obs.mask) sub.mask = obs.mask->crop(r0, c0, bh, bw);
    if (obs.init) sub.init = obs.init->crop(r0, c0, bh, bw);
    outputs[std::size_t(b)] = restore_block(sub);
  });
  Image<Scalar> sum(y.height, y.width, y.channels);
  std::vector<int> cover(std::size_t(y.pixels()), 0);
  for (Index b = 0; b < count; ++b) {
    const int r0 = rows[std::size_t(b) / cols.size()], c0 = cols[std::size_t(b) % cols.size()];
    const Image<Scalar>& out = outputs[std::size_t(b)];
    for (int r = 0; r < bh; ++r)
      for (int c = 0; c < bw; ++c) {
        ++cover[std::size_t(r0 + r) * y.width + c0 + c];
        for (int ch = 0; ch < y.channels; ++ch) sum.at(r0 + r, c0 + c, ch) += out.at(r, c, ch);
      }
  }
  for (Index i = 0; i < sum.size(); ++i) sum.data[i] /= Scalar(cover[std::size_t(i / y.channels)]);
  return sum;
}

template <typename Scalar>
Image<Scalar> restore(const ModelParams<Scalar>& params, const Observation<Scalar>& obs,
                      const InferenceConfig& config, int level) {
  params.validate();
  if (params.blind() && level < 0) level = select_blind_lambda(obs.y, params);
  InferenceConfig inner = config;
  inner.threads = 1;
  return process_blocks<Scalar>(obs, config.window, std::min(config.stride, config.window), config.threads,
                                [&](const Observation<Scalar>& block) { return infer(params, block, inner, level); });
}

#define GSC_INSTANTIATE(S)                                                                                        \
  template struct ModelParams<S>;                                                                                \
  template ParamVars<S> bind<S>(const ModelParams<S>&, Tape<S>&, int);                                           \
  template ParamVars<S> constants<S>(const ModelParams<S>&, int);                                                \
  template Vector<S> flatten_gradients<S>(const ModelParams<S>&, const Tape<S>&);                                \
  template Var<S> unrolled_forward<S>(const ParamVars<S>&, Variant, S, int, const Observation<S>&,               \
                                      const InferenceConfig&, const Matrix<S>*, Trace<S>*);                      \
  template Image<S> infer<S>(const ModelParams<S>&, const Observation<S>&, const InferenceConfig&, int, Trace<S>*); \
  template Image<S> infer_sc<S>(const Image<S>&, const ModelParams<S>&, const InferenceConfig&);                 \
  template Image<S> infer_groupsc<S>(const Image<S>&, const ModelParams<S>&, const InferenceConfig&);            \
  template Image<S> infer_csr<S>(const Image<S>&, const ModelParams<S>&, const InferenceConfig&);                \
  template Image<S> infer_demosaick<S>(const Image<S>&, const Image<S>&, const ModelParams<S>&,                  \
                                       const InferenceConfig&);                                                  \
  template Observation<S> demosaick_observation<S>(const Image<S>&, const Image<S>&, DemosaickInit);             \
  template double estimate_noise_sigma<S>(const Image<S>&);                                                      \
  template int select_blind_lambda<S>(const Image<S>&, const ModelParams<S>&);                                   \
  template Image<S> process_blocks<S>(const Observation<S>&, int, int, int,                                      \
                                      const std::function<Image<S>(const Observation<S>&)>&);                    \
  template Image<S> restore<S>(const ModelParams<S>&, const Observation<S>&, const InferenceConfig&, int);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace gsc
