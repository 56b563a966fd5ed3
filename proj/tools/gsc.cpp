#include "gsc/checkpoint.hpp"
#include "gsc/config.hpp"
#include "gsc/metrics.hpp"
#include "gsc/verify.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace gsc;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Command line values shared by every subcommand.
struct Options {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::string data, out, ckpt, in, ref, suite = "all", resume, log;
  bool blind = false;
  bool simulate = false;
};

void add_config_flags(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config_path, "key=value settings file")->check(CLI::ExistingFile);
  for (const ConfigKey& key : Config::keys()) {
    const std::string name = key.name;
    cmd->add_option_function<std::string>(
        "--" + name, [&opt, name](const std::string& v) { opt.overrides[name] = v; },
        std::string(key.help) + " [" + key.default_value + "]")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

/// Built-in defaults, then `base` (checkpoint settings), then --config, then
/// flags.
Config resolve(const Options& opt, const std::string& base = "") {
  Config cfg;
  if (!base.empty()) cfg.parse(base, "checkpoint");
  if (!opt.config_path.empty()) cfg.load(opt.config_path);
  for (const auto& [k, v] : opt.overrides) cfg.set(k, v);
  cfg.validate();
  return cfg;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

Rng noise_rng(std::uint64_t seed) { return Rng(seed).fork(0x6e6f697365); }

TrainingData load_training_data(const fs::path& dir, const Config& cfg) {
  const int crop = cfg.integer("crop");
  if (cfg.task() != Task::kPaired) return TrainingData{Dataset(dir, crop), {}};
  std::vector<Image<double>> clean, degraded;
  std::vector<std::string> names;
  for (const fs::path& p : list_pnm(dir / "clean")) {
    const fs::path other = dir / "degraded" / p.filename();
    if (!fs::exists(other)) throw DataError("no degraded counterpart for " + p.filename().string());
    clean.push_back(read_pnm(p));
    degraded.push_back(read_pnm(other));
    if (!clean.back().same_shape(degraded.back()))
      throw DataError("clean and degraded shapes differ for " + p.filename().string());
    names.push_back(p.filename().string());
  }
  return TrainingData{Dataset(std::move(clean), std::move(names), crop), std::move(degraded)};
}

template <typename Scalar>
int run_train(const Options& opt, const Config& cfg, std::optional<Checkpoint> resumed) {
  const TrainConfig tcfg = cfg.train();
  const TrainingData data = load_training_data(opt.data, cfg);
  TrainState<Scalar> state;
  if (resumed) {
    state = resumed->state<Scalar>();
    if (state.params.channels != data.clean.channels()) throw DataError("checkpoint and data channel counts differ");
  } else {
    const int channels = data.clean.channels();
    if (cfg.task() == Task::kDemosaick && channels != 3) throw DataError("demosaicking needs color images");
    const ModelInit init = cfg.model_init(channels);
    Rng rng = Rng(tcfg.seed).fork(0x64696374);
    const Matrix<double> patches = sample_patches(data.clean, init.patch_side, cfg.dictionary_patches(), rng);
    const Matrix<double> dict =
        init_dictionary(patches, cfg.integer("dict_size"), cfg.integer("dict_iterations"), cfg.real("dict_lambda"), rng);
    state = start_training(init_model<Scalar>(init, dict), tcfg);
  }

  const fs::path log_path = opt.log.empty() ? fs::path(opt.out + ".log") : fs::path(opt.log);
  std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + log_path.string());
  if (!resumed) log << "epoch\tloss\tlr\n";
  const int report_every = std::max(1, tcfg.monitor_every);
  const EpochCallback<Scalar> on_epoch = [&](const TrainState<Scalar>&, const LogEntry& e) {
    log << e.epoch << '\t' << format("%.17g", e.loss) << '\t' << format("%.17g", e.lr) << '\n';
    log.flush();
    if ((e.epoch + 1) % report_every == 0 || e.epoch + 1 == tcfg.epochs)
      std::cerr << "epoch " << e.epoch + 1 << "/" << tcfg.epochs << " loss " << e.loss << " lr " << e.lr << "\n";
    return true;
  };
  train(state, data, tcfg, on_epoch);
  save_checkpoint(Checkpoint::from_state(state, cfg.text()), opt.out);
  std::cout << "wrote " << opt.out << "\n";
  return 0;
}

int cmd_train(const Options& opt) {
  std::optional<Checkpoint> resumed;
  std::string base;
  if (!opt.resume.empty()) {
    resumed = load_checkpoint(opt.resume);
    base = resumed->config_text;
  }
  const Config cfg = resolve(opt, base);
  if (resumed && resumed->single_precision == cfg.double_precision())
    throw UsageError("precision differs from the resumed checkpoint");
  return cfg.double_precision() ? run_train<double>(opt, cfg, resumed) : run_train<float>(opt, cfg, resumed);
}

/// Loaded model with the settings used at inference.
struct Restorer {
  Checkpoint ckpt;
  Config cfg;
  InferenceConfig inference;
};

Restorer load_restorer(const Options& opt) {
  Restorer r{load_checkpoint(opt.ckpt), Config(), {}};
  r.cfg = resolve(opt, r.ckpt.config_text);
  if (opt.overrides.count("variant") && r.cfg.variant() != r.ckpt.params.variant)
    throw UsageError(std::string("checkpoint holds a ") + variant_name(r.ckpt.params.variant) + " model");
  r.inference = r.cfg.inference();
  return r;
}

/// Restores with the checkpoint's precision. For blind models the level is
/// chosen from --sigma when given explicitly, otherwise from the estimate.
Image<double> run_restore(const Restorer& r, const Observation<double>& obs, const Options& opt, std::ostream& info) {
  const ModelParams<double>& params = r.ckpt.params;
  int level = -1;
  if (params.blind()) {
    if (opt.blind || !opt.overrides.count("sigma")) {
      const double est = estimate_noise_sigma(obs.y);
      level = nearest_level(params.sigma_levels, est);
      info << "noise estimate " << format("%.2f", est) << ", selected sigma level "
           << format("%g", params.sigma_levels[std::size_t(level)]) << "\n";
    } else {
      level = nearest_level(params.sigma_levels, r.cfg.reals("sigma").front());
      info << "selected sigma level " << format("%g", params.sigma_levels[std::size_t(level)]) << "\n";
    }
  } else if (opt.blind) {
    throw UsageError("--blind needs a checkpoint trained with task=blind");
  }
  if (r.ckpt.single_precision) {
    Observation<float> o{obs.y.cast<float>(), {}, {}};
    if (obs.mask) o.mask = obs.mask->cast<float>();
    if (obs.init) o.init = obs.init->cast<float>();
    return restore(params.cast<float>(), o, r.inference, level).cast<double>();
  }
  return restore(params, obs, r.inference, level);
}

void report(const std::string& label, const Image<double>& ref, const Image<double>& est, bool quantize) {
  const MetricReport m = evaluate(ref, est, quantize);
  std::cout << label << "\tPSNR " << format("%.4f", m.psnr_db) << " dB\tSSIM " << format("%.6f", m.ssim) << "\n";
}

int cmd_denoise(const Options& opt) {
  const Restorer r = load_restorer(opt);
  const Image<double> input = read_pnm(opt.in);
  if (input.channels != r.ckpt.params.channels) throw DataError("image and model channel counts differ");
  std::optional<Image<double>> ref;
  if (!opt.ref.empty()) ref = read_pnm(opt.ref);
  Observation<double> obs;
  obs.y = input;
  if (opt.simulate) {
    Rng rng = noise_rng(r.cfg.u64("seed"));
    obs.y = add_awgn(input, r.cfg.reals("sigma").front(), rng);
    if (!ref) ref = input;
  }
  const Image<double> out = run_restore(r, obs, opt, std::cout);
  write_pnm(out, opt.out);
  if (ref) {
    if (!ref->same_shape(out)) throw DataError("reference shape differs from the input");
    const bool q = r.cfg.flag("quantize_psnr");
    report("input", *ref, obs.y, q);
    report("output", *ref, out, q);
  }
  return 0;
}

int cmd_demosaick(const Options& opt) {
  const Restorer r = load_restorer(opt);
  if (r.ckpt.params.channels != 3) throw UsageError("demosaicking needs a color model");
  const BayerPattern pattern = parse_bayer(r.cfg.get("pattern"));
  const Image<double> input = read_pnm(opt.in);
  std::optional<Image<double>> ref;
  if (!opt.ref.empty()) ref = read_pnm(opt.ref);
  Mosaic<double> mos;
  if (input.channels == 3) {
    if (!opt.simulate && !ref) throw UsageError("a color input needs --simulate or --ref");
    mos = mosaic(input, pattern);
    if (!ref) ref = input;
  } else if (input.channels == 1) {
    // Raw sensor layout: one sample per pixel.
    Image<double> full(input.height, input.width, 3);
    mos = mosaic(full, pattern);
    for (int y = 0; y < input.height; ++y)
      for (int x = 0; x < input.width; ++x) mos.observed.at(y, x, bayer_channel(pattern, y, x)) = input.at(y, x, 0);
  } else {
    throw DataError("demosaick input must have 1 or 3 channels");
  }
  const Observation<double> obs =
      demosaick_observation(mos.observed, mos.mask, r.inference.demosaick_init);
  const Image<double> out = run_restore(r, obs, opt, std::cout);
  write_pnm(out, opt.out);
  if (ref) {
    if (!ref->same_shape(out)) throw DataError("reference shape differs from the input");
    const bool q = r.cfg.flag("quantize_psnr");
    report("bilinear", *ref, bilinear_demosaick(mos.observed, mos.mask), q);
    report("output", *ref, out, q);
  }
  return 0;
}

int cmd_eval(const Options& opt) {
  const Restorer r = load_restorer(opt);
  const std::vector<fs::path> files = list_pnm(opt.data);
  if (files.empty()) throw DataError("no PNM images in " + opt.data);
  const bool demosaick = r.cfg.task() == Task::kDemosaick;
  const bool q = r.cfg.flag("quantize_psnr");
  std::ostringstream table;
  table << "file\tpsnr\tssim\n";
  double psnr_sum = 0, ssim_sum = 0;
  std::ostringstream info;
  for (const fs::path& f : files) {
    const Image<double> clean = read_pnm(f);
    if (clean.channels != r.ckpt.params.channels) throw DataError("channel count of " + f.string() + " differs");
    Observation<double> obs;
    if (demosaick) {
      const Mosaic<double> mos = mosaic(clean, parse_bayer(r.cfg.get("pattern")));
      obs = demosaick_observation(mos.observed, mos.mask, r.inference.demosaick_init);
    } else {
      Rng rng = noise_rng(r.cfg.u64("seed"));
      obs.y = add_awgn(clean, r.cfg.reals("sigma").front(), rng);
    }
    const MetricReport m = evaluate(clean, run_restore(r, obs, opt, info), q);
    psnr_sum += m.psnr_db;
    ssim_sum += m.ssim;
    table << f.filename().string() << '\t' << format("%.4f", m.psnr_db) << '\t' << format("%.6f", m.ssim) << '\n';
  }
  const double n = double(files.size());
  table << "mean\t" << format("%.4f", psnr_sum / n) << '\t' << format("%.6f", ssim_sum / n) << '\n';
  if (opt.out.empty()) {
    std::cout << table.str();
  } else {
    std::ofstream os(opt.out);
    if (!(os << table.str())) throw DataError("cannot write " + opt.out);
  }
  return 0;
}

int cmd_verify(const Options& opt) {
  const Config cfg = resolve(opt);
  const std::uint64_t seed = cfg.u64("seed");
  std::vector<CheckResult> results;
  auto run = [&](const std::string& suite, auto fn) {
    if (opt.suite == suite || opt.suite == "all") {
      auto part = fn();
      results.insert(results.end(), part.begin(), part.end());
    }
  };
  if (opt.suite != "all" && opt.suite != "prox" && opt.suite != "grad" && opt.suite != "reduction")
    throw UsageError("unknown suite '" + opt.suite + "' (expected prox, grad, reduction or all)");
  run("prox", [&] { return verify_prox(seed); });
  run("reduction", [&] { return verify_reduction(seed); });
  run("grad", [&] { return verify_grad(seed); });
  bool ok = true;
  for (const CheckResult& c : results) {
    ok = ok && c.pass;
    std::cout << (c.pass ? "PASS  " : "FAIL  ") << c.name << "  max error " << format("%.3e", c.error)
              << (c.tolerance > 0 ? " (tolerance " + format("%.0e", c.tolerance) + ")" : " (exact)");
    if (!c.detail.empty()) std::cout << "  " << c.detail;
    std::cout << "\n";
  }
  return ok ? 0 : 1;
}

/// Atoms as k x k tiles on a ceil(sqrt(p))-wide grid, each atom stretched to
/// [0, 1]; constant atoms are mid-gray.
Image<double> atom_grid(const Matrix<double>& atoms, int side, int channels) {
  const Index p = atoms.cols();
  const int cols = int(std::ceil(std::sqrt(double(p))));
  const int rows = int((p + cols - 1) / cols);
  Image<double> grid(rows * side, cols * side, channels);
  for (Index j = 0; j < p; ++j) {
    const double lo = atoms.col(j).minCoeff(), hi = atoms.col(j).maxCoeff();
    const int r0 = int(j / cols) * side, c0 = int(j % cols) * side;
    Index e = 0;
    for (int dr = 0; dr < side; ++dr)
      for (int dc = 0; dc < side; ++dc)
        for (int ch = 0; ch < channels; ++ch, ++e)
          grid.at(r0 + dr, c0 + dc, ch) = hi > lo ? (atoms(e, j) - lo) / (hi - lo) : 0.5;
  }
  return grid;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!(os << text)) throw DataError("cannot write " + path.string());
}

/// One line per unrolled step: k, then the p thresholds.
std::string lambda_table(const Matrix<double>& lambda) {
  std::ostringstream os;
  for (Index k = 0; k < lambda.cols(); ++k) {
    os << k;
    for (Index j = 0; j < lambda.rows(); ++j) os << '\t' << format("%.9g", lambda(j, k));
    os << '\n';
  }
  return os.str();
}

int cmd_dump_params(const Options& opt) {
  const Checkpoint ckpt = load_checkpoint(opt.ckpt);
  const ModelParams<double>& mp = ckpt.params;
  const fs::path dir = opt.out;
  fs::create_directories(dir);
  const std::string ext = mp.channels == 1 ? ".pgm" : ".ppm";
  write_pnm(atom_grid(mp.C, mp.patch_side, mp.channels), dir / ("C" + ext));
  write_pnm(atom_grid(mp.D, mp.patch_side, mp.channels), dir / ("D" + ext));
  write_pnm(atom_grid(mp.W, mp.patch_side, mp.channels), dir / ("W" + ext));
  if (mp.blind()) {
    for (std::size_t l = 0; l < mp.sigma_levels.size(); ++l)
      write_text(dir / ("lambda_sigma" + format("%g", mp.sigma_levels[l]) + ".txt"), lambda_table(mp.blind_lambda[l]));
  } else {
    write_text(dir / "lambda.txt", lambda_table(mp.lambda));
  }
  std::ostringstream kappa;
  for (Index i = 0; i < mp.kappa.size(); ++i) kappa << i << '\t' << format("%.9g", mp.kappa[i]) << '\n';
  write_text(dir / "kappa.txt", kappa.str());
  std::ostringstream nu;
  for (Index i = 0; i < mp.nu_raw.size(); ++i)
    nu << i << '\t' << format("%.9g", mp.nu_raw[i]) << '\t' << format("%.9g", logistic(mp.nu_raw[i])) << '\n';
  write_text(dir / "nu.txt", nu.str());
  std::cout << "wrote " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trainable non-local sparse coding for image restoration"};
  app.require_subcommand(1);
  Options opt;

  auto* train_cmd = app.add_subcommand("train", "learn a model from a directory of images");
  train_cmd->add_option("--data", opt.data, "training images (paired: clean/ and degraded/ subdirectories)")
      ->required();
  train_cmd->add_option("--out", opt.out, "checkpoint to write")->required();
  train_cmd->add_option("--resume", opt.resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--log", opt.log, "loss log (default: <out>.log)");

  auto* denoise_cmd = app.add_subcommand("denoise", "restore a noisy image");
  denoise_cmd->add_option("--in", opt.in, "input image")->required();
  denoise_cmd->add_flag("--blind", opt.blind, "pick the threshold set from a noise estimate");
  denoise_cmd->add_flag("--simulate", opt.simulate, "treat the input as clean and add noise of level --sigma");

  auto* demosaick_cmd = app.add_subcommand("demosaick", "restore a Bayer mosaic");
  demosaick_cmd->add_option("--in", opt.in, "raw mosaic (1 channel) or color image")->required();
  demosaick_cmd->add_flag("--simulate", opt.simulate, "mosaic a color input and use it as the reference");

  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM table over a directory of clean images");
  eval_cmd->add_option("--data", opt.data, "clean images")->required();
  eval_cmd->add_option("--out", opt.out, "table to write (default: stdout)");
  eval_cmd->add_flag("--blind", opt.blind, "pick the threshold set from a noise estimate");

  for (auto* cmd : {denoise_cmd, demosaick_cmd, eval_cmd})
    cmd->add_option("--ckpt", opt.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  for (auto* cmd : {denoise_cmd, demosaick_cmd}) {
    cmd->add_option("--out", opt.out, "restored image")->required();
    cmd->add_option("--ref", opt.ref, "clean reference for PSNR/SSIM")->check(CLI::ExistingFile);
  }

  auto* verify_cmd = app.add_subcommand("verify", "run the numerical self-checks");
  verify_cmd->add_option("--suite", opt.suite, "prox, grad, reduction or all");

  auto* dump_cmd = app.add_subcommand("dump-params", "write dictionaries, thresholds and weights for inspection");
  dump_cmd->add_option("--ckpt", opt.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  dump_cmd->add_option("--out", opt.out, "output directory")->required();

  for (auto* cmd : {train_cmd, denoise_cmd, demosaick_cmd, eval_cmd, verify_cmd}) add_config_flags(cmd, opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(opt);
    if (*denoise_cmd) return cmd_denoise(opt);
    if (*demosaick_cmd) return cmd_demosaick(opt);
    if (*eval_cmd) return cmd_eval(opt);
    if (*verify_cmd) return cmd_verify(opt);
    if (*dump_cmd) return cmd_dump_params(opt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
