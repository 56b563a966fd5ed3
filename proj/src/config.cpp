#include "gsc/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gsc {

namespace {

const std::vector<ConfigKey> kKeys = {
    {"variant", "groupsc", "model variant: sc, groupsc or csr"},
    {"task", "denoise", "denoise, blind, demosaick or paired"},
    {"sigma", "25", "noise level on the 0-255 scale; comma list for blind training"},
    {"patch_side", "auto", "patch side k (auto: 9 gray, 7 color)"},
    {"dict_size", "256", "number of atoms p"},
    {"unroll", "24", "unrolled steps K"},
    {"window", "56", "similarity window and block size w"},
    {"update_freq", "auto", "similarity update frequency f (auto: 1/6, 1/8 for demosaicking)"},
    {"middle_averaging", "true", "re-average the image estimate before each similarity refresh"},
    {"stride", "48", "stride between image blocks"},
    {"center_distance", "false", "compare mean-removed patches in the learned distance"},
    {"tie_nu", "false", "share one averaging weight across refreshes"},
    {"csr_gamma", "1", "CSR weight of the distance to the code average"},
    {"epochs", "300", "training epochs"},
    {"batch", "32", "crops per optimizer step"},
    {"crop", "56", "training crop side"},
    {"crops_per_image", "1", "crops drawn from each image per epoch"},
    {"lr", "6e-4", "initial learning rate"},
    {"lr_decay", "0.35", "scheduled learning rate factor"},
    {"decay_every", "80", "decay period"},
    {"decay_unit", "epoch", "unit of decay_every: epoch or step"},
    {"backtrack", "0.8", "learning rate factor on divergence"},
    {"monitor_every", "20", "epochs between divergence checks"},
    {"divergence_ratio", "1.5", "monitor loss above ratio x best counts as divergence"},
    {"monitor_crops", "16", "crops in the fixed monitoring set"},
    {"augment", "true", "random quarter turns and flips of training crops"},
    {"pattern", "rggb", "Bayer phase: rggb, grbg, gbrg or bggr"},
    {"seed", "0", "seed of every random draw"},
    {"threads", "auto", "worker threads (auto: GSC_THREADS or 1)"},
    {"precision", "double", "double or float"},
    {"dict_iterations", "30", "dictionary learning alternations"},
    {"dict_patches", "auto", "patches for dictionary learning (auto: 20 x dict_size)"},
    {"dict_lambda", "0.02", "sparsity weight of dictionary learning"},
    {"lambda_scale", "0.5", "initial thresholds are lambda_scale * sigma / 255"},
    {"kappa_init", "1", "initial distance weights"},
    {"nu_init", "0", "initial raw averaging weight (logistic(0) = 0.5)"},
    {"demosaick_init", "bilinear", "similarity start for demosaicking: bilinear or observed"},
    {"quantize_psnr", "false", "round images to 8 bits before computing PSNR"},
};

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config::Config() {
  for (const auto& k : kKeys) values_[k.name] = k.default_value;
}

const std::vector<ConfigKey>& Config::keys() { return kKeys; }

bool Config::known(const std::string& key) {
  for (const auto& k : kKeys)
    if (key == k.name) return true;
  return false;
}

void Config::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = trim(value);
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

bool Config::is_default(const std::string& key) const {
  for (const auto& k : kKeys)
    if (key == k.name) return get(key) == k.default_value;
  throw ConfigError("unknown config key '" + key + "'");
}

void Config::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!known(key)) throw ConfigError(origin + ":" + std::to_string(number) + ": unknown config key '" + key + "'");
    set(key, line.substr(eq + 1));
  }
}

void Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  parse(ss.str(), path.string());
}

std::string Config::text() const {
  std::string out;
  for (const auto& k : kKeys) out += std::string(k.name) + "=" + get(k.name) + "\n";
  return out;
}

int Config::integer(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size() || x < INT32_MIN || x > INT32_MAX) bad(key, v, "an integer");
    return int(x);
  } catch (const std::logic_error&) {
    bad(key, v, "an integer");
  }
}

double Config::real(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) bad(key, v, "a number");
    return x;
  } catch (const std::logic_error&) {
    bad(key, v, "a number");
  }
}

bool Config::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad(key, v, "true or false");
}

std::uint64_t Config::u64(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') bad(key, v, "a nonnegative integer");
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) bad(key, v, "a nonnegative integer");
    return x;
  } catch (const std::logic_error&) {
    bad(key, v, "a nonnegative integer");
  }
}

std::vector<double> Config::reals(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    try {
      std::size_t used = 0;
      const double x = std::stod(item, &used);
      if (used != item.size() || !std::isfinite(x)) bad(key, v, "a comma separated list of numbers");
      out.push_back(x);
    } catch (const std::logic_error&) {
      bad(key, v, "a comma separated list of numbers");
    }
  }
  if (out.empty()) bad(key, v, "a comma separated list of numbers");
  return out;
}

Variant Config::variant() const {
  try {
    return parse_variant(get("variant"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

Task Config::task() const {
  try {
    return parse_task(get("task"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

int Config::patch_side(int channels) const {
  if (get("patch_side") == "auto") return channels == 1 && task() != Task::kDemosaick ? 9 : 7;
  return integer("patch_side");
}

int Config::update_period() const {
  const std::string& v = get("update_freq");
  if (v == "auto") return task() == Task::kDemosaick ? 8 : 6;
  try {
    return parse_update_period(v);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

int Config::threads() const {
  if (get("threads") == "auto") return default_threads();
  return integer("threads");
}

bool Config::double_precision() const {
  const std::string& v = get("precision");
  if (v == "double") return true;
  if (v == "float") return false;
  bad("precision", v, "double or float");
}

Index Config::dictionary_patches() const {
  if (get("dict_patches") == "auto") return 20 * Index(integer("dict_size"));
  return integer("dict_patches");
}

InferenceConfig Config::inference() const {
  InferenceConfig c;
  c.window = integer("window");
  c.update_period = update_period();
  c.middle_averaging = flag("middle_averaging");
  c.stride = integer("stride");
  c.center_distance = flag("center_distance");
  const std::string& init = get("demosaick_init");
  if (init == "bilinear") c.demosaick_init = DemosaickInit::kBilinear;
  else if (init == "observed") c.demosaick_init = DemosaickInit::kObserved;
  else bad("demosaick_init", init, "bilinear or observed");
  c.threads = threads();
  return c;
}

TrainConfig Config::train() const {
  TrainConfig t;
  t.epochs = integer("epochs");
  t.batch = integer("batch");
  t.crop = integer("crop");
  t.crops_per_image = integer("crops_per_image");
  t.lr = real("lr");
  t.lr_decay = real("lr_decay");
  t.decay_every = integer("decay_every");
  const std::string& unit = get("decay_unit");
  if (unit == "epoch") t.decay_unit = DecayUnit::kEpoch;
  else if (unit == "step") t.decay_unit = DecayUnit::kStep;
  else bad("decay_unit", unit, "epoch or step");
  t.backtrack = real("backtrack");
  t.monitor_every = integer("monitor_every");
  t.divergence_ratio = real("divergence_ratio");
  t.monitor_crops = integer("monitor_crops");
  t.sigmas = reals("sigma");
  t.task = task();
  if (t.task == Task::kBlind) std::sort(t.sigmas.begin(), t.sigmas.end());
  try {
    t.pattern = parse_bayer(get("pattern"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  t.augment = flag("augment");
  t.seed = u64("seed");
  t.threads = threads();
  t.inference = inference();
  try {
    t.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return t;
}

ModelInit Config::model_init(int channels) const {
  ModelInit m;
  m.variant = variant();
  m.patch_side = patch_side(channels);
  m.channels = channels;
  m.unroll = integer("unroll");
  m.update_period = update_period();
  m.tie_nu = flag("tie_nu");
  m.csr_gamma = real("csr_gamma");
  const std::vector<double> sigmas = reals("sigma");
  m.sigma = sigmas.front();
  if (task() == Task::kBlind) {
    m.sigma_levels = sigmas;
    std::sort(m.sigma_levels.begin(), m.sigma_levels.end());
    m.sigma = m.sigma_levels.back();
  }
  m.lambda_scale = real("lambda_scale");
  m.kappa_init = real("kappa_init");
  m.nu_init = real("nu_init");
  return m;
}

void Config::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  const TrainConfig t = train();
  const InferenceConfig inf = t.inference;
  const ModelInit m = model_init(1);
  require(get("patch_side") == "auto" || integer("patch_side") >= 1, "patch_side must be >= 1");
  require(integer("dict_size") >= 1, "dict_size must be >= 1");
  require(m.unroll >= 1, "unroll must be >= 1");
  require(inf.window >= 1, "window must be >= 1");
  require(inf.stride >= 1 && inf.stride <= inf.window, "stride must be in [1, window]");
  require(m.csr_gamma >= 0, "csr_gamma must be >= 0");
  require(t.threads >= 1, "threads must be >= 1");
  require(integer("dict_iterations") >= 0, "dict_iterations must be >= 0");
  require(dictionary_patches() >= 1, "dict_patches must be >= 1");
  require(real("dict_lambda") >= 0, "dict_lambda must be >= 0");
  require(m.lambda_scale >= 0, "lambda_scale must be >= 0");
  double_precision();
  flag("quantize_psnr");
  if (t.task == Task::kBlind) {
    std::vector<double> s = t.sigmas;
    std::sort(s.begin(), s.end());
    require(std::adjacent_find(s.begin(), s.end()) == s.end(), "blind noise levels must be distinct");
  }
}

}  // namespace gsc
