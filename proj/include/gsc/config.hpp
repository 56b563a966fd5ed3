#pragma once

#include "gsc/train.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gsc {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

/// Flat key=value settings. Every key has a built-in default; values are
/// kept as text and parsed on access.
class Config {
 public:
  Config();

  static const std::vector<ConfigKey>& keys();
  static bool known(const std::string& key);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  bool is_default(const std::string& key) const;

  /// One key=value per line; blank lines and text after '#' are ignored.
  void parse(const std::string& text, const std::string& origin = "config");
  void load(const std::filesystem::path& path);
  /// Every key in registration order, loadable by parse().
  std::string text() const;

  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;

  /// Parses every value and checks ranges; throws ConfigError.
  void validate() const;

  Variant variant() const;
  Task task() const;
  /// 9 for grayscale and 7 for color unless set.
  int patch_side(int channels) const;
  /// 1/6, or 1/8 for demosaicking, unless set.
  int update_period() const;
  int threads() const;
  bool double_precision() const;
  Index dictionary_patches() const;

  InferenceConfig inference() const;
  TrainConfig train() const;
  ModelInit model_init(int channels) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace gsc
