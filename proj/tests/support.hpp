#pragma once

#include "gsc/checkpoint.hpp"
#include "gsc/config.hpp"
#include "gsc/metrics.hpp"
#include "gsc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace gsc::testing {

/// Piecewise smooth test scene: a shaded background with discs, boxes and
/// striped or checkered regions, values kept inside [0.05, 0.95].
inline Image<double> scene(int h, int w, int c, Rng& rng) {
  Image<double> img(h, w, c);
  const auto nc = static_cast<std::size_t>(c);
  std::vector<double> base(nc), slope_r(nc), slope_c(nc);
  for (int ch = 0; ch < c; ++ch) {
    base[std::size_t(ch)] = 0.3 + 0.4 * rng.uniform();
    slope_r[std::size_t(ch)] = 0.3 * (rng.uniform() - 0.5);
    slope_c[std::size_t(ch)] = 0.3 * (rng.uniform() - 0.5);
  }
  for (int r = 0; r < h; ++r)
    for (int col = 0; col < w; ++col)
      for (int ch = 0; ch < c; ++ch)
        img.at(r, col, ch) = base[std::size_t(ch)] + slope_r[std::size_t(ch)] * r / h + slope_c[std::size_t(ch)] * col / w;

  const int shapes = 4 + int(rng.below(4));
  for (int s = 0; s < shapes; ++s) {
    const int kind = int(rng.below(4));
    const double cr = h * rng.uniform(), cc = w * rng.uniform();
    const double size = 0.15 * std::min(h, w) + 0.3 * std::min(h, w) * rng.uniform();
    const double period = 3 + 6 * rng.uniform(), angle = 3.14159 * rng.uniform();
    std::vector<double> tone(nc);
    for (auto& t : tone) t = 0.1 + 0.8 * rng.uniform();
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const double dr = r - cr, dc = col - cc;
        bool inside = false;
        double mix = 1.0;
        switch (kind) {
          case 0: inside = dr * dr + dc * dc < size * size; break;
          case 1: inside = std::abs(dr) < size && std::abs(dc) < 0.6 * size; break;
          case 2:
            inside = std::abs(dr) < size && std::abs(dc) < size;
            mix = 0.5 + 0.5 * std::sin((std::cos(angle) * dc + std::sin(angle) * dr) * 6.28318 / period);
            break;
          default:
            inside = dr * dr + dc * dc < size * size;
            mix = ((int(std::floor(dr / period)) + int(std::floor(dc / period))) & 1) ? 1.0 : 0.35;
            break;
        }
        if (!inside) continue;
        for (int ch = 0; ch < c; ++ch) {
          double& v = img.at(r, col, ch);
          v = (1 - mix) * v + mix * tone[std::size_t(ch)];
        }
      }
  }
  for (Index i = 0; i < img.size(); ++i) img.data[i] = std::clamp(img.data[i], 0.05, 0.95);
  return img;
}

inline std::vector<Image<double>> scenes(int count, int h, int w, int c, Rng& rng) {
  std::vector<Image<double>> out;
  for (int i = 0; i < count; ++i) out.push_back(scene(h, w, c, rng));
  return out;
}

inline void write_scenes(const std::filesystem::path& dir, const std::vector<Image<double>>& images) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img%02zu.%s", i, images[i].channels == 1 ? "pgm" : "ppm");
    write_pnm(images[i], dir / name);
  }
}

inline std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("img" + std::to_string(i));
  return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gsc_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace gsc::testing
