#pragma once

#include "gsc/numerics.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace gsc {

/// Row-major, channel-interleaved image. Intensities live on [0, 1]; values
/// are only clamped when written to disk.
template <typename Scalar>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  Vector<Scalar> data;

  Image() = default;
  Image(int h, int w, int c, Scalar fill = Scalar(0))
      : height(h), width(w), channels(c), data(Vector<Scalar>::Constant(Index(h) * w * c, fill)) {}

  Index size() const { return data.size(); }
  Index pixels() const { return Index(height) * width; }
  Scalar& at(int r, int c, int ch = 0) { return data[(Index(r) * width + c) * channels + ch]; }
  Scalar at(int r, int c, int ch = 0) const { return data[(Index(r) * width + c) * channels + ch]; }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  template <typename Other>
  Image<Other> cast() const {
    Image<Other> out;
    out.height = height;
    out.width = width;
    out.channels = channels;
    out.data = data.template cast<Other>();
    return out;
  }

  /// Sub-image copy of rows [r0, r0+h) and columns [c0, c0+w).
  Image crop(int r0, int c0, int h, int w) const;
};

enum class BayerPattern { kRGGB, kGRBG, kGBRG, kBGGR };

BayerPattern parse_bayer(const std::string& name);
const char* bayer_name(BayerPattern p);
/// Channel observed at (row, col) for the given phase.
int bayer_channel(BayerPattern p, int row, int col);

/// Binary PGM (P5) or PPM (P6), maxval 255.
Image<double> read_pnm(const std::filesystem::path& path);
Image<double> decode_pnm(const std::string& bytes);
template <typename Scalar>
void write_pnm(const Image<Scalar>& image, const std::filesystem::path& path);
template <typename Scalar>
std::string encode_pnm(const Image<Scalar>& image);

/// y = x + n with n ~ N(0, (sigma/255)^2) per entry; no clamping.
template <typename Scalar>
Image<Scalar> add_awgn(const Image<Scalar>& image, double sigma255, Rng& rng);

template <typename Scalar>
struct Mosaic {
  Image<Scalar> observed;  // zeros at unobserved entries
  Image<Scalar> mask;      // 1 where observed, per pixel and channel
};

template <typename Scalar>
Mosaic<Scalar> mosaic(const Image<Scalar>& image, BayerPattern pattern);

/// Per-channel bilinear interpolation from observed sites: each missing
/// entry is the 3x3 bilinear-weighted mean of its observed neighbours.
template <typename Scalar>
Image<Scalar> bilinear_demosaick(const Image<Scalar>& observed, const Image<Scalar>& mask);

/// Rotation by quarter_turns * 90 degrees counter-clockwise, then an optional
/// horizontal flip.
template <typename Scalar>
Image<Scalar> rotate_flip(const Image<Scalar>& image, int quarter_turns, bool hflip);

/// Sorted list of .pgm/.ppm/.pnm files in a directory.
std::vector<std::filesystem::path> list_pnm(const std::filesystem::path& dir);

/// Random square crops from a flat directory of PNM images.
class Dataset {
 public:
  Dataset(const std::filesystem::path& dir, int crop);
  /// Builds from in-memory images (used for paired data and tests).
  Dataset(std::vector<Image<double>> images, std::vector<std::string> names, int crop);

  std::size_t size() const { return images_.size(); }
  int crop_size() const { return crop_; }
  int channels() const { return images_.front().channels; }
  const Image<double>& image(std::size_t i) const { return images_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  struct Draw {
    std::size_t image = 0;
    int row = 0;
    int col = 0;
    int quarter_turns = 0;
    bool hflip = false;
  };
  /// Uniform crop position (and augmentation) inside image i.
  Draw draw(std::size_t i, Rng& rng, bool augment) const;
  /// Uniform image, then uniform crop.
  Draw draw(Rng& rng, bool augment) const;
  Image<double> apply(const Draw& d) const;
  Image<double> apply(const Draw& d, const Image<double>& source) const;
  Image<double> next(Rng& rng, bool augment) const { return apply(draw(rng, augment)); }

 private:
  void validate() const;

  std::vector<Image<double>> images_;
  std::vector<std::string> names_;
  int crop_;
};

}  // namespace gsc
