#include "gsc/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gsc {

template <typename Scalar>
Image<Scalar> Image<Scalar>::crop(int r0, int c0, int h, int w) const {
  require_shape(r0 >= 0 && c0 >= 0 && r0 + h <= height && c0 + w <= width, "Image::crop: out of bounds");
  Image out(h, w, channels);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch) out.at(r, c, ch) = at(r0 + r, c0 + c, ch);
  return out;
}

BayerPattern parse_bayer(const std::string& name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "rggb") return BayerPattern::kRGGB;
  if (s == "grbg") return BayerPattern::kGRBG;
  if (s == "gbrg") return BayerPattern::kGBRG;
  if (s == "bggr") return BayerPattern::kBGGR;
  throw std::invalid_argument("unknown Bayer pattern: " + name);
}

const char* bayer_name(BayerPattern p) {
  switch (p) {
    case BayerPattern::kRGGB: return "rggb";
    case BayerPattern::kGRBG: return "grbg";
    case BayerPattern::kGBRG: return "gbrg";
    case BayerPattern::kBGGR: return "bggr";
  }
  return "?";
}

int bayer_channel(BayerPattern p, int row, int col) {
  static constexpr int kLayout[4][4] = {
      {0, 1, 1, 2},  // RGGB
      {1, 0, 2, 1},  // GRBG
      {1, 2, 0, 1},  // GBRG
      {2, 1, 1, 0},  // BGGR
  };
  return kLayout[static_cast<int>(p)][(row & 1) * 2 + (col & 1)];
}

namespace {

struct HeaderReader {
  const std::string& bytes;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      const unsigned char ch = bytes[pos];
      if (ch == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(ch)) {
        ++pos;
      } else {
        break;
      }
    }
  }

  long number(const char* what) {
    skip_space_and_comments();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      throw FormatError(std::string("PNM: malformed header, expected ") + what);
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1l << 30)) throw FormatError(std::string("PNM: ") + what + " too large");
      ++pos;
    }
    return v;
  }
};

}  // namespace

Image<double> decode_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("PNM: expected binary P5 or P6 magic");
  const int channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader reader{bytes, 2};
  const long width = reader.number("width");
  const long height = reader.number("height");
  const long maxval = reader.number("maxval");
  if (width <= 0 || height <= 0) throw FormatError("PNM: empty image");
  if (maxval != 255) throw FormatError("PNM: unsupported maxval " + std::to_string(maxval));
  if (reader.pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[reader.pos])))
    throw FormatError("PNM: missing whitespace after maxval");
  ++reader.pos;
  const std::size_t expected = std::size_t(width) * std::size_t(height) * channels;
  if (bytes.size() - reader.pos < expected) throw FormatError("PNM: truncated payload");
  Image<double> img(int(height), int(width), channels);
  for (std::size_t i = 0; i < expected; ++i)
    img.data[Index(i)] = double(static_cast<unsigned char>(bytes[reader.pos + i])) / 255.0;
  return img;
}

Image<double> read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_pnm(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename Scalar>
std::string encode_pnm(const Image<Scalar>& image) {
  require_shape(image.channels == 1 || image.channels == 3, "write_pnm: channels must be 1 or 3");
  std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + std::size_t(image.size()));
  for (Index i = 0; i < image.size(); ++i) {
    double v = std::round(double(image.data[i]) * 255.0);
    if (!(v >= 0.0)) v = 0.0;  // also maps NaN to 0
    if (v > 255.0) v = 255.0;
    out[header + std::size_t(i)] = static_cast<char>(static_cast<unsigned char>(v));
  }
  return out;
}

template <typename Scalar>
void write_pnm(const Image<Scalar>& image, const std::filesystem::path& path) {
  const std::string bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

template <typename Scalar>
Image<Scalar> add_awgn(const Image<Scalar>& image, double sigma255, Rng& rng) {
  if (sigma255 < 0) throw std::invalid_argument("add_awgn: negative sigma");
  Image<Scalar> out = image;
  const double s = sigma255 / 255.0;
  for (Index i = 0; i < out.size(); ++i) out.data[i] = Scalar(double(out.data[i]) + s * rng.normal());
  return out;
}

template <typename Scalar>
Mosaic<Scalar> mosaic(const Image<Scalar>& image, BayerPattern pattern) {
  require_shape(image.channels == 3, "mosaic: input must have 3 channels");
  Mosaic<Scalar> m{Image<Scalar>(image.height, image.width, 3), Image<Scalar>(image.height, image.width, 3)};
  for (int r = 0; r < image.height; ++r)
    for (int c = 0; c < image.width; ++c) {
      const int ch = bayer_channel(pattern, r, c);
      m.observed.at(r, c, ch) = image.at(r, c, ch);
      m.mask.at(r, c, ch) = Scalar(1);
    }
  return m;
}

template <typename Scalar>
Image<Scalar> bilinear_demosaick(const Image<Scalar>& observed, const Image<Scalar>& mask) {
  require_shape(observed.same_shape(mask), "bilinear_demosaick: mask shape mismatch");
  static constexpr double kWeight[3][3] = {{1, 2, 1}, {2, 4, 2}, {1, 2, 1}};
  Image<Scalar> out = observed;
  for (int r = 0; r < observed.height; ++r)
    for (int c = 0; c < observed.width; ++c)
      for (int ch = 0; ch < observed.channels; ++ch) {
        if (mask.at(r, c, ch) != Scalar(0)) continue;
        double sum = 0, weight = 0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || cc < 0 || rr >= observed.height || cc >= observed.width) continue;
            if (mask.at(rr, cc, ch) == Scalar(0)) continue;
            sum += kWeight[dr + 1][dc + 1] * double(observed.at(rr, cc, ch));
            weight += kWeight[dr + 1][dc + 1];
          }
        out.at(r, c, ch) = weight > 0 ? Scalar(sum / weight) : Scalar(0);
      }
  return out;
}

template <typename Scalar>
Image<Scalar> rotate_flip(const Image<Scalar>& image, int quarter_turns, bool hflip) {
  Image<Scalar> cur = image;
  for (int t = 0; t < ((quarter_turns % 4) + 4) % 4; ++t) {
    Image<Scalar> next(cur.width, cur.height, cur.channels);
    for (int r = 0; r < next.height; ++r)
      for (int c = 0; c < next.width; ++c)
        for (int ch = 0; ch < cur.channels; ++ch) next.at(r, c, ch) = cur.at(c, cur.width - 1 - r, ch);
    cur = std::move(next);
  }
  if (hflip) {
    Image<Scalar> next(cur.height, cur.width, cur.channels);
    for (int r = 0; r < cur.height; ++r)
      for (int c = 0; c < cur.width; ++c)
        for (int ch = 0; ch < cur.channels; ++ch) next.at(r, c, ch) = cur.at(r, cur.width - 1 - c, ch);
    cur = std::move(next);
  }
  return cur;
}

std::vector<std::filesystem::path> list_pnm(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

Dataset::Dataset(const std::filesystem::path& dir, int crop) : crop_(crop) {
  for (const auto& path : list_pnm(dir)) {
    images_.push_back(read_pnm(path));
    names_.push_back(path.filename().string());
  }
  validate();
}

Dataset::Dataset(std::vector<Image<double>> images, std::vector<std::string> names, int crop)
    : images_(std::move(images)), names_(std::move(names)), crop_(crop) {
  if (names_.size() != images_.size()) names_.resize(images_.size(), "image");
  validate();
}

void Dataset::validate() const {
  if (images_.empty()) throw DataError("dataset is empty");
  if (crop_ <= 0) throw std::invalid_argument("dataset: crop must be positive");
  for (std::size_t i = 0; i < images_.size(); ++i) {
    if (images_[i].height < crop_ || images_[i].width < crop_)
      throw DataError("dataset image " + names_[i] + " is smaller than the crop size");
    if (images_[i].channels != images_.front().channels)
      throw DataError("dataset mixes grayscale and color images");
  }
}

Dataset::Draw Dataset::draw(std::size_t i, Rng& rng, bool augment) const {
  Draw d;
  d.image = i;
  d.row = int(rng.below(std::uint64_t(images_[i].height - crop_ + 1)));
  d.col = int(rng.below(std::uint64_t(images_[i].width - crop_ + 1)));
  if (augment) {
    d.quarter_turns = int(rng.below(4));
    d.hflip = rng.below(2) == 1;
  }
  return d;
}

Dataset::Draw Dataset::draw(Rng& rng, bool augment) const {
  const std::size_t i = std::size_t(rng.below(images_.size()));
  return draw(i, rng, augment);
}

Image<double> Dataset::apply(const Draw& d) const { return apply(d, images_[d.image]); }

Image<double> Dataset::apply(const Draw& d, const Image<double>& source) const {
  return rotate_flip(source.crop(d.row, d.col, crop_, crop_), d.quarter_turns, d.hflip);
}

#define GSC_INSTANTIATE(S)                                                              \
  template struct Image<S>;                                                            \
  template std::string encode_pnm<S>(const Image<S>&);                                 \
  template void write_pnm<S>(const Image<S>&, const std::filesystem::path&);           \
  template Image<S> add_awgn<S>(const Image<S>&, double, Rng&);                        \
  template Mosaic<S> mosaic<S>(const Image<S>&, BayerPattern);                         \
  template Image<S> bilinear_demosaick<S>(const Image<S>&, const Image<S>&);           \
  template Image<S> rotate_flip<S>(const Image<S>&, int, bool);
GSC_INSTANTIATE(float)
GSC_INSTANTIATE(double)
#undef GSC_INSTANTIATE

}  // namespace gsc
