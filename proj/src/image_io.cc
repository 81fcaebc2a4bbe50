#include "pmvs/image_io.h"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <png.h>

#include "pmvs/error.h"

namespace pmvs {

namespace {

std::string lower_extension(const std::string& path) {
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return {};
  std::string ext = path.substr(dot + 1);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

Image read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw FormatError("cannot decode PNG " + path + ": " + png.message, 0);
  }
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int channels = color ? 3 : 1;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw FormatError("cannot decode PNG " + path + ": " + png.message, 0);
  }
  Image image(static_cast<int>(png.width), static_cast<int>(png.height), channels);
  auto out = image.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buffer[i] / 255.0f;
  return image;
}

// Netpbm header tokens, skipping '#' comments.
std::string next_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
    token.push_back(static_cast<char>(bytes[pos++]));
  }
  if (token.empty()) throw FormatError("truncated netpbm header", pos);
  return token;
}

int token_int(const std::string& token, std::size_t pos) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad netpbm number '" + token + "'", pos);
  }
}

Image read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, pos);
  int channels = 0;
  bool binary = false;
  if (magic == "P2") channels = 1;
  else if (magic == "P5") channels = 1, binary = true;
  else if (magic == "P3") channels = 3;
  else if (magic == "P6") channels = 3, binary = true;
  else throw FormatError("unsupported netpbm magic " + magic, 0);

  const int width = token_int(next_token(bytes, pos), pos);
  const int height = token_int(next_token(bytes, pos), pos);
  const int maxval = token_int(next_token(bytes, pos), pos);
  if (width <= 0 || height <= 0) throw FormatError("bad netpbm size", pos);
  if (maxval != 255) throw FormatError("only 8-bit netpbm images are supported", pos);

  Image image(width, height, channels);
  auto out = image.data();
  if (binary) {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + out.size()) throw FormatError("truncated netpbm payload", bytes.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bytes[pos + i] / 255.0f;
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = token_int(next_token(bytes, pos), pos) / 255.0f;
    }
  }
  return image;
}

}  // namespace

Image read_image(const std::string& path) {
  const std::string ext = lower_extension(path);
  if (ext == "png") return read_png(path);
  if (ext == "pgm" || ext == "ppm" || ext == "pnm") return read_netpbm(path);
  if (ext == "jpg" || ext == "jpeg") {
    throw FormatError("lossy image formats are not accepted: " + path, 0);
  }
  throw FormatError("unsupported image format: " + path, 0);
}

void write_pgm(const std::string& path, const Image& image) {
  if (image.channels() != 1) throw FormatError("write_pgm needs a single-channel image", 0);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path, 0);
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<char> bytes(image.pixel_count());
  const auto in = image.data();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(in[i], 0.0f, 1.0f);
    bytes[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Image to_grayscale(const Image& image) {
  if (image.channels() == 1) return image;
  Image gray(image.width(), image.height(), 1);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      float sum = 0.0f;
      for (int c = 0; c < image.channels(); ++c) sum += image(x, y, c);
      gray(x, y) = sum / static_cast<float>(image.channels());
    }
  }
  return gray;
}

void write_pfm(const std::string& path, const Grid<float>& values) {
  if (values.channels() != 1) throw FormatError("PFM export needs one channel", 0);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path, 0);
  out << "Pf\n" << values.width() << ' ' << values.height() << "\n-1.0\n";
  for (int y = values.height() - 1; y >= 0; --y) {
    for (int x = 0; x < values.width(); ++x) {
      const auto bits = std::bit_cast<std::uint32_t>(values(x, y));
      char le[4];
      for (int i = 0; i < 4; ++i) le[i] = static_cast<char>(bits >> (8 * i));
      out.write(le, 4);
    }
  }
}

Grid<float> read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  std::size_t pos = 0;
  if (next_token(bytes, pos) != "Pf") throw FormatError("not a grayscale PFM", 0);
  const int width = token_int(next_token(bytes, pos), pos);
  const int height = token_int(next_token(bytes, pos), pos);
  const std::string scale = next_token(bytes, pos);
  if (scale.empty() || scale[0] != '-') throw FormatError("only little-endian PFM supported", pos);
  ++pos;
  if (bytes.size() < pos + static_cast<std::size_t>(width) * height * 4) {
    throw FormatError("truncated PFM payload", bytes.size());
  }
  Grid<float> values(width, height);
  for (int y = height - 1; y >= 0; --y) {
    for (int x = 0; x < width; ++x) {
      std::uint32_t bits = 0;
      for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
      values(x, y) = std::bit_cast<float>(bits);
      pos += 4;
    }
  }
  return values;
}

const char* to_string(FeatureSource source) {
  switch (source) {
    case FeatureSource::kRawIntensity: return "raw-intensity";
    case FeatureSource::kGradient: return "gradient";
    case FeatureSource::kExternalFile: return "external-file";
  }
  return "unknown";
}

FeaturePyramid::FeaturePyramid(std::vector<PyramidLevel> levels, FeatureSource source)
    : levels_(std::move(levels)), source_(source) {}

int FeaturePyramid::channels() const {
  return levels_.empty() ? 0 : levels_.front().data.channels();
}

bool FeaturePyramid::has_level(int scale) const {
  return std::any_of(levels_.begin(), levels_.end(),
                     [&](const PyramidLevel& l) { return l.scale == scale; });
}

const Grid<float>& FeaturePyramid::level(int scale) const {
  for (const auto& l : levels_) {
    if (l.scale == scale) return l.data;
  }
  throw ConfigError("pyramid has no level " + std::to_string(scale));
}

Grid<float> area_downsample(const Grid<float>& image, int factor) {
  if (factor == 1) return image;
  const int w = image.width() / factor;
  const int h = image.height() / factor;
  const int c = image.channels();
  Grid<float> out(w, h, c);
  const double norm = 1.0 / (static_cast<double>(factor) * factor);
  std::vector<double> acc(c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          const auto px = image.pixel(x * factor + dx, y * factor + dy);
          for (int k = 0; k < c; ++k) acc[k] += px[k];
        }
      }
      for (int k = 0; k < c; ++k) out(x, y, k) = static_cast<float>(acc[k] * norm);
    }
  }
  return out;
}

Grid<float> append_gradients(const Grid<float>& image) {
  const int c = image.channels();
  const int w = image.width();
  const int h = image.height();
  Grid<float> mean(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float sum = 0.0f;
      for (int k = 0; k < c; ++k) sum += image(x, y, k);
      mean(x, y) = sum / static_cast<float>(c);
    }
  }
  Grid<float> out(w, h, c + 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) out(x, y, k) = image(x, y, k);
      const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
      const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
      out(x, y, c) = 0.5f * (mean(xr, y) - mean(xl, y));
      out(x, y, c + 1) = 0.5f * (mean(x, yd) - mean(x, yu));
    }
  }
  return out;
}

FeaturePyramid build_pyramid(const Grid<float>& image, FeatureSource mode,
                             bool include_base) {
  constexpr int kMinSize = 1 << kCoarsestScale;
  if (image.width() < kMinSize || image.height() < kMinSize) {
    throw ImageTooSmall("image must be at least " + std::to_string(kMinSize) +
                        " pixels in each dimension");
  }
  std::vector<PyramidLevel> levels;
  for (int s = kCoarsestScale; s >= (include_base ? 0 : kFinestEngineScale); --s) {
    Grid<float> level = area_downsample(image, 1 << s);
    if (mode == FeatureSource::kGradient) level = append_gradients(level);
    levels.push_back({s, std::move(level)});
  }
  return FeaturePyramid(std::move(levels), mode);
}

}  // namespace pmvs
