#pragma once

#include <string>
#include <vector>

#include "pmvs/grid.h"

namespace pmvs {

// Intensities in [0, 1], 1 (gray) or 3 (RGB) channels.
using Image = Grid<float>;

// Reads 8-bit PNG, PGM (P2/P5) or PPM (P3/P6). Lossy formats are rejected.
Image read_image(const std::string& path);
void write_pgm(const std::string& path, const Image& image);

Image to_grayscale(const Image& image);

// PFM ("Pf", little-endian, bottom-to-top rows).
void write_pfm(const std::string& path, const Grid<float>& values);
Grid<float> read_pfm(const std::string& path);

enum class FeatureSource { kRawIntensity, kGradient, kExternalFile };

const char* to_string(FeatureSource source);

struct PyramidLevel {
  int scale = 0;
  Grid<float> data;
};

class FeaturePyramid {
 public:
  FeaturePyramid(std::vector<PyramidLevel> levels, FeatureSource source);

  FeatureSource source() const { return source_; }
  int channels() const;
  bool has_level(int scale) const;
  const Grid<float>& level(int scale) const;
  const std::vector<PyramidLevel>& levels() const { return levels_; }

 private:
  std::vector<PyramidLevel> levels_;
  FeatureSource source_;
};

inline constexpr int kCoarsestScale = 3;
inline constexpr int kFinestEngineScale = 1;

// Area-average downsampling by an integer factor; trailing rows/columns that
// do not fill a block are dropped.
Grid<float> area_downsample(const Grid<float>& image, int factor);

// Central-difference x/y gradients of the channel mean, borders clamped.
Grid<float> append_gradients(const Grid<float>& image);

// Levels s = 3, 2, 1 (plus 0 when `include_base`). Gradient mode appends two
// gradient channels computed at each level. Throws ImageTooSmall when either
// dimension is below 2^3.
FeaturePyramid build_pyramid(const Grid<float>& image, FeatureSource mode,
                             bool include_base = false);

}  // namespace pmvs
