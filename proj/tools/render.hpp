#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "tfm/tensor.hpp"

namespace tfm::cli {

struct RenderOptions {
  double threshold_pa = 50.0;
  std::size_t arrow_stride = 15;
  std::size_t pixel_scale = 4;
};

struct FieldImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
  double min_magnitude = 0.0;
  double max_magnitude = 0.0;
  std::size_t arrows = 0;
};

/// Colour of a normalized magnitude t in [0, 1]: white to deep blue.
std::array<std::uint8_t, 3> ramp_color(double t);

/// Magnitude heatmap of a [2 x N x N] field scaled to its own maximum, with
/// black arrows on every `arrow_stride`-th grid point whose magnitude exceeds
/// the threshold. Arrow length is proportional to magnitude / max.
FieldImage render_field_image(const Tensor<double>& field, const RenderOptions& options);

/// Writes <stem>.ppm, <stem>.png when PNG support is compiled in, and a
/// <stem>.json sidecar with the colour scale. Returns true if a PNG was written.
bool write_field_image(const std::filesystem::path& stem, const Tensor<double>& field, const RenderOptions& options);

}  // namespace tfm::cli
