#include "render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <json.hpp>
#include <string>

#include "tfm/error.hpp"
#include "tfm/tensor_io.hpp"

#ifdef TFM_HAVE_PNG
#include <png.h>
#endif

namespace tfm::cli {

std::array<std::uint8_t, 3> ramp_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto lerp = [t](double a, double b) { return static_cast<std::uint8_t>(std::lround(a + (b - a) * t)); };
  return {lerp(255, 8), lerp(255, 48), lerp(255, 140)};
}

namespace {

void put_pixel(FieldImage& img, long x, long y) {
  if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) {
    return;
  }
  auto* p = &img.rgb[(static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)) * 3];
  p[0] = p[1] = p[2] = 0;
}

void draw_line(FieldImage& img, double x0, double y0, double x1, double y1) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const auto steps = static_cast<long>(std::ceil(len * 2.0)) + 1;
  for (long i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    put_pixel(img, std::lround(x0 + (x1 - x0) * t), std::lround(y0 + (y1 - y0) * t));
  }
}

#ifdef TFM_HAVE_PNG
bool write_png(const std::filesystem::path& path, const FieldImage& img) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (fp == nullptr) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + y * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  return true;
}
#endif

}  // namespace

FieldImage render_field_image(const Tensor<double>& field, const RenderOptions& options) {
  if (field.rank() != 3 || field.dim(0) != 2) {
    throw ShapeError("render: expected a [2 x H x W] field, got " + to_string(field.shape()));
  }
  if (options.arrow_stride == 0 || options.pixel_scale == 0) {
    throw ValueError("render: arrow stride and pixel scale must be positive");
  }
  const std::size_t h = field.dim(1);
  const std::size_t w = field.dim(2);
  const std::size_t plane = h * w;
  auto v = field.values();
  std::vector<double> mag(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    if (!std::isfinite(v[i]) || !std::isfinite(v[plane + i])) {
      throw NumericError("render: non-finite field value");
    }
    mag[i] = std::hypot(v[i], v[plane + i]);
  }

  FieldImage img;
  img.width = w * options.pixel_scale;
  img.height = h * options.pixel_scale;
  img.rgb.resize(img.width * img.height * 3);
  img.min_magnitude = *std::min_element(mag.begin(), mag.end());
  img.max_magnitude = *std::max_element(mag.begin(), mag.end());
  const double scale = img.max_magnitude > 0.0 ? 1.0 / img.max_magnitude : 0.0;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto c = ramp_color(mag[(y / options.pixel_scale) * w + x / options.pixel_scale] * scale);
      std::copy(c.begin(), c.end(), img.rgb.begin() + static_cast<long>((y * img.width + x) * 3));
    }
  }

  const double ps = static_cast<double>(options.pixel_scale);
  const double max_len = 0.9 * static_cast<double>(options.arrow_stride) * ps;
  for (std::size_t r = 0; r < h; r += options.arrow_stride) {
    for (std::size_t c = 0; c < w; c += options.arrow_stride) {
      const std::size_t i = r * w + c;
      if (!(mag[i] > options.threshold_pa)) {
        continue;
      }
      const double len = max_len * mag[i] * scale;
      const double ux = v[i] / mag[i];
      const double uy = v[plane + i] / mag[i];
      const double x0 = (static_cast<double>(c) + 0.5) * ps;
      const double y0 = (static_cast<double>(r) + 0.5) * ps;
      const double x1 = x0 + ux * len;
      const double y1 = y0 + uy * len;
      draw_line(img, x0, y0, x1, y1);
      const double head = std::max(2.0, 0.3 * len);
      for (double sgn : {1.0, -1.0}) {
        // Head strokes at +-30 degrees from the reversed shaft.
        const double ca = std::cos(std::numbers::pi / 6.0);
        const double sa = sgn * std::sin(std::numbers::pi / 6.0);
        const double hx = -(ux * ca - uy * sa);
        const double hy = -(ux * sa + uy * ca);
        draw_line(img, x1, y1, x1 + hx * head, y1 + hy * head);
      }
      ++img.arrows;
    }
  }
  return img;
}

bool write_field_image(const std::filesystem::path& stem, const Tensor<double>& field, const RenderOptions& options) {
  const FieldImage img = render_field_image(field, options);
  std::string ppm = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  ppm.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  write_file_bytes(stem.string() + ".ppm", ppm);

  bool png = false;
#ifdef TFM_HAVE_PNG
  png = write_png(stem.string() + ".png", img);
#endif
  const auto lo = ramp_color(0.0);
  const auto hi = ramp_color(1.0);
  nlohmann::ordered_json side = {
      {"width", img.width},
      {"height", img.height},
      {"pixel_scale", options.pixel_scale},
      {"magnitude_min_pa", img.min_magnitude},
      {"magnitude_max_pa", img.max_magnitude},
      {"color_ramp", {{"kind", "linear"}, {"low_rgb", lo}, {"high_rgb", hi}, {"low_pa", 0.0}, {"high_pa", img.max_magnitude}}},
      {"arrow_threshold_pa", options.threshold_pa},
      {"arrow_stride", options.arrow_stride},
      {"arrows", img.arrows},
      {"png", png}};
  write_file_bytes(stem.string() + ".json", side.dump(2) + "\n");
  return png;
}

}  // namespace tfm::cli
