#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tfm/elasticity.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct SplitCounts {
  std::size_t train = 128;
  std::size_t val = 16;
  std::size_t test = 16;

  std::size_t total() const { return train + val + test; }
};

struct SampleEntry {
  std::string id;
  int cell_type = 1;
  std::string u_path;  // relative to the dataset directory
  std::string f_path;
  Split split = Split::train;
};

struct DatasetManifest {
  std::size_t n = 0;
  ElasticSubstrate substrate;
  double u0_um = 0.0;
  double f0_pa = 1000.0;
  double sigma_u2_mean = 0.0;
  std::uint64_t seed = 0;
  /// Generator settings echoed as a JSON object; informational.
  std::string generator_json = "{}";
  std::vector<SampleEntry> samples;

  std::size_t count(Split split) const;
  std::vector<SampleEntry> entries(Split split) const;

  std::string to_json() const;
  static DatasetManifest from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

struct DatasetGenConfig {
  SplitCounts counts;
  ElasticSubstrate substrate;
  TractionGenConfig traction;
  /// Standard deviation of optional Gaussian measurement noise on u (um).
  double measurement_noise_um = 0.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

/// Writes samples/<id>_u.tft, samples/<id>_f.tft (f64, physical units) and
/// manifest.json under `dir`. A pure function of (config, seed).
DatasetManifest generate_dataset(const DatasetGenConfig& cfg, const std::filesystem::path& dir);

enum class FieldKind { displacement, traction };
enum class Direction { to_dimensionless, to_physical };

/// u~ = u / u0, f~ = f / f0, or the inverse.
Tensor<double> normalize_fields(const Tensor<double>& field, const DatasetManifest& manifest, FieldKind kind,
                                Direction direction);

/// One sample in dimensionless units.
template <typename T>
struct Example {
  std::string id;
  int cell_type = 1;
  Tensor<T> u;
  Tensor<T> f;
};

/// Physical (u, f) of one manifest entry, validated against the manifest grid.
std::pair<Tensor<double>, Tensor<double>> load_sample(const std::filesystem::path& dir,
                                                      const DatasetManifest& manifest, const SampleEntry& entry);

template <typename T>
std::vector<Example<T>> load_examples(const std::filesystem::path& dir, const DatasetManifest& manifest,
                                      Split split);

}  // namespace tfm
