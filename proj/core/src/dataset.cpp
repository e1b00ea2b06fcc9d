#include "tfm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "tfm/error.hpp"
#include "tfm/evaluation.hpp"
#include "tfm/parallel.hpp"
#include "tfm/tensor_io.hpp"

namespace tfm {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ValueError("unknown split '" + std::string(name) + "'; expected one of {train, val, test}");
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const SampleEntry& e) { return e.split == split; }));
}

std::vector<SampleEntry> DatasetManifest::entries(Split split) const {
  std::vector<SampleEntry> out;
  for (const auto& e : samples) {
    if (e.split == split) {
      out.push_back(e);
    }
  }
  return out;
}

std::string DatasetManifest::to_json() const {
  ojson j;
  j["n"] = n;
  j["substrate"] = {{"e_pa", substrate.young_modulus_pa},
                    {"nu", substrate.poisson_ratio},
                    {"pixel_size_um", substrate.pixel_size_um}};
  j["u0_um"] = u0_um;
  j["f0_pa"] = f0_pa;
  j["sigma_u2_mean"] = sigma_u2_mean;
  j["seed"] = seed;
  j["counts"] = {{"train", count(Split::train)}, {"val", count(Split::val)}, {"test", count(Split::test)}};
  j["model_inputs"] = "dimensionless";
  j["generator"] = ojson::parse(generator_json);
  ojson list = ojson::array();
  for (const auto& e : samples) {
    list.push_back({{"id", e.id},
                    {"cell_type", e.cell_type},
                    {"u_path", e.u_path},
                    {"f_path", e.f_path},
                    {"split", std::string(to_string(e.split))}});
  }
  j["samples"] = std::move(list);
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(std::string_view text) {
  try {
    const ojson j = ojson::parse(text);
    DatasetManifest m;
    m.n = j.at("n").get<std::size_t>();
    const auto& s = j.at("substrate");
    m.substrate.young_modulus_pa = s.at("e_pa").get<double>();
    m.substrate.poisson_ratio = s.at("nu").get<double>();
    m.substrate.pixel_size_um = s.at("pixel_size_um").get<double>();
    m.substrate.n = m.n;
    m.u0_um = j.at("u0_um").get<double>();
    m.f0_pa = j.at("f0_pa").get<double>();
    m.sigma_u2_mean = j.at("sigma_u2_mean").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.generator_json = j.contains("generator") ? j.at("generator").dump() : "{}";
    for (const auto& e : j.at("samples")) {
      SampleEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.cell_type = e.at("cell_type").get<int>();
      entry.u_path = e.at("u_path").get<std::string>();
      entry.f_path = e.at("f_path").get<std::string>();
      entry.split = parse_split(e.at("split").get<std::string>());
      m.samples.push_back(std::move(entry));
    }
    m.substrate.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed dataset manifest: ") + e.what());
  }
}

void DatasetManifest::save(const fs::path& path) const { write_file_bytes(path, to_json()); }

DatasetManifest DatasetManifest::load(const fs::path& path) {
  if (!fs::exists(path)) {
    throw IoError("dataset manifest not found: " + path.string());
  }
  return from_json(read_file_bytes(path));
}

namespace {

std::string generator_echo(const DatasetGenConfig& cfg) {
  const auto& t = cfg.traction;
  ojson amplitudes = ojson::array();
  for (const auto& [lo, hi] : t.amplitude_pa) {
    amplitudes.push_back({lo, hi});
  }
  ojson j = {{"rng", std::string(RngStream::kAlgorithm)},
             {"dipoles", {t.min_dipoles, t.max_dipoles}},
             {"sigma_steps", {t.min_sigma, t.max_sigma}},
             {"length_frac", {t.min_length_frac, t.max_length_frac}},
             {"cell_type_weights", t.cell_type_weights},
             {"amplitude_pa", amplitudes},
             {"measurement_noise_um", cfg.measurement_noise_um}};
  return j.dump();
}

std::string sample_id(Split split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", std::string(to_string(split)).c_str(), index);
  return buf;
}

}  // namespace

DatasetManifest generate_dataset(const DatasetGenConfig& cfg, const fs::path& dir) {
  if (cfg.counts.train == 0 || cfg.counts.val == 0 || cfg.counts.test == 0) {
    throw ValueError("generate_dataset: every split needs at least one sample");
  }
  if (!(cfg.measurement_noise_um >= 0.0)) {
    throw ValueError("generate_dataset: measurement noise must be non-negative");
  }
  cfg.substrate.validate();
  TractionGenConfig traction = cfg.traction;
  traction.n = cfg.substrate.n;
  traction.validate();

  std::error_code ec;
  fs::create_directories(dir / "samples", ec);
  if (ec) {
    throw IoError("cannot create dataset directory " + (dir / "samples").string() + ": " + ec.message());
  }

  DatasetManifest m;
  m.n = cfg.substrate.n;
  m.substrate = cfg.substrate;
  m.seed = cfg.seed;
  m.generator_json = generator_echo(cfg);
  for (Split split : {Split::train, Split::val, Split::test}) {
    const std::size_t count = split == Split::train ? cfg.counts.train
                              : split == Split::val ? cfg.counts.val
                                                    : cfg.counts.test;
    for (std::size_t i = 0; i < count; ++i) {
      SampleEntry e;
      e.id = sample_id(split, i);
      e.u_path = "samples/" + e.id + "_u.tft";
      e.f_path = "samples/" + e.id + "_f.tft";
      e.split = split;
      m.samples.push_back(std::move(e));
    }
  }

  const RngStream root(cfg.seed, "dataset");
  std::vector<Tensor<double>> displacements(m.samples.size());
  parallel_for(m.samples.size(), cfg.threads, [&](std::size_t i) {
    SampleEntry& e = m.samples[i];
    RngStream rng = root.split(e.id);
    SyntheticTraction st = sample_synthetic_traction(rng, traction);
    Tensor<double> u = forward_displacement(st.traction, cfg.substrate);
    if (cfg.measurement_noise_um > 0.0) {
      RngStream noise = root.split("noise/" + e.id);
      auto values = u.mutable_values();
      for (double& v : values) {
        v += cfg.measurement_noise_um * noise.normal();
      }
    }
    e.cell_type = st.cell_type;
    save_tensor(dir / e.u_path, u);
    save_tensor(dir / e.f_path, st.traction);
    displacements[i] = std::move(u);
  });

  double u0 = 0.0;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    if (m.samples[i].split == Split::train) {
      for (double v : displacements[i].values()) {
        u0 = std::max(u0, std::abs(v));
      }
    }
  }
  if (!(u0 > 0.0)) {
    throw NumericError("generate_dataset: training displacements are identically zero");
  }
  m.u0_um = u0;

  std::vector<Tensor<double>> train_fields;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    if (m.samples[i].split == Split::train) {
      train_fields.push_back(normalize_fields(displacements[i], m, FieldKind::displacement, Direction::to_dimensionless));
    }
  }
  m.sigma_u2_mean = mean_field_variance(train_fields);
  m.save(dir / "manifest.json");
  return m;
}

Tensor<double> normalize_fields(const Tensor<double>& field, const DatasetManifest& manifest, FieldKind kind,
                                Direction direction) {
  const double c = kind == FieldKind::displacement ? manifest.u0_um : manifest.f0_pa;
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw ValueError(std::string("normalize_fields: manifest lacks a positive ") +
                     (kind == FieldKind::displacement ? "u0_um" : "f0_pa"));
  }
  std::vector<double> out(field.values().begin(), field.values().end());
  for (double& v : out) {
    v = direction == Direction::to_dimensionless ? v / c : v * c;
  }
  return Tensor<double>(field.shape(), std::move(out));
}

std::pair<Tensor<double>, Tensor<double>> load_sample(const fs::path& dir, const DatasetManifest& manifest,
                                                      const SampleEntry& entry) {
  const Shape expected{2, manifest.n, manifest.n};
  auto check = [&](const Tensor<double>& t, const std::string& path) {
    if (t.shape() != expected) {
      throw ShapeError(path + ": shape " + to_string(t.shape()) + " does not match manifest " + to_string(expected));
    }
    for (double v : t.values()) {
      if (!std::isfinite(v)) {
        throw NumericError(path + ": non-finite value");
      }
    }
  };
  const fs::path up = dir / entry.u_path;
  const fs::path fp = dir / entry.f_path;
  Tensor<double> u = load_tensor<double>(up);
  check(u, up.string());
  Tensor<double> f = load_tensor<double>(fp);
  check(f, fp.string());
  return {std::move(u), std::move(f)};
}

template <typename T>
std::vector<Example<T>> load_examples(const fs::path& dir, const DatasetManifest& manifest, Split split) {
  std::vector<Example<T>> out;
  for (const auto& entry : manifest.entries(split)) {
    auto [u, f] = load_sample(dir, manifest, entry);
    Example<T> ex;
    ex.id = entry.id;
    ex.cell_type = entry.cell_type;
    ex.u = normalize_fields(u, manifest, FieldKind::displacement, Direction::to_dimensionless).template cast<T>();
    ex.f = normalize_fields(f, manifest, FieldKind::traction, Direction::to_dimensionless).template cast<T>();
    out.push_back(std::move(ex));
  }
  return out;
}

template std::vector<Example<float>> load_examples(const fs::path&, const DatasetManifest&, Split);
template std::vector<Example<double>> load_examples(const fs::path&, const DatasetManifest&, Split);

}  // namespace tfm
