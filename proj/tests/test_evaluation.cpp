#include <doctest.h>

#include <cmath>
#include <numbers>
#include <string>

#include <json.hpp>

#include "support.hpp"
#include "tfm/dataset.hpp"
#include "tfm/elasticity.hpp"
#include "tfm/error.hpp"
#include "tfm/evaluation.hpp"
#include "tfm/report_io.hpp"
#include "tfm/tensor_io.hpp"

using namespace tfm;
using tfm::testing::max_abs_diff;
using tfm::testing::random_tensor;
using tfm::testing::same_bits;
using tfm::testing::ScratchDir;
using T = Tensor<double>;

namespace {

struct PhysicsFixture {
  ScratchDir dir{"eval-physics"};
  DatasetManifest manifest;
  std::vector<Example<double>> examples;
  Predictor fttc;

  PhysicsFixture() {
    DatasetGenConfig cfg;
    cfg.counts = {6, 2, 6};
    cfg.substrate.n = 32;
    cfg.seed = 4;
    manifest = generate_dataset(cfg, dir.path());
    examples = load_examples<double>(dir.path(), manifest, Split::test);
    const DatasetManifest m = manifest;
    fttc = [m](const T& u, int) {
      T phys = normalize_fields(u, m, FieldKind::displacement, Direction::to_physical);
      return normalize_fields(fttc_inverse(phys, m.substrate, 0.0), m, FieldKind::traction,
                              Direction::to_dimensionless);
    };
  }
};

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("magnitude") {
  CHECK(magnitude_field(T::from_values({2, 1, 1}, {3, 4}))[0] == 5.0);
  for (double v : tfm::testing::values_of(magnitude_field(T::zeros({2, 3, 3})))) CHECK(v == 0.0);

  T f = random_tensor({2, 4, 4}, 1);
  std::vector<double> rot(32);
  for (std::size_t p = 0; p < 16; ++p) {
    const double a = 0.37 * static_cast<double>(p);
    rot[p] = std::cos(a) * f[p] - std::sin(a) * f[16 + p];
    rot[16 + p] = std::sin(a) * f[p] + std::cos(a) * f[16 + p];
  }
  CHECK(max_abs_diff(magnitude_field(T({2, 4, 4}, rot)), magnitude_field(f)) < 1e-14);
  CHECK_THROWS_AS(magnitude_field(T::zeros({3, 2, 2})), ShapeError);
}

TEST_CASE("nrmse") {
  const std::vector<double> f = {1, 2, 3, 4};
  const std::vector<double> zero(4, 0.0);
  CHECK(nrmse(f, f) == 0.0);
  CHECK(nrmse(zero, f) == 1.0);
  CHECK(nrmse(std::vector<double>{3, 0}, std::vector<double>{3, 4}) == doctest::Approx(0.8).epsilon(1e-15));
  const std::vector<double> p = {1.5, 1, 3.5, 5};
  std::vector<double> p7, f7;
  for (std::size_t i = 0; i < 4; ++i) {
    p7.push_back(7 * p[i]);
    f7.push_back(7 * f[i]);
  }
  CHECK(nrmse(p7, f7) == doctest::Approx(nrmse(p, f)).epsilon(1e-14));
  CHECK(nrmse(p, f) >= 0.0);
  CHECK_THROWS_AS(nrmse(f, zero), ValueError);
  CHECK_THROWS_AS(nrmse(f, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("pearson") {
  const std::vector<double> f = {1, -2, 3, 0.5, 7};
  std::vector<double> neg, affine;
  for (double v : f) {
    neg.push_back(-v);
    affine.push_back(2 * v + 3);
  }
  CHECK(pearson(f, f) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(neg, f) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(pearson(affine, f) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(pearson(std::vector<double>(5, 2.0), f), ValueError);
}

TEST_CASE("joint histogram") {
  RngStream rng(1, "hist");
  std::vector<double> ref(4000), pred(4000);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref[i] = 1500.0 * rng.uniform();
    pred[i] = ref[i] * (0.8 + 0.4 * rng.uniform());
  }
  JointHistogram h = joint_histogram(ref, pred);
  CHECK(h.bins == 64);
  CHECK(h.threshold == 150.0);
  CHECK_FALSE(h.empty);
  CHECK(std::abs(h.total_mass() - 1.0) <= 1e-12);
  REQUIRE(h.edges.size() == 65);
  CHECK(h.edges.front() == 150.0);
  for (std::size_t i = 1; i < h.edges.size(); ++i) CHECK(h.edges[i] > h.edges[i - 1]);
  double peak = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) peak = std::max({peak, ref[i], pred[i]});
  CHECK(h.edges.back() == peak);
  std::size_t included = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) included += (ref[i] >= 150.0 || pred[i] >= 150.0) ? 1 : 0;
  CHECK(h.included == included);

  JointHistogram same = joint_histogram(ref, ref, 150.0, 16);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c)
      if (r != c) CHECK(same.mass[r * 16 + c] == 0.0);
  CHECK(std::abs(same.total_mass() - 1.0) <= 1e-12);

  JointHistogram none = joint_histogram(std::vector<double>(10, 5.0), std::vector<double>(10, 7.0));
  CHECK(none.empty);
  CHECK(none.total_mass() == 0.0);
  CHECK(none.included == 0);
}

TEST_CASE("rescale") {
  T f = random_tensor({2, 16, 16}, 2);
  T same = rescale_displacement(f, 1.0);
  CHECK(max_abs_diff(same, f) <= 1e-6);

  // bilinear resampling reproduces affine fields away from the clamped border
  const std::size_t n = 16;
  std::vector<double> lin(2 * n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      lin[r * n + c] = 1.0 + 0.5 * c - 0.25 * r;
      lin[n * n + r * n + c] = -2.0 + 0.125 * c + r;
    }
  T zoom = rescale_displacement(T({2, n, n}, lin), 0.5);
  const double m = 8.0, o = 4.0;
  for (std::size_t r = 1; r + 1 < n; ++r)
    for (std::size_t c = 1; c + 1 < n; ++c) {
      const double sc = o + (c + 0.5) * m / n - 0.5;
      const double sr = o + (r + 0.5) * m / n - 0.5;
      CHECK(zoom[r * n + c] == doctest::Approx(1.0 + 0.5 * sc - 0.25 * sr).epsilon(1e-12));
      CHECK(zoom[n * n + r * n + c] == doctest::Approx(-2.0 + 0.125 * sc + sr).epsilon(1e-12));
    }

  T ones = T::constant({2, n, n}, 1.0);
  T out = rescale_displacement(ones, 1.67);
  CHECK(out.shape() == Shape{2, n, n});
  CHECK(out[0] == 0.0);
  CHECK(out[n - 1] == 0.0);
  CHECK(out[(n - 1) * n] == 0.0);
  CHECK(out[(n / 2) * n + n / 2] == 1.0);

  CHECK(rescale_displacement(f, 0.6).shape() == Shape{2, n, n});
  CHECK_THROWS_AS(rescale_displacement(f, 0.01), ValueError);
  CHECK_THROWS_AS(rescale_displacement(f, -1.0), ValueError);
}

TEST_CASE("noise injection") {
  T f = random_tensor({2, 8, 8}, 3);
  RngStream rng(5, "noise");
  CHECK(same_bits(add_noise(f, 0.0, 0.0074, rng), f));
  CHECK_THROWS_AS(add_noise(f, -0.1, 0.0074, rng), ValueError);

  const double target = 0.08 * 0.0074;
  CHECK(target == doctest::Approx(5.92e-4).epsilon(1e-12));
  T z = add_noise(T::zeros({2, 708, 708}), 0.08, 0.0074, rng);
  double mean = 0.0, var = 0.0;
  for (double v : z.values()) mean += v;
  mean /= static_cast<double>(z.numel());
  for (double v : z.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(z.numel());
  CHECK(std::abs(var - target) <= 0.05 * target);
  CHECK(std::abs(mean) <= 4.0 * std::sqrt(target / z.numel()));
}

TEST_CASE("mean field variance") {
  std::vector<T> constant = {T::constant({2, 3, 3}, 4.0), T::constant({2, 3, 3}, -1.0)};
  CHECK(mean_field_variance(constant) == 0.0);
  std::vector<double> alt(18);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? 1.0 : -1.0;
  std::vector<T> one = {T({2, 3, 3}, alt)};
  CHECK(mean_field_variance(one) == 1.0);
  std::vector<double> even(32);
  for (std::size_t i = 0; i < even.size(); ++i) even[i] = i % 2 ? 1.0 : -1.0;
  std::vector<T> balanced = {T({2, 4, 4}, even)};
  CHECK(mean_field_variance(balanced) == 1.0);
  CHECK_THROWS_AS(mean_field_variance(std::vector<T>{}), ValueError);
}

TEST_CASE("aggregates") {
  MetricReport r;
  r.samples = {{"a", 1, 0.2, 0.9, false, ""}, {"b", 2, 0.4, 0.7, false, ""}, {"c", 3, 0.0, 0.0, true, "x"}};
  r.aggregate();
  CHECK(r.flagged == 1);
  CHECK(r.nrmse_mean == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(r.nrmse_std == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(r.pearson_mean == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(r.pearson_std == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("evaluate predictions") {
  std::vector<Example<double>> ex;
  for (int i = 0; i < 3; ++i) {
    ex.push_back({"s" + std::to_string(i), i + 1, random_tensor({2, 8, 8}, 10 + i), random_tensor({2, 8, 8}, 20 + i)});
  }
  std::vector<T> exact = {ex[0].f, ex[1].f, ex[2].f};
  EvalOptions opt;
  opt.histogram = true;
  MetricReport r = evaluate_predictions(ex, exact, opt);
  CHECK(r.nrmse_mean == 0.0);
  CHECK(r.pearson_mean == doctest::Approx(1.0).epsilon(1e-15));
  REQUIRE(r.histogram.has_value());

  // zero reference and constant prediction are flagged, not fatal
  ex.push_back({"zero", 1, random_tensor({2, 8, 8}, 30), T::zeros({2, 8, 8})});
  exact.push_back(T::zeros({2, 8, 8}));
  MetricReport flagged = evaluate_predictions(ex, exact, opt);
  CHECK(flagged.flagged == 1);
  CHECK(flagged.samples.back().flagged);
  CHECK(flagged.nrmse_mean == 0.0);

  exact.pop_back();
  CHECK_THROWS_AS(evaluate_predictions(ex, exact, opt), ShapeError);
}

TEST_CASE("sweeps") {
  PhysicsFixture fx;
  EvalOptions opt;
  MetricReport plain = evaluate(fx.fttc, fx.examples, opt);
  CHECK(plain.nrmse_mean < 1e-6);

  SweepSpec unit{SweepAxis::scale, {1.0}, 0.0, 0};
  auto s1 = run_sweep(fx.fttc, fx.examples, unit, opt);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0].axis == "scale");
  CHECK(*s1[0].sweep_value == 1.0);
  for (std::size_t i = 0; i < plain.samples.size(); ++i) {
    CHECK(s1[0].samples[i].nrmse == plain.samples[i].nrmse);
    CHECK(s1[0].samples[i].pearson == plain.samples[i].pearson);
  }

  auto scales = run_sweep(fx.fttc, fx.examples, {SweepAxis::scale, default_scale_grid(), 0.0, 0}, opt);
  CHECK(scales.size() == 7);
  for (const auto& r : scales) CHECK(std::isfinite(r.nrmse_mean));

  SweepSpec noise{SweepAxis::noise, {0.0, 0.03, 0.06, 0.09}, fx.manifest.sigma_u2_mean, 7};
  auto noisy = run_sweep(fx.fttc, fx.examples, noise, opt);
  REQUIRE(noisy.size() == 4);
  CHECK(noisy[0].nrmse_mean == plain.nrmse_mean);
  for (std::size_t i = 1; i < 4; ++i) CHECK(noisy[i].nrmse_mean > noisy[i - 1].nrmse_mean);

  opt.threads = 3;
  auto threaded = run_sweep(fx.fttc, fx.examples, noise, opt);
  for (std::size_t i = 0; i < 4; ++i) CHECK(threaded[i].nrmse_mean == noisy[i].nrmse_mean);

  CHECK(default_noise_grid() == std::vector<double>{0.0, 0.03, 0.06, 0.08, 0.09});
  CHECK_THROWS_AS(run_sweep(fx.fttc, fx.examples, {SweepAxis::scale, {}, 0.0, 0}, opt), ValueError);
}

TEST_CASE("report files") {
  MetricReport r;
  r.axis = "noise";
  r.sweep_value = 0.08;
  r.samples = {{"test_0000", 2, 0.25, 0.5, false, ""}};
  r.aggregate();
  std::vector<MetricReport> rs = {r};
  CHECK(reports_to_csv(rs) == "sweep_value,sample_id,nrmse,pearson\n0.08,test_0000,0.25,0.5\n");
  auto j = nlohmann::json::parse(reports_to_json(rs));
  CHECK(j["reports"][0]["nrmse_magnitude"]["mean"] == 0.25);
  CHECK(j["reports"][0]["samples"][0]["id"] == "test_0000");
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(std::nan("")) == "nan");

  ScratchDir dir("reports");
  rs[0].histogram = joint_histogram(std::vector<double>{200, 300}, std::vector<double>{210, 290}, 150.0, 4);
  write_reports(dir.path(), "eval", rs);
  CHECK(std::filesystem::exists(dir.path() / "eval.json"));
  CHECK(std::filesystem::exists(dir.path() / "eval.csv"));
  CHECK(load_tensor<double>(dir.path() / "eval_hist0.tft").shape() == Shape{4, 4});
}

}  // TEST_SUITE
