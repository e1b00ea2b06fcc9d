#include <doctest.h>

#include <cmath>
#include <string>

#include "support.hpp"
#include "tfm/error.hpp"
#include "tfm/gradcheck.hpp"
#include "tfm/layers.hpp"
#include "tfm/ops.hpp"

using namespace tfm;
using tfm::testing::probe;
using tfm::testing::random_tensor;
using tfm::testing::same_bits;
using T = Tensor<double>;

namespace {

double dot(const T& a, const T& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("conv2d examples") {
  T x = random_tensor({3, 5, 5}, 1);
  T w = T::zeros({3, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) w.mutable_values()[c * 3 + c] = 1.0;
  CHECK(same_bits(conv2d(x, w, T::zeros({3}), ConvSpec::pointwise(3, 3)), x));

  T small = T::from_values({1, 2, 2}, {1, 2, 3, 4});
  T ones = T::constant({1, 1, 2, 2}, 1.0);
  T y = conv2d(small, ones, T::zeros({1}), ConvSpec{1, 1, 2, 2, 1, 0});
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y[0] == 10.0);

  const ConvSpec down = ConvSpec::downsample(64, 64);
  CHECK(down.output_extent(104, 3) == 52);
  T big = conv2d(T::zeros({64, 104, 104}), T::zeros(down.weight_shape()), T::zeros({64}), down);
  CHECK(big.shape() == Shape{64, 52, 52});

  CHECK_THROWS_AS(conv2d(T::zeros({2, 5, 5}), T::zeros({4, 3, 3, 3}), T(), ConvSpec::same3x3(3, 4)),
                  ShapeError);
}

TEST_CASE("conv_transpose2d examples") {
  const ConvSpec up = ConvSpec::upsample(4, 2);
  CHECK(up.output_extent(13, 2) == 26);
  T y = conv_transpose2d(random_tensor({4, 13, 13}, 2), T::zeros(up.weight_shape()), T::zeros({2}), up);
  CHECK(y.shape() == Shape{2, 26, 26});

  T x = random_tensor({1, 4, 4}, 3);
  ConvSpec id{1, 1, 1, 1, 1, 0, true, 0};
  CHECK(same_bits(conv_transpose2d(x, T::constant({1, 1, 1, 1}, 1.0), T::zeros({1}), id), x));

  CHECK_THROWS_AS(conv_transpose2d(T::zeros({3, 4, 4}), T::zeros(up.weight_shape()), T(), up), ShapeError);
}

// <conv(x), y> == <x, conv^T(y)> for the same weights.
TEST_CASE("transposed convolution is the adjoint") {
  struct Geometry {
    std::size_t cin, cout, k, stride, pad, h, out_pad;
  };
  const Geometry cases[] = {
      {2, 3, 3, 1, 1, 7, 0}, {3, 2, 3, 2, 1, 10, 1}, {2, 2, 2, 2, 0, 8, 0}, {1, 4, 3, 2, 0, 9, 0},
  };
  std::uint64_t seed = 10;
  for (const auto& g : cases) {
    ConvSpec fwd{g.cin, g.cout, g.k, g.k, g.stride, g.pad};
    ConvSpec adj{g.cout, g.cin, g.k, g.k, g.stride, g.pad, true, g.out_pad};
    T w = random_tensor(fwd.weight_shape(), ++seed);
    T x = random_tensor({g.cin, g.h, g.h}, ++seed);
    T cx = conv2d(x, w, T(), fwd);
    T y = random_tensor(cx.shape(), ++seed);
    T aty = conv_transpose2d(y, w, T(), adj);
    REQUIRE(aty.shape() == x.shape());
    const double lhs = dot(cx, y);
    const double rhs = dot(x, aty);
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("linear examples") {
  T x = random_tensor({3, 4}, 4);
  T id = T::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) id.mutable_values()[i * 4 + i] = 1.0;
  CHECK(same_bits(linear(x, id, T::zeros({4})), x));

  T y = linear(T::from_values({1, 2}, {1, 2}), T::from_values({2, 1}, {1, 1}), T::from_values({1}, {0.5}));
  CHECK(y[0] == 3.5);

  CHECK(linear(T::zeros({169, 128}), T::zeros({128, 256}), T::zeros({256})).shape() == Shape{169, 256});
  CHECK_THROWS_AS(linear(T::zeros({1, 3}), T::zeros({2, 1}), T::zeros({1})), ShapeError);
}

TEST_CASE("normalization examples") {
  T c = T::constant({4, 3, 3}, 2.5);
  T g = group_norm(c, T::constant({4}, 1.0), T::zeros({4}), 2, 1e-5);
  for (double v : g.values()) CHECK(v == 0.0);

  T l = layer_norm(T::from_values({1, 2}, {1, 3}), T::constant({2}, 1.0), T::zeros({2}), 1e-5);
  CHECK(l[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  CHECK(l[1] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  CHECK(std::abs(l[0] + 1.0) < 1e-4);

  // groups == channels: every channel normalized on its own
  T x = random_tensor({3, 4, 4}, 5, "inorm", 3.0);
  T inst = group_norm(x, T::constant({3}, 1.0), T::zeros({3}), 3, 1e-5);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 16; ++i) m += inst[ch * 16 + i];
    m /= 16.0;
    for (std::size_t i = 0; i < 16; ++i) v += (inst[ch * 16 + i] - m) * (inst[ch * 16 + i] - m);
    v /= 16.0;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
  }

  CHECK_THROWS_AS(group_norm(T::zeros({6, 2, 2}), T::constant({6}, 1.0), T::zeros({6}), 4, 1e-5), ValueError);
  CHECK_THROWS_AS(Norm<double>::init(NormSpec{NormMode::group, 4, 1e-5}, 6), ValueError);
}

TEST_CASE("group statistics") {
  T x = random_tensor({8, 6, 6}, 6, "gstat", 2.0);
  T y = group_norm(x, T::constant({8}, 1.0), T::zeros({8}), 4, 1e-5);
  const std::size_t per_group = 2 * 36;
  for (std::size_t gi = 0; gi < 4; ++gi) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < per_group; ++i) m += y[gi * per_group + i];
    m /= per_group;
    for (std::size_t i = 0; i < per_group; ++i) v += std::pow(y[gi * per_group + i] - m, 2);
    v /= per_group;
    CHECK(std::abs(m) <= 1e-8);
    CHECK(std::abs(v - 1.0) <= 1e-4);
  }
}

TEST_CASE("dropout") {
  RngStream rng(1, "dropout");
  T x = random_tensor({5, 5}, 7);
  CHECK(same_bits(dropout(x, 0.0, true, &rng), x));
  CHECK(same_bits(dropout(x, 0.7, false, nullptr), x));

  T ones = T::constant({1000000}, 1.0);
  T d = dropout(ones, 0.5, true, &rng);
  double m = 0.0;
  for (double v : d.values()) m += v;
  m /= 1e6;
  CHECK(std::abs(m - 1.0) <= 0.01);

  CHECK_THROWS_AS(dropout(x, 1.0, true, &rng), ValueError);
}

TEST_CASE("initialization") {
  auto norm = Norm<double>::init(NormSpec{}, 64);
  for (double v : norm.gamma.values()) CHECK(v == 1.0);
  for (double v : norm.beta.values()) CHECK(v == 0.0);

  // fan-in 64 * 9 = 576, a = sqrt(5) gain: 1 / sqrt(576)
  CHECK(kaiming_uniform_bound(64 * 9) == doctest::Approx(1.0 / 24.0).epsilon(1e-15));
  RngStream rng(3, "init");
  auto conv = Conv2d<double>::init(ConvSpec::same3x3(64, 64), rng);
  double peak = 0.0;
  for (double v : conv.weight.values()) peak = std::max(peak, std::abs(v));
  CHECK(peak <= 1.0 / 24.0);
  CHECK(peak > 0.99 / 24.0);

  RngStream r1(9, "init");
  RngStream r2(9, "init");
  auto a = Linear<double>::init(16, 8, r1);
  auto b = Linear<double>::init(16, 8, r2);
  CHECK(same_bits(a.weight, b.weight));
  CHECK(same_bits(a.bias, b.bias));
}

TEST_CASE("count_params") {
  RngStream rng(1, "count");
  ParamSet<double> conv;
  Conv2d<double>::init(ConvSpec::same3x3(2, 4), rng).collect(conv, "c.");
  CHECK(count_params(conv) == 76);

  CHECK(count_params(ParamSet<double>{}) == 0);

  ParamSet<double> lin;
  Linear<double>::init(128, 256, rng).collect(lin, "l.");
  CHECK(count_params(lin) == 33024);

  CHECK(conv.names() == std::vector<std::string>{"c.weight", "c.bias"});
  CHECK_THROWS_AS(conv.add("c.bias", T::zeros({1})), ValueError);
}

TEST_CASE("layer gradients") {
  auto check_all = [](const std::function<T()>& f, std::vector<T> inputs) {
    auto r = grad_check(f, std::move(inputs), 1e-5);
    CHECK(r.max_relative_error <= 1e-6);
    return r.max_relative_error;
  };

  SUBCASE("conv2d") {
    for (const ConvSpec& s : {ConvSpec::same3x3(2, 3), ConvSpec::downsample(2, 3), ConvSpec::pointwise(3, 2)}) {
      T x = random_tensor({s.in_channels, 6, 6}, 20);
      T w = random_tensor(s.weight_shape(), 21);
      T b = random_tensor({s.out_channels}, 22);
      check_all([&] { return probe(conv2d(x, w, b, s)); }, {x, w, b});
    }
  }
  SUBCASE("conv_transpose2d") {
    const ConvSpec s = ConvSpec::upsample(3, 2);
    T x = random_tensor({3, 4, 4}, 23);
    T w = random_tensor(s.weight_shape(), 24);
    T b = random_tensor({2}, 25);
    check_all([&] { return probe(conv_transpose2d(x, w, b, s)); }, {x, w, b});
    ConvSpec odd{2, 2, 3, 3, 2, 1, true, 1};
    T x2 = random_tensor({2, 3, 3}, 26);
    T w2 = random_tensor(odd.weight_shape(), 27);
    check_all([&] { return probe(conv_transpose2d(x2, w2, T(), odd)); }, {x2, w2});
  }
  SUBCASE("linear") {
    T x = random_tensor({5, 4}, 28);
    T w = random_tensor({4, 3}, 29);
    T b = random_tensor({3}, 30);
    check_all([&] { return probe(linear(x, w, b)); }, {x, w, b});
  }
  SUBCASE("group norm") {
    T x = random_tensor({4, 3, 3}, 31);
    T g = random_tensor({4}, 32);
    T b = random_tensor({4}, 33);
    check_all([&] { return probe(group_norm(x, g, b, 2, 1e-5)); }, {x, g, b});
  }
  SUBCASE("layer norm") {
    T x = random_tensor({3, 6}, 34);
    T g = random_tensor({6}, 35);
    T b = random_tensor({6}, 36);
    check_all([&] { return probe(layer_norm(x, g, b, 1e-5)); }, {x, g, b});
  }
}

}  // TEST_SUITE
