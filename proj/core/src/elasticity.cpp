#include "tfm/elasticity.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <string>

#include "tfm/error.hpp"

namespace tfm {

namespace {

using Complex = std::complex<double>;

// FFTW planning is not thread safe; execution on distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

/// In-place 2D complex transform of an n x n row-major array.
void fft2(std::vector<Complex>& data, std::size_t n, int sign) {
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(n), static_cast<int>(n), buf, buf, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
}

void check_field(const Tensor<double>& field, const ElasticSubstrate& s, const char* what) {
  if (field.shape() != Shape{2, s.n, s.n}) {
    throw ShapeError(std::string(what) + ": expected " + to_string(Shape{2, s.n, s.n}) + ", got " +
                     to_string(field.shape()));
  }
  for (double v : field.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(what) + ": non-finite input value");
    }
  }
}

/// Applies a per-mode 2x2 operator to a [2 x n x n] real field.
template <typename ModeOp>
Tensor<double> apply_spectral(const Tensor<double>& field, std::size_t n, ModeOp op) {
  const std::size_t plane = n * n;
  std::vector<Complex> a(plane), b(plane);
  auto v = field.values();
  for (std::size_t i = 0; i < plane; ++i) {
    a[i] = v[i];
    b[i] = v[plane + i];
  }
  fft2(a, n, FFTW_FORWARD);
  fft2(b, n, FFTW_FORWARD);
  for (std::size_t my = 0; my < n; ++my) {
    for (std::size_t mx = 0; mx < n; ++mx) {
      const std::size_t i = my * n + mx;
      const Mat2 m = op(mx, my);
      const Complex x = a[i];
      const Complex y = b[i];
      a[i] = m[0] * x + m[1] * y;
      b[i] = m[2] * x + m[3] * y;
    }
  }
  fft2(a, n, FFTW_BACKWARD);
  fft2(b, n, FFTW_BACKWARD);
  std::vector<double> out(2 * plane);
  const double inv = 1.0 / static_cast<double>(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = a[i].real() * inv;
    out[plane + i] = b[i].real() * inv;
  }
  return Tensor<double>({2, n, n}, std::move(out));
}

}  // namespace

void ElasticSubstrate::validate() const {
  if (!(young_modulus_pa > 0.0)) {
    throw ValueError("substrate: Young's modulus must be positive");
  }
  if (!(poisson_ratio >= 0.0 && poisson_ratio <= 0.5)) {
    throw ValueError("substrate: Poisson ratio must lie in [0, 0.5]");
  }
  if (!(pixel_size_um > 0.0)) {
    throw ValueError("substrate: pixel size must be positive");
  }
  if (n < 2) {
    throw ValueError("substrate: grid size must be at least 2");
  }
}

Mat2 greens_factor(double kx, double ky, const ElasticSubstrate& s) {
  const double k2 = kx * kx + ky * ky;
  if (k2 == 0.0) {
    throw ValueError("greens_factor: undefined at zero frequency");
  }
  const double k = std::sqrt(k2);
  const double nu = s.poisson_ratio;
  const double c = 2.0 * (1.0 + nu) / (s.young_modulus_pa * k * k2);
  const double off = -nu * kx * ky * c;
  return {c * ((1.0 - nu) * k2 + nu * ky * ky), off, off, c * ((1.0 - nu) * k2 + nu * kx * kx)};
}

double wavenumber(std::size_t index, std::size_t n, double pixel_size_um) {
  const auto signed_index = index < (n + 1) / 2 ? static_cast<double>(index)
                                                : static_cast<double>(index) - static_cast<double>(n);
  return 2.0 * std::numbers::pi * signed_index / (static_cast<double>(n) * pixel_size_um);
}

Mat2 discrete_greens(std::size_t mx, std::size_t my, const ElasticSubstrate& s) {
  if (mx == 0 && my == 0) {
    return {0.0, 0.0, 0.0, 0.0};
  }
  Mat2 g = greens_factor(wavenumber(mx, s.n, s.pixel_size_um), wavenumber(my, s.n, s.pixel_size_um), s);
  const bool nyquist = s.n % 2 == 0 && (mx == s.n / 2 || my == s.n / 2);
  if (nyquist) {
    g[1] = g[2] = 0.0;
  }
  return g;
}

Tensor<double> forward_displacement(const Tensor<double>& traction, const ElasticSubstrate& s) {
  s.validate();
  check_field(traction, s, "forward_displacement");
  return apply_spectral(traction, s.n, [&](std::size_t mx, std::size_t my) { return discrete_greens(mx, my, s); });
}

Tensor<double> fttc_inverse(const Tensor<double>& displacement, const ElasticSubstrate& s, double lambda) {
  s.validate();
  check_field(displacement, s, "fttc_inverse");
  if (!(lambda >= 0.0)) {
    throw ValueError("fttc_inverse: regularization must be non-negative");
  }
  const double l2 = lambda * lambda;
  return apply_spectral(displacement, s.n, [&](std::size_t mx, std::size_t my) -> Mat2 {
    if (mx == 0 && my == 0) {
      return {0.0, 0.0, 0.0, 0.0};
    }
    const Mat2 g = discrete_greens(mx, my, s);
    // g is symmetric, so G^T G = G G.
    const double a = g[0] * g[0] + g[1] * g[2] + l2;
    const double b = g[0] * g[1] + g[1] * g[3];
    const double d = g[2] * g[1] + g[3] * g[3] + l2;
    const double det = a * d - b * b;
    const Mat2 inv{d / det, -b / det, -b / det, a / det};
    return {inv[0] * g[0] + inv[1] * g[2], inv[0] * g[1] + inv[1] * g[3], inv[2] * g[0] + inv[3] * g[2],
            inv[2] * g[1] + inv[3] * g[3]};
  });
}

void TractionGenConfig::validate() const {
  if (n < 4) {
    throw ValueError("traction generator: grid size must be at least 4");
  }
  if (min_dipoles == 0 || min_dipoles > max_dipoles) {
    throw ValueError("traction generator: need 1 <= min_dipoles <= max_dipoles");
  }
  if (!(min_sigma > 0.0) || min_sigma > max_sigma) {
    throw ValueError("traction generator: need 0 < min_sigma <= max_sigma");
  }
  if (!(min_length_frac > 0.0) || min_length_frac > max_length_frac || max_length_frac >= 0.5) {
    throw ValueError("traction generator: need 0 < min_length_frac <= max_length_frac < 0.5");
  }
  double total = 0.0;
  for (double w : cell_type_weights) {
    if (!(w >= 0.0)) {
      throw ValueError("traction generator: cell-type weights must be non-negative");
    }
    total += w;
  }
  if (!(total > 0.0)) {
    throw ValueError("traction generator: cell-type weights sum to zero");
  }
  for (const auto& [lo, hi] : amplitude_pa) {
    if (!(lo > 0.0) || lo > hi) {
      throw ValueError("traction generator: amplitude ranges need 0 < lo <= hi");
    }
  }
}

SyntheticTraction sample_synthetic_traction(RngStream& rng, const TractionGenConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n;
  const double nd = static_cast<double>(n);

  double total = 0.0;
  for (double w : cfg.cell_type_weights) {
    total += w;
  }
  double pick = rng.uniform() * total;
  int cell_type = 4;
  for (int t = 0; t < 4; ++t) {
    pick -= cfg.cell_type_weights[static_cast<std::size_t>(t)];
    if (pick < 0.0) {
      cell_type = t + 1;
      break;
    }
  }
  const auto [amp_lo, amp_hi] = cfg.amplitude_pa[static_cast<std::size_t>(cell_type - 1)];

  const std::size_t plane = n * n;
  std::vector<double> field(2 * plane, 0.0);
  std::vector<double> spot(plane);

  // Periodic Gaussian centred at (cx, cy) written into `spot`; returns its sum.
  auto render_spot = [&](double cx, double cy, double sigma) {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double dy = static_cast<double>(r) - cy;
      dy -= nd * std::round(dy / nd);
      for (std::size_t c = 0; c < n; ++c) {
        double dx = static_cast<double>(c) - cx;
        dx -= nd * std::round(dx / nd);
        const double g = std::exp(-(dx * dx + dy * dy) * inv);
        spot[r * n + c] = g;
        s += g;
      }
    }
    return s;
  };

  const std::size_t dipoles = cfg.min_dipoles + rng.below(cfg.max_dipoles - cfg.min_dipoles + 1);
  for (std::size_t d = 0; d < dipoles; ++d) {
    const double px = rng.uniform(0.0, nd);
    const double py = rng.uniform(0.0, nd);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double length = rng.uniform(cfg.min_length_frac, cfg.max_length_frac) * nd;
    const double sigma = rng.uniform(cfg.min_sigma, cfg.max_sigma);
    const double amplitude = rng.uniform(amp_lo, amp_hi);
    const double ux = std::cos(angle);
    const double uy = std::sin(angle);

    // Both spots have the same shape up to discretization; equalize their sums.
    const double ends[2][3] = {{px + 0.5 * length * ux, py + 0.5 * length * uy, -1.0},
                               {px - 0.5 * length * ux, py - 0.5 * length * uy, 1.0}};
    std::vector<double> sums(2);
    std::vector<std::vector<double>> shapes(2);
    for (int e = 0; e < 2; ++e) {
      sums[static_cast<std::size_t>(e)] = render_spot(ends[e][0], ends[e][1], sigma);
      shapes[static_cast<std::size_t>(e)] = spot;
    }
    const double target = 0.5 * (sums[0] + sums[1]);
    for (int e = 0; e < 2; ++e) {
      const double weight = amplitude * target / sums[static_cast<std::size_t>(e)];
      const double dir = ends[e][2];
      const auto& g = shapes[static_cast<std::size_t>(e)];
      for (std::size_t i = 0; i < plane; ++i) {
        field[i] += dir * ux * weight * g[i];
        field[plane + i] += dir * uy * weight * g[i];
      }
    }
  }
  return {Tensor<double>({2, n, n}, std::move(field)), cell_type};
}

}  // namespace tfm
