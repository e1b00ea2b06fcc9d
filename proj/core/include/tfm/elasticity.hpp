#pragma once

#include <array>
#include <cstddef>
#include <utility>

#include "tfm/rng.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

/// Linear elastic half-space sampled on a periodic N x N grid.
struct ElasticSubstrate {
  double young_modulus_pa = 10000.0;
  double poisson_ratio = 0.5;
  double pixel_size_um = 1.83;
  std::size_t n = 104;

  void validate() const;
};

/// Row-major 2x2 matrix [[a00, a01], [a10, a11]].
using Mat2 = std::array<double, 4>;

/// Boussinesq kernel in Fourier space for wavevector (kx, ky) in rad/um;
/// result in um/Pa. Throws ValueError at k = 0.
Mat2 greens_factor(double kx, double ky, const ElasticSubstrate& s);

/// Angular wavenumber of FFT bin `index` on an n-point axis (negative
/// frequencies in the upper half, Nyquist bin mapped to -pi/pixel).
double wavenumber(std::size_t index, std::size_t n, double pixel_size_um);

/// Kernel used by the discrete transforms for bin (row my, column mx): the
/// zero matrix at DC, and the off-diagonal coupling dropped on Nyquist rows
/// and columns so that real fields map to real fields.
Mat2 discrete_greens(std::size_t mx, std::size_t my, const ElasticSubstrate& s);

/// Fields are [2 x N x N] with component 0 = x (along columns), 1 = y (along
/// rows). Displacement in um, traction in Pa.
Tensor<double> forward_displacement(const Tensor<double>& traction, const ElasticSubstrate& s);

/// Tikhonov-regularized inverse: per mode f = (G^T G + lambda^2 I)^-1 G^T u.
Tensor<double> fttc_inverse(const Tensor<double>& displacement, const ElasticSubstrate& s, double lambda);

struct TractionGenConfig {
  std::size_t n = 104;
  std::size_t min_dipoles = 2;
  std::size_t max_dipoles = 8;
  double min_sigma = 2.0;  // grid steps
  double max_sigma = 6.0;
  /// Dipole length range as a fraction of n.
  double min_length_frac = 0.08;
  double max_length_frac = 0.30;
  /// Relative sampling weights of cell types 1..4.
  std::array<double, 4> cell_type_weights{1.0, 1.0, 1.0, 1.0};
  /// Per-type spot amplitude range in Pa.
  std::array<std::pair<double, double>, 4> amplitude_pa{{{100.0, 700.0}, {400.0, 1200.0}, {800.0, 1600.0},
                                                        {100.0, 2000.0}}};

  void validate() const;
};

struct SyntheticTraction {
  Tensor<double> traction;  // [2 x n x n], Pa
  int cell_type = 1;
};

/// Random contractile dipoles: each dipole places two periodic Gaussian spots
/// at p +- d/2 pulling towards p. Each spot is rescaled so both spots of a
/// dipole carry the same discrete total, which makes the net force vanish.
SyntheticTraction sample_synthetic_traction(RngStream& rng, const TractionGenConfig& cfg);

}  // namespace tfm
