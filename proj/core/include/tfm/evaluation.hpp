#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tfm/dataset.hpp"
#include "tfm/models.hpp"
#include "tfm/rng.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

/// Per-pixel sqrt(fx^2 + fy^2) of a [2 x N x N] field.
Tensor<double> magnitude_field(const Tensor<double>& field);

/// ||F_nn - F_ref|| / ||F_ref||. Throws ValueError when ||F_ref|| = 0.
double nrmse(std::span<const double> predicted, std::span<const double> reference);

/// Pearson correlation. Throws ValueError when either vector is constant.
double pearson(std::span<const double> predicted, std::span<const double> reference);

struct JointHistogram {
  std::size_t bins = 0;
  double threshold = 0.0;
  /// bins + 1 shared edges, strictly increasing, for both axes.
  std::vector<double> edges;
  /// bins x bins, row = reference bin, column = prediction bin.
  std::vector<double> mass;
  std::size_t included = 0;
  bool empty = true;

  double total_mass() const;
};

/// Normalized 2D histogram of (reference, predicted) magnitudes over pixels
/// where either value reaches `threshold`. Edges span [threshold, max of both].
JointHistogram joint_histogram(std::span<const double> reference, std::span<const double> predicted,
                               double threshold = 150.0, std::size_t bins = 64);

/// Field-of-view change by scale ratio s: s < 1 centre-crops to round(sN),
/// s > 1 zero-pads symmetrically to round(sN), then bilinear resampling back
/// to N. Vector values are resampled, never rescaled.
Tensor<double> rescale_displacement(const Tensor<double>& field, double s);

/// Adds i.i.d. N(0, level * sigma_u2_mean) to every component. Level 0
/// returns an exact copy without drawing.
Tensor<double> add_noise(const Tensor<double>& field, double level, double sigma_u2_mean, RngStream& rng);

/// Mean over fields of the population variance of all entries of each field.
double mean_field_variance(std::span<const Tensor<double>> fields);

struct SampleMetrics {
  std::string id;
  int cell_type = 1;
  double nrmse = 0.0;
  double pearson = 0.0;
  bool flagged = false;  // metric undefined for this sample; excluded from aggregates
  std::string note;
};

struct MetricReport {
  /// "plain", "scale" or "noise".
  std::string axis = "plain";
  std::optional<double> sweep_value;
  std::vector<SampleMetrics> samples;
  double nrmse_mean = 0.0;
  double nrmse_std = 0.0;
  double pearson_mean = 0.0;
  double pearson_std = 0.0;
  std::size_t flagged = 0;
  std::optional<JointHistogram> histogram;

  /// Recomputes the aggregates from `samples` (population std over unflagged).
  void aggregate();
};

/// Maps a dimensionless displacement to a dimensionless traction.
using Predictor = std::function<Tensor<double>(const Tensor<double>& u, int cell_type)>;

/// Wraps a model, converting precision and passing the cell type only to
/// models that take one.
template <typename T>
Predictor model_predictor(const Model<T>& model);

struct EvalOptions {
  double f0_pa = 1000.0;
  std::size_t threads = 1;
  bool histogram = false;
  double histogram_threshold_pa = 150.0;
  std::size_t histogram_bins = 64;
};

/// Predicts every example and scores it against its reference traction
/// (magnitudes for NRMSE, stacked components for Pearson).
MetricReport evaluate(const Predictor& predict, std::span<const Example<double>> examples,
                      const EvalOptions& options = {});

/// Scores precomputed dimensionless predictions, one per example.
MetricReport evaluate_predictions(std::span<const Example<double>> examples,
                                  std::span<const Tensor<double>> predictions, const EvalOptions& options = {});

enum class SweepAxis { scale, noise };

struct SweepSpec {
  SweepAxis axis = SweepAxis::scale;
  std::vector<double> values;
  double sigma_u2_mean = 0.0;  // noise axis only
  std::uint64_t seed = 0;      // noise axis only
};

std::vector<double> default_scale_grid();
std::vector<double> default_noise_grid();

/// One report per sweep value. Scale points transform displacement and
/// reference traction alike (same field of view); noise points perturb only
/// the displacement.
std::vector<MetricReport> run_sweep(const Predictor& predict, std::span<const Example<double>> examples,
                                    const SweepSpec& spec, const EvalOptions& options = {});

}  // namespace tfm
