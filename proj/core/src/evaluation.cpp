#include "tfm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tfm/error.hpp"
#include "tfm/ops.hpp"
#include "tfm/parallel.hpp"

namespace tfm {

Tensor<double> magnitude_field(const Tensor<double>& field) {
  if (field.rank() != 3 || field.dim(0) != 2) {
    throw ShapeError("magnitude_field: expected [2 x H x W], got " + to_string(field.shape()));
  }
  const std::size_t plane = field.dim(1) * field.dim(2);
  auto v = field.values();
  std::vector<double> out(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = std::hypot(v[i], v[plane + i]);
  }
  return Tensor<double>({field.dim(1), field.dim(2)}, std::move(out));
}

double nrmse(std::span<const double> predicted, std::span<const double> reference) {
  if (predicted.size() != reference.size()) {
    throw ShapeError("nrmse: length " + std::to_string(predicted.size()) + " vs " + std::to_string(reference.size()));
  }
  double err = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = predicted[i] - reference[i];
    err += d * d;
    ref += reference[i] * reference[i];
  }
  if (!(ref > 0.0)) {
    throw ValueError("nrmse: reference has zero norm");
  }
  return std::sqrt(err / ref);
}

double pearson(std::span<const double> predicted, std::span<const double> reference) {
  if (predicted.size() != reference.size() || predicted.empty()) {
    throw ShapeError("pearson: length " + std::to_string(predicted.size()) + " vs " + std::to_string(reference.size()));
  }
  const double n = static_cast<double>(predicted.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    ma += predicted[i];
    mb += reference[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double a = predicted[i] - ma;
    const double b = reference[i] - mb;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) {
    throw ValueError("pearson: constant input has zero variance");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double JointHistogram::total_mass() const {
  double s = 0.0;
  for (double m : mass) {
    s += m;
  }
  return s;
}

JointHistogram joint_histogram(std::span<const double> reference, std::span<const double> predicted,
                               double threshold, std::size_t bins) {
  if (reference.size() != predicted.size()) {
    throw ShapeError("joint_histogram: length mismatch");
  }
  if (!(threshold >= 0.0)) {
    throw ValueError("joint_histogram: threshold must be non-negative");
  }
  if (bins < 2) {
    throw ValueError("joint_histogram: need at least 2 bins");
  }
  JointHistogram h;
  h.bins = bins;
  h.threshold = threshold;
  h.mass.assign(bins * bins, 0.0);

  double hi = threshold;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i] >= threshold || predicted[i] >= threshold) {
      hi = std::max({hi, reference[i], predicted[i]});
      ++h.included;
    }
  }
  if (!(hi > threshold)) {
    hi = threshold + 1.0;
  }
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges[b] = threshold + (hi - threshold) * static_cast<double>(b) / static_cast<double>(bins);
  }
  h.edges[bins] = hi;
  if (h.included == 0) {
    return h;
  }
  auto bin_of = [&](double v) {
    const double t = (v - threshold) / (hi - threshold) * static_cast<double>(bins);
    return static_cast<std::size_t>(std::clamp(std::floor(t), 0.0, static_cast<double>(bins - 1)));
  };
  const double w = 1.0 / static_cast<double>(h.included);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference[i] >= threshold || predicted[i] >= threshold) {
      h.mass[bin_of(reference[i]) * bins + bin_of(predicted[i])] += w;
    }
  }
  h.empty = false;
  return h;
}

Tensor<double> rescale_displacement(const Tensor<double>& field, double s) {
  if (field.rank() != 3 || field.dim(1) != field.dim(2)) {
    throw ShapeError("rescale_displacement: expected [C x N x N], got " + to_string(field.shape()));
  }
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw ValueError("rescale_displacement: scale ratio must be positive and finite");
  }
  const std::size_t c = field.dim(0);
  const std::size_t n = field.dim(1);
  const auto m = static_cast<std::size_t>(std::llround(s * static_cast<double>(n)));
  if (m == n) {
    return field.clone();
  }
  if (m < 4) {
    throw ValueError("rescale_displacement: scale " + std::to_string(s) + " leaves a degenerate " +
                     std::to_string(m) + "-pixel field of view");
  }
  // Intermediate m x m view: centre crop (m < n) or zero padding (m > n).
  auto src = field.values();
  std::vector<double> view(c * m * m, 0.0);
  if (m < n) {
    const std::size_t off = (n - m) / 2;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t q = 0; q < m; ++q) view[(ch * m + r) * m + q] = src[(ch * n + r + off) * n + q + off];
  } else {
    const std::size_t off = (m - n) / 2;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t q = 0; q < n; ++q) view[(ch * m + r + off) * m + q + off] = src[(ch * n + r) * n + q];
  }

  // Bilinear resampling with pixel centres aligned: x_src = (x + 1/2) m/n - 1/2.
  const double ratio = static_cast<double>(m) / static_cast<double>(n);
  std::vector<std::size_t> i0(n), i1(n);
  std::vector<double> wt(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(m - 1));
    i0[i] = static_cast<std::size_t>(std::floor(x));
    i1[i] = std::min(i0[i] + 1, m - 1);
    wt[i] = x - static_cast<double>(i0[i]);
  }
  std::vector<double> out(c * n * n);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* v = view.data() + ch * m * m;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t q = 0; q < n; ++q) {
        const double top = (1.0 - wt[q]) * v[i0[r] * m + i0[q]] + wt[q] * v[i0[r] * m + i1[q]];
        const double bottom = (1.0 - wt[q]) * v[i1[r] * m + i0[q]] + wt[q] * v[i1[r] * m + i1[q]];
        out[(ch * n + r) * n + q] = (1.0 - wt[r]) * top + wt[r] * bottom;
      }
    }
  }
  return Tensor<double>(field.shape(), std::move(out));
}

Tensor<double> add_noise(const Tensor<double>& field, double level, double sigma_u2_mean, RngStream& rng) {
  if (!(level >= 0.0)) {
    throw ValueError("add_noise: noise level must be non-negative");
  }
  if (!(sigma_u2_mean >= 0.0)) {
    throw ValueError("add_noise: reference variance must be non-negative");
  }
  Tensor<double> out = field.clone();
  if (level == 0.0) {
    return out;
  }
  const double sd = std::sqrt(level * sigma_u2_mean);
  for (double& v : out.mutable_values()) {
    v += sd * rng.normal();
  }
  return out;
}

double mean_field_variance(std::span<const Tensor<double>> fields) {
  if (fields.empty()) {
    throw ValueError("mean_field_variance: no fields");
  }
  double total = 0.0;
  for (const auto& f : fields) {
    auto v = f.values();
    double mu = 0.0;
    for (double x : v) {
      mu += x;
    }
    mu /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) {
      var += (x - mu) * (x - mu);
    }
    total += var / static_cast<double>(v.size());
  }
  return total / static_cast<double>(fields.size());
}

void MetricReport::aggregate() {
  double sn = 0.0, sp = 0.0;
  std::size_t count = 0;
  flagged = 0;
  for (const auto& s : samples) {
    if (s.flagged) {
      ++flagged;
      continue;
    }
    sn += s.nrmse;
    sp += s.pearson;
    ++count;
  }
  if (count == 0) {
    nrmse_mean = nrmse_std = pearson_mean = pearson_std = std::nan("");
    return;
  }
  nrmse_mean = sn / static_cast<double>(count);
  pearson_mean = sp / static_cast<double>(count);
  double vn = 0.0, vp = 0.0;
  for (const auto& s : samples) {
    if (!s.flagged) {
      vn += (s.nrmse - nrmse_mean) * (s.nrmse - nrmse_mean);
      vp += (s.pearson - pearson_mean) * (s.pearson - pearson_mean);
    }
  }
  nrmse_std = std::sqrt(vn / static_cast<double>(count));
  pearson_std = std::sqrt(vp / static_cast<double>(count));
}

template <typename T>
Predictor model_predictor(const Model<T>& model) {
  return [&model](const Tensor<double>& u, int cell_type) {
    NoGradGuard no_grad;
    const std::optional<int> ct = model.uses_cell_type() ? std::optional<int>(cell_type) : std::nullopt;
    return model.forward(u.template cast<T>(), ct).template cast<double>();
  };
}

template Predictor model_predictor(const Model<float>&);
template Predictor model_predictor(const Model<double>&);

namespace {

/// Scores (u, f_ref) pairs; `perturb` maps an example index to the perturbed
/// (u, f_ref) pair that is fed to the predictor and scored against.
template <typename Predict, typename Perturb>
MetricReport score(const Predict& predict, std::span<const Example<double>> examples, const EvalOptions& options,
                   Perturb perturb) {
  MetricReport report;
  report.samples.resize(examples.size());
  std::vector<Tensor<double>> ref_mag(examples.size()), pred_mag(examples.size());
  parallel_for(examples.size(), options.threads, [&](std::size_t i) {
    NoGradGuard no_grad;
    const Example<double>& ex = examples[i];
    SampleMetrics& m = report.samples[i];
    m.id = ex.id;
    m.cell_type = ex.cell_type;
    try {
      auto [u, f_ref] = perturb(i);
      const Tensor<double> f_hat = predict(i, u, ex.cell_type);
      if (f_hat.shape() != f_ref.shape()) {
        throw ShapeError("prediction shape " + to_string(f_hat.shape()) + " vs reference " +
                         to_string(f_ref.shape()));
      }
      const double f0 = options.f0_pa;
      const Tensor<double> fr = scale(f_ref, f0);
      const Tensor<double> fp = scale(f_hat, f0);
      ref_mag[i] = magnitude_field(fr);
      pred_mag[i] = magnitude_field(fp);
      m.pearson = pearson(fp.values(), fr.values());
      m.nrmse = nrmse(pred_mag[i].values(), ref_mag[i].values());
    } catch (const Error& e) {
      m.flagged = true;
      m.nrmse = m.pearson = std::nan("");
      m.note = e.what();
    }
  });
  report.aggregate();
  if (options.histogram) {
    std::vector<double> all_ref, all_pred;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (!report.samples[i].flagged) {
        all_ref.insert(all_ref.end(), ref_mag[i].values().begin(), ref_mag[i].values().end());
        all_pred.insert(all_pred.end(), pred_mag[i].values().begin(), pred_mag[i].values().end());
      }
    }
    report.histogram =
        joint_histogram(all_ref, all_pred, options.histogram_threshold_pa, options.histogram_bins);
  }
  return report;
}

}  // namespace

MetricReport evaluate(const Predictor& predict, std::span<const Example<double>> examples,
                      const EvalOptions& options) {
  if (examples.empty()) {
    throw ValueError("evaluate: no examples");
  }
  return score(
      [&](std::size_t, const Tensor<double>& u, int ct) { return predict(u, ct); }, examples, options,
      [&](std::size_t i) { return std::pair<Tensor<double>, Tensor<double>>{examples[i].u, examples[i].f}; });
}

MetricReport evaluate_predictions(std::span<const Example<double>> examples,
                                  std::span<const Tensor<double>> predictions, const EvalOptions& options) {
  if (examples.empty()) {
    throw ValueError("evaluate_predictions: no examples");
  }
  if (predictions.size() != examples.size()) {
    throw ShapeError("evaluate_predictions: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(examples.size()) + " examples");
  }
  return score(
      [&](std::size_t i, const Tensor<double>&, int) { return predictions[i]; }, examples, options,
      [&](std::size_t i) { return std::pair<Tensor<double>, Tensor<double>>{examples[i].u, examples[i].f}; });
}

std::vector<double> default_scale_grid() { return {0.25, 0.5, 0.75, 1.0, 1.33, 1.67, 2.3}; }
std::vector<double> default_noise_grid() { return {0.0, 0.03, 0.06, 0.08, 0.09}; }

std::vector<MetricReport> run_sweep(const Predictor& predict, std::span<const Example<double>> examples,
                                    const SweepSpec& spec, const EvalOptions& options) {
  if (examples.empty()) {
    throw ValueError("run_sweep: no examples");
  }
  if (spec.values.empty()) {
    throw ValueError("run_sweep: empty sweep grid");
  }
  auto call = [&](std::size_t, const Tensor<double>& u, int ct) { return predict(u, ct); };
  std::vector<MetricReport> reports;
  for (std::size_t p = 0; p < spec.values.size(); ++p) {
    const double value = spec.values[p];
    MetricReport report;
    if (spec.axis == SweepAxis::scale) {
      if (!(value > 0.0)) {
        throw ValueError("run_sweep: scale ratio " + std::to_string(value) + " must be positive");
      }
      report = score(call, examples, options, [&](std::size_t i) {
        return std::pair<Tensor<double>, Tensor<double>>{rescale_displacement(examples[i].u, value),
                                                         rescale_displacement(examples[i].f, value)};
      });
      report.axis = "scale";
    } else {
      if (!(value >= 0.0)) {
        throw ValueError("run_sweep: noise level " + std::to_string(value) + " must be non-negative");
      }
      const RngStream root(spec.seed, "noise-sweep");
      report = score(call, examples, options, [&](std::size_t i) {
        RngStream rng = root.split(examples[i].id, p);
        return std::pair<Tensor<double>, Tensor<double>>{add_noise(examples[i].u, value, spec.sigma_u2_mean, rng),
                                                         examples[i].f};
      });
      report.axis = "noise";
    }
    report.sweep_value = value;
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace tfm
