#include "commands.hpp"

#include <filesystem>
#include <iomanip>
#include <ostream>

#include "render.hpp"
#include "tfm/dataset.hpp"
#include "tfm/evaluation.hpp"
#include "tfm/models.hpp"
#include "tfm/parallel.hpp"
#include "tfm/report_io.hpp"
#include "tfm/tensor_io.hpp"
#include "tfm/training.hpp"

namespace tfm::cli {

namespace fs = std::filesystem;

namespace {

std::size_t count_value(const RunConfig& cfg, std::string_view key, long long min = 0) {
  const long long v = cfg.integer(key);
  if (v < min) {
    throw UsageError(std::string(key) + " must be at least " + std::to_string(min));
  }
  return static_cast<std::size_t>(v);
}

std::uint64_t seed_of(const RunConfig& cfg) {
  const long long s = cfg.integer("seed");
  if (s < 0) {
    throw UsageError("seed (--seed) must be non-negative");
  }
  return static_cast<std::uint64_t>(s);
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out = cfg.text("out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) {
    throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
  }
  write_file_bytes(out / "config.json", cfg.to_json());
  return out;
}

fs::path require_dataset(const RunConfig& cfg) {
  if (!cfg.has("dataset")) {
    throw UsageError("dataset (--dataset) is required for " + cfg.command);
  }
  const fs::path dir = cfg.text("dataset");
  if (!fs::exists(dir / "manifest.json")) {
    throw IoError("dataset not found: " + (dir / "manifest.json").string());
  }
  return dir;
}

fs::path require_checkpoint(const RunConfig& cfg) {
  if (!cfg.has("checkpoint")) {
    throw UsageError("checkpoint (--checkpoint) is required for " + cfg.command);
  }
  const fs::path path = cfg.text("checkpoint");
  if (!fs::exists(path)) {
    throw IoError("checkpoint not found: " + path.string());
  }
  return path;
}

ModelConfig model_config_from(const RunConfig& cfg, std::size_t n) {
  const ModelKind kind = parse_model_kind(cfg.text("model"));
  ModelConfig mc = ModelConfig::defaults(kind, n);
  auto positive = [&](std::string_view key) { return count_value(cfg, key, 1); };
  if (cfg.has("model.widths")) {
    const auto w = cfg.integer_list("model.widths");
    if (w.size() != 4) {
      throw UsageError("model.widths (--widths) needs 4 values");
    }
    for (std::size_t i = 0; i < 4; ++i) {
      if (w[i] < 1) throw UsageError("model.widths (--widths) must be positive");
      mc.unet.widths[i] = static_cast<std::size_t>(w[i]);
    }
  }
  if (cfg.has("model.norm_groups")) mc.unet.norm_groups = positive("model.norm_groups");
  if (cfg.has("model.patch")) mc.vit.patch = positive("model.patch");
  if (cfg.has("model.dim")) mc.vit.dim = positive("model.dim");
  if (cfg.has("model.layers")) mc.vit.layers = count_value(cfg, "model.layers");
  if (cfg.has("model.heads")) mc.vit.heads = positive("model.heads");
  if (cfg.has("model.mlp_hidden")) mc.vit.mlp_hidden = positive("model.mlp_hidden");
  if (cfg.has("model.dropout")) mc.vit.dropout = cfg.real("model.dropout");
  const bool hybrid = kind == ModelKind::hybrid || kind == ModelKind::hybrid_celltype;
  if (cfg.has("model.decoder_widths")) {
    const auto d = cfg.integer_list("model.decoder_widths");
    if (d.size() != 2 || d[0] < 1 || d[1] < 1) {
      throw UsageError("model.decoder_widths (--decoder-widths) needs 2 positive values");
    }
    mc.vit.decoder_widths = {static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[1])};
  } else if (hybrid) {
    mc.vit.decoder_widths = {mc.vit.dim, mc.vit.dim};
  } else if (kind != ModelKind::unet) {
    mc.vit.decoder_widths = {std::max<std::size_t>(1, mc.vit.dim / 2), std::max<std::size_t>(1, mc.vit.dim / 4)};
  }
  if (hybrid) {
    if (cfg.has("model.patch")) {
      throw UsageError("model.patch (--patch) does not apply to hybrid models (the bottleneck uses 1x1 patches)");
    }
    mc.sync_hybrid_geometry();
  }
  mc.validate();
  return mc;
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig tc;
  tc.lr0 = cfg.real("train.lr");
  tc.gamma = cfg.real("train.gamma");
  tc.decay_period = count_value(cfg, "train.decay_period", 1);
  tc.patience = count_value(cfg, "train.patience", 1);
  tc.max_epochs = count_value(cfg, "train.max_epochs", 1);
  tc.batch_size = count_value(cfg, "train.batch_size", 1);
  tc.seed = seed_of(cfg);
  tc.validate();
  return tc;
}

void print_report(std::ostream& log, const MetricReport& r) {
  log << std::setprecision(4);
  if (r.sweep_value) {
    log << r.axis << "=" << *r.sweep_value << "  ";
  }
  log << "NRMSE " << r.nrmse_mean << " +- " << r.nrmse_std << "  Pearson " << r.pearson_mean << " +- "
      << r.pearson_std << "  (" << r.samples.size() - r.flagged << " samples";
  if (r.flagged) {
    log << ", " << r.flagged << " flagged";
  }
  log << ")\n";
}

int gen_data(const RunConfig& cfg, std::ostream& log) {
  DatasetGenConfig g;
  g.counts = {count_value(cfg, "data.train", 1), count_value(cfg, "data.val", 1), count_value(cfg, "data.test", 1)};
  g.substrate.n = count_value(cfg, "data.n", 4);
  g.substrate.young_modulus_pa = cfg.real("data.e_pa");
  g.substrate.poisson_ratio = cfg.real("data.nu");
  g.substrate.pixel_size_um = cfg.real("data.pixel_size_um");
  g.measurement_noise_um = cfg.real("data.noise_um");
  const auto weights = cfg.real_list("data.type_weights");
  if (weights.size() != 4) {
    throw UsageError("data.type_weights (--type-weights) needs 4 values");
  }
  std::copy(weights.begin(), weights.end(), g.traction.cell_type_weights.begin());
  g.seed = seed_of(cfg);
  g.threads = worker_threads();
  const fs::path out = prepare_out(cfg);
  const DatasetManifest m = generate_dataset(g, out);
  log << "wrote " << m.samples.size() << " samples to " << out.string() << " (u0 = " << m.u0_um
      << " um, <sigma_u^2> = " << m.sigma_u2_mean << ")\n";
  return 0;
}

int train_cmd(const RunConfig& cfg, std::ostream& log) {
  const fs::path dir = require_dataset(cfg);
  const DatasetManifest manifest = DatasetManifest::load(dir / "manifest.json");
  const ModelConfig mc = model_config_from(cfg, manifest.n);
  const TrainConfig tc = train_config_from(cfg);
  const fs::path out = prepare_out(cfg);
  const auto train_set = load_examples<float>(dir, manifest, Split::train);
  const auto val_set = load_examples<float>(dir, manifest, Split::val);
  TrainOptions opts;
  opts.on_epoch = [&log](const EpochRecord& r) {
    log << "epoch " << r.epoch << "  lr " << r.lr << "  train " << r.train_loss << "  val " << r.val_loss << "\n";
  };
  auto model_probe = make_model<float>(mc, tc.seed);
  log << "training " << to_string(mc.kind) << " (" << count_params(model_probe->params()) << " parameters) on "
      << train_set.size() << " samples\n";
  model_probe.reset();
  TrainResult<float> result = train<float>(mc, tc, train_set, val_set, opts);
  save_checkpoint(out / "checkpoint.tfck", result.checkpoint);
  write_history_csv(out / "history.csv", result.checkpoint.history);
  log << "best epoch " << result.checkpoint.best_epoch << " (val " << result.checkpoint.best_val_loss << ")"
      << (result.stopped_early ? ", stopped early" : "") << "; checkpoint " << (out / "checkpoint.tfck").string()
      << "\n";
  return 0;
}

int parse_cell_type(const std::string& text) {
  if (!text.empty() && std::isdigit(static_cast<unsigned char>(text[0]))) {
    const int index = std::stoi(text);
    CellTypeVocabulary::check(index);
    return index;
  }
  return CellTypeVocabulary::index_of(text);
}

int infer_cmd(const RunConfig& cfg, std::ostream& log) {
  const bool by_sample = cfg.has("infer.sample");
  const bool by_input = cfg.has("infer.input");
  if (by_sample == by_input) {
    throw UsageError("infer needs exactly one of infer.sample (--sample) and infer.input (--input)");
  }
  const fs::path dir = require_dataset(cfg);
  const DatasetManifest manifest = DatasetManifest::load(dir / "manifest.json");
  const auto ck = load_checkpoint<float>(require_checkpoint(cfg));
  const auto model = restore_model(ck);

  Tensor<double> u;
  int cell_type = 1;
  std::string id;
  if (by_sample) {
    id = cfg.text("infer.sample");
    const auto it = std::find_if(manifest.samples.begin(), manifest.samples.end(),
                                 [&](const SampleEntry& e) { return e.id == id; });
    if (it == manifest.samples.end()) {
      throw UsageError("infer.sample (--sample): no sample '" + id + "' in " + dir.string());
    }
    u = load_sample(dir, manifest, *it).first;
    cell_type = it->cell_type;
  } else {
    const fs::path input = cfg.text("infer.input");
    u = load_tensor<double>(input);
    id = input.stem().string();
    if (model->uses_cell_type() && !cfg.has("infer.cell_type")) {
      throw UsageError("infer.cell_type (--cell-type) is required for " + std::string(to_string(model->kind())));
    }
    if (cfg.has("infer.cell_type")) {
      cell_type = parse_cell_type(cfg.text("infer.cell_type"));
    }
  }
  const Tensor<double> u_tilde = normalize_fields(u, manifest, FieldKind::displacement, Direction::to_dimensionless);
  const Tensor<double> f_tilde = model_predictor(*model)(u_tilde, cell_type);
  const Tensor<double> f = normalize_fields(f_tilde, manifest, FieldKind::traction, Direction::to_physical);
  const fs::path out = prepare_out(cfg);
  const fs::path dst = out / (id + "_f_pred.tft");
  save_tensor(dst, f);
  log << "wrote " << dst.string() << "\n";
  return 0;
}

struct EvalInputs {
  DatasetManifest manifest;
  std::vector<Example<double>> examples;
  std::unique_ptr<Model<float>> model;
  Predictor predict;
  EvalOptions options;
};

EvalInputs eval_inputs(const RunConfig& cfg, bool with_model) {
  EvalInputs in;
  const fs::path dir = require_dataset(cfg);
  in.manifest = DatasetManifest::load(dir / "manifest.json");
  in.examples = load_examples<double>(dir, in.manifest, parse_split(cfg.text("eval.split")));
  if (in.examples.empty()) {
    throw ValueError("split '" + cfg.text("eval.split") + "' of " + dir.string() + " is empty");
  }
  in.options.f0_pa = in.manifest.f0_pa;
  in.options.threads = worker_threads();
  in.options.histogram_threshold_pa = cfg.real("eval.hist_threshold_pa");
  in.options.histogram_bins = count_value(cfg, "eval.hist_bins", 2);
  if (with_model) {
    const auto ck = load_checkpoint<float>(require_checkpoint(cfg));
    in.model = restore_model(ck);
    in.predict = model_predictor(*in.model);
  }
  return in;
}

int eval_cmd(const RunConfig& cfg, std::ostream& log) {
  const bool fixture = cfg.has("eval.predictions");
  if (fixture && cfg.has("checkpoint")) {
    throw UsageError("checkpoint (--checkpoint) and eval.predictions (--predictions) are mutually exclusive");
  }
  EvalInputs in = eval_inputs(cfg, !fixture);
  in.options.histogram = true;
  MetricReport report;
  if (fixture) {
    const fs::path pred_dir = cfg.text("eval.predictions");
    if (!fs::is_directory(pred_dir)) {
      throw IoError("predictions directory not found: " + pred_dir.string());
    }
    std::vector<Tensor<double>> predictions;
    for (const auto& ex : in.examples) {
      predictions.push_back(normalize_fields(load_tensor<double>(pred_dir / (ex.id + "_f.tft")), in.manifest,
                                             FieldKind::traction, Direction::to_dimensionless));
    }
    report = evaluate_predictions(in.examples, predictions, in.options);
  } else {
    report = evaluate(in.predict, in.examples, in.options);
  }
  const fs::path out = prepare_out(cfg);
  write_reports(out, "eval", std::span<const MetricReport>(&report, 1));
  print_report(log, report);
  return 0;
}

int sweep_cmd(const RunConfig& cfg, std::ostream& log, SweepAxis axis) {
  if (cfg.has("eval.predictions")) {
    throw UsageError("eval.predictions (--predictions) applies only to eval");
  }
  EvalInputs in = eval_inputs(cfg, true);
  SweepSpec spec;
  spec.axis = axis;
  spec.values = cfg.real_list(axis == SweepAxis::scale ? "sweep.scales" : "sweep.noise_levels");
  spec.sigma_u2_mean = in.manifest.sigma_u2_mean;
  spec.seed = seed_of(cfg);
  const auto reports = run_sweep(in.predict, in.examples, spec, in.options);
  const fs::path out = prepare_out(cfg);
  write_reports(out, axis == SweepAxis::scale ? "sweep_scale" : "sweep_noise", reports);
  for (const auto& r : reports) {
    print_report(log, r);
  }
  return 0;
}

int plot_cmd(const RunConfig& cfg, std::ostream& log) {
  if (!cfg.has("infer.input")) {
    throw UsageError("plot needs a traction field via infer.input (--input)");
  }
  const fs::path input = cfg.text("infer.input");
  const Tensor<double> field = load_tensor<double>(input);
  RenderOptions ro;
  ro.threshold_pa = cfg.real("plot.threshold_pa");
  ro.arrow_stride = count_value(cfg, "plot.arrow_stride", 1);
  ro.pixel_scale = count_value(cfg, "plot.pixel_scale", 1);
  const fs::path out = prepare_out(cfg);
  const fs::path stem = out / input.stem();
  const bool png = write_field_image(stem, field, ro);
  log << "wrote " << stem.string() << ".ppm" << (png ? " and .png" : "") << "\n";
  return 0;
}

}  // namespace

int dispatch(const RunConfig& cfg, std::ostream& log) {
  if (cfg.command == "gen-data") return gen_data(cfg, log);
  if (cfg.command == "train") return train_cmd(cfg, log);
  if (cfg.command == "infer") return infer_cmd(cfg, log);
  if (cfg.command == "eval") return eval_cmd(cfg, log);
  if (cfg.command == "sweep-scale") return sweep_cmd(cfg, log, SweepAxis::scale);
  if (cfg.command == "sweep-noise") return sweep_cmd(cfg, log, SweepAxis::noise);
  if (cfg.command == "plot") return plot_cmd(cfg, log);
  throw UsageError("unknown command '" + cfg.command + "'");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = parse_config(args);
    return dispatch(cfg, err);
  } catch (const HelpRequested& help) {
    out << help.what();
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\nrun 'tfmforge --help' for the list of commands and flags\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tfm::cli
