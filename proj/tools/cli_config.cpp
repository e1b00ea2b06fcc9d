#include "cli_config.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <json.hpp>
#include <memory>
#include <sstream>

#include "tfm/models.hpp"
#include "tfm/report_io.hpp"
#include "tfm/tensor_io.hpp"

namespace tfm::cli {

const std::vector<OptionSpec>& option_table() {
  using V = ValueType;
  static const std::vector<OptionSpec> table = {
      {"dataset", "--dataset", "", V::text, "dataset directory (manifest.json)"},
      {"model", "--model", "hybrid", V::text, "unet | vit | hybrid | vit+celltype | hybrid+celltype"},
      {"checkpoint", "--checkpoint", "", V::text, "checkpoint file"},
      {"out", "--out", "tfmforge-out", V::text, "output directory"},
      {"seed", "--seed", "0", V::integer, "random seed"},
      {"data.n", "--n", "104", V::integer, "grid size N"},
      {"data.train", "--train-count", "128", V::integer, "training samples"},
      {"data.val", "--val-count", "16", V::integer, "validation samples"},
      {"data.test", "--test-count", "16", V::integer, "test samples"},
      {"data.e_pa", "--young-modulus", "10000", V::real, "substrate Young's modulus (Pa)"},
      {"data.nu", "--poisson-ratio", "0.5", V::real, "substrate Poisson ratio"},
      {"data.pixel_size_um", "--pixel-size", "1.83", V::real, "grid spacing (um)"},
      {"data.noise_um", "--measurement-noise", "0", V::real, "Gaussian noise std added to stored u (um)"},
      {"data.type_weights", "--type-weights", "1,1,1,1", V::real_list, "sampling weights of cell types 1-4"},
      {"train.lr", "--lr", "0.0002", V::real, "initial learning rate"},
      {"train.gamma", "--gamma", "0.9", V::real, "learning-rate decay factor"},
      {"train.decay_period", "--decay-period", "40", V::integer, "epochs between decays"},
      {"train.patience", "--patience", "10", V::integer, "early-stopping patience"},
      {"train.max_epochs", "--epochs", "100", V::integer, "maximum epochs"},
      {"train.batch_size", "--batch-size", "8", V::integer, "minibatch size"},
      {"model.widths", "--widths", "", V::integer_list, "U-Net stage widths (4 values)"},
      {"model.norm_groups", "--norm-groups", "", V::integer, "group-norm groups"},
      {"model.patch", "--patch", "", V::integer, "ViT patch size"},
      {"model.dim", "--dim", "", V::integer, "transformer embedding dim"},
      {"model.layers", "--layers", "", V::integer, "transformer layers"},
      {"model.heads", "--heads", "", V::integer, "attention heads"},
      {"model.mlp_hidden", "--mlp-hidden", "", V::integer, "MLP hidden width"},
      {"model.dropout", "--dropout", "", V::real, "dropout probability"},
      {"model.decoder_widths", "--decoder-widths", "", V::integer_list, "conv decoder hidden widths (2 values)"},
      {"infer.sample", "--sample", "", V::text, "dataset sample id to predict"},
      {"infer.input", "--input", "", V::text, "TFT1 field file (infer: displacement um; plot: traction Pa)"},
      {"infer.cell_type", "--cell-type", "", V::text, "cell type name or index for --input"},
      {"eval.split", "--split", "test", V::text, "split to evaluate"},
      {"eval.predictions", "--predictions", "", V::text, "directory of <id>_f.tft predictions (Pa)"},
      {"eval.hist_threshold_pa", "--hist-threshold-pa", "150", V::real, "joint-histogram threshold (Pa)"},
      {"eval.hist_bins", "--hist-bins", "64", V::integer, "joint-histogram bins"},
      {"sweep.scales", "--scales", "0.25,0.5,0.75,1,1.33,1.67,2.3", V::real_list, "scale ratios"},
      {"sweep.noise_levels", "--noise-levels", "0,0.03,0.06,0.08,0.09", V::real_list, "noise levels"},
      {"plot.threshold_pa", "--threshold-pa", "50", V::real, "arrow magnitude threshold (Pa)"},
      {"plot.arrow_stride", "--arrow-stride", "15", V::integer, "arrow spacing (grid steps)"},
      {"plot.pixel_scale", "--pixel-scale", "4", V::integer, "image pixels per grid step"},
  };
  return table;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"gen-data", "train",       "infer", "eval",
                                                 "sweep-scale", "sweep-noise", "plot"};
  return names;
}

namespace {

const OptionSpec& spec_for(std::string_view key) {
  for (const auto& s : option_table()) {
    if (s.key == key) {
      return s;
    }
  }
  throw UsageError("unknown config key '" + std::string(key) + "'");
}

std::string describe(const OptionSpec& s) { return s.key + " (" + s.flag + ")"; }

double parse_real(const OptionSpec& s, std::string_view text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw UsageError("invalid value '" + std::string(text) + "' for " + describe(s) + ": expected a number");
  }
  return v;
}

long long parse_integer(const OptionSpec& s, std::string_view text) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw UsageError("invalid value '" + std::string(text) + "' for " + describe(s) + ": expected an integer");
  }
  return v;
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::size_t end = comma == std::string_view::npos ? text.size() : comma;
    std::string_view part = text.substr(start, end - start);
    while (!part.empty() && part.front() == ' ') part.remove_prefix(1);
    while (!part.empty() && part.back() == ' ') part.remove_suffix(1);
    parts.push_back(part);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

/// Validates a value and returns its canonical text, so flag and file input
/// echo identically.
std::string canonical_value(const OptionSpec& s, const std::string& text) {
  if (text.empty()) {
    return text;
  }
  std::string out;
  switch (s.type) {
    case ValueType::text:
      return text;
    case ValueType::integer:
      return std::to_string(parse_integer(s, text));
    case ValueType::real:
      return format_number(parse_real(s, text));
    case ValueType::real_list:
      for (auto p : split_list(text)) out += (out.empty() ? "" : ",") + format_number(parse_real(s, p));
      return out;
    case ValueType::integer_list:
      for (auto p : split_list(text)) out += (out.empty() ? "" : ",") + std::to_string(parse_integer(s, p));
      return out;
    case ValueType::boolean:
      if (text != "true" && text != "false") {
        throw UsageError("invalid value '" + text + "' for " + describe(s) + ": expected true or false");
      }
      return text;
  }
  return text;
}

/// Config-file JSON value -> canonical text.
std::string json_to_text(const OptionSpec& s, const nlohmann::json& v) {
  if (v.is_string()) {
    return v.get<std::string>();
  }
  if (v.is_boolean()) {
    return v.get<bool>() ? "true" : "false";
  }
  if (v.is_number_integer() || v.is_number_unsigned()) {
    return v.dump();
  }
  if (v.is_number_float()) {
    return format_number(v.get<double>());
  }
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) {
      if (!e.is_number()) {
        throw UsageError("invalid list element " + e.dump() + " for " + describe(s));
      }
      out += (out.empty() ? "" : ",") + json_to_text(s, e);
    }
    return out;
  }
  if (v.is_null()) {
    return "";
  }
  throw UsageError("invalid value " + v.dump() + " for " + describe(s));
}

}  // namespace

bool RunConfig::has(std::string_view key) const { return !text(key).empty(); }

const std::string& RunConfig::text(std::string_view key) const {
  auto it = values.find(std::string(key));
  if (it == values.end()) {
    throw UsageError("unknown config key '" + std::string(key) + "'");
  }
  return it->second;
}

long long RunConfig::integer(std::string_view key) const {
  const auto& s = spec_for(key);
  if (!has(key)) throw UsageError(describe(s) + " is required");
  return parse_integer(s, text(key));
}

double RunConfig::real(std::string_view key) const {
  const auto& s = spec_for(key);
  if (!has(key)) throw UsageError(describe(s) + " is required");
  return parse_real(s, text(key));
}

std::vector<double> RunConfig::real_list(std::string_view key) const {
  const auto& s = spec_for(key);
  std::vector<double> out;
  if (has(key)) {
    for (auto p : split_list(text(key))) out.push_back(parse_real(s, p));
  }
  return out;
}

std::vector<long long> RunConfig::integer_list(std::string_view key) const {
  const auto& s = spec_for(key);
  std::vector<long long> out;
  if (has(key)) {
    for (auto p : split_list(text(key))) out.push_back(parse_integer(s, p));
  }
  return out;
}

bool RunConfig::boolean(std::string_view key) const { return text(key) == "true"; }

std::string RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  for (const auto& s : option_table()) {
    const std::string& v = values.at(s.key);
    if (v.empty()) {
      j[s.key] = nullptr;
      continue;
    }
    switch (s.type) {
      case ValueType::text:
        j[s.key] = v;
        break;
      case ValueType::integer:
        j[s.key] = parse_integer(s, v);
        break;
      case ValueType::real:
        j[s.key] = parse_real(s, v);
        break;
      case ValueType::real_list:
        j[s.key] = real_list(s.key);
        break;
      case ValueType::integer_list:
        j[s.key] = integer_list(s.key);
        break;
      case ValueType::boolean:
        j[s.key] = v == "true";
        break;
    }
  }
  return j.dump(2) + "\n";
}

RunConfig parse_config(const std::vector<std::string>& argv) {
  CLI::App app{"Traction force inference from substrate displacement fields", "tfmforge"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Expand help for every command");

  std::string config_path;
  std::map<std::string, std::map<std::string, std::string>> storage;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;
  for (const auto& name : command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON file of flat dotted keys");
    for (const auto& s : option_table()) {
      options[name][s.key] = sub->add_option(s.flag, storage[name][s.key], s.help + " [" + s.key + "]");
    }
  }

  std::vector<const char*> raw;
  raw.reserve(argv.size());
  for (const auto& a : argv) raw.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(raw.size()), raw.data());
  } catch (const CLI::CallForHelp&) {
    std::string help = app.help();
    for (auto* sub : app.get_subcommands()) {
      help = sub->help();
    }
    throw HelpRequested(help);
  } catch (const CLI::CallForAllHelp&) {
    throw HelpRequested(app.help("", CLI::AppFormatMode::All));
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }

  RunConfig cfg;
  cfg.command = app.get_subcommands().front()->get_name();
  for (const auto& s : option_table()) {
    cfg.values[s.key] = s.default_value;
  }

  if (!config_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file_bytes(config_path));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config file " + config_path + " is not valid JSON: " + e.what());
    } catch (const IoError& e) {
      throw UsageError(e.what());
    }
    if (!j.is_object()) {
      throw UsageError("config file " + config_path + " must hold a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
      if (key == "command") {
        if (!value.is_string() || value.get<std::string>() != cfg.command) {
          throw UsageError("config file " + config_path + " is for command " + value.dump() + ", not '" +
                           cfg.command + "'");
        }
        continue;
      }
      const OptionSpec& s = spec_for(key);
      cfg.values[key] = json_to_text(s, value);
      cfg.explicit_keys.insert(key);
    }
  }

  for (const auto& s : option_table()) {
    if (options[cfg.command][s.key]->count() > 0) {
      cfg.values[s.key] = storage[cfg.command][s.key];
      cfg.explicit_keys.insert(s.key);
    }
  }
  for (const auto& s : option_table()) {
    cfg.values[s.key] = canonical_value(s, cfg.values[s.key]);
  }
  try {
    parse_model_kind(cfg.values["model"]);
  } catch (const ValueError& e) {
    throw UsageError(std::string("model (--model): ") + e.what());
  }
  if (cfg.has("checkpoint") && cfg.has("eval.predictions")) {
    throw UsageError("checkpoint (--checkpoint) and eval.predictions (--predictions) are mutually exclusive");
  }
  if (cfg.has("infer.sample") && cfg.has("infer.input") && cfg.command == "infer") {
    throw UsageError("infer.sample (--sample) and infer.input (--input) are mutually exclusive");
  }
  return cfg;
}

}  // namespace tfm::cli
