#include "tfm/report_io.hpp"

#include <charconv>
#include <cmath>
#include <json.hpp>

#include "tfm/tensor_io.hpp"

namespace tfm {

using ojson = nlohmann::ordered_json;

std::string format_number(double value) {
  if (std::isnan(value)) {
    return "nan";
  }
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general);
  return std::string(buf, ptr);
}

namespace {
ojson number_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

ojson histogram_summary(const JointHistogram& h) {
  return {{"bins", h.bins}, {"threshold_pa", h.threshold}, {"included", h.included}, {"empty", h.empty},
          {"edges_pa", h.edges}};
}
}  // namespace

std::string reports_to_json(std::span<const MetricReport> reports) {
  ojson list = ojson::array();
  for (const auto& r : reports) {
    ojson samples = ojson::array();
    for (const auto& s : r.samples) {
      ojson entry = {{"id", s.id},
                     {"cell_type", s.cell_type},
                     {"nrmse", number_or_null(s.nrmse)},
                     {"pearson", number_or_null(s.pearson)},
                     {"flagged", s.flagged}};
      if (!s.note.empty()) {
        entry["note"] = s.note;
      }
      samples.push_back(std::move(entry));
    }
    ojson j = {{"axis", r.axis},
               {"sweep_value", r.sweep_value ? ojson(*r.sweep_value) : ojson(nullptr)},
               {"count", r.samples.size() - r.flagged},
               {"flagged", r.flagged},
               {"nrmse_magnitude", {{"mean", number_or_null(r.nrmse_mean)}, {"std", number_or_null(r.nrmse_std)}}},
               {"pearson_components",
                {{"mean", number_or_null(r.pearson_mean)}, {"std", number_or_null(r.pearson_std)}}},
               {"samples", samples}};
    if (r.histogram) {
      j["histogram"] = histogram_summary(*r.histogram);
    }
    list.push_back(std::move(j));
  }
  return ojson({{"reports", list}}).dump(2) + "\n";
}

std::string reports_to_csv(std::span<const MetricReport> reports) {
  std::string out = "sweep_value,sample_id,nrmse,pearson\n";
  for (const auto& r : reports) {
    const std::string sv = r.sweep_value ? format_number(*r.sweep_value) : "";
    for (const auto& s : r.samples) {
      out += sv + "," + s.id + "," + format_number(s.nrmse) + "," + format_number(s.pearson) + "\n";
    }
  }
  return out;
}

void write_reports(const std::filesystem::path& dir, const std::string& stem, std::span<const MetricReport> reports) {
  std::filesystem::create_directories(dir);
  write_file_bytes(dir / (stem + ".json"), reports_to_json(reports));
  write_file_bytes(dir / (stem + ".csv"), reports_to_csv(reports));
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& h = reports[i].histogram;
    if (!h) {
      continue;
    }
    const std::string base = stem + "_hist" + std::to_string(i);
    save_tensor(dir / (base + ".tft"), Tensor<double>({h->bins, h->bins}, h->mass));
    write_file_bytes(dir / (base + ".json"), histogram_summary(*h).dump(2) + "\n");
  }
}

}  // namespace tfm
