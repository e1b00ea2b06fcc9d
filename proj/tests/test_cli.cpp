#include <doctest.h>

#include <sstream>
#include <string>

#include <json.hpp>

#include "cli_config.hpp"
#include "commands.hpp"
#include "render.hpp"
#include "support.hpp"
#include "tfm/dataset.hpp"
#include "tfm/error.hpp"
#include "tfm/tensor_io.hpp"

using namespace tfm;
using namespace tfm::cli;
using tfm::testing::ScratchDir;
using T = Tensor<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "tfmforge");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> tiny_data(const fs::path& dir) {
  return {"gen-data", "--out", dir.string(), "--n", "16", "--train-count", "4", "--val-count", "2",
          "--test-count", "3", "--seed", "3"};
}

std::vector<std::string> tiny_train(const fs::path& data, const fs::path& out) {
  return {"train", "--dataset", data.string(), "--out", out.string(), "--model", "unet", "--widths", "4,4,8,8",
          "--norm-groups", "2", "--epochs", "2", "--batch-size", "2", "--seed", "1"};
}

std::size_t csv_rows(const std::string& text) {
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n';
  return lines - 1;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("flag mapping") {
  RunConfig cfg = parse_config({"tfmforge", "train", "--model", "hybrid", "--dataset", "d/", "--seed", "7"});
  CHECK(cfg.command == "train");
  CHECK(cfg.text("model") == "hybrid");
  CHECK(cfg.integer("seed") == 7);
  CHECK(cfg.text("dataset") == "d/");
  CHECK(cfg.real("train.lr") == 2e-4);
  CHECK(cfg.integer("train.patience") == 10);
  CHECK(cfg.explicit_keys.count("seed") == 1);
  CHECK(cfg.explicit_keys.count("train.lr") == 0);
}

TEST_CASE("precedence: flag over file over default") {
  ScratchDir dir("cli-precedence");
  const fs::path file = dir.path() / "run.json";
  write_file_bytes(file, R"({"train.lr": 1e-4, "train.patience": 4, "command": "train"})");
  RunConfig cfg = parse_config({"tfmforge", "train", "--config", file.string(), "--lr", "2e-4"});
  CHECK(cfg.real("train.lr") == 2e-4);
  CHECK(cfg.integer("train.patience") == 4);
  CHECK(cfg.integer("train.batch_size") == 8);

  // the echoed config reproduces itself
  write_file_bytes(dir.path() / "echo.json", cfg.to_json());
  RunConfig again = parse_config({"tfmforge", "train", "--config", (dir.path() / "echo.json").string()});
  CHECK(again.values == cfg.values);
  CHECK(nlohmann::json::parse(cfg.to_json())["seed"] == 0);
}

TEST_CASE("usage errors name the key") {
  auto message = [](std::vector<std::string> argv) -> std::string {
    try {
      parse_config(argv);
    } catch (const UsageError& e) {
      return e.what();
    }
    return "";
  };
  const std::string kinds = message({"tfmforge", "train", "--model", "vits"});
  for (const char* k : {"unet", "vit", "hybrid", "vit+celltype", "hybrid+celltype"}) {
    CHECK(kinds.find(k) != std::string::npos);
  }
  CHECK(message({"tfmforge", "train", "--lr", "fast"}).find("train.lr") != std::string::npos);
  CHECK(message({"tfmforge", "train", "--epochs", "2.5"}).find("train.max_epochs") != std::string::npos);
  CHECK(message({"tfmforge", "eval", "--checkpoint", "a", "--predictions", "b"}).find("mutually exclusive") !=
        std::string::npos);
  CHECK_FALSE(message({"tfmforge", "train", "--no-such-flag", "1"}).empty());

  ScratchDir dir("cli-badkey");
  write_file_bytes(dir.path() / "bad.json", R"({"train.learning_rate": 1})");
  CHECK(message({"tfmforge", "train", "--config", (dir.path() / "bad.json").string()}).find("train.learning_rate") !=
        std::string::npos);
  write_file_bytes(dir.path() / "other.json", R"({"command": "eval"})");
  CHECK_FALSE(message({"tfmforge", "train", "--config", (dir.path() / "other.json").string()}).empty());

  CHECK(run({"train", "--model", "vits"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("missing inputs") {
  Outcome r = run({"train", "--dataset", "/nonexistent/tfm-data", "--out", "/tmp/tfmforge-unused"});
  CHECK(r.code != 0);
  CHECK(r.err.find("/nonexistent/tfm-data") != std::string::npos);

  ScratchDir dir("cli-missing");
  REQUIRE(run(tiny_data(dir.path() / "data")).code == 0);
  Outcome e = run({"eval", "--dataset", (dir.path() / "data").string(), "--checkpoint", "/nonexistent/ck.tfck"});
  CHECK(e.code != 0);
  CHECK(e.err.find("/nonexistent/ck.tfck") != std::string::npos);
}

TEST_CASE("pipeline") {
  ScratchDir dir("cli-pipeline");
  const fs::path data = dir.path() / "data";
  const fs::path run_dir = dir.path() / "run";

  Outcome g = run(tiny_data(data));
  REQUIRE(g.code == 0);
  std::size_t tft = 0;
  for (const auto& e : fs::recursive_directory_iterator(data)) tft += e.path().extension() == ".tft";
  CHECK(tft == 2 * (4 + 2 + 3));
  CHECK(fs::exists(data / "manifest.json"));
  CHECK(fs::exists(data / "config.json"));

  Outcome t = run(tiny_train(data, run_dir));
  REQUIRE(t.code == 0);
  CHECK(fs::exists(run_dir / "checkpoint.tfck"));
  CHECK(csv_rows(read_file_bytes(run_dir / "history.csv")) == 2);

  SUBCASE("eval fixture scores perfectly") {
    Outcome e = run({"eval", "--dataset", data.string(), "--predictions", (data / "samples").string(), "--out",
                     (dir.path() / "fixture").string()});
    REQUIRE(e.code == 0);
    auto j = nlohmann::json::parse(read_file_bytes(dir.path() / "fixture" / "eval.json"));
    CHECK(j["reports"][0]["nrmse_magnitude"]["mean"] == 0.0);
    CHECK(j["reports"][0]["pearson_components"]["mean"].get<double>() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(csv_rows(read_file_bytes(dir.path() / "fixture" / "eval.csv")) == 3);
  }
  SUBCASE("eval with a checkpoint") {
    Outcome e = run({"eval", "--dataset", data.string(), "--checkpoint", (run_dir / "checkpoint.tfck").string(),
                     "--out", (dir.path() / "eval").string()});
    REQUIRE(e.code == 0);
    CHECK(fs::exists(dir.path() / "eval" / "eval_hist0.tft"));
  }
  SUBCASE("sweep-noise rows") {
    Outcome s = run({"sweep-noise", "--dataset", data.string(), "--checkpoint",
                     (run_dir / "checkpoint.tfck").string(), "--noise-levels", "0,0.08", "--out",
                     (dir.path() / "noise").string()});
    REQUIRE(s.code == 0);
    const std::string csv = read_file_bytes(dir.path() / "noise" / "sweep_noise.csv");
    CHECK(csv_rows(csv) == 2 * 3);
    for (const char* id : {"test_0000", "test_0001", "test_0002"}) {
      CHECK(csv.find(std::string("0,") + id + ",") != std::string::npos);
      CHECK(csv.find(std::string("0.08,") + id + ",") != std::string::npos);
    }
  }
  SUBCASE("sweep-scale") {
    Outcome s = run({"sweep-scale", "--dataset", data.string(), "--checkpoint",
                     (run_dir / "checkpoint.tfck").string(), "--scales", "0.5,1,2", "--out",
                     (dir.path() / "scale").string()});
    REQUIRE(s.code == 0);
    CHECK(csv_rows(read_file_bytes(dir.path() / "scale" / "sweep_scale.csv")) == 3 * 3);
  }
  SUBCASE("infer and plot") {
    Outcome i = run({"infer", "--dataset", data.string(), "--checkpoint", (run_dir / "checkpoint.tfck").string(),
                     "--sample", "test_0001", "--out", (dir.path() / "infer").string()});
    REQUIRE(i.code == 0);
    const fs::path pred = dir.path() / "infer" / "test_0001_f_pred.tft";
    CHECK(load_tensor<double>(pred).shape() == Shape{2, 16, 16});

    Outcome p = run({"plot", "--input", pred.string(), "--out", (dir.path() / "plot").string()});
    REQUIRE(p.code == 0);
    CHECK(fs::exists(dir.path() / "plot" / "test_0001_f_pred.ppm"));
    CHECK(fs::exists(dir.path() / "plot" / "test_0001_f_pred.json"));

    CHECK(run({"infer", "--dataset", data.string(), "--checkpoint", (run_dir / "checkpoint.tfck").string(),
               "--sample", "nope"})
              .code == 2);
  }
  SUBCASE("config echo reruns identically") {
    const fs::path rerun = dir.path() / "rerun";
    Outcome t2 = run({"train", "--config", (run_dir / "config.json").string(), "--out", rerun.string()});
    REQUIRE(t2.code == 0);
    CHECK(read_file_bytes(rerun / "checkpoint.tfck") == read_file_bytes(run_dir / "checkpoint.tfck"));
  }
}

TEST_CASE("render") {
  RenderOptions opts;
  CHECK(opts.arrow_stride == 15);
  CHECK(opts.threshold_pa == 50.0);

  FieldImage blank = render_field_image(T::zeros({2, 30, 30}), opts);
  CHECK(blank.arrows == 0);
  CHECK(blank.width == 30 * opts.pixel_scale);
  const auto low = ramp_color(0.0);
  for (std::size_t p = 0; p < blank.width * blank.height; ++p) {
    CHECK(blank.rgb[3 * p] == low[0]);
    CHECK(blank.rgb[3 * p + 1] == low[1]);
    CHECK(blank.rgb[3 * p + 2] == low[2]);
  }

  T field = T::zeros({2, 31, 31});
  auto v = field.mutable_values();
  for (std::size_t p = 0; p < 31 * 31; ++p) v[p] = 40.0 + static_cast<double>(p % 7);
  FieldImage quiet = render_field_image(field, opts);
  CHECK(quiet.arrows == 0);

  opts.threshold_pa = 10.0;
  FieldImage loud = render_field_image(field, opts);
  CHECK(loud.arrows == 9);  // grid points 0, 15, 30 on each axis
  CHECK(loud.max_magnitude == 46.0);

  ScratchDir dir("render");
  write_field_image(dir.path() / "f", field, opts);
  CHECK(fs::exists(dir.path() / "f.ppm"));
  CHECK(read_file_bytes(dir.path() / "f.ppm").substr(0, 2) == "P6");
}

}  // TEST_SUITE
