#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "gazekit/harness.hpp"
#include "gazekit/io.hpp"
#include "oracles.hpp"

using namespace gazekit;
using namespace gazekit::harness;
using nlohmann::json;
using oracle::error_of;

namespace {

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Cli r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Synthetic dataset shared by the cases below, generated once.
const fs::path& fixture() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "gazekit_harness_test";
    fs::remove_all(d);
    const auto r = cli({"synth", "-o", d.string(), "--images", "8", "--size", "16", "--channels", "4", "--fixations",
                        "150", "--seed", "3"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

json config_with(const json& changes) {
  json c = json::parse(slurp(fixture() / "config.json"));
  c.merge_patch(changes);
  return c;
}

fs::path write_config(const std::string& name, const json& doc) {
  const fs::path p = fixture() / name;
  std::ofstream(p) << doc.dump();
  return p;
}

const json& row(const json& report, const std::string& name) {
  for (const auto& r : report.at("rows")) {
    if (r.at("model") == name) return r;
  }
  FAIL("no row " << name);
  static const json none;
  return none;
}

}  // namespace

TEST_CASE("synth writes a complete dataset") {
  const auto& d = fixture();
  for (const char* f : {"images.csv", "fixations.csv", "config.json"}) CHECK(fs::is_regular_file(d / f));
  for (const char* m : {"truth", "sharp", "flat", "prior"}) CHECK(fs::is_regular_file(d / "models" / m / "img000.fdf"));
  CHECK(fs::is_regular_file(d / "features" / "img000.ffv"));
  const auto config = RunConfig::load(d / "config.json");
  CHECK_FALSE(error_of([&] { config.validate(); }).has_value());
  const auto ds = load_dataset(config);
  CHECK(ds.fixations().size() == 8 * 150);
  CHECK(ds.models().size() == 4);
}

TEST_CASE("full report structure and ordering") {
  const auto config = RunConfig::load(fixture() / "config.json");
  const auto report = full_report(load_dataset(config), config);
  CHECK(report.at("columns") == json::array({"IG", "AUC", "sAUC", "NSS", "CC", "KLDiv", "SIM"}));
  CHECK(report.at("n_images") == 8);
  CHECK(report.at("n_fixations") == 1200);
  std::set<std::string> names;
  for (const auto& r : report.at("rows")) {
    names.insert(r.at("model"));
    for (const auto& col : report.at("columns")) CHECK(r.at("scores").contains(col.get<std::string>()));
  }
  CHECK(names == std::set<std::string>{"truth", "sharp", "flat", "prior", "truth+flat", "centerbias", "gold_standard"});
  const auto& rows = report.at("rows");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double a = rows[i - 1].at("scores").at("IG"), b = rows[i].at("scores").at("IG");
    CHECK(a >= b);
  }
  CHECK(row(report, "gold_standard").at("relative_score") == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(row(report, "centerbias").at("scores").at("IG") == 0.0);
  CHECK(row(report, "centerbias").at("relative_score") == 0.0);
  CHECK(row(report, "truth+flat").at("kind") == "mixture");
}

TEST_CASE("a named baseline model scores zero IG against itself") {
  auto doc = config_with({{"baseline", "prior"}, {"metrics", {"IG"}}});
  const auto config = RunConfig::from_json(doc, fixture());
  const auto report = full_report(load_dataset(config), config);
  CHECK(report.at("columns") == json::array({"IG"}));
  CHECK(row(report, "prior").at("scores").at("IG") == 0.0);
  CHECK(row(report, "prior").at("relative_score") == 0.0);
  for (const auto& r : report.at("rows")) CHECK(r.at("model") != "centerbias");
}

TEST_CASE("evaluate subcommand writes the report") {
  const fs::path out = fixture() / "eval_out";
  const auto r =
      cli({"evaluate", "-c", (fixture() / "config.json").string(), "-o", out.string(), "-m", "ig,auc", "--plot-data"});
  REQUIRE(r.code == 0);
  const auto report = json::parse(slurp(out / "report.json"));
  CHECK(report.at("columns") == json::array({"IG", "AUC"}));
  CHECK(fs::is_regular_file(out / "report.csv"));
  // Same inputs, same bytes.
  const fs::path again = fixture() / "eval_again";
  REQUIRE(cli({"evaluate", "-c", (fixture() / "config.json").string(), "-o", again.string(), "-m", "ig,auc"}).code ==
          0);
  CHECK(slurp(out / "report.json") == slurp(again / "report.json"));
}

TEST_CASE("calibrate separates calibrated, over- and underconfident models") {
  const fs::path out = fixture() / "cal_out";
  for (const auto& [model, verdict] : std::vector<std::pair<std::string, std::string>>{
           {"truth", "calibrated"}, {"sharp", "overconfident"}, {"flat", "underconfident"}}) {
    const auto r = cli({"calibrate", "-c", (fixture() / "config.json").string(), "-o", out.string(), "--model", model});
    REQUIRE(r.code == 0);
    const auto h = json::parse(slurp(out / ("calibration_" + model + ".json")));
    CHECK_MESSAGE(h.at("verdict") == verdict, model);
    CHECK(h.at("n_fixations") == 1200);
  }
}

TEST_CASE("other subcommands run") {
  const std::string cfg = (fixture() / "config.json").string();
  const fs::path out = fixture() / "misc_out";
  CHECK(cli({"baseline", "-c", cfg, "-o", out.string()}).code == 0);
  CHECK(fs::is_regular_file(out / "baseline.json"));
  CHECK(cli({"ensemble", "-c", cfg, "-o", out.string(), "-w", "truth=0.5,sharp=0.5", "--name", "mx"}).code == 0);
  const auto e = json::parse(slurp(out / "ensemble_mx.json"));
  CHECK(e.contains("mean_js_bits"));
  CHECK(cli({"disagree", "-c", cfg, "-o", out.string(), "--models", "truth,flat"}).code == 0);
  CHECK(cli({"sweep", "-c", cfg, "-o", out.string(), "-a", "truth", "-b", "flat", "--steps", "5"}).code == 0);
  const auto s = json::parse(slurp(out / "sweep_truth_flat.json"));
  CHECK(s.at("best_weight") == 0.0);
  CHECK(cli({"folds", "-c", cfg, "-o", out.string(), "--folds", "4"}).code == 0);
  CHECK(json::parse(slurp(out / "folds.json")).at("folds").size() == 4);
}

TEST_CASE("train subcommand on a small schedule") {
  auto doc = config_with({{"train", {{"epochs", 2}, {"milestones", {1}}, {"widths", {4, 16, 1}}}}});
  const auto cfg = write_config("train_config.json", doc);
  const fs::path out = fixture() / "train_out";
  const auto r = cli({"train", "-c", cfg.string(), "-o", out.string(), "--rotation", "0"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto t = json::parse(slurp(out / "train" / "train.json"));
  CHECK(t.at("trace").size() == 2);
  CHECK(t.contains("test_nll"));
  CHECK(fs::is_regular_file(out / "train" / "checkpoint.bin"));
  CHECK(slurp(out / "train" / "loss_trace.csv").rfind("epoch,lr,nll\n", 0) == 0);
}

TEST_CASE("exit codes") {
  const auto unknown = cli({"frobnicate"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("unknown subcommand") != std::string::npos);
  CHECK(cli({}).code == 1);
  CHECK(cli({"evaluate", "--no-such-flag"}).code == 1);
  CHECK(cli({"evaluate", "-c", (fixture() / "missing.json").string()}).code == 2);
  const auto bad_key = write_config("bad_key.json", config_with({{"colour", 1}}));
  CHECK(cli({"evaluate", "-c", bad_key.string()}).code == 1);
  const auto missing_model = write_config("missing_model.json", config_with({{"models", {{"ghost", "nowhere"}}}}));
  CHECK(cli({"evaluate", "-c", missing_model.string()}).code == 2);
  CHECK(cli({"calibrate", "-c", (fixture() / "config.json").string(), "-k", "1"}).code == 1);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("config validation") {
  const auto base = config_with(json::object());
  CHECK(error_of([&] { RunConfig::from_json(config_with({{"k", "four"}}), fixture()); }) == ErrorCode::BadArgument);
  CHECK(error_of([&] { RunConfig::from_json(config_with({{"kde", {{"width", 2}}}}), fixture()); }) ==
        ErrorCode::BadArgument);
  json no_fix = base;
  no_fix.erase("fixations");
  CHECK(error_of([&] { RunConfig::from_json(no_fix, fixture()); }) == ErrorCode::BadArgument);
  auto check_invalid = [&](const json& patch) {
    const auto c = RunConfig::from_json(config_with(patch), fixture());
    return error_of([&] { c.validate(); });
  };
  CHECK(check_invalid({{"k", 1}}) == ErrorCode::BadArgument);
  CHECK(check_invalid({{"sigma_empirical", -1.0}}) == ErrorCode::BadArgument);
  CHECK(check_invalid({{"mixtures", {{{"name", "m"}, {"weights", {{"truth", 0.7}, {"flat", 0.7}}}}}}}) ==
        ErrorCode::BadWeights);
  CHECK(check_invalid({{"fixations", "nope.csv"}}) == ErrorCode::Io);
  const auto c = RunConfig::from_json(base, fixture());
  CHECK(c.fixations == fixture() / "fixations.csv");
}
