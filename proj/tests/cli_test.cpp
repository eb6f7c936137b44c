#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "wscam/commands.hpp"
#include "wscam/run_config.hpp"

using namespace wscam;
using wscam::testing::ScratchDir;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string error_of(const json& doc) {
  try {
    parse_run_config(doc);
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

RunConfig small_run(const std::filesystem::path& out) {
  RunConfig c = parse_run_config(json::parse(R"({
    "data": {"train_per_class": 4, "test_per_class": 3},
    "train": {"epochs": 1, "batch_size": 4},
    "detect": {"cutoff_count": 21},
    "overlay_count": 2
  })"));
  c.out_dir = out;
  return c;
}

struct RunResult {
  int code;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(WSCAM_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

SweepReport fake_report() {
  SweepReport r;
  r.fppi_cap = 1.0;
  r.mass_images = 50;
  for (Method tr : kSweepTrainMethods) {
    for (Method te : {Method::cam, Method::grad_cam, Method::grad_cam_pp, Method::xgrad_cam, Method::layer_cam}) {
      SweepCell c;
      c.train_map_method = tr;
      c.test_map_method = te;
      c.point = {0.5, 0.75, 0.4, true};
      c.auc = 0.95;
      c.accuracy = 0.9;
      r.cells.push_back(c);
    }
  }
  return r;
}

}  // namespace

TEST(RunConfig, DefaultsAndOverrides) {
  const RunConfig d = parse_run_config(json::object());
  EXPECT_EQ(d.seed, 7u);
  EXPECT_EQ(d.data.train_per_class, 200u);
  EXPECT_EQ(d.data.test_per_class, 50u);
  EXPECT_EQ(d.train.batch_size, 6u);
  EXPECT_EQ(d.detect.iou_min, 0.3);
  EXPECT_EQ(d.detect.fppi_cap, 1.0);
  const RunConfig c = parse_run_config(json::parse(
      R"({"seed": 11, "train": {"train_map_method": "XGradCAM", "beta": 0.5}, "detect": {"test_map_method": "LayerCAM"}})"));
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.train.seed, 11u);
  EXPECT_EQ(c.train.train_map_method, Method::xgrad_cam);
  EXPECT_EQ(c.train.test_map_method, Method::layer_cam);
  EXPECT_EQ(c.train.beta, 0.5);
  EXPECT_EQ(parse_run_config(json::parse(to_json(c).dump())).train.train_map_method, Method::xgrad_cam);
  EXPECT_EQ(to_json(parse_run_config(json::parse(to_json(c).dump()))), to_json(c));
}

TEST(RunConfig, SchemaErrorsNameTheKey) {
  EXPECT_NE(error_of(json::parse(R"({"sed": 1})")).find("'sed'"), std::string::npos);
  EXPECT_NE(error_of(json::parse(R"({"train": {"lr": 1}})")).find("'train.lr'"), std::string::npos);
  EXPECT_NE(error_of(json::parse(R"({"train": {"epochs": -3}})")).find("epochs"), std::string::npos);
  EXPECT_NE(error_of(json::parse(R"({"train": {"train_map_method": "LayerCAM"}})")).find("cannot drive training"),
            std::string::npos);
  EXPECT_NE(error_of(json::parse(R"({"detect": {"test_map_method": "Saliency"}})")).find("LayerCAM"),
            std::string::npos);
  EXPECT_FALSE(error_of(json::parse(R"({"detect": {"connectivity": 6}})")).empty());
  EXPECT_FALSE(error_of(json::parse(R"({"detect": {"iou_min": 1.5}})")).empty());
  EXPECT_FALSE(error_of(json::parse(R"({"data": {"radius_max": 70}})")).empty());
  EXPECT_FALSE(error_of(json::parse(R"({"train": {"learning_rate": 0}})")).empty());
  EXPECT_FALSE(error_of(json::parse(R"([1, 2])")).empty());
}

TEST(Sweep, DominanceRules) {
  const OperatingPoint base{0.5, 0.5, 0.3, true};
  EXPECT_TRUE(dominates({0.6, 0.5, 0, true}, base));
  EXPECT_TRUE(dominates({0.5, 0.4, 0, true}, base));
  EXPECT_FALSE(dominates({0.5, 0.5, 0, true}, base));
  EXPECT_FALSE(dominates({0.6, 0.6, 0, true}, base));
  EXPECT_FALSE(dominates({0.9, 0.1, 0, false}, base));

  auto cells = fake_report().cells;
  EXPECT_FALSE(find_dominating_cell(cells).has_value());
  cells[0].point = {0.5, 0.75, 0.4, true};
  cells[7].point = {0.9, 0.10, 0.4, true};  // GradCAM++/GradCAM++ is matched, never counts
  EXPECT_FALSE(find_dominating_cell(cells).has_value());
  cells[8].point = {0.6, 0.70, 0.4, true};  // GradCAM++ -> XGradCAM
  const auto d = find_dominating_cell(cells);
  ASSERT_TRUE(d.has_value());
  EXPECT_EQ(d->train_map_method, Method::grad_cam_pp);
  EXPECT_EQ(d->test_map_method, Method::xgrad_cam);
}

TEST(Sweep, TableShapeAndCsvRoundTrip) {
  SweepReport r = fake_report();
  r.cells[1].point = {0.25, 1.5, 0.9, false};
  const std::string table = format_sweep_table(r);
  std::istringstream lines(table);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("GMIC (", 0) != 0) continue;
    ++rows;
    std::size_t cells = 0;
    for (std::size_t p = line.find('@'); p != std::string::npos; p = line.find('@', p + 1)) ++cells;
    EXPECT_EQ(cells, 5u) << line;
  }
  EXPECT_EQ(rows, 3);
  EXPECT_NE(table.find("0.50@0.75"), std::string::npos);
  EXPECT_NE(table.find("0.25@1.50*"), std::string::npos);
  EXPECT_NE(table.find("0.69@1.55"), std::string::npos);
  EXPECT_NE(table.find("0.70@0.88"), std::string::npos);
  EXPECT_NE(table.find("not reproduced"), std::string::npos);
  EXPECT_NE(table.find("Observation: no off-diagonal cell dominates CAM/CAM"), std::string::npos);

  std::stringstream csv;
  write_sweep_csv(csv, r);
  const auto back = read_sweep_csv(csv);
  ASSERT_EQ(back.size(), 15u);
  for (std::size_t i = 0; i < 15; ++i) {
    EXPECT_EQ(back[i].train_map_method, r.cells[i].train_map_method);
    EXPECT_EQ(back[i].test_map_method, r.cells[i].test_map_method);
    EXPECT_EQ(back[i].point.tpr, r.cells[i].point.tpr);
    EXPECT_EQ(back[i].point.within_cap, r.cells[i].point.within_cap);
  }
}

TEST(Commands, GenDataDefaultCountAndDeterminism) {
  ScratchDir dir("gen_data");
  RunConfig c;
  c.out_dir = dir.path() / "a";
  std::ostringstream log;
  cmd_gen_data(c, log);
  std::size_t pgms = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(c.out_dir)) {
    if (e.path().extension() == ".pgm") ++pgms;
  }
  EXPECT_EQ(pgms, 500u);
  const OutputLayout a{c.out_dir};
  EXPECT_EQ(load_manifest(a.train_manifest()).size(), 400u);
  EXPECT_EQ(load_manifest(a.test_manifest()).size(), 100u);
  c.out_dir = dir.path() / "b";
  cmd_gen_data(c, log);
  const OutputLayout b{c.out_dir};
  EXPECT_EQ(slurp(a.train_manifest()), slurp(b.train_manifest()));
  EXPECT_EQ(slurp(a.test_manifest()), slurp(b.test_manifest()));
  EXPECT_EQ(slurp(a.root / "data" / "test" / "test_0077.pgm"), slurp(b.root / "data" / "test" / "test_0077.pgm"));
}

TEST(Commands, PipelineOnSmallConfig) {
  ScratchDir dir("pipeline");
  const RunConfig c = small_run(dir.path());
  const OutputLayout out{c.out_dir};
  std::ostringstream log;
  try {
    cmd_train(c, out.checkpoint(), log);
    ADD_FAILURE() << "train without data";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("gen-data"), std::string::npos);
  }
  EXPECT_THROW(cmd_report(c), std::runtime_error);

  cmd_gen_data(c, log);
  cmd_train(c, out.checkpoint(), log);
  EXPECT_TRUE(std::filesystem::exists(out.history()));
  const EvalResult r = cmd_eval(c, out.checkpoint(), log);
  EXPECT_EQ(r.images, 6u);
  EXPECT_EQ(r.mass_images, 3u);
  ASSERT_TRUE(r.classification.has_value());
  ASSERT_TRUE(r.operating_point.has_value());
  const json m = json::parse(slurp(out.metrics()));
  EXPECT_EQ(m["test_map_method"], "GradCAM++");
  EXPECT_EQ(m["mass_images"], 3);
  EXPECT_TRUE(m["detection"].contains("tpr"));
  EXPECT_EQ(slurp(out.froc()).substr(0, 6), "cutoff");
  cmd_overlay(c, out.checkpoint(), log);
  std::size_t ppm = 0;
  for (const auto& e : std::filesystem::directory_iterator(out.overlays())) ppm += e.path().extension() == ".ppm";
  EXPECT_EQ(ppm, 2u);
  const std::string report = cmd_report(c);
  EXPECT_NE(report.find("GradCAM++"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(out.report()));

  // Mass-only evaluation reports detection and skips classification.
  Dataset masses = load_manifest(out.test_manifest());
  std::erase_if(masses.samples, [](const Sample& s) { return s.label != Label::mass; });
  const EvalResult mo = evaluate(load_checkpoint(out.checkpoint()), masses, Method::cam, c);
  EXPECT_FALSE(mo.classification.has_value());
  EXPECT_TRUE(mo.operating_point.has_value());
  EXPECT_TRUE(to_json(mo, c)["detection"].is_object());
  EXPECT_FALSE(to_json(mo, c).contains("auc"));
}

TEST(Binary, ExitCodesAndMessages) {
  ScratchDir dir("binary");
  const auto cfg = dir.path() / "bad.json";
  std::ofstream(cfg) << R"({"train": {"epoch": 3}})";
  auto r = run_cli("gen-data --config " + cfg.string() + " --out " + (dir.path() / "o").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("'train.epoch'"), std::string::npos) << r.output;
  r = run_cli("eval --out " + (dir.path() / "o").string() + " --test-map Occlusion");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("XGradCAM"), std::string::npos) << r.output;
  r = run_cli("train --out " + (dir.path() / "empty").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("gen-data"), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("eval --no-such-flag").code, 2);
  EXPECT_EQ(run_cli("--help").code, 0);
}
