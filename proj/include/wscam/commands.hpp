#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "wscam/detection.hpp"
#include "wscam/gmic.hpp"
#include "wscam/metrics.hpp"
#include "wscam/run_config.hpp"

namespace wscam {

// Output layout under RunConfig::out_dir.
struct OutputLayout {
  std::filesystem::path root;

  std::filesystem::path train_manifest() const { return root / "data" / "train" / "manifest.csv"; }
  std::filesystem::path test_manifest() const { return root / "data" / "test" / "manifest.csv"; }
  std::filesystem::path checkpoint() const { return root / "checkpoint.wcam"; }
  std::filesystem::path history() const { return root / "history.csv"; }
  std::filesystem::path metrics() const { return root / "metrics.json"; }
  std::filesystem::path froc() const { return root / "froc.csv"; }
  std::filesystem::path detections() const { return root / "detections.csv"; }
  std::filesystem::path overlays() const { return root / "overlays"; }
  std::filesystem::path sweep_dir() const { return root / "sweep"; }
  std::filesystem::path sweep_csv() const { return root / "sweep.csv"; }
  std::filesystem::path sweep_table() const { return root / "sweep.txt"; }
  std::filesystem::path report() const { return root / "report.txt"; }
};

struct EvalResult {
  Method train_map_method = Method::cam;
  Method test_map_method = Method::cam;
  std::size_t images = 0;
  std::size_t mass_images = 0;
  std::optional<ClassificationReport> classification;  // needs both classes
  std::optional<FrocCurve> froc;                        // needs at least one mass image
  std::optional<OperatingPoint> operating_point;
  std::vector<IndexedDetection> detections;
};

// Classifies every image; detection is scored on the mass images only.
EvalResult evaluate(const GmicModel& model, const Dataset& test, Method test_map_method, const RunConfig& config);

nlohmann::ordered_json to_json(const EvalResult& result, const RunConfig& config);

// Writes metrics.json, froc.csv and detections.csv into `dir`.
void write_eval_outputs(const std::filesystem::path& dir, const EvalResult& result, const RunConfig& config);

struct SweepCell {
  Method train_map_method = Method::cam;
  Method test_map_method = Method::cam;
  OperatingPoint point;
  double auc = 0.0;
  double accuracy = 0.0;
};

struct SweepReport {
  std::vector<SweepCell> cells;  // row-major: train method, then test method
  double fppi_cap = 1.0;
  std::size_t mass_images = 0;
  std::optional<SweepCell> dominating;  // first off-diagonal cell beating CAM/CAM
};

inline constexpr Method kSweepTrainMethods[] = {Method::cam, Method::grad_cam_pp, Method::xgrad_cam};

// (higher TPR, FPPI not larger) or (equal TPR, lower FPPI); `a` must sit within the cap.
bool dominates(const OperatingPoint& a, const OperatingPoint& b);
std::optional<SweepCell> find_dominating_cell(const std::vector<SweepCell>& cells);

void write_sweep_csv(std::ostream& os, const SweepReport& report);
std::vector<SweepCell> read_sweep_csv(std::istream& is);
std::string format_sweep_table(const SweepReport& report);

// Commands. Each throws on failure; `log` receives progress lines.
void cmd_gen_data(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& log);
EvalResult cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& log);
SweepReport cmd_sweep(const RunConfig& config, std::ostream& log);
void cmd_overlay(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& log);
std::string cmd_report(const RunConfig& config);

}  // namespace wscam
