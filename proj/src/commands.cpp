#include "wscam/commands.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>

#include "wscam/csv.hpp"

namespace wscam {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Directory-safe spelling of a method name.
std::string method_slug(Method m) {
  std::string s(method_name(m));
  std::string out;
  for (char c : s) out += c == '+' ? std::string("p") : std::string(1, c);
  return out;
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  body(os);
  os.flush();
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Dataset load_split(const fs::path& manifest, const char* split) {
  if (!fs::exists(manifest)) {
    throw std::runtime_error(std::string("missing ") + split + " dataset (" + manifest.string() +
                             "); run gen-data first");
  }
  Dataset ds = load_manifest(manifest);
  if (ds.empty()) throw std::runtime_error(std::string(split) + " manifest lists no images: " + manifest.string());
  return ds;
}

GmicModel load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) {
    throw std::runtime_error("missing checkpoint " + checkpoint.string() + "; run train first");
  }
  return load_checkpoint(checkpoint);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainResult train_logged(const RunConfig& config, Method method, std::ostream& log) {
  TrainConfig tc = config.train;
  tc.train_map_method = method;
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset ds = load_split(OutputLayout{config.out_dir}.train_manifest(), "train");
  const std::string tag(method_name(method));
  return train(make_gmic_model(config.seed, method), ds, tc, [&](std::size_t epoch, const LossBreakdown& l) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "[%s] epoch %zu/%zu  loss %.4f  (bce g/l/f %.4f %.4f %.4f, reg %.4f)  %.0fs\n",
                  tag.c_str(), epoch + 1, tc.epochs, l.total, l.bce_global, l.bce_local, l.bce_fusion, l.reg,
                  elapsed_s(t0));
    log << buf << std::flush;
  });
}

void write_training_outputs(const fs::path& checkpoint, const fs::path& history, const TrainResult& result) {
  if (checkpoint.has_parent_path()) fs::create_directories(checkpoint.parent_path());
  save_checkpoint(checkpoint, result.model);
  write_file(history, [&](std::ostream& os) { write_history_csv(os, result.history); });
}

void write_overlays(const fs::path& dir, const GmicModel& model, const Dataset& test, Method method,
                    const RunConfig& config) {
  fs::create_directories(dir);
  const PredictConfig pc = predict_config(config);
  std::size_t written = 0;
  for (const auto& s : test.samples) {
    if (written == config.overlay_count) break;
    if (s.label != Label::mass) continue;
    const Prediction p = predict(model, s.image, method, pc);
    const std::string stem = s.id + "_" + method_slug(method);
    write_overlay_ppm(dir / (stem + ".ppm"), channel_slice(s.image, 0), p.normalized_map);
    write_saliency_pgm(dir / (stem + "_map.pgm"), p.normalized_map);
    ++written;
  }
}

}  // namespace

EvalResult evaluate(const GmicModel& model, const Dataset& test, Method test_map_method, const RunConfig& config) {
  if (test.empty()) throw std::invalid_argument("evaluation set is empty");
  const PredictConfig pc = predict_config(config);
  EvalResult r;
  r.train_map_method = model.train_map_method;
  r.test_map_method = test_map_method;
  r.images = test.size();

  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<ImageDetections> per_image;
  bool has_normal = false;
  for (const auto& s : test.samples) {
    const Prediction p = predict(model, s.image, test_map_method, pc);
    scores.push_back(p.y_fusion);
    labels.push_back(s.label == Label::mass ? 1 : 0);
    if (s.label == Label::mass) {
      ++r.mass_images;
      per_image.push_back({p.detections, s.boxes});
      for (const auto& d : p.detections) r.detections.push_back({s.id, d});
    } else {
      has_normal = true;
    }
  }
  if (has_normal && r.mass_images > 0) r.classification = classification_report(scores, labels, 0.5);
  if (!per_image.empty()) {
    const auto cutoffs = default_cutoffs(config.detect.cutoff_count);
    r.froc = froc_curve(per_image, cutoffs, config.detect.iou_min);
    r.operating_point = tpr_at_fppi(*r.froc, config.detect.fppi_cap);
  }
  return r;
}

nlohmann::ordered_json to_json(const EvalResult& r, const RunConfig& config) {
  nlohmann::ordered_json j;
  if (r.classification) j = to_json(*r.classification);
  j["train_map_method"] = std::string(method_name(r.train_map_method));
  j["test_map_method"] = std::string(method_name(r.test_map_method));
  j["images"] = r.images;
  j["mass_images"] = r.mass_images;
  if (r.froc) {
    const auto& op = *r.operating_point;
    j["detection"] = {{"tpr", op.tpr},
                      {"fppi", op.fppi},
                      {"cutoff", op.cutoff},
                      {"within_cap", op.within_cap},
                      {"cell", format_operating_point(op)},
                      {"fppi_cap", config.detect.fppi_cap},
                      {"iou_min", config.detect.iou_min},
                      {"tau_cand", config.detect.tau_cand},
                      {"ground_truths", r.froc->ground_truths},
                      {"tpr_undefined", r.froc->tpr_undefined}};
  } else {
    j["detection"] = nullptr;
  }
  return j;
}

void write_eval_outputs(const fs::path& dir, const EvalResult& r, const RunConfig& config) {
  fs::create_directories(dir);
  const OutputLayout layout{dir};
  write_file(layout.metrics(), [&](std::ostream& os) { os << to_json(r, config).dump(2) << '\n'; });
  if (r.froc) write_file(layout.froc(), [&](std::ostream& os) { write_froc_csv(os, *r.froc); });
  write_file(layout.detections(), [&](std::ostream& os) { write_detections_csv(os, r.detections); });
}

bool dominates(const OperatingPoint& a, const OperatingPoint& b) {
  if (!a.within_cap) return false;
  return (a.tpr > b.tpr && a.fppi <= b.fppi) || (a.tpr == b.tpr && a.fppi < b.fppi);
}

std::optional<SweepCell> find_dominating_cell(const std::vector<SweepCell>& cells) {
  const SweepCell* base = nullptr;
  for (const auto& c : cells) {
    if (c.train_map_method == Method::cam && c.test_map_method == Method::cam) base = &c;
  }
  if (!base) return std::nullopt;
  for (const auto& c : cells) {
    if (c.train_map_method != c.test_map_method && dominates(c.point, base->point)) return c;
  }
  return std::nullopt;
}

void write_sweep_csv(std::ostream& os, const SweepReport& report) {
  os << "train_map_method,test_map_method,tpr,fppi,cutoff,within_cap,cell,auc,accuracy\n";
  for (const auto& c : report.cells) {
    os << method_name(c.train_map_method) << ',' << method_name(c.test_map_method) << ',' << fixed(c.point.tpr) << ','
       << fixed(c.point.fppi) << ',' << fixed(c.point.cutoff) << ',' << (c.point.within_cap ? 1 : 0) << ','
       << format_operating_point(c.point) << ',' << fixed(c.auc) << ',' << fixed(c.accuracy) << '\n';
  }
}

std::vector<SweepCell> read_sweep_csv(std::istream& is) {
  std::vector<SweepCell> cells;
  csv::for_each_row(is, true, [&](const std::vector<std::string>& f, std::size_t line) {
    if (f.size() != 9) throw std::runtime_error("sweep.csv line " + std::to_string(line) + ": expected 9 columns");
    SweepCell c;
    c.train_map_method = parse_method(f[0]);
    c.test_map_method = parse_method(f[1]);
    c.point = {csv::parse_double(f[2], line), csv::parse_double(f[3], line), csv::parse_double(f[4], line),
               f[5] == "1"};
    c.auc = csv::parse_double(f[7], line);
    c.accuracy = csv::parse_double(f[8], line);
    cells.push_back(c);
  });
  return cells;
}

std::string format_sweep_table(const SweepReport& report) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "TPR@FPPI at FPPI <= %.2f (%zu mass images)\n\n", report.fppi_cap,
                report.mass_images);
  os << buf;
  std::snprintf(buf, sizeof buf, "%-18s", "train \\ test");
  os << buf;
  for (Method m : kAllMethods) {
    std::snprintf(buf, sizeof buf, "%-12s", std::string(method_name(m)).c_str());
    os << buf;
  }
  os << "  AUC\n";
  bool any_outside = false;
  for (Method train_m : kSweepTrainMethods) {
    std::snprintf(buf, sizeof buf, "%-18s", ("GMIC (" + std::string(method_name(train_m)) + ")").c_str());
    os << buf;
    double row_auc = 0.0;
    for (Method test_m : kAllMethods) {
      std::string cell = "-";
      for (const auto& c : report.cells) {
        if (c.train_map_method != train_m || c.test_map_method != test_m) continue;
        cell = format_operating_point(c.point);
        if (!c.point.within_cap) {
          cell += '*';
          any_outside = true;
        }
        row_auc = c.auc;
      }
      std::snprintf(buf, sizeof buf, "%-12s", cell.c_str());
      os << buf;
    }
    os << "  " << fixed(row_auc, 3) << '\n';
  }
  os << '\n';
  if (any_outside) os << "* no operating point within the FPPI cap; the lowest-FPPI point is shown.\n";
  os << "Full-scale reference cells, not reproduced at this scale: CAM/CAM 0.69@1.55, XGradCAM/GradCAM++ 0.70@0.88.\n";
  if (report.dominating) {
    const auto& d = *report.dominating;
    os << "Observation: off-diagonal cell " << method_name(d.train_map_method) << '/' << method_name(d.test_map_method)
       << " (" << format_operating_point(d.point) << ") dominates CAM/CAM.\n";
  } else {
    os << "Observation: no off-diagonal cell dominates CAM/CAM.\n";
  }
  return os.str();
}

void cmd_gen_data(const RunConfig& config, std::ostream& log) {
  const OutputLayout layout{config.out_dir};
  const Dataset train_ds = generate_synthetic(train_synth_config(config));
  write_dataset(layout.train_manifest().parent_path(), train_ds);
  const Dataset test_ds = generate_synthetic(test_synth_config(config));
  write_dataset(layout.test_manifest().parent_path(), test_ds);
  log << "wrote " << train_ds.size() << " train and " << test_ds.size() << " test images under "
      << (config.out_dir / "data").string() << '\n';
}

void cmd_train(const RunConfig& config, const fs::path& checkpoint, std::ostream& log) {
  const OutputLayout layout{config.out_dir};
  const TrainResult result = train_logged(config, config.train.train_map_method, log);
  write_training_outputs(checkpoint, layout.history(), result);
  log << "wrote " << checkpoint.string() << " and " << layout.history().string() << '\n';
}

EvalResult cmd_eval(const RunConfig& config, const fs::path& checkpoint, std::ostream& log) {
  const OutputLayout layout{config.out_dir};
  const GmicModel model = load_model(checkpoint);
  const Dataset test = load_split(layout.test_manifest(), "test");
  const EvalResult r = evaluate(model, test, config.train.test_map_method, config);
  write_eval_outputs(config.out_dir, r, config);
  if (config.overlay_count > 0) write_overlays(layout.overlays(), model, test, config.train.test_map_method, config);
  if (r.classification) log << format_table("GMIC-micro", *r.classification);
  if (r.operating_point) {
    log << "detection (" << method_name(r.train_map_method) << " -> " << method_name(r.test_map_method)
        << "): " << format_operating_point(*r.operating_point) << (r.operating_point->within_cap ? "" : " (over cap)")
        << '\n';
  }
  log << "wrote " << layout.metrics().string() << '\n';
  return r;
}

SweepReport cmd_sweep(const RunConfig& config, std::ostream& log) {
  const OutputLayout layout{config.out_dir};
  const Dataset test = load_split(layout.test_manifest(), "test");
  load_split(layout.train_manifest(), "train");

  // Trainings are independent; each keeps its own log and joins in a fixed order.
  std::vector<std::future<TrainResult>> jobs;
  std::vector<std::ostringstream> logs(std::size(kSweepTrainMethods));
  for (std::size_t i = 0; i < std::size(kSweepTrainMethods); ++i) {
    jobs.push_back(std::async(std::launch::async, [&, i] { return train_logged(config, kSweepTrainMethods[i], logs[i]); }));
  }

  SweepReport report;
  report.fppi_cap = config.detect.fppi_cap;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Method train_m = kSweepTrainMethods[i];
    const TrainResult trained = jobs[i].get();
    log << logs[i].str();
    const fs::path dir = layout.sweep_dir() / method_slug(train_m);
    write_training_outputs(dir / "checkpoint.wcam", dir / "history.csv", trained);
    for (Method test_m : kAllMethods) {
      const EvalResult r = evaluate(trained.model, test, test_m, config);
      if (!r.operating_point) throw std::runtime_error("sweep needs mass images in the test set");
      write_eval_outputs(dir / method_slug(test_m), r, config);
      SweepCell cell{train_m, test_m, *r.operating_point, 0.0, 0.0};
      if (r.classification) {
        cell.auc = r.classification->auc;
        cell.accuracy = r.classification->rates.accuracy.value_or(0.0);
      }
      report.mass_images = r.mass_images;
      report.cells.push_back(cell);
      log << method_name(train_m) << " -> " << method_name(test_m) << ": " << format_operating_point(cell.point)
          << "  AUC " << fixed(cell.auc, 3) << '\n';
    }
  }
  report.dominating = find_dominating_cell(report.cells);
  write_file(layout.sweep_csv(), [&](std::ostream& os) { write_sweep_csv(os, report); });
  const std::string table = format_sweep_table(report);
  write_file(layout.sweep_table(), [&](std::ostream& os) { os << table; });
  log << '\n' << table;
  return report;
}

void cmd_overlay(const RunConfig& config, const fs::path& checkpoint, std::ostream& log) {
  const OutputLayout layout{config.out_dir};
  if (config.overlay_count == 0) throw std::invalid_argument("overlay_count is 0; nothing to render");
  const GmicModel model = load_model(checkpoint);
  const Dataset test = load_split(layout.test_manifest(), "test");
  write_overlays(layout.overlays(), model, test, config.train.test_map_method, config);
  log << "wrote overlays to " << layout.overlays().string() << '\n';
}

std::string cmd_report(const RunConfig& config) {
  const OutputLayout layout{config.out_dir};
  std::ostringstream os;
  bool found = false;
  if (fs::exists(layout.metrics())) {
    std::ifstream is(layout.metrics());
    const auto j = nlohmann::json::parse(is);
    found = true;
    os << "Classification (" << j.at("images").get<std::size_t>() << " images)\n";
    if (j.contains("auc")) {
      auto pct = [&](const char* key) {
        return j.at(key).is_null() ? std::string("n/a") : fixed(100.0 * j.at(key).get<double>(), 2);
      };
      char buf[256];
      std::snprintf(buf, sizeof buf, "%-12s%10s%10s%10s%10s%10s\n%-12s%10s%10s%10s%10s%10s\n", "Model", "Accuracy",
                    "AUC", "TPR", "TNR", "FNR", "GMIC-micro", pct("accuracy").c_str(), pct("auc").c_str(),
                    pct("tpr").c_str(), pct("tnr").c_str(), pct("fnr").c_str());
      os << buf;
    } else {
      os << "  single-class evaluation set; classification metrics not defined\n";
    }
    if (!j.at("detection").is_null()) {
      const auto& d = j.at("detection");
      os << "Detection " << j.at("train_map_method").get<std::string>() << " -> "
         << j.at("test_map_method").get<std::string>() << ": " << d.at("cell").get<std::string>()
         << " (FPPI cap " << fixed(d.at("fppi_cap").get<double>(), 2) << ")\n";
    }
    os << '\n';
  }
  if (fs::exists(layout.sweep_csv())) {
    std::ifstream is(layout.sweep_csv());
    SweepReport report;
    report.cells = read_sweep_csv(is);
    report.fppi_cap = config.detect.fppi_cap;
    report.dominating = find_dominating_cell(report.cells);
    const fs::path any_metrics = layout.sweep_dir() / method_slug(Method::cam) / method_slug(Method::cam) / "metrics.json";
    if (fs::exists(any_metrics)) {
      std::ifstream ms(any_metrics);
      report.mass_images = nlohmann::json::parse(ms).at("mass_images").get<std::size_t>();
    }
    os << format_sweep_table(report);
    found = true;
  }
  if (!found) {
    throw std::runtime_error("nothing to report under " + config.out_dir.string() + "; run eval or sweep first");
  }
  write_file(layout.report(), [&](std::ostream& o) { o << os.str(); });
  return os.str();
}

}  // namespace wscam
