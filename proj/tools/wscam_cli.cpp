// wscam: synthetic data, GMIC-micro training, saliency evaluation, sweep.
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "wscam/commands.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string train_map;
  std::string test_map;
  std::optional<double> fppi_cap;
  std::string checkpoint;
};

wscam::RunConfig resolve(const Overrides& o) {
  wscam::RunConfig c = o.config_path.empty() ? wscam::RunConfig{} : wscam::load_run_config(o.config_path);
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  if (!o.train_map.empty()) c.train.train_map_method = wscam::parse_method(o.train_map);
  if (!o.test_map.empty()) c.train.test_map_method = wscam::parse_method(o.test_map);
  if (o.fppi_cap) c.detect.fppi_cap = *o.fppi_cap;
  c.train.seed = c.seed;
  wscam::validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised lesion localization with class activation maps"};
  app.require_subcommand(1);
  Overrides o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--out", o.out, "Output directory (overrides out_dir)");
    cmd->add_option("--seed", o.seed, "Run seed (overrides seed)");
    cmd->add_option("--train-map", o.train_map, "Training map method: CAM, GradCAM, GradCAM++, XGradCAM");
    cmd->add_option("--test-map", o.test_map, "Test map method: CAM, GradCAM, GradCAM++, XGradCAM, LayerCAM");
    cmd->add_option("--fppi-cap", o.fppi_cap, "FPPI cap for the TPR@FPPI operating point")->check(CLI::NonNegativeNumber);
  };
  auto add_checkpoint = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint path (default <out>/checkpoint.wcam)");
  };

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic train/test sets");
  auto* trn = app.add_subcommand("train", "Train GMIC-micro, write checkpoint and history");
  auto* ev = app.add_subcommand("eval", "Classification + detection metrics for a checkpoint");
  auto* sw = app.add_subcommand("sweep", "Train x test map-method grid");
  auto* ov = app.add_subcommand("overlay", "Render saliency overlays for mass test images");
  auto* rep = app.add_subcommand("report", "Print tables from existing metrics.json / sweep.csv");
  for (auto* cmd : {gen, trn, ev, sw, ov, rep}) add_common(cmd);
  for (auto* cmd : {trn, ev, ov}) add_checkpoint(cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : 2;
  }

  try {
    const wscam::RunConfig cfg = resolve(o);
    const auto checkpoint = o.checkpoint.empty() ? wscam::OutputLayout{cfg.out_dir}.checkpoint()
                                                 : std::filesystem::path(o.checkpoint);
    if (gen->parsed()) wscam::cmd_gen_data(cfg, std::cout);
    else if (trn->parsed()) wscam::cmd_train(cfg, checkpoint, std::cout);
    else if (ev->parsed()) wscam::cmd_eval(cfg, checkpoint, std::cout);
    else if (sw->parsed()) wscam::cmd_sweep(cfg, std::cout);
    else if (ov->parsed()) wscam::cmd_overlay(cfg, checkpoint, std::cout);
    else if (rep->parsed()) std::cout << wscam::cmd_report(cfg);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
