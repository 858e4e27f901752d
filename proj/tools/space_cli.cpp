#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "space/checkpoint.hpp"
#include "space/config.hpp"
#include "space/datasets.hpp"
#include "space/export.hpp"
#include "space/report.hpp"
#include "space/trainer.hpp"

namespace fs = std::filesystem;
using namespace space;

using Model = SpaceModel<float>;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_bytes(path, text);
}

int cmd_synth(const std::string& out, std::uint64_t seed, std::size_t n_train, std::size_t n_val,
              std::size_t n_test, std::size_t size, const std::string& category) {
  const DatasetSplit d = synth_toy_dataset(seed, n_train, n_val, n_test, size);
  export_mvtec_layout(d, out, category);
  std::cout << "wrote " << d.train.size() + d.validation.size() << " train and " << d.test.size()
            << " test images to " << (fs::path(out) / category).string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& data, const std::string& out, std::string loss_csv) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  cfg.validate();
  const DatasetSplit split = load_mvtec_layout(data, cfg.category, cfg.validation_fraction);

  Model model(cfg.network, cfg.teacher_seed);
  if (!cfg.teacher_checkpoint.empty()) load_teacher(model.nets, cfg.teacher_checkpoint);
  model.category = cfg.category;
  model.validation_fraction = cfg.validation_fraction;

  if (loss_csv.empty()) loss_csv = out + ".loss.csv";
  const fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream csv(loss_csv, std::ios::trunc);
  if (!csv) throw IoError("cannot write '" + loss_csv + "'");
  csv << kLossCsvHeader << "\n";

  TrainHooks<float> hooks;
  hooks.on_step = [&](std::uint64_t iter, const LossBundle& b) {
    csv << loss_csv_row(iter, b) << "\n";
    if (!csv) throw IoError("write failed for '" + loss_csv + "'");
  };
  hooks.on_checkpoint = [&](const Model& m) {
    save_checkpoint(m, out + ".iter" + std::to_string(m.iteration));
  };
  train(model, cfg.train, cfg.augment, split, hooks);
  csv.flush();
  save_checkpoint(model, out);
  std::cout << "trained " << model.iteration << " iterations; checkpoint " << out << ", losses "
            << loss_csv << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& report,
             const std::string& scores) {
  const Model model = load_checkpoint<float>(ckpt);
  if (!model.calibration.valid) throw ConfigError("checkpoint '" + ckpt + "' is not calibrated");
  const DatasetSplit split = load_mvtec_layout(data, model.category, model.validation_fraction);
  if (split.test.empty()) throw ConfigError("no test images under '" + data + "'");
  EvalReport rep = evaluate(model, model.category, split.test);
  add_mean_row(rep);
  write_text(report, report_csv(rep));
  const std::string summary = report_summary(rep);
  write_text(report + ".txt", summary);
  if (!scores.empty()) write_text(scores, scores_csv(split.test, rep.scores));
  std::cout << summary;
  return 0;
}

int cmd_score(const std::string& ckpt, const std::string& image, const std::string& map_out,
              const std::string& heatmap_out) {
  const Model model = load_checkpoint<float>(ckpt);
  if (!model.calibration.valid) throw ConfigError("checkpoint '" + ckpt + "' is not calibrated");
  if (!fs::exists(image)) throw ConfigError("image '" + image + "' does not exist");
  ImageSample s;
  s.pixels = read_png(image);
  s.identifier = image;
  const ScoredImage scored = score_image(model, s);
  if (!map_out.empty()) write_spmap(map_out, scored.total);
  if (!heatmap_out.empty()) write_heatmap(heatmap_out, scored.total);
  std::cout << format_score(scored.score) << "\n";
  return 0;
}

int cmd_calibrate(const std::string& ckpt, const std::string& data) {
  Model model = load_checkpoint<float>(ckpt);
  const DatasetSplit split = load_mvtec_layout(data, model.category, model.validation_fraction);
  model.calibration = calibrate(model, split.validation);
  save_checkpoint(model, ckpt);
  const auto& c = model.calibration;
  std::cout << "structural [" << c.structural_lo << ", " << c.structural_hi << "], logical ["
            << c.logical_lo << ", " << c.logical_hi << "]\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPACE anomaly detection: synthesize data, train, calibrate, score, evaluate"};
  app.require_subcommand(1);
  app.footer(config_help());

  std::string out, data, config, ckpt, report, scores, image, map_out, heatmap_out, loss_csv;
  std::string category = "toy";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::size_t n_train = 64, n_val = 8, n_test = 16, size = 64;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset in MVTec layout");
  synth->add_option("--out", out, "output root")->required();
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--n-train", n_train, "training images");
  synth->add_option("--n-val", n_val, "validation images (stored after the training ones)");
  synth->add_option("--n-test", n_test, "test images per class (good, structural, logical)");
  synth->add_option("--size", size, "image side in pixels");
  synth->add_option("--category", category, "category directory name");

  auto* trn = app.add_subcommand("train", "train a model");
  trn->add_option("--config", config, "flat key = value config file");
  trn->add_option("--set", overrides, "override a config key (key=value), repeatable");
  trn->add_option("--data", data, "dataset root")->required();
  trn->add_option("--out", out, "checkpoint path")->required();
  trn->add_option("--loss-csv", loss_csv, "loss log (default: <out>.loss.csv)");
  trn->footer(config_help());

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data, "dataset root")->required();
  ev->add_option("--report", report, "report CSV (summary goes to <report>.txt)")->required();
  ev->add_option("--scores", scores, "optional per-image scores CSV");

  auto* sc = app.add_subcommand("score", "score a single image");
  sc->add_option("--ckpt", ckpt, "checkpoint")->required();
  sc->add_option("--image", image, "PNG image")->required();
  sc->add_option("--map-out", map_out, "raw total map (SPMAP)");
  sc->add_option("--heatmap-out", heatmap_out, "heatmap PNG");

  auto* cal = app.add_subcommand("calibrate", "recompute map normalization on the validation split");
  cal->add_option("--ckpt", ckpt, "checkpoint")->required();
  cal->add_option("--data", data, "dataset root")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(out, seed, n_train, n_val, n_test, size, category);
    if (*trn) return cmd_train(config, overrides, data, out, loss_csv);
    if (*ev) return cmd_eval(ckpt, data, report, scores);
    if (*sc) return cmd_score(ckpt, image, map_out, heatmap_out);
    if (*cal) return cmd_calibrate(ckpt, data);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
