// uaseg: dataset generation, training, evaluation, ablation, distillation,
// and gradient checks from the command line.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "uaseg/checks.hpp"
#include "uaseg/data.hpp"
#include "uaseg/error.hpp"
#include "uaseg/harness.hpp"
#include "uaseg/metrics.hpp"
#include "uaseg/model.hpp"
#include "uaseg/runtime.hpp"

namespace {

using nlohmann::json;
using namespace uaseg;

json read_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::io, "cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::config, path + ": " + ex.what());
  }
}

// Flags that override RunConfig fields. Unset flags leave the config alone.
struct RunOverrides {
  std::string config;
  std::string data;
  std::string out;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> width;
  std::string loss_mode;
  std::string noisy_loss;
  std::optional<bool> sharpmin;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "run config JSON");
    app->add_option("--data", data, "dataset root");
    app->add_option("--out", out, "output directory");
    app->add_option("--epochs", epochs);
    app->add_option("--seed", seed);
    app->add_option("--lr", lr);
    app->add_option("--batch-size", batch_size);
    app->add_option("--width", width, "model width");
    app->add_option("--loss-mode", loss_mode, "uncertainty, fixed_equal or single:<loss>");
    app->add_option("--noisy-loss", noisy_loss, "replace this loss target with noise");
    app->add_option("--sharpmin", sharpmin, "true or false");
  }

  RunConfig resolve() const {
    json j = read_json(config);
    if (!data.empty()) j["data"] = data;
    if (!out.empty()) j["out"] = out;
    if (epochs) j["epochs"] = *epochs;
    if (seed) j["seed"] = *seed;
    if (lr) j["lr"] = *lr;
    if (batch_size) j["batch_size"] = *batch_size;
    if (width) j["width"] = *width;
    if (!loss_mode.empty()) j["loss_mode"] = loss_mode;
    if (!noisy_loss.empty()) j["noisy_loss"] = noisy_loss;
    if (sharpmin) j["sharpmin"]["enabled"] = *sharpmin;
    return RunConfig::from_json(j);
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::io, "cannot write " + path);
  os << text;
}

void print_train_summary(const TrainResult& r, const RunConfig& cfg) {
  std::printf("best_epoch=%d best_val_loss=%.6f steps=%ld grad_evals=%ld\n", r.best_epoch, r.best_val_loss,
              r.steps, r.grad_evals);
  if (!cfg.out_dir.empty()) std::printf("wrote %s/checkpoint.txt and train_log.csv\n", cfg.out_dir.c_str());
}

int run(int argc, char** argv) {
  CLI::App app{"uaseg: uncertainty-weighted box-prompted segmentation at desk scale"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a seeded synthetic dataset");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 42;
  gen->add_option("--config", gen_config, "generator config JSON");
  gen->add_option("--out", gen_out, "dataset root")->required();
  gen->add_option("--seed", gen_seed);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  RunOverrides tr_opts;
  tr_opts.add_to(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_split = "val", ev_out;
  double ev_tol = 2.0;
  bool ev_no_timing = false;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--split", ev_split);
  ev->add_option("--out", ev_out, "per-case CSV");
  ev->add_option("--tolerance", ev_tol, "NSD tolerance in pixels");
  ev->add_flag("--no-timing", ev_no_timing, "write 0 in the seconds column");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run the four ablation configurations");
  RunOverrides ab_opts;
  ab_opts.add_to(ab);
  std::string ab_csv;
  ab->add_option("--csv", ab_csv, "ablation table CSV (defaults to --out when --out ends in .csv)");

  // distill
  auto* di = app.add_subcommand("distill", "distil a teacher checkpoint into a student");
  RunOverrides di_opts;
  di_opts.add_to(di);
  std::string di_teacher;
  di->add_option("--teacher", di_teacher)->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  bool gc_full = false;
  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = 7;
  gc->add_flag("--full", gc_full, "include the full model objective");
  gc->add_option("--instances", gc_instances);
  gc->add_option("--seed", gc_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  if (gen->parsed()) {
    const json j = read_json(gen_config);
    const ShapeConfig sc = ShapeConfig::from_json(j.value("generator", j));
    SplitCounts counts;
    if (j.contains("counts")) {
      counts.train = j["counts"].value("train", counts.train);
      counts.val = j["counts"].value("val", counts.val);
      counts.test = j["counts"].value("test", counts.test);
    }
    const DatasetManifest m = generate_dataset(sc, counts, gen_seed, gen_out);
    std::printf("wrote %zu cases to %s\n", m.cases.size(), gen_out.c_str());
  } else if (tr->parsed()) {
    const RunConfig cfg = tr_opts.resolve();
    print_train_summary(train(cfg), cfg);
  } else if (ev->parsed()) {
    const Checkpoint ckpt = load_checkpoint(ev_ckpt);
    const Dataset data = load_dataset(ev_data);
    const EvalSummary s = evaluate(ckpt, data, parse_split(ev_split), NsdConfig{ev_tol}, !ev_no_timing);
    if (!ev_out.empty()) {
      std::ofstream os(ev_out, std::ios::binary);
      if (!os) throw Error(ErrorCode::io, "cannot write " + ev_out);
      write_eval_csv(os, s.records);
    }
    std::printf("cases=%zu mean_dsc=%.6f mean_nsd=%.6f\n", s.records.size(), s.mean_dsc, s.mean_nsd);
  } else if (ab->parsed()) {
    RunConfig cfg = ab_opts.resolve();
    std::string csv_path = ab_csv;
    if (csv_path.empty() && cfg.out_dir.size() > 4 && cfg.out_dir.ends_with(".csv")) {
      csv_path = cfg.out_dir;
      cfg.out_dir.clear();
    }
    if (csv_path.empty()) throw Error(ErrorCode::config, "ablate needs an output CSV (--out <file>.csv or --csv)");
    if (cfg.data_root.empty()) throw Error(ErrorCode::dataset_missing, "run config has no data root");
    const AblationTable t = ablate(cfg, load_dataset(cfg.data_root));
    write_text(csv_path, t.csv());
    std::cout << t.csv();
  } else if (di->parsed()) {
    RunConfig cfg = di_opts.resolve();
    cfg.distill.enabled = true;
    cfg.distill.teacher = di_teacher;
    if (cfg.data_root.empty()) throw Error(ErrorCode::dataset_missing, "run config has no data root");
    const TrainResult r = distill(load_checkpoint(di_teacher), cfg, load_dataset(cfg.data_root));
    print_train_summary(r, cfg);
  } else if (gc->parsed()) {
    const auto results = gradcheck_suite(gc_seed, gc_instances, gc_full);
    std::size_t failed = 0;
    double worst = 0.0, worst_elem = 0.0;
    for (const SuiteResult& r : results) {
      worst = std::max(worst, r.rel_error);
      worst_elem = std::max(worst_elem, r.max_rel_error);
      if (!r.pass) {
        ++failed;
        std::printf("FAIL %s instance %zu (%zux%zu) rel_error=%.3e\n", r.name.c_str(), r.instance, r.size, r.size,
                    r.rel_error);
      }
    }
    std::printf("gradcheck: %zu checks, %zu failed, worst rel error %.3e (worst element %.3e)\n", results.size(),
                failed, worst, worst_elem);
    if (failed > 0) throw Error(ErrorCode::invalid_argument, "gradient check failed");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  uaseg::tune_allocator();
  try {
    return run(argc, argv);
  } catch (const uaseg::Error& e) {
    std::cerr << "error: " << uaseg::to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
