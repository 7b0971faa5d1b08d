#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "uaseg/data.hpp"
#include "uaseg/error.hpp"
#include "uaseg/harness.hpp"
#include "uaseg/rng.hpp"
#include "uaseg/uncertainty.hpp"

using namespace uaseg;
namespace fs = std::filesystem;

namespace {

Case make_case(const ShapeConfig& cfg, std::uint64_t seed, const std::string& id) {
  SyntheticCase s = synthesize_case(cfg, seed);
  return Case{id, std::move(s.image), std::move(s.mask), s.box};
}

Dataset small_dataset(std::size_t n_train, std::size_t n_val, std::size_t size = 32) {
  ShapeConfig cfg;
  cfg.height = cfg.width = size;
  Dataset ds;
  for (std::size_t i = 0; i < n_train; ++i) ds.train.push_back(make_case(cfg, 100 + i, "t" + std::to_string(i)));
  for (std::size_t i = 0; i < n_val; ++i) ds.val.push_back(make_case(cfg, 900 + i, "v" + std::to_string(i)));
  return ds;
}

RunConfig quick_config() {
  RunConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 1e-2;
  return cfg;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::io;
}

Bindings bind_case(const Objective& obj, const PreparedCase& pc, const ModelParams& params) {
  Bindings b;
  bind_params(b, params);
  b.insert_or_assign(Objective::kInput, pc.input);
  b.insert_or_assign(Objective::kTarget, pc.target);
  b.insert_or_assign(Objective::kDistance, pc.sdm);
  for (std::size_t m = 0; m < obj.losses().size() && obj.mode() == LossMode::uncertainty; ++m)
    b.insert_or_assign(log_variance_leaf(m), Grid::scalar(0.3 * static_cast<double>(m) - 0.4));
  return b;
}

}  // namespace

TEST_CASE("loss presets") {
  CHECK(loss_preset("table2") == std::vector<LossKind>{LossKind::dice, LossKind::bce, LossKind::sd, LossKind::iou});
  CHECK(loss_preset("section22") == std::vector<LossKind>{LossKind::mse, LossKind::dice, LossKind::bce, LossKind::sd});
  CHECK(code_of([] { loss_preset("other"); }) == ErrorCode::config);
}

TEST_CASE("run config validation and json") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  RunConfig back = RunConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  RunConfig single = RunConfig::from_json(nlohmann::json{{"loss_mode", "single:sd"}});
  CHECK(single.loss_mode == LossMode::single);
  CHECK(single.losses == std::vector<LossKind>{LossKind::sd});
  CHECK(loss_mode_name(single) == "single:sd");
  CHECK(RunConfig::from_json(nlohmann::json{{"losses", "section22"}}).losses == loss_preset("section22"));

  RunConfig dup;
  dup.losses = {LossKind::dice, LossKind::dice};
  CHECK(code_of([&] { dup.validate(); }) == ErrorCode::config);
  RunConfig noisy;
  noisy.losses = {LossKind::dice};
  noisy.noisy_loss = LossKind::bce;
  CHECK(code_of([&] { noisy.validate(); }) == ErrorCode::config);
  RunConfig bad_lr;
  bad_lr.lr = 0.0;
  CHECK(code_of([&] { bad_lr.validate(); }) == ErrorCode::config);
  CHECK(code_of([] { RunConfig::from_json(nlohmann::json{{"loss_mode", "weighted"}}); }) == ErrorCode::config);
  CHECK(code_of([] { RunConfig::from_json(nlohmann::json{{"epochs", "ten"}}); }) == ErrorCode::config);
}

TEST_CASE("fixed_equal objective is the mean of its losses") {
  const Dataset ds = small_dataset(3, 0);
  const Objective obj(LossMode::fixed_equal, loss_preset("table2"), LossConfig{});
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const PreparedCase pc = prepare_case(ds.train[seed]);
    const Tape tape(obj.graph(), bind_case(obj, pc, init_params(seed, 4)));
    double mean = 0.0;
    for (std::size_t m = 0; m < 4; ++m) mean += tape.value(obj.loss_node(m))[0] / 4.0;
    CHECK(tape.output() == doctest::Approx(mean).epsilon(1e-12));
  }
  CHECK(obj.trainable() == param_leaf_names());
  const Objective unc(LossMode::uncertainty, loss_preset("table2"), LossConfig{});
  CHECK(unc.trainable().size() == 10);
  CHECK(unc.trainable().back() == log_variance_leaf(3));
}

TEST_CASE("uncertainty objective matches the combiner") {
  const Dataset ds = small_dataset(1, 0);
  const Objective obj(LossMode::uncertainty, loss_preset("table2"), LossConfig{});
  const Bindings b = bind_case(obj, prepare_case(ds.train[0]), init_params(5, 4));
  const Tape tape(obj.graph(), b);
  double expected = 0.0;
  for (std::size_t m = 0; m < 4; ++m) {
    const double s = b.at(log_variance_leaf(m))[0];
    const double l = tape.value(obj.loss_node(m))[0];
    expected += l / (2.0 * std::exp(s)) + std::log1p(std::exp(s));
  }
  CHECK(tape.output() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("full objective gradient check on a 16x16 case") {
  ShapeConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.noise_sigma = 0.05;
  cfg.families = {ShapeFamily::rectangle};
  const Objective obj(LossMode::uncertainty, loss_preset("table2"), LossConfig{});
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 40 && checked < 3; ++seed) {
    const PreparedCase pc = prepare_case(make_case(cfg, seed, "g"));
    ModelParams params = init_params(seed, 4);
    SplitMix64 rng(seed);
    for (std::size_t i : {1u, 3u})
      for (double& v : params.tensors[i].data()) v = rng.uniform(0.05, 0.3);
    const GradReport rep = gradcheck(obj.graph(), bind_case(obj, pc, params), obj.trainable());
    if (rep.kink_points > 0) continue;
    ++checked;
    CHECK(rep.params.size() == obj.trainable().size());
    CHECK(rep.pass);
    CHECK(rep.rel_error <= 1e-4);
  }
  CHECK(checked == 3);
}

TEST_CASE("training smoke run and grad-eval accounting") {
  const Dataset ds = small_dataset(8, 4);
  RunConfig cfg = quick_config();
  cfg.epochs = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult with = train(cfg, ds);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 30.0);
  CHECK(with.steps == 4);
  CHECK(with.grad_evals == 8);
  cfg.sharpmin.enabled = false;
  const TrainResult without = train(cfg, ds);
  CHECK(without.grad_evals == 4);
  CHECK(with.grad_evals == 2 * without.grad_evals);

  REQUIRE(with.log.rows.size() == 1);
  const EpochRow& row = with.log.rows[0];
  CHECK(row.phase == "train");
  CHECK(row.losses.size() == 4);
  CHECK(row.sigma2.size() == 4);
  CHECK(std::isfinite(row.train_loss));
  CHECK(with.checkpoint.log_variance.size() == 4);
  CHECK(with.checkpoint.image_height == 32);
  const std::string header = with.log.csv().substr(0, with.log.csv().find('\n'));
  CHECK(header ==
        "phase,epoch,train_loss,val_loss,loss_dice,loss_bce,loss_sd,loss_iou,"
        "sigma2_dice,sigma2_bce,sigma2_sd,sigma2_iou,lr,grad_evals");
}

TEST_CASE("training is deterministic") {
  const Dataset ds = small_dataset(6, 3);
  RunConfig cfg = quick_config();
  cfg.noisy_loss = LossKind::bce;
  const TrainResult a = train(cfg, ds);
  const TrainResult b = train(cfg, ds);
  CHECK(a.log.csv() == b.log.csv());
  CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
  std::ostringstream ea, eb;
  write_eval_csv(ea, evaluate(a.checkpoint.params, ds.val, NsdConfig{}, false).records);
  write_eval_csv(eb, evaluate(b.checkpoint.params, ds.val, NsdConfig{}, false).records);
  CHECK(ea.str() == eb.str());
  cfg.seed = 43;
  CHECK(train(cfg, ds).log.csv() != a.log.csv());
}

TEST_CASE("outputs and checkpoint evaluation") {
  Dataset ds = small_dataset(4, 3);
  const fs::path out = fs::temp_directory_path() / "uaseg_test_harness_out";
  fs::remove_all(out);
  RunConfig cfg = quick_config();
  cfg.out_dir = out.string();
  const TrainResult r = train(cfg, ds);
  REQUIRE(fs::exists(out / "checkpoint.txt"));
  REQUIRE(fs::exists(out / "train_log.csv"));
  const Checkpoint loaded = load_checkpoint(out / "checkpoint.txt");
  const EvalSummary mem = evaluate(r.checkpoint.params, ds.val, NsdConfig{}, false);
  const EvalSummary disk = evaluate(loaded, ds, Split::val, NsdConfig{}, false);
  CHECK(mem.mean_dsc == disk.mean_dsc);
  CHECK(mem.mean_nsd == disk.mean_nsd);
  REQUIRE(disk.records.size() == 3);
  CHECK(disk.records[0].case_id == "v0");
  CHECK(disk.records[0].seconds == 0.0);

  Dataset wrong = small_dataset(1, 1, 16);
  CHECK(code_of([&] { evaluate(loaded, wrong, Split::val, NsdConfig{}, false); }) == ErrorCode::checkpoint);
  CHECK(code_of([&] { evaluate(loaded, ds, Split::test, NsdConfig{}, false); }) == ErrorCode::dataset_missing);
  fs::remove_all(out);
}

TEST_CASE("reference predictors") {
  const Dataset ds = small_dataset(0, 5);
  const EvalSummary gt = evaluate(ds.val, [](const Case& c) { return c.mask; }, NsdConfig{});
  CHECK(gt.mean_dsc == 1.0);
  CHECK(gt.mean_nsd == 1.0);
  const EvalSummary empty =
      evaluate(ds.val, [](const Case& c) { return BinaryMask(c.mask.shape()); }, NsdConfig{});
  CHECK(empty.mean_dsc == 0.0);
  CHECK(code_of([] { evaluate(std::vector<Case>{}, [](const Case& c) { return c.mask; }, NsdConfig{}); }) ==
        ErrorCode::dataset_missing);
}

TEST_CASE("distillation phases") {
  const Dataset ds = small_dataset(4, 2);
  RunConfig tcfg = quick_config();
  tcfg.width = 6;
  const TrainResult teacher = train(tcfg, ds);
  RunConfig cfg = quick_config();
  cfg.distill.epochs = 2;
  cfg.epochs = 1;
  const TrainResult r = distill(teacher.checkpoint, cfg, ds);
  REQUIRE(r.log.rows.size() == 3);
  CHECK(r.log.rows[0].phase == "distill");
  CHECK(r.log.rows[1].phase == "distill");
  CHECK(r.log.rows[2].phase == "train");
  CHECK(r.log.rows[1].val_loss < r.log.rows[0].val_loss * 1.5);
  CHECK(r.checkpoint.params.width == kStudentWidth);

  cfg.epochs = 0;
  const TrainResult only = distill(teacher.checkpoint, cfg, ds);
  CHECK(only.log.rows.size() == 2);
  CHECK(only.log.rows.back().phase == "distill");
  RunConfig no_teacher = quick_config();
  no_teacher.distill.enabled = true;
  CHECK(code_of([&] { train(no_teacher, ds); }) == ErrorCode::config);
}

TEST_CASE("training errors") {
  RunConfig cfg = quick_config();
  cfg.data_root = (fs::temp_directory_path() / "uaseg_no_such_dataset").string();
  CHECK(code_of([&] { train(cfg); }) == ErrorCode::dataset_missing);
  CHECK(code_of([&] { train(quick_config(), small_dataset(2, 0)); }) == ErrorCode::dataset_missing);

  Dataset mixed = small_dataset(2, 1);
  mixed.val.push_back(small_dataset(0, 1, 16).val[0]);
  CHECK(code_of([&] { train(quick_config(), mixed); }) == ErrorCode::shape_mismatch);

  RunConfig wild = quick_config();
  wild.optimizer = OptimizerKind::sgd;
  wild.lr = 1e200;
  wild.sharpmin.enabled = false;
  try {
    train(wild, small_dataset(4, 1));
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::divergence);
    CHECK(std::string(e.what()).find("train epoch ") != std::string::npos);
  }
}

TEST_CASE("ablation table") {
  RunConfig base = quick_config();
  base.out_dir = "abl";
  const auto configs = ablation_configs(base);
  REQUIRE(configs.size() == 4);
  CHECK(configs[0].first == "baseline_fixed_equal");
  CHECK(configs[0].second.loss_mode == LossMode::fixed_equal);
  CHECK_FALSE(configs[0].second.sharpmin.enabled);
  CHECK(configs[1].first == "only_sd");
  CHECK(configs[1].second.losses == std::vector<LossKind>{LossKind::sd});
  CHECK(configs[2].first == "no_sharpmin");
  CHECK_FALSE(configs[2].second.sharpmin.enabled);
  CHECK(configs[3].first == "full");
  CHECK(configs[3].second.sharpmin.enabled);
  CHECK(configs[3].second.loss_mode == LossMode::uncertainty);
  CHECK(configs[3].second.out_dir != configs[2].second.out_dir);

  RunConfig tiny = quick_config();
  tiny.epochs = 1;
  const AblationTable t = ablate(tiny, small_dataset(4, 2));
  REQUIRE(t.rows.size() == 4);
  CHECK(t.csv().substr(0, 14) == "config,dsc,nsd");
  CHECK(t.row("full").dsc >= 0.0);
  CHECK(code_of([&] { t.row("missing"); }) == ErrorCode::invalid_argument);
}
