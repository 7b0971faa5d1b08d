#pragma once

// Training loop, evaluation driver, and the four-configuration ablation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "uaseg/data.hpp"
#include "uaseg/diff.hpp"
#include "uaseg/losses.hpp"
#include "uaseg/metrics.hpp"
#include "uaseg/model.hpp"
#include "uaseg/optim.hpp"

namespace uaseg {

enum class LossMode { single, fixed_equal, uncertainty };

// "table2" = {dice, bce, sd, iou}; "section22" = {mse, dice, bce, sd}.
std::vector<LossKind> loss_preset(std::string_view name);

struct DistillConfig {
  bool enabled = false;
  std::string teacher;  // checkpoint path
  int epochs = 30;
};

struct RunConfig {
  std::string data_root;
  std::string out_dir;  // checkpoint.txt and train_log.csv land here when set

  LossMode loss_mode = LossMode::uncertainty;
  std::vector<LossKind> losses = loss_preset("table2");
  LossConfig loss_config;
  // Replaces the target of this loss with a fresh Bernoulli(0.5) mask every
  // step. Used to probe the uncertainty weights.
  std::optional<LossKind> noisy_loss;

  OptimizerKind optimizer = OptimizerKind::adamw;
  double lr = 1e-3;
  double weight_decay = 0.01;
  SharpMinConfig sharpmin;
  PlateauState plateau;

  int epochs = 60;
  std::size_t batch_size = 2;
  std::uint64_t seed = 42;
  std::size_t width = kStudentWidth;
  double nsd_tolerance = 2.0;
  DistillConfig distill;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults. `loss_mode` accepts "uncertainty",
  // "fixed_equal", or "single:<loss>"; `losses` accepts a list or a preset.
  static RunConfig from_json(const nlohmann::json& j);
};

std::string loss_mode_name(const RunConfig& cfg);

struct EpochRow {
  std::string phase;  // "distill" or "train"
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::vector<double> losses;  // empty for distillation rows
  std::vector<double> sigma2;  // empty unless loss_mode is uncertainty
  double lr = 0.0;
  long grad_evals = 0;  // cumulative
};

struct TrainLog {
  std::vector<std::string> loss_names;
  bool has_sigma = false;
  std::vector<EpochRow> rows;

  void write_csv(std::ostream& os) const;
  std::string csv() const;
};

struct TrainResult {
  Checkpoint checkpoint;  // best validation loss of the final phase
  TrainLog log;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  long steps = 0;
  long grad_evals = 0;
};

// Per-case training graph: the model followed by the configured objective.
// Targets and distance maps are bound as 1xHxW planes.
class Objective {
 public:
  Objective(LossMode mode, std::vector<LossKind> losses, LossConfig cfg,
            std::optional<LossKind> noisy = std::nullopt);

  const Graph& graph() const noexcept { return graph_; }
  LossMode mode() const noexcept { return mode_; }
  const std::vector<LossKind>& losses() const noexcept { return losses_; }
  NodeId loss_node(std::size_t m) const { return loss_nodes_.at(m); }
  NodeId probs() const noexcept { return model_.probs; }
  NodeId logits() const noexcept { return model_.logits; }

  // Model parameter leaves, then one log-variance leaf per loss when the mode
  // is uncertainty.
  const std::vector<std::string>& trainable() const noexcept { return trainable_; }

  static constexpr const char* kInput = "input";
  static constexpr const char* kTarget = "target";
  static constexpr const char* kDistance = "sdm";
  static constexpr const char* kNoiseTarget = "noise_target";
  static constexpr const char* kNoiseDistance = "noise_sdm";

 private:
  LossMode mode_;
  std::vector<LossKind> losses_;
  Graph graph_;
  ModelNodes model_{};
  std::vector<NodeId> loss_nodes_;
  std::vector<std::string> trainable_;
};

// Model input, target plane, and signed distance plane for one case.
struct PreparedCase {
  std::string id;
  Grid input;
  Grid target;
  Grid sdm;
};
PreparedCase prepare_case(const Case& c);

TrainResult train(const RunConfig& cfg, const Dataset& data);
TrainResult train(const RunConfig& cfg);  // loads cfg.data_root

// Teacher-to-student logit distillation for cfg.distill.epochs, followed by
// cfg.epochs of regular training when that is positive.
TrainResult distill(const Checkpoint& teacher, const RunConfig& cfg, const Dataset& data);

struct EvalSummary {
  std::vector<EvalRecord> records;  // sorted by case id
  double mean_dsc = 0.0;
  double mean_nsd = 0.0;
};

using Predictor = std::function<BinaryMask(const Case&)>;

EvalSummary evaluate(const std::vector<Case>& cases, const Predictor& predict, NsdConfig nsd_cfg,
                     bool timing = true);
// Probability map binarised at 0.5.
EvalSummary evaluate(const ModelParams& params, const std::vector<Case>& cases, NsdConfig nsd_cfg,
                     bool timing = true);
// Fails with ErrorCode::checkpoint if the dataset image size differs from the
// one recorded in the checkpoint.
EvalSummary evaluate(const Checkpoint& ckpt, const Dataset& data, Split split, NsdConfig nsd_cfg,
                     bool timing = true);

struct AblationRow {
  std::string config;
  double dsc = 0.0;
  double nsd = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  // Header `config,dsc,nsd`, 6 decimals.
  void write_csv(std::ostream& os) const;
  std::string csv() const;
  const AblationRow& row(std::string_view config) const;
};

// baseline_fixed_equal, only_sd, no_sharpmin, full, all derived from `base`.
std::vector<std::pair<std::string, RunConfig>> ablation_configs(const RunConfig& base);
AblationTable ablate(const RunConfig& base, const Dataset& data);

}  // namespace uaseg
