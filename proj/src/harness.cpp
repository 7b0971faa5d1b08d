#include "uaseg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "uaseg/error.hpp"
#include "uaseg/rng.hpp"
#include "uaseg/uncertainty.hpp"

namespace uaseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

std::vector<LossKind> loss_preset(std::string_view name) {
  if (name == "table2") return {LossKind::dice, LossKind::bce, LossKind::sd, LossKind::iou};
  if (name == "section22") return {LossKind::mse, LossKind::dice, LossKind::bce, LossKind::sd};
  throw Error(ErrorCode::config, "unknown loss preset '" + std::string(name) + "'");
}

void RunConfig::validate() const {
  if (losses.empty()) throw Error(ErrorCode::config, "no active losses");
  for (std::size_t i = 0; i < losses.size(); ++i)
    for (std::size_t j = i + 1; j < losses.size(); ++j)
      if (losses[i] == losses[j]) throw Error(ErrorCode::config, "duplicate loss in active set");
  if (loss_mode == LossMode::single && losses.size() != 1) {
    throw Error(ErrorCode::config, "single loss mode requires exactly one active loss");
  }
  if (noisy_loss && std::find(losses.begin(), losses.end(), *noisy_loss) == losses.end()) {
    throw Error(ErrorCode::config, "noisy_loss must be one of the active losses");
  }
  loss_config.validate();
  sharpmin.validate();
  plateau.validate();
  if (!(lr > 0.0)) throw Error(ErrorCode::config, "lr must be positive");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::config, "weight_decay must be >= 0");
  if (epochs < 0) throw Error(ErrorCode::config, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::config, "batch_size must be >= 1");
  if (width < 1) throw Error(ErrorCode::config, "width must be >= 1");
  if (!(nsd_tolerance > 0.0)) throw Error(ErrorCode::config, "nsd_tolerance must be positive");
  if (distill.enabled && distill.epochs < 1) throw Error(ErrorCode::config, "distill.epochs must be >= 1");
}

std::string loss_mode_name(const RunConfig& cfg) {
  switch (cfg.loss_mode) {
    case LossMode::uncertainty: return "uncertainty";
    case LossMode::fixed_equal: return "fixed_equal";
    case LossMode::single: return "single:" + std::string(to_string(cfg.losses.at(0)));
  }
  return "unknown";
}

json RunConfig::to_json() const {
  json ls = json::array();
  for (LossKind k : losses) ls.push_back(to_string(k));
  json j{{"data", data_root},
         {"out", out_dir},
         {"loss_mode", loss_mode_name(*this)},
         {"losses", ls},
         {"smoothing", loss_config.smoothing},
         {"prob_clamp", loss_config.prob_clamp},
         {"optimizer", optimizer == OptimizerKind::adamw ? "adamw" : "sgd"},
         {"lr", lr},
         {"weight_decay", weight_decay},
         {"sharpmin", {{"enabled", sharpmin.enabled}, {"rho", sharpmin.rho}}},
         {"plateau", {{"factor", plateau.factor}, {"patience", plateau.patience}, {"cooldown", plateau.cooldown}}},
         {"epochs", epochs},
         {"batch_size", batch_size},
         {"seed", seed},
         {"width", width},
         {"nsd_tolerance", nsd_tolerance},
         {"distill", {{"enabled", distill.enabled}, {"teacher", distill.teacher}, {"epochs", distill.epochs}}}};
  if (noisy_loss) j["noisy_loss"] = to_string(*noisy_loss);
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  try {
    RunConfig c;
    c.data_root = j.value("data", c.data_root);
    c.out_dir = j.value("out", c.out_dir);
    if (j.contains("losses")) {
      const json& ls = j.at("losses");
      if (ls.is_string()) {
        c.losses = loss_preset(ls.get<std::string>());
      } else {
        c.losses.clear();
        for (const auto& n : ls) c.losses.push_back(parse_loss_kind(n.get<std::string>()));
      }
    }
    const std::string mode = j.value("loss_mode", std::string("uncertainty"));
    if (mode == "uncertainty") {
      c.loss_mode = LossMode::uncertainty;
    } else if (mode == "fixed_equal") {
      c.loss_mode = LossMode::fixed_equal;
    } else if (mode.rfind("single", 0) == 0) {
      c.loss_mode = LossMode::single;
      if (mode.size() > 7 && mode[6] == ':') c.losses = {parse_loss_kind(mode.substr(7))};
    } else {
      throw Error(ErrorCode::config, "unknown loss_mode '" + mode + "'");
    }
    c.loss_config.smoothing = j.value("smoothing", c.loss_config.smoothing);
    c.loss_config.prob_clamp = j.value("prob_clamp", c.loss_config.prob_clamp);
    if (j.contains("noisy_loss") && !j.at("noisy_loss").is_null()) {
      c.noisy_loss = parse_loss_kind(j.at("noisy_loss").get<std::string>());
    }
    const std::string opt = j.value("optimizer", std::string("adamw"));
    if (opt == "adamw") {
      c.optimizer = OptimizerKind::adamw;
    } else if (opt == "sgd") {
      c.optimizer = OptimizerKind::sgd;
    } else {
      throw Error(ErrorCode::config, "unknown optimizer '" + opt + "'");
    }
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    if (j.contains("sharpmin")) {
      const json& s = j.at("sharpmin");
      c.sharpmin.enabled = s.value("enabled", c.sharpmin.enabled);
      c.sharpmin.rho = s.value("rho", c.sharpmin.rho);
    }
    if (j.contains("plateau")) {
      const json& p = j.at("plateau");
      c.plateau.factor = p.value("factor", c.plateau.factor);
      c.plateau.patience = p.value("patience", c.plateau.patience);
      c.plateau.cooldown = p.value("cooldown", c.plateau.cooldown);
    }
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.width = j.value("width", c.width);
    c.nsd_tolerance = j.value("nsd_tolerance", c.nsd_tolerance);
    if (j.contains("distill")) {
      const json& d = j.at("distill");
      c.distill.enabled = d.value("enabled", c.distill.enabled);
      c.distill.teacher = d.value("teacher", c.distill.teacher);
      c.distill.epochs = d.value("epochs", c.distill.epochs);
    }
    c.validate();
    return c;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::config, std::string("malformed run config: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Logs and tables

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fixed6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void TrainLog::write_csv(std::ostream& os) const {
  os << "phase,epoch,train_loss,val_loss";
  for (const std::string& n : loss_names) os << ",loss_" << n;
  if (has_sigma) {
    for (const std::string& n : loss_names) os << ",sigma2_" << n;
  }
  os << ",lr,grad_evals\n";
  for (const EpochRow& r : rows) {
    os << r.phase << ',' << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_loss);
    for (std::size_t m = 0; m < loss_names.size(); ++m) {
      os << ',';
      if (m < r.losses.size()) os << num(r.losses[m]);
    }
    if (has_sigma) {
      for (std::size_t m = 0; m < loss_names.size(); ++m) {
        os << ',';
        if (m < r.sigma2.size()) os << num(r.sigma2[m]);
      }
    }
    os << ',' << num(r.lr) << ',' << r.grad_evals << '\n';
  }
}

std::string TrainLog::csv() const {
  std::ostringstream os;
  write_csv(os);
  return os.str();
}

void AblationTable::write_csv(std::ostream& os) const {
  os << "config,dsc,nsd\n";
  for (const AblationRow& r : rows) os << r.config << ',' << fixed6(r.dsc) << ',' << fixed6(r.nsd) << '\n';
}

std::string AblationTable::csv() const {
  std::ostringstream os;
  write_csv(os);
  return os.str();
}

const AblationRow& AblationTable::row(std::string_view config) const {
  for (const AblationRow& r : rows) {
    if (r.config == config) return r;
  }
  throw Error(ErrorCode::invalid_argument, "no ablation row '" + std::string(config) + "'");
}

// ---------------------------------------------------------------------------
// Objective

Objective::Objective(LossMode mode, std::vector<LossKind> losses, LossConfig cfg,
                     std::optional<LossKind> noisy)
    : mode_(mode), losses_(std::move(losses)) {
  if (losses_.empty()) throw Error(ErrorCode::config, "objective needs at least one loss");
  if (mode_ == LossMode::single && losses_.size() != 1) {
    throw Error(ErrorCode::config, "single loss mode requires exactly one active loss");
  }
  cfg.validate();
  model_ = build_model(graph_, kInput);
  const NodeId pred = model_.probs;
  for (LossKind k : losses_) {
    const bool noisy_term = noisy && *noisy == k;
    const NodeId target = graph_.leaf(noisy_term ? kNoiseTarget : kTarget);
    NodeId node{};
    switch (k) {
      case LossKind::mse: node = mse_loss(graph_, pred, target); break;
      case LossKind::dice: node = dice_loss(graph_, pred, target, cfg.smoothing); break;
      case LossKind::bce: node = bce_loss(graph_, pred, target, cfg.prob_clamp); break;
      case LossKind::iou: node = iou_loss(graph_, pred, target, cfg.smoothing); break;
      case LossKind::sd:
        node = shape_distance_excess(graph_, pred, graph_.leaf(noisy_term ? kNoiseDistance : kDistance));
        break;
    }
    graph_.set_label(node, std::string(to_string(k)));
    loss_nodes_.push_back(node);
  }

  trainable_ = param_leaf_names();
  NodeId total{};
  switch (mode_) {
    case LossMode::single:
      total = loss_nodes_[0];
      break;
    case LossMode::fixed_equal: {
      total = loss_nodes_[0];
      for (std::size_t m = 1; m < loss_nodes_.size(); ++m) total = graph_.add(total, loss_nodes_[m]);
      total = graph_.scale(total, 1.0 / static_cast<double>(loss_nodes_.size()));
      break;
    }
    case LossMode::uncertainty: {
      std::vector<NodeId> s;
      for (std::size_t m = 0; m < loss_nodes_.size(); ++m) {
        trainable_.push_back(log_variance_leaf(m));
        s.push_back(graph_.leaf(log_variance_leaf(m)));
      }
      total = combine(graph_, loss_nodes_, s);
      break;
    }
  }
  graph_.set_output(total);
}

PreparedCase prepare_case(const Case& c) {
  const std::size_t h = c.image.shape()[0], w = c.image.shape()[1];
  PreparedCase p{c.id, model_input(c.image, c.box), c.mask.to_grid().reshaped(Shape{1, h, w}), Grid()};
  p.sdm = signed_distance_map(c.mask).distances.reshaped(Shape{1, h, w});
  return p;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<PreparedCase> prepare_all(const std::vector<Case>& cases) {
  std::vector<PreparedCase> out;
  out.reserve(cases.size());
  for (const Case& c : cases) out.push_back(prepare_case(c));
  return out;
}

// Fresh Bernoulli(0.5) target plane and its distance map.
std::pair<Grid, Grid> noise_target(const Shape& plane, SplitMix64& rng) {
  Grid t(plane);
  for (double& v : t.data()) v = (rng.next() >> 63) ? 1.0 : 0.0;
  const Shape hw{plane[1], plane[2]};
  Grid sdm = signed_distance_map(t.reshaped(hw)).distances.reshaped(plane);
  return {std::move(t), std::move(sdm)};
}

struct CaseBinding {
  const PreparedCase* pc;
  Grid noise_target;
  Grid noise_sdm;
};

struct BatchEval {
  double total = 0.0;
  std::vector<double> losses;
  ParamList grads;
};

class SegmentationTrainer {
 public:
  SegmentationTrainer(const RunConfig& cfg, const Objective& obj)
      : cfg_(cfg), obj_(obj), needs_sdm_(obj.graph().find_leaf(Objective::kDistance).has_value()),
        needs_noise_sdm_(obj.graph().find_leaf(Objective::kNoiseDistance).has_value()) {}

  // Binds trainable params (model tensors then log-variances) and one case.
  void bind(Bindings& b, const ParamList& params, const CaseBinding& cb) const {
    const auto& names = obj_.trainable();
    for (std::size_t i = 0; i < names.size(); ++i) b.insert_or_assign(names[i], params[i]);
    b.insert_or_assign(Objective::kInput, cb.pc->input);
    b.insert_or_assign(Objective::kTarget, cb.pc->target);
    if (needs_sdm_) b.insert_or_assign(Objective::kDistance, cb.pc->sdm);
    if (cfg_.noisy_loss) {
      b.insert_or_assign(Objective::kNoiseTarget, cb.noise_target);
      if (needs_noise_sdm_) b.insert_or_assign(Objective::kNoiseDistance, cb.noise_sdm);
    }
  }

  BatchEval run(const ParamList& params, const std::vector<CaseBinding>& batch, bool with_grads) const {
    BatchEval out;
    out.losses.assign(obj_.losses().size(), 0.0);
    if (with_grads) {
      for (const Grid& p : params) out.grads.emplace_back(p.shape(), 0.0);
    }
    Bindings b;
    for (const CaseBinding& cb : batch) {
      bind(b, params, cb);
      const Tape tape(obj_.graph(), b);
      out.total += tape.output();
      for (std::size_t m = 0; m < out.losses.size(); ++m) out.losses[m] += tape.value(obj_.loss_node(m))[0];
      if (with_grads) {
        const Gradients g = tape.backward(obj_.trainable());
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto dst = out.grads[i].data();
          auto src = g.at(obj_.trainable()[i]).data();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.total *= inv;
    for (double& l : out.losses) l *= inv;
    for (Grid& g : out.grads)
      for (double& v : g.data()) v *= inv;
    return out;
  }

  std::vector<CaseBinding> bindings_for(const std::vector<PreparedCase>& cases,
                                        std::span<const std::size_t> idx, SplitMix64& noise_rng) const {
    std::vector<CaseBinding> out;
    for (std::size_t i : idx) {
      CaseBinding cb{&cases[i], Grid(), Grid()};
      if (cfg_.noisy_loss) std::tie(cb.noise_target, cb.noise_sdm) = noise_target(cases[i].target.shape(), noise_rng);
      out.push_back(std::move(cb));
    }
    return out;
  }

 private:
  const RunConfig& cfg_;
  const Objective& obj_;
  bool needs_sdm_;
  bool needs_noise_sdm_;
};

OptimizerState make_optimizer(const RunConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::sgd) return OptimizerState::sgd(cfg.lr);
  AdamWConfig a;
  a.weight_decay = cfg.weight_decay;
  return OptimizerState::adamw(cfg.lr, a);
}

void shuffle(std::vector<std::size_t>& order, SplitMix64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
}

[[noreturn]] void diverged(const std::string& phase, int epoch, const Error& e) {
  throw Error(ErrorCode::divergence,
              phase + " epoch " + std::to_string(epoch) + ": training diverged (" + e.what() + ")");
}

struct PhaseOutcome {
  ModelParams best_params;
  std::vector<double> best_log_variance;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

class Run {
 public:
  Run(const RunConfig& cfg, const Dataset& data)
      : cfg_(cfg),
        train_(prepare_all(data.train)),
        val_(prepare_all(data.val)),
        shuffle_rng_(derive_seed(cfg.seed, 1)),
        noise_rng_(derive_seed(cfg.seed, 2)) {
    if (train_.empty() || val_.empty()) {
      throw Error(ErrorCode::dataset_missing, "dataset needs non-empty train and val splits");
    }
    const Shape& s = data.train.front().image.shape();
    height_ = s[0];
    width_ = s[1];
    model_ = init_params(cfg.seed, cfg.width);
    for (LossKind k : cfg.losses) log_.loss_names.emplace_back(to_string(k));
    log_.has_sigma = cfg.loss_mode == LossMode::uncertainty;
  }

  void set_model(ModelParams p) { model_ = std::move(p); }

  PhaseOutcome distill_phase(const ModelParams& teacher) {
    // Teacher logits are fixed; compute them once.
    auto teacher_planes = [&](const std::vector<PreparedCase>& cases) {
      std::vector<Grid> out;
      Graph g;
      const ModelNodes nodes = build_model(g);
      g.set_output(g.sum(nodes.logits));
      Bindings b;
      bind_params(b, teacher);
      for (const PreparedCase& pc : cases) {
        b.insert_or_assign("input", pc.input);
        out.push_back(Tape(g, b).value(nodes.logits));
      }
      return out;
    };
    const std::vector<Grid> train_teacher = teacher_planes(train_);
    const std::vector<Grid> val_teacher = teacher_planes(val_);

    Graph g;
    const ModelNodes student = build_model(g);
    g.set_output(distill_loss(g, g.leaf("teacher_logits"), student.logits));
    const std::vector<std::string> trainable = param_leaf_names();

    auto batch_loss = [&](const ParamList& params, std::span<const std::size_t> idx,
                          const std::vector<PreparedCase>& cases, const std::vector<Grid>& targets,
                          bool with_grads) {
      LossAndGrad out;
      if (with_grads) {
        for (const Grid& p : params) out.grads.emplace_back(p.shape(), 0.0);
      }
      Bindings b;
      for (std::size_t i = 0; i < trainable.size(); ++i) b.insert_or_assign(trainable[i], params[i]);
      for (std::size_t i : idx) {
        b.insert_or_assign("input", cases[i].input);
        b.insert_or_assign("teacher_logits", targets[i]);
        const Tape tape(g, b);
        out.loss += tape.output();
        if (with_grads) {
          const Gradients gr = tape.backward(trainable);
          for (std::size_t p = 0; p < params.size(); ++p) {
            auto dst = out.grads[p].data();
            auto src = gr.at(trainable[p]).data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(idx.size());
      out.loss *= inv;
      for (Grid& gr : out.grads)
        for (double& v : gr.data()) v *= inv;
      return out;
    };

    ParamList params = model_.tensors;
    OptimizerState opt = make_optimizer(cfg_);
    PlateauState plateau = cfg_.plateau;
    PhaseOutcome best;
    best.best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train_.size());
    std::vector<std::size_t> all_val(val_.size());
    std::iota(all_val.begin(), all_val.end(), 0);

    for (int epoch = 1; epoch <= cfg_.distill.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      shuffle(order, shuffle_rng_);
      double train_sum = 0.0;
      double val_loss = 0.0;
      try {
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
          const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
          const std::span<const std::size_t> idx(order.data() + start, end - start);
          const SharpMinStats st = sharpmin_step(
              params,
              [&](const ParamList& p) { return batch_loss(p, idx, train_, train_teacher, true); },
              opt, cfg_.sharpmin);
          ++steps_;
          grad_evals_ += st.grad_evals;
          train_sum += st.loss * static_cast<double>(idx.size());
        }
        val_loss = batch_loss(params, all_val, val_, val_teacher, false).loss;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite) diverged("distill", epoch, e);
        throw;
      }
      EpochRow row;
      row.phase = "distill";
      row.epoch = epoch;
      row.train_loss = train_sum / static_cast<double>(order.size());
      row.val_loss = val_loss;
      row.lr = opt.lr();
      row.grad_evals = grad_evals_;
      log_.rows.push_back(std::move(row));
      if (val_loss < best.best_val_loss) {
        best.best_val_loss = val_loss;
        best.best_epoch = epoch;
        best.best_params = ModelParams{cfg_.width, params};
      }
      opt.set_lr(opt.lr() * plateau_step(plateau, val_loss));
    }
    model_ = best.best_params;
    return best;
  }

  PhaseOutcome train_phase() {
    const Objective obj(cfg_.loss_mode, cfg_.losses, cfg_.loss_config, cfg_.noisy_loss);
    const SegmentationTrainer trainer(cfg_, obj);
    const bool uncertainty = cfg_.loss_mode == LossMode::uncertainty;
    const std::size_t model_tensors = model_.tensors.size();
    const std::size_t n_losses = cfg_.losses.size();

    ParamList params = model_.tensors;
    if (uncertainty) {
      const UncertaintyState init(n_losses);
      for (double s : init.log_variance) params.push_back(Grid::scalar(s));
    }
    auto log_variance_of = [&](const ParamList& p) {
      std::vector<double> s;
      if (uncertainty) {
        for (std::size_t m = 0; m < n_losses; ++m) s.push_back(p[model_tensors + m][0]);
      }
      return s;
    };

    OptimizerState opt = make_optimizer(cfg_);
    PlateauState plateau = cfg_.plateau;
    PhaseOutcome best;
    best.best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train_.size());
    std::vector<std::size_t> all_val(val_.size());
    std::iota(all_val.begin(), all_val.end(), 0);
    best.best_params = ModelParams{cfg_.width, params};  // replaced after epoch 1

    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      shuffle(order, shuffle_rng_);
      double train_sum = 0.0;
      std::vector<double> loss_sums(n_losses, 0.0);
      double val_loss = 0.0;
      try {
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
          const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
          const std::span<const std::size_t> idx(order.data() + start, end - start);
          const std::vector<CaseBinding> batch = trainer.bindings_for(train_, idx, noise_rng_);
          std::vector<double> first_losses;
          const SharpMinStats st = sharpmin_step(
              params,
              [&](const ParamList& p) {
                BatchEval ev = trainer.run(p, batch, true);
                if (first_losses.empty()) first_losses = ev.losses;
                return LossAndGrad{ev.total, std::move(ev.grads)};
              },
              opt, cfg_.sharpmin);
          ++steps_;
          grad_evals_ += st.grad_evals;
          const double w = static_cast<double>(idx.size());
          train_sum += st.loss * w;
          for (std::size_t m = 0; m < n_losses; ++m) loss_sums[m] += first_losses[m] * w;
        }
        const std::vector<CaseBinding> vb = trainer.bindings_for(val_, all_val, noise_rng_);
        val_loss = trainer.run(params, vb, false).total;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite) diverged("train", epoch, e);
        throw;
      }

      EpochRow row;
      row.phase = "train";
      row.epoch = epoch;
      row.train_loss = train_sum / static_cast<double>(order.size());
      row.val_loss = val_loss;
      for (double s : loss_sums) row.losses.push_back(s / static_cast<double>(order.size()));
      for (double s : log_variance_of(params)) row.sigma2.push_back(std::exp(s));
      row.lr = opt.lr();
      row.grad_evals = grad_evals_;
      log_.rows.push_back(std::move(row));

      if (val_loss < best.best_val_loss) {
        best.best_val_loss = val_loss;
        best.best_epoch = epoch;
        best.best_params =
            ModelParams{cfg_.width, ParamList(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(model_tensors))};
        best.best_log_variance = log_variance_of(params);
      }
      opt.set_lr(opt.lr() * plateau_step(plateau, val_loss));
    }
    if (cfg_.epochs == 0) {
      best.best_params = model_;
      best.best_val_loss = 0.0;
    }
    model_ = best.best_params;
    return best;
  }

  TrainResult finish(const PhaseOutcome& outcome) const {
    TrainResult r;
    r.checkpoint.params = model_;
    r.checkpoint.seed = cfg_.seed;
    r.checkpoint.image_height = height_;
    r.checkpoint.image_width = width_;
    for (LossKind k : cfg_.losses) r.checkpoint.loss_names.emplace_back(to_string(k));
    r.checkpoint.log_variance = outcome.best_log_variance;
    r.log = log_;
    r.best_epoch = outcome.best_epoch;
    r.best_val_loss = outcome.best_val_loss;
    r.steps = steps_;
    r.grad_evals = grad_evals_;
    return r;
  }

 private:
  const RunConfig& cfg_;
  std::vector<PreparedCase> train_;
  std::vector<PreparedCase> val_;
  SplitMix64 shuffle_rng_;
  SplitMix64 noise_rng_;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  ModelParams model_;
  TrainLog log_;
  long steps_ = 0;
  long grad_evals_ = 0;
};

void write_outputs(const RunConfig& cfg, const TrainResult& r) {
  if (cfg.out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + cfg.out_dir);
  save_checkpoint(r.checkpoint, fs::path(cfg.out_dir) / "checkpoint.txt");
  std::ofstream os(fs::path(cfg.out_dir) / "train_log.csv", std::ios::binary);
  if (!os) throw Error(ErrorCode::io, "cannot write train log under " + cfg.out_dir);
  r.log.write_csv(os);
}

void check_dataset_shape(const Dataset& data) {
  const auto& first = data.train.empty() ? data.val : data.train;
  if (first.empty()) throw Error(ErrorCode::dataset_missing, "dataset has no cases");
  const Shape& s = first.front().image.shape();
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const Case& c : *split) {
      if (c.image.shape() != s) {
        throw Error(ErrorCode::shape_mismatch, "case " + c.id + " has size " + to_string(c.image.shape()) +
                                                   ", expected " + to_string(s));
      }
    }
  }
}

}  // namespace

TrainResult train(const RunConfig& cfg, const Dataset& data) {
  cfg.validate();
  if (cfg.distill.enabled) {
    if (cfg.distill.teacher.empty()) throw Error(ErrorCode::config, "distill.teacher is not set");
    return distill(load_checkpoint(cfg.distill.teacher), cfg, data);
  }
  check_dataset_shape(data);
  Run run(cfg, data);
  const TrainResult r = run.finish(run.train_phase());
  write_outputs(cfg, r);
  return r;
}

TrainResult train(const RunConfig& cfg) {
  if (cfg.data_root.empty()) throw Error(ErrorCode::dataset_missing, "run config has no data root");
  return train(cfg, load_dataset(cfg.data_root));
}

TrainResult distill(const Checkpoint& teacher, const RunConfig& cfg, const Dataset& data) {
  cfg.validate();
  check_dataset_shape(data);
  RunConfig c = cfg;
  c.distill.enabled = true;
  Run run(c, data);
  PhaseOutcome outcome = run.distill_phase(teacher.params);
  if (c.epochs > 0) outcome = run.train_phase();
  const TrainResult r = run.finish(outcome);
  write_outputs(c, r);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalSummary evaluate(const std::vector<Case>& cases, const Predictor& predict, NsdConfig nsd_cfg,
                     bool timing) {
  if (cases.empty()) throw Error(ErrorCode::dataset_missing, "evaluation split is empty");
  EvalSummary s;
  for (const Case& c : cases) {
    const auto t0 = std::chrono::steady_clock::now();
    const BinaryMask pred = predict(c);
    EvalRecord r;
    r.case_id = c.id;
    r.dsc = dsc(c.mask, pred);
    r.nsd = nsd(c.mask, pred, nsd_cfg);
    const auto t1 = std::chrono::steady_clock::now();
    r.seconds = timing ? std::chrono::duration<double>(t1 - t0).count() : 0.0;
    s.records.push_back(std::move(r));
  }
  std::sort(s.records.begin(), s.records.end(),
            [](const EvalRecord& a, const EvalRecord& b) { return a.case_id < b.case_id; });
  for (const EvalRecord& r : s.records) {
    s.mean_dsc += r.dsc;
    s.mean_nsd += r.nsd;
  }
  s.mean_dsc /= static_cast<double>(s.records.size());
  s.mean_nsd /= static_cast<double>(s.records.size());
  return s;
}

EvalSummary evaluate(const ModelParams& params, const std::vector<Case>& cases, NsdConfig nsd_cfg,
                     bool timing) {
  return evaluate(
      cases, [&](const Case& c) { return BinaryMask::threshold(forward(c.image, c.box, params), 0.5); },
      nsd_cfg, timing);
}

EvalSummary evaluate(const Checkpoint& ckpt, const Dataset& data, Split split, NsdConfig nsd_cfg,
                     bool timing) {
  const std::vector<Case>& cases = data.split(split);
  if (cases.empty()) throw Error(ErrorCode::dataset_missing, "split " + std::string(to_string(split)) + " is empty");
  if (ckpt.image_height != 0 || ckpt.image_width != 0) {
    for (const Case& c : cases) {
      if (c.image.shape() != Shape{ckpt.image_height, ckpt.image_width}) {
        throw Error(ErrorCode::checkpoint,
                    "checkpoint was trained on " + std::to_string(ckpt.image_height) + "x" +
                        std::to_string(ckpt.image_width) + " images but case " + c.id + " is " +
                        to_string(c.image.shape()));
      }
    }
  }
  return evaluate(ckpt.params, cases, nsd_cfg, timing);
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<std::pair<std::string, RunConfig>> ablation_configs(const RunConfig& base) {
  RunConfig baseline = base;
  baseline.loss_mode = LossMode::fixed_equal;
  baseline.sharpmin.enabled = false;
  baseline.noisy_loss.reset();

  RunConfig only_sd = base;
  only_sd.loss_mode = LossMode::single;
  only_sd.losses = {LossKind::sd};
  only_sd.sharpmin.enabled = false;
  only_sd.noisy_loss.reset();

  RunConfig no_sharpmin = base;
  no_sharpmin.loss_mode = LossMode::uncertainty;
  no_sharpmin.sharpmin.enabled = false;

  RunConfig full = base;
  full.loss_mode = LossMode::uncertainty;
  full.sharpmin.enabled = true;

  std::vector<std::pair<std::string, RunConfig>> out{{"baseline_fixed_equal", baseline},
                                                     {"only_sd", only_sd},
                                                     {"no_sharpmin", no_sharpmin},
                                                     {"full", full}};
  for (auto& [name, cfg] : out) {
    if (!base.out_dir.empty()) cfg.out_dir = (fs::path(base.out_dir) / name).string();
  }
  return out;
}

AblationTable ablate(const RunConfig& base, const Dataset& data) {
  AblationTable table;
  const NsdConfig nsd_cfg{base.nsd_tolerance};
  for (const auto& [name, cfg] : ablation_configs(base)) {
    const TrainResult r = train(cfg, data);
    const EvalSummary s = evaluate(r.checkpoint.params, data.val, nsd_cfg, false);
    table.rows.push_back({name, s.mean_dsc, s.mean_nsd});
  }
  return table;
}

}  // namespace uaseg
