#include "uaseg/checks.hpp"

#include "uaseg/diff.hpp"
#include "uaseg/harness.hpp"
#include "uaseg/losses.hpp"
#include "uaseg/model.hpp"
#include "uaseg/rng.hpp"
#include "uaseg/uncertainty.hpp"

namespace uaseg {

namespace {

constexpr double kKinkTol = 1e-5;
constexpr std::size_t kMaxRedraws = 50;

Grid random_logits(std::size_t n, SplitMix64& rng) {
  Grid g(Shape{n, n});
  for (double& v : g.data()) v = rng.normal();
  return g;
}

BinaryMask random_mask(std::size_t n, SplitMix64& rng) {
  BinaryMask m(Shape{n, n});
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < 0.5);
  return m;
}

struct Instance {
  Graph graph;
  Bindings bindings;
  std::vector<std::string> wrt;
};

// Loss over sigmoid(logits) against a random mask. `loss` is one of the five
// loss names, or "combine" for the uncertainty combiner over all five.
Instance loss_instance(const std::string& loss, std::size_t n, SplitMix64& rng) {
  Instance in;
  Graph& g = in.graph;
  const NodeId pred = g.sigmoid(g.leaf("logits"));
  const NodeId target = g.leaf("target");
  const NodeId sdm = g.leaf("sdm");
  const LossConfig cfg;
  auto build = [&](LossKind k) {
    switch (k) {
      case LossKind::mse: return mse_loss(g, pred, target);
      case LossKind::dice: return dice_loss(g, pred, target, cfg.smoothing);
      case LossKind::bce: return bce_loss(g, pred, target, cfg.prob_clamp);
      case LossKind::iou: return iou_loss(g, pred, target, cfg.smoothing);
      case LossKind::sd: return shape_distance_loss(g, pred, sdm);
    }
    return pred;
  };
  const BinaryMask mask = random_mask(n, rng);
  in.bindings["logits"] = random_logits(n, rng);
  in.bindings["target"] = mask.to_grid();
  in.bindings["sdm"] = signed_distance_map(mask).distances;
  in.wrt = {"logits"};

  if (loss == "combine") {
    std::vector<NodeId> losses, s;
    const LossKind kinds[] = {LossKind::mse, LossKind::dice, LossKind::bce, LossKind::iou};
    for (LossKind k : kinds) losses.push_back(build(k));
    losses.push_back(shape_distance_excess(g, pred, sdm));
    for (std::size_t m = 0; m < losses.size(); ++m) {
      s.push_back(g.leaf(log_variance_leaf(m)));
      in.bindings[log_variance_leaf(m)] = Grid::scalar(rng.uniform(-2.0, 2.0));
      in.wrt.push_back(log_variance_leaf(m));
    }
    g.set_output(combine(g, losses, s));
  } else {
    g.set_output(build(parse_loss_kind(loss)));
  }
  return in;
}

Instance objective_instance(std::size_t n, SplitMix64& rng) {
  Instance in;
  const Objective obj(LossMode::uncertainty, loss_preset("table2"), LossConfig{});
  in.graph = obj.graph();

  // Rectangle target with a noisy image; the box is the target's extent.
  const std::size_t r0 = rng.below(n / 2), c0 = rng.below(n / 2);
  const BoxPrompt box{r0, c0, r0 + 2 + rng.below(n / 2 - 1), c0 + 2 + rng.below(n / 2 - 1)};
  BinaryMask mask(Shape{n, n});
  Grid image(Shape{n, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      mask.set(r * n + c, box.contains(r, c));
      image.at(r, c) = (box.contains(r, c) ? 0.7 : 0.3) + 0.05 * rng.normal();
    }
  }
  const PreparedCase pc = prepare_case(Case{"gradcheck", image, mask, box});

  ModelParams params = init_params(rng.next(), kStudentWidth);
  // Positive biases keep most units active, away from relu kinks.
  for (std::size_t i : {1u, 3u, 5u})
    for (double& v : params.tensors[i].data()) v = rng.uniform(0.05, 0.3);
  bind_params(in.bindings, params);
  for (std::size_t m = 0; m < obj.losses().size(); ++m) {
    in.bindings[log_variance_leaf(m)] = Grid::scalar(rng.uniform(-1.0, 1.0));
  }
  in.bindings[Objective::kInput] = pc.input;
  in.bindings[Objective::kTarget] = pc.target;
  in.bindings[Objective::kDistance] = pc.sdm;
  in.wrt = obj.trainable();
  return in;
}

}  // namespace

std::vector<SuiteResult> gradcheck_suite(std::uint64_t seed, std::size_t instances, bool with_model) {
  std::vector<std::string> targets{"mse", "dice", "bce", "iou", "sd", "combine"};
  if (with_model) targets.emplace_back("objective");

  std::vector<SuiteResult> out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    SplitMix64 rng(derive_seed(seed, t));
    for (std::size_t i = 0; i < instances; ++i) {
      SuiteResult r;
      r.name = targets[t];
      r.instance = i;
      r.size = 8 + rng.below(9);
      for (;; ++r.redraws) {
        Instance in = targets[t] == "objective" ? objective_instance(r.size, rng)
                                                : loss_instance(targets[t], r.size, rng);
        if (Tape(in.graph, in.bindings).kink_count(kKinkTol, in.wrt) > 0 && r.redraws < kMaxRedraws) continue;
        const GradReport rep = gradcheck(in.graph, in.bindings, in.wrt);
        r.rel_error = rep.rel_error;
        r.max_rel_error = rep.max_rel_error;
        r.pass = rep.pass && rep.kink_points == 0;
        break;
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace uaseg
