// Acceptance checks. Each criterion prints one PASS/FAIL line with the
// measured numbers; the exit status is nonzero if any selected criterion fails.
//
//   acceptance [--criterion N] [--work DIR]

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uaseg/checks.hpp"
#include "uaseg/data.hpp"
#include "uaseg/error.hpp"
#include "uaseg/harness.hpp"
#include "uaseg/metrics.hpp"
#include "uaseg/optim.hpp"
#include "uaseg/rng.hpp"
#include "uaseg/runtime.hpp"
#include "uaseg/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace uaseg;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  os << text;
}

Dataset default_benchmark(const fs::path& dir) {
  fs::remove_all(dir);
  generate_dataset(ShapeConfig{}, SplitCounts{}, 42, dir);
  return load_dataset(dir);
}

// --------------------------------------------------------------------------

Outcome gradients(const fs::path&) {
  const Stopwatch sw;
  const std::vector<SuiteResult> results = gradcheck_suite(7, 20, true);
  const double secs = sw.seconds();
  std::size_t failed = 0, redraws = 0;
  double worst = 0.0;
  std::vector<std::string> targets;
  for (const SuiteResult& r : results) {
    if (!r.pass) {
      ++failed;
      std::cout << "  fail " << r.name << " #" << r.instance << " rel " << r.rel_error << "\n";
    }
    redraws += r.redraws;
    worst = std::max(worst, r.rel_error);
    if (targets.empty() || targets.back() != r.name) targets.push_back(r.name);
  }
  std::string names;
  for (const std::string& t : targets) names += (names.empty() ? "" : ",") + t;
  return {failed == 0 && targets.size() == 7 && secs < 60.0,
          fmt("%zu checks over {%s}, %zu failed, worst rel %.3g, %zu kink redraws, %.1f s", results.size(),
              names.c_str(), failed, worst, redraws, secs)};
}

BinaryMask random_mask(const Shape& shape, SplitMix64& rng, double p) {
  BinaryMask m(shape);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < p);
  return m;
}

double dsc_by_counting(const BinaryMask& a, const BinaryMask& b) {
  long na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    both += a[i] && b[i];
  }
  return na + nb == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Outcome metric_oracles(const fs::path&) {
  const Stopwatch sw;
  SplitMix64 rng(2024);
  int mismatches = 0, pairs = 0;
  auto check = [&](const Shape& shape) {
    const BinaryMask a = random_mask(shape, rng, rng.uniform(0.05, 0.7));
    const BinaryMask b = random_mask(shape, rng, rng.uniform(0.05, 0.7));
    const NsdConfig cfg = NsdConfig::for_rank(shape.size());
    mismatches += dsc(a, b) != dsc_by_counting(a, b);
    mismatches += nsd(a, b, cfg) != nsd_bruteforce(a, b, cfg);
    ++pairs;
  };
  for (int i = 0; i < 100; ++i) check({16, 16});
  for (int i = 0; i < 20; ++i) check({8, 8, 8});
  const double secs = sw.seconds();
  return {mismatches == 0 && secs < 60.0,
          fmt("%d mask pairs (100 2D, 20 3D), %d mismatches, %.2f s", pairs, mismatches, secs)};
}

Outcome stationarity(const fs::path&) {
  const Stopwatch sw;
  double worst = 0.0;
  std::string detail;
  for (double L : {0.25, 1.0, 4.0}) {
    UncertaintyState st(1);
    const std::vector<double> losses{L};
    for (int step = 0; step < 10000; ++step) st.log_variance[0] -= 0.1 * combine_gradient(losses, st)[0];
    // 2u^2 - L u - L = 0
    const double expected = (L + std::sqrt(L * L + 8.0 * L)) / 4.0;
    const double err = std::abs(st.sigma2(0) - expected);
    worst = std::max({worst, err, std::abs(stationary_sigma2(L) - expected)});
    detail += fmt("L=%g sigma2=%.8f (want %.8f); ", L, st.sigma2(0), expected);
  }
  const double secs = sw.seconds();
  return {worst <= 1e-4 && secs < 10.0, detail + fmt("max err %.2e, %.3f s", worst, secs)};
}

Outcome sharpmin_trace(const fs::path&) {
  auto one = [](double v) { return ParamList{Grid(Shape{1}, std::vector<double>{v})}; };
  ParamList w = one(1.0);
  OptimizerState sgd = OptimizerState::sgd(0.1);
  sharpmin_step(
      w, [&](const ParamList& p) { return LossAndGrad{0.5 * p[0][0] * p[0][0], one(p[0][0])}; }, sgd,
      SharpMinConfig{0.1, true});
  const double first = w[0][0];

  // Seeded symmetric PD matrix A = [[a, b], [b, c]], f(w) = w^T A w / 2.
  SplitMix64 rng(11);
  const double a = rng.uniform(0.5, 3.0), c = rng.uniform(0.5, 3.0);
  const double b = rng.uniform(-0.4, 0.4) * std::sqrt(a * c);
  auto grad = [&](std::array<double, 2> x) { return std::array<double, 2>{a * x[0] + b * x[1], b * x[0] + c * x[1]}; };
  const double lr = 0.1, rho = 0.05;
  std::array<double, 2> ref{rng.uniform(-2, 2), rng.uniform(-2, 2)};
  ParamList q{Grid(Shape{2}, std::vector<double>{ref[0], ref[1]})};
  OptimizerState opt = OptimizerState::sgd(lr);
  const LossFn f = [&](const ParamList& p) {
    const std::array<double, 2> x{p[0][0], p[0][1]};
    const auto g = grad(x);
    return LossAndGrad{0.5 * (x[0] * g[0] + x[1] * g[1]), ParamList{Grid(Shape{2}, std::vector<double>{g[0], g[1]})}};
  };
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    sharpmin_step(q, f, opt, SharpMinConfig{rho, true});
    // w_{k+1} = w_k - lr A (w_k + rho A w_k / |A w_k|)
    const auto g = grad(ref);
    const double n = std::hypot(g[0], g[1]);
    const auto g2 = grad({ref[0] + rho * g[0] / n, ref[1] + rho * g[1] / n});
    ref = {ref[0] - lr * g2[0], ref[1] - lr * g2[1]};
    worst = std::max({worst, std::abs(q[0][0] - ref[0]), std::abs(q[0][1] - ref[1])});
  }
  return {first == 0.89 && worst <= 1e-12,
          fmt("first iterate %.17g (want 0.89), 100 iterates max deviation %.2e", first, worst)};
}

Outcome end_to_end(const fs::path& work) {
  const Stopwatch sw;
  const Dataset data = default_benchmark(work / "data");
  RunConfig cfg;
  cfg.seed = 42;
  cfg.out_dir = (work / "run").string();
  const TrainResult r = train(cfg, data);
  const EvalSummary s = evaluate(r.checkpoint, data, Split::val, NsdConfig{2.0}, false);
  const double secs = sw.seconds();
  std::ostringstream os;
  write_eval_csv(os, s.records);
  write_text(work / "run" / "eval_val.csv", os.str());
  return {s.mean_dsc >= 0.85 && s.mean_nsd >= 0.85 && secs < 900.0,
          fmt("val DSC %.4f, NSD %.4f, best epoch %d of %d, %.0f s", s.mean_dsc, s.mean_nsd, r.best_epoch,
              cfg.epochs, secs)};
}

Outcome ablation(const fs::path& work) {
  const Dataset data = default_benchmark(work / "data");
  const std::vector<std::string> names{"baseline_fixed_equal", "only_sd", "no_sharpmin", "full"};
  std::vector<double> mean(names.size(), 0.0);
  for (std::uint64_t seed : {42u, 43u, 44u}) {
    RunConfig cfg;
    cfg.seed = seed;
    const AblationTable t = ablate(cfg, data);
    write_text(work / ("ablation_seed" + std::to_string(seed) + ".csv"), t.csv());
    std::cout << "  seed " << seed << ":";
    for (std::size_t i = 0; i < names.size(); ++i) {
      const AblationRow& row = t.row(names[i]);
      mean[i] += row.dsc / 3.0;
      std::cout << fmt(" %s %.4f/%.4f", names[i].c_str(), row.dsc, row.nsd);
    }
    std::cout << "\n";
  }
  const double base = mean[0], sd = mean[1], nosm = mean[2], full = mean[3];
  const bool soft_sd = full >= sd, soft_sm = full >= nosm - 0.01;
  return {full >= sd - 0.02,
          fmt("mean DSC baseline %.4f, only_sd %.4f, no_sharpmin %.4f, full %.4f; soft full>=only_sd %s, "
              "full>=no_sharpmin-0.01 %s",
              base, sd, nosm, full, soft_sd ? "met" : "missed", soft_sm ? "met" : "missed")};
}

Outcome discrimination(const fs::path& work) {
  const Dataset data = default_benchmark(work / "data");
  int passed = 0;
  std::string detail;
  for (std::uint64_t seed : {42u, 43u, 44u}) {
    RunConfig cfg;
    cfg.seed = seed;
    cfg.noisy_loss = LossKind::bce;
    cfg.out_dir = (work / ("seed" + std::to_string(seed))).string();
    const TrainResult r = train(cfg, data);
    const EpochRow& last = r.log.rows.back();
    std::size_t noisy = 0;
    for (std::size_t m = 0; m < cfg.losses.size(); ++m)
      if (cfg.losses[m] == LossKind::bce) noisy = m;
    bool ok = true;
    for (std::size_t m = 0; m < cfg.losses.size(); ++m)
      if (m != noisy && !(last.sigma2[noisy] > last.sigma2[m])) ok = false;
    passed += ok;
    detail += fmt("seed %llu sigma2", static_cast<unsigned long long>(seed));
    for (std::size_t m = 0; m < cfg.losses.size(); ++m)
      detail += fmt(" %s=%.4f", r.log.loss_names[m].c_str(), last.sigma2[m]);
    detail += ok ? " ok; " : " VIOLATED; ";
  }
  return {passed == 3, detail + fmt("noisy=bce, %d/3 seeds", passed)};
}

#ifndef UASEG_CLI
#error "UASEG_CLI must name the command-line binary"
#endif

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + UASEG_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file();
  files = rel.size();
  if (rel.size() != other) return false;
  for (const fs::path& r : rel)
    if (!fs::exists(b / r) || slurp(a / r) != slurp(b / r)) return false;
  return true;
}

Outcome determinism(const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  const fs::path d1 = work / "data1", d2 = work / "data2";
  int rc = run_cli("generate --out \"" + d1.string() + "\" --seed 42", work / "gen1.log");
  rc |= run_cli("generate --out \"" + d2.string() + "\" --seed 42", work / "gen2.log");
  std::size_t files = 0;
  const bool data_same = rc == 0 && same_tree(d1, d2, files);

  // Four configurations, two epochs each, on the default benchmark.
  const std::string common = " --data \"" + d1.string() + "\" --epochs 2 --seed 42";
  rc |= run_cli("ablate --out \"" + (work / "ablate1.csv").string() + "\"" + common, work / "ablate1.log");
  rc |= run_cli("ablate --out \"" + (work / "ablate2.csv").string() + "\"" + common, work / "ablate2.log");
  const std::string c1 = slurp(work / "ablate1.csv"), c2 = slurp(work / "ablate2.csv");
  const bool csv_same = rc == 0 && !c1.empty() && c1 == c2;
  return {data_same && csv_same,
          fmt("dataset %zu files %s; ablate CSV (%zu bytes) %s; cli exit %d", files,
              data_same ? "identical" : "DIFFER", c1.size(), csv_same ? "identical" : "DIFFER", rc)};
}

Outcome distillation(const fs::path& work) {
  const Dataset data = default_benchmark(work / "data");
  RunConfig tcfg;
  tcfg.seed = 42;
  tcfg.width = kTeacherWidth;
  tcfg.out_dir = (work / "teacher").string();
  const TrainResult teacher = train(tcfg, data);
  const double teacher_dsc = evaluate(teacher.checkpoint, data, Split::val, NsdConfig{}, false).mean_dsc;

  const int budget = 30;
  RunConfig dcfg;
  dcfg.seed = 42;
  dcfg.distill.enabled = true;
  dcfg.distill.teacher = (work / "teacher" / "checkpoint.txt").string();
  dcfg.distill.epochs = budget;
  dcfg.epochs = 0;
  dcfg.out_dir = (work / "distilled").string();
  const TrainResult distilled = train(dcfg, data);
  const double distilled_dsc = evaluate(distilled.checkpoint, data, Split::val, NsdConfig{}, false).mean_dsc;

  RunConfig scfg;
  scfg.seed = 42;
  scfg.epochs = budget;
  scfg.out_dir = (work / "scratch").string();
  const TrainResult scratch = train(scfg, data);
  const double scratch_dsc = evaluate(scratch.checkpoint, data, Split::val, NsdConfig{}, false).mean_dsc;

  return {distilled_dsc >= scratch_dsc - 0.02,
          fmt("teacher (width %zu) %.4f; %d epochs: distilled %.4f vs scratch %.4f (margin %+.4f)",
              kTeacherWidth, teacher_dsc, budget, distilled_dsc, scratch_dsc, distilled_dsc - scratch_dsc)};
}

struct Criterion {
  const char* name;
  std::function<Outcome(const fs::path&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"acceptance checks"};
  int only = 0;
  std::string work = "acceptance_work";
  app.add_option("--criterion", only, "1-9; all when omitted")->check(CLI::Range(0, 9));
  app.add_option("--work", work, "scratch directory for datasets and runs");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {"gradient correctness", gradients},
      {"metric oracle equivalence", metric_oracles},
      {"combiner stationarity", stationarity},
      {"sharpmin hand trace", sharpmin_trace},
      {"end-to-end training", end_to_end},
      {"ablation ordering", ablation},
      {"uncertainty discrimination", discrimination},
      {"determinism", determinism},
      {"distillation non-inferiority", distillation},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (only != 0 && only != n) continue;
    Outcome o;
    try {
      o = criteria[i].run(fs::path(work) / ("c" + std::to_string(n)));
    } catch (const Error& e) {
      o = {false, std::string("error: ") + std::string(to_string(e.code())) + ": " + e.what()};
    }
    std::cout << "C" << n << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].name << ": " << o.detail
              << std::endl;
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
