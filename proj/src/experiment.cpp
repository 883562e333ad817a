#include "kdseg/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "kdseg/metrics.hpp"
#include "kdseg/models.hpp"
#include "kdseg/pseudo_label.hpp"

KDSEG_BEGIN_NAMESPACE

namespace {

bool same(double a, double b) { return std::abs(a - b) < 1e-9; }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void mean_spread(const std::vector<double>& xs, double& mean, double& spread) {
  mean = 0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  spread = 0;
  if (xs.size() < 2) return;
  for (double x : xs) spread += (x - mean) * (x - mean);
  spread = std::sqrt(spread / static_cast<double>(xs.size() - 1));
}

std::string fmt(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.lr_initial = 0.03;
  cfg.weights.beta = 1e-4;
  cfg.warmup_epochs = 3;
  cfg.clip_norm = 5.0;
  return cfg;
}

const char* method_label(Method method) {
  switch (method) {
    case Method::kTeacher: return "teacher";
    case Method::kBaseline: return "baseline";
    case Method::kProbability: return "+Lp";
    case Method::kProbabilityConsistency: return "+Lp+Lc";
    case Method::kUnlabeled: return "+unlabeled";
  }
  return "?";
}

void AblationConfig::validate() const {
  data.validate();
  student.validate();
  teacher.validate();
  student.weights.validate();
  validate_threshold(threshold);
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  for (double l : lambda_sweep) {
    if (!(l >= 0) || !std::isfinite(l)) throw ConfigError("lambda sweep values must be finite and >= 0");
  }
  for (double w : width_sweep) {
    if (!(w > 0 && w <= 2)) throw ConfigError("width sweep values must be in (0, 2]");
  }
  if (bench_iterations <= 0 || bench_warmup < 0 || bench_repeats <= 0) {
    throw ConfigError("benchmark iterations and repeats must be positive");
  }
}

std::vector<AblationSummaryRow> AblationResult::summary() const {
  std::vector<AblationSummaryRow> rows;
  for (const AblationRun& r : runs) {
    const bool seen = std::any_of(rows.begin(), rows.end(), [&](const AblationSummaryRow& s) {
      return s.method == r.method && same(s.width, r.width) && same(s.lambda, r.lambda);
    });
    if (seen) continue;
    std::vector<double> miou, fps;
    for (const AblationRun& o : runs) {
      if (o.method == r.method && same(o.width, r.width) && same(o.lambda, r.lambda)) {
        miou.push_back(o.miou);
        fps.push_back(o.images_per_second);
      }
    }
    AblationSummaryRow row{r.method, r.width, r.lambda, static_cast<int>(miou.size())};
    mean_spread(miou, row.miou_mean, row.miou_spread);
    mean_spread(fps, row.fps_mean, row.fps_spread);
    rows.push_back(row);
  }
  return rows;
}

double AblationResult::mean_miou(Method method, double width, double lambda) const {
  for (const AblationSummaryRow& row : summary()) {
    if (row.method != method || !same(row.width, width)) continue;
    if (lambda >= 0 && !same(row.lambda, lambda)) continue;
    return row.miou_mean;
  }
  throw UsageError(std::string("no ablation runs for ") + method_label(method));
}

namespace {

struct Setup {
  std::vector<Sample> train, val, pseudo;
  SegNetwork teacher;
};

}  // namespace

AblationResult run_ablation(const AblationConfig& cfg, const std::filesystem::path& work_dir,
                            const ProgressFn& progress) {
  cfg.validate();
  const int n = cfg.data.num_classes;
  const LossWeights& w = cfg.student.weights;
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  AblationResult result;
  // Every trained network is timed at the end, round-robin, so all of them
  // see the same machine state. Best round wins.
  std::vector<std::pair<std::size_t, SegNetwork>> timed;
  auto prepare = [&](std::uint64_t seed, const std::filesystem::path& dir) {
    DatasetSpec spec = cfg.data;
    spec.seed = seed;
    const DatasetManifests manifests = generate_synthetic_dataset(spec, dir / "data");
    Setup setup{load_samples(read_manifest(manifests.train), n), load_samples(read_manifest(manifests.val), n), {},
                SegNetwork(teacher_preset(n), Role::kTeacher)};
    const auto start = std::chrono::steady_clock::now();
    if (!cfg.teacher_checkpoint.empty()) {
      setup.teacher = load_checkpoint(cfg.teacher_checkpoint, Role::kTeacher);
      if (setup.teacher.config().num_classes != n) throw ConfigError("teacher checkpoint has the wrong class count");
    } else {
      TrainConfig tcfg = cfg.teacher;
      tcfg.seed = seed;
      setup.teacher = build_network(teacher_preset(n), seed, Role::kTeacher);
      train_standalone(setup.teacher, setup.train, {}, tcfg);
    }
    setup.teacher.freeze();
    save_checkpoint(setup.teacher, dir / "teacher.ckpt");
    const double teacher_miou = miou(evaluate(setup.teacher, setup.val)).miou;
    result.runs.push_back({Method::kTeacher, 1.0, 0.0, seed, teacher_miou, 0.0, seconds_since(start)});
    timed.emplace_back(result.runs.size() - 1, setup.teacher);
    say("seed " + std::to_string(seed) + " teacher miou " + fmt(teacher_miou, 4));

    const PseudoLabelSummary pl =
        pseudo_label_dataset(setup.teacher, read_manifest(manifests.unlabeled), dir / "pseudo.txt", cfg.threshold);
    if (pl.failures > 0) throw IoError("pseudo-labeling failed for " + std::to_string(pl.failures) + " images");
    setup.pseudo = load_samples(read_manifest(dir / "pseudo.txt"), n);
    return setup;
  };

  std::optional<Setup> shared;
  if (cfg.shared_seed) shared = prepare(*cfg.shared_seed, work_dir / ("shared-" + std::to_string(*cfg.shared_seed)));
  else if (!cfg.teacher_checkpoint.empty()) throw ConfigError("a teacher checkpoint needs a shared dataset seed");

  for (std::uint64_t seed : cfg.seeds) {
    std::optional<Setup> own;
    if (!shared) own = prepare(seed, work_dir / ("seed-" + std::to_string(seed)));
    const Setup& setup = shared ? *shared : *own;

    auto student_run = [&](Method method, double width, double lambda) {
      const auto t0 = std::chrono::steady_clock::now();
      TrainConfig scfg = cfg.student;
      scfg.seed = seed;
      scfg.weights = LossWeights{0, 0, 0};
      if (method != Method::kBaseline) scfg.weights.alpha = w.alpha;
      if (method == Method::kProbabilityConsistency || method == Method::kUnlabeled) scfg.weights.beta = w.beta;
      if (method == Method::kUnlabeled) scfg.weights.lambda = lambda;
      SegNetwork student = build_network(student_preset(n, width), seed, Role::kStudent);
      TrainReport report;
      if (method == Method::kBaseline) {
        report = train_standalone(student, setup.train, setup.val, scfg);
      } else if (method == Method::kUnlabeled) {
        report = train_distill_joint(student, setup.teacher, setup.train, setup.pseudo, setup.val, scfg);
      } else {
        report = train_distill(student, setup.teacher, setup.train, setup.val, scfg);
      }
      const AblationRun run{method, width, method == Method::kUnlabeled ? lambda : 0.0, seed,
                            report.val_miou.value_or(0), 0.0, seconds_since(t0)};
      result.runs.push_back(run);
      timed.emplace_back(result.runs.size() - 1, std::move(student));
      std::string msg = "seed " + std::to_string(seed) + " " + method_label(method) + " w=" + fmt(width, 2);
      if (method == Method::kUnlabeled) msg += " lambda=" + fmt(lambda, 2);
      say(msg + " miou " + fmt(run.miou, 4));
    };

    student_run(Method::kBaseline, 1.0, 0);
    student_run(Method::kProbability, 1.0, 0);
    student_run(Method::kProbabilityConsistency, 1.0, 0);
    student_run(Method::kUnlabeled, 1.0, w.lambda);
    for (double l : cfg.lambda_sweep) {
      if (!same(l, w.lambda)) student_run(Method::kUnlabeled, 1.0, l);
    }
    for (double width : cfg.width_sweep) {
      if (same(width, 1.0)) continue;
      student_run(Method::kBaseline, width, 0);
      student_run(Method::kProbabilityConsistency, width, 0);
    }
  }

  say("timing " + std::to_string(timed.size()) + " networks");
  for (int r = 0; r < cfg.bench_repeats; ++r) {
    for (const auto& [index, net] : timed) {
      const BenchResult b = benchmark(net, cfg.bench_size, cfg.bench_size, cfg.bench_iterations, cfg.bench_warmup);
      double& best = result.runs[index].images_per_second;
      best = std::max(best, b.images_per_second);
    }
  }
  return result;
}

void write_ablation_markdown(std::ostream& os, const AblationResult& result) {
  const std::vector<AblationSummaryRow> rows = result.summary();
  os << "| method | seeds | mIoU (%) | FPS |\n|---|---|---|---|\n";
  const Method order[] = {Method::kTeacher, Method::kBaseline, Method::kProbability, Method::kProbabilityConsistency,
                          Method::kUnlabeled};
  // Only width-1.0 rows at the first-seen lambda form the ladder.
  for (Method m : order) {
    for (const AblationSummaryRow& r : rows) {
      if (r.method != m || !same(r.width, 1.0)) continue;
      os << "| " << method_label(m) << " | " << r.count << " | " << fmt(100 * r.miou_mean, 2) << " ± "
         << fmt(100 * r.miou_spread, 2) << " | " << fmt(r.fps_mean, 1) << " ± " << fmt(r.fps_spread, 1) << " |\n";
      break;
    }
  }
}

void write_ablation_csv(std::ostream& os, const AblationResult& result) {
  os << "method,width,lambda,seed,miou,fps,seconds\n";
  for (const AblationRun& r : result.runs) {
    os << method_label(r.method) << ',' << r.width << ',' << r.lambda << ',' << r.seed << ',' << fmt(r.miou, 6)
       << ',' << fmt(r.images_per_second, 2) << ',' << fmt(r.seconds, 2) << '\n';
  }
}

void write_lambda_csv(std::ostream& os, const AblationResult& result) {
  os << "lambda,seeds,miou_mean,miou_spread\n";
  std::vector<AblationSummaryRow> rows;
  for (const AblationSummaryRow& r : result.summary()) {
    if (r.method == Method::kUnlabeled && same(r.width, 1.0)) rows.push_back(r);
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.lambda < b.lambda; });
  for (const AblationSummaryRow& r : rows) {
    os << r.lambda << ',' << r.count << ',' << fmt(r.miou_mean, 6) << ',' << fmt(r.miou_spread, 6) << '\n';
  }
}

void write_width_csv(std::ostream& os, const AblationResult& result) {
  os << "width,baseline_miou,distilled_miou,gain\n";
  std::vector<double> widths;
  for (const AblationSummaryRow& r : result.summary()) {
    if (r.method == Method::kBaseline &&
        std::none_of(widths.begin(), widths.end(), [&](double x) { return same(x, r.width); })) {
      widths.push_back(r.width);
    }
  }
  std::sort(widths.begin(), widths.end());
  for (double width : widths) {
    const double base = result.mean_miou(Method::kBaseline, width);
    double dist = 0;
    try {
      dist = result.mean_miou(Method::kProbabilityConsistency, width);
    } catch (const UsageError&) {
      continue;
    }
    os << width << ',' << fmt(base, 6) << ',' << fmt(dist, 6) << ',' << fmt(dist - base, 6) << '\n';
  }
}

KDSEG_END_NAMESPACE
