// Acceptance run: one PASS/FAIL line per criterion.
//
//   kdseg_acceptance <work-dir>
//
// Criteria 7-10 train the full ablation (three seeds plus the lambda and width
// sweeps) on the default synthetic dataset, which takes most of an hour on
// one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "cli.hpp"
#include "criteria.hpp"
#include "kdseg/experiment.hpp"
#include "kdseg/pseudo_label.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace kdseg;
using kdseg::acceptance::Outcome;
using kdseg::test::read_bytes;

namespace {

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  " << name << ": " << o.detail
            << std::endl;
  failures += !o.pass;
}

Outcome guarded(const std::function<Outcome()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {false, std::string("error: ") + e.what()};
  }
}

void note(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

std::string points(double miou) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100 * miou;
  return os.str();
}

// --- pseudo-labels --------------------------------------------------------------

Outcome pseudo_label_semantics() {
  Rng rng(5);
  const std::vector<double> grid{0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  bool monotone = true, oracle = true;
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Tensor logits = test::random_tensor({2, 4, 9, 9}, rng, -3, 3);
    const Tensor probs = softmax_channels(tape.constant_ref(logits)).value();
    double previous = 2;
    for (double th : grid) {
      const PseudoLabelBatch got = pseudo_labels_from_probabilities(probs, th);
      std::size_t kept = 0, total = 0;
      for (int b = 0; b < 2; ++b)
        for (int y = 0; y < 9; ++y)
          for (int x = 0; x < 9; ++x) {
            int best = 0;
            for (int c = 1; c < 4; ++c) best = probs.at(b, c, y, x) > probs.at(b, best, y, x) ? c : best;
            const bool keep = probs.at(b, best, y, x) >= static_cast<Scalar>(th);
            const std::uint8_t expect = keep ? static_cast<std::uint8_t>(best) : kIgnoreLabel;
            oracle &= got.labels.at(b, y, x) == expect;
            kept += keep;
            ++total;
          }
      oracle &= std::abs(got.kept_fraction - static_cast<double>(kept) / static_cast<double>(total)) < 1e-12;
      monotone &= got.kept_fraction <= previous;
      previous = got.kept_fraction;
    }
  }
  const Tensor edge({1, 2, 1, 3}, std::vector<Scalar>{0.69f, 0.7f, 0.71f, 0.31f, 0.3f, 0.29f});
  const LabelMap cut = pseudo_labels_from_probabilities(edge, 0.7).labels;
  const bool boundary = cut.labels[0] == kIgnoreLabel && cut.labels[1] == 0 && cut.labels[2] == 0;
  std::ostringstream os;
  os << "monotone over 11 thresholds " << (monotone ? "yes" : "no") << ", counting oracle exact "
     << (oracle ? "yes" : "no") << ", p=0.69 at 0.7 -> " << (cut.labels[0] == kIgnoreLabel ? "IGNORE" : "kept");
  return {monotone && oracle && boundary, os.str()};
}

// --- CLI runs -------------------------------------------------------------------

struct Shared {
  fs::path data, teacher;
  std::string teacher_bytes;
  std::vector<std::string> teacher_changes;  // runs after which the bytes differed
};

void cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = kdseg::cli::run(args, out, err);
  if (code != 0) throw std::runtime_error(args.front() + " exited " + std::to_string(code) + ": " + err.str());
}

void check_teacher(Shared& s, const std::string& after) {
  if (read_bytes(s.teacher) != s.teacher_bytes) s.teacher_changes.push_back(after);
}

void prepare(Shared& s, const fs::path& work) {
  s.data = work / "data";
  note("generating the default dataset");
  cli({"gen-data", "--out", s.data.string(), "--seed", "1"});
  note("training the teacher preset");
  cli({"train", "--role", "teacher", "--data", (s.data / "train.txt").string(), "--out", (work / "teacher").string(),
       "--seed", "1"});
  s.teacher = work / "teacher" / "model.ckpt";
  s.teacher_bytes = read_bytes(s.teacher);
}

Outcome cli_determinism(Shared& s, const fs::path& work) {
  std::vector<std::string> ckpts;
  for (const char* name : {"distill-a", "distill-b"}) {
    note(std::string("cli distill ") + name);
    const fs::path out = work / name;
    cli({"distill", "--teacher-ckpt", s.teacher.string(), "--data", (s.data / "train.txt").string(),
         "--unlabeled-manifest", (s.data / "unlabeled.txt").string(), "--val", (s.data / "val.txt").string(),
         "--out", out.string(), "--epochs", "10", "--lr-drops", "5,8", "--seed", "3"});
    check_teacher(s, name);
    ckpts.push_back(read_bytes(out / "model.ckpt"));
  }
  const bool same = !ckpts[0].empty() && ckpts[0] == ckpts[1];
  std::ostringstream os;
  os << "two joint distill runs (10 epochs, seed 3) give " << (same ? "bit-identical" : "different")
     << " checkpoints of " << ckpts[0].size() << " bytes";
  return {same, os.str()};
}

Outcome frozen_teacher(const Shared& s, int full_runs) {
  std::ostringstream os;
  os << "teacher checkpoint compared after " << full_runs << " distillation runs (2 CLI, rest ablation): ";
  if (s.teacher_changes.empty()) {
    os << "byte-identical";
  } else {
    os << "changed after";
    for (const std::string& r : s.teacher_changes) os << ' ' << r;
  }
  return {s.teacher_changes.empty() && full_runs > 2, os.str()};
}

// --- ablation -------------------------------------------------------------------

Outcome ladder(const AblationResult& r) {
  const Method order[] = {Method::kBaseline, Method::kProbability, Method::kProbabilityConsistency,
                          Method::kUnlabeled};
  std::vector<double> m;
  for (Method k : order) m.push_back(k == Method::kUnlabeled ? r.mean_miou(k, 1.0, 0.5) : r.mean_miou(k));
  bool gaps_ok = true;
  double worst_gap = 1;
  for (std::size_t i = 1; i < m.size(); ++i) {
    worst_gap = std::min(worst_gap, m[i] - m[i - 1]);
    gaps_ok &= m[i] - m[i - 1] >= -0.005;
  }
  const double total = m.back() - m.front();
  double seconds = 0;
  for (const AblationRun& run : r.runs) {
    const bool ladder_row = run.width == 1.0 && (run.method != Method::kUnlabeled || run.lambda == 0.5);
    if (ladder_row) seconds += run.seconds;
  }
  std::ostringstream os;
  os << "mean mIoU baseline " << points(m[0]) << " / +Lp " << points(m[1]) << " / +Lp+Lc " << points(m[2])
     << " / +unlabeled " << points(m[3]) << ", total gain " << points(total) << " points, worst adjacent gap "
     << points(worst_gap) << ", ladder training " << std::fixed << std::setprecision(0) << seconds << " s";
  return {gaps_ok && total >= 0.01 && seconds <= 1800, os.str()};
}

Outcome capacity(const AblationResult& r) {
  bool ok = true;
  std::ostringstream os;
  for (double w : {0.5, 0.75, 1.0}) {
    const double base = r.mean_miou(Method::kBaseline, w), dist = r.mean_miou(Method::kProbabilityConsistency, w);
    ok &= dist > base;
    os << (w == 0.5 ? "" : ", ") << "w" << w << " baseline " << points(base) << " -> distilled " << points(dist);
  }
  return {ok, os.str()};
}

Outcome lambda_robustness(const AblationResult& r) {
  const double mid = r.mean_miou(Method::kUnlabeled, 1.0, 0.5);
  bool ok = true;
  std::ostringstream os;
  os << "lambda 0.5 " << points(mid);
  for (double l : {0.1, 1.0}) {
    const double v = r.mean_miou(Method::kUnlabeled, 1.0, l);
    ok &= std::abs(v - mid) <= 0.015;
    os << ", lambda " << l << " " << points(v) << " (" << points(v - mid) << ")";
  }
  return {ok, os.str()};
}

Outcome speed(const AblationResult& r) {
  double teacher = 0, lo = 1e300, hi = 0;
  for (const AblationSummaryRow& row : r.summary()) {
    if (row.method == Method::kTeacher) teacher = row.fps_mean;
    if (row.method == Method::kTeacher || row.width != 1.0) continue;
    lo = std::min(lo, row.fps_mean);
    hi = std::max(hi, row.fps_mean);
  }
  const double spread = (hi - lo) / lo;
  std::ostringstream os;
  os << std::fixed << std::setprecision(0) << "teacher " << teacher << " img/s, student ladder " << lo << ".." << hi
     << " img/s at 32x32, spread " << std::setprecision(1) << 100 * spread << "%";
  return {lo > teacher && spread < 0.05, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_work");
  fs::remove_all(work);
  fs::create_directories(work);
  const auto t0 = std::chrono::steady_clock::now();

  report(1, "gradient correctness", guarded(acceptance::gradient_correctness));
  report(2, "oracle equivalence", guarded(acceptance::oracle_equivalence));
  report(3, "loss identities", guarded(acceptance::loss_identities));
  report(4, "pseudo-label semantics", guarded(pseudo_label_semantics));

  Shared shared;
  Outcome determinism, frozen;
  std::optional<AblationResult> ablation;
  std::string setup_error;
  try {
    prepare(shared, work);
    determinism = guarded([&] { return cli_determinism(shared, work); });
    AblationConfig cfg;
    cfg.shared_seed = 1;
    cfg.teacher_checkpoint = shared.teacher;
    cfg.lambda_sweep = {0.1, 1.0};
    cfg.width_sweep = {0.5, 0.75};
    note("running the ablation");
    ablation = run_ablation(cfg, work / "ablation", [](const std::string& m) { note(m); });
    check_teacher(shared, "ablation");
    std::ostringstream md;
    write_ablation_markdown(md, *ablation);
    std::cerr << md.str();
  } catch (const std::exception& e) {
    setup_error = std::string("error: ") + e.what();
  }

  std::size_t distills = 2;
  if (ablation) {
    for (const AblationRun& run : ablation->runs) distills += run.method != Method::kTeacher && run.method != Method::kBaseline;
  }
  const Outcome missing{false, setup_error.empty() ? "not run" : setup_error};
  report(5, "frozen teacher", setup_error.empty() ? frozen_teacher(shared, static_cast<int>(distills)) : missing);
  report(6, "determinism", determinism.detail.empty() ? missing : determinism);
  report(7, "ablation ladder", ablation ? guarded([&] { return ladder(*ablation); }) : missing);
  report(8, "capacity sweep", ablation ? guarded([&] { return capacity(*ablation); }) : missing);
  report(9, "lambda robustness", ablation ? guarded([&] { return lambda_robustness(*ablation); }) : missing);
  report(10, "speed ordering", ablation ? guarded([&] { return speed(*ablation); }) : missing);

  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << std::fixed << std::setprecision(1) << minutes << " min" << std::endl;
  return failures == 0 ? 0 : 1;
}
