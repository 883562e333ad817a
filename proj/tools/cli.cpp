#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "kdseg/config.hpp"
#include "kdseg/dataset.hpp"
#include "kdseg/experiment.hpp"
#include "kdseg/metrics.hpp"
#include "kdseg/models.hpp"
#include "kdseg/pseudo_label.hpp"
#include "kdseg/trainer.hpp"

namespace kdseg::cli {
namespace {

namespace fs = std::filesystem;

// Options whose values land in the resolved config under `key`.
class KeyedFlags {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    std::string& slot = storage_[key];
    options_.emplace_back(key, app->add_option(flag, slot, help));
  }

  KeyValues given() const {
    KeyValues out;
    for (const auto& [key, opt] : options_) {
      if (opt->count() > 0) out[key] = storage_.at(key);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> storage_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
};

void add_train_flags(CLI::App* app, KeyedFlags& flags) {
  flags.add(app, "--batch-size", "batch_size", "images per step");
  flags.add(app, "--epochs", "epochs", "training epochs");
  flags.add(app, "--lr", "lr_initial", "initial learning rate");
  flags.add(app, "--lr-drops", "lr_drop_epochs", "comma-separated epochs where the rate drops");
  flags.add(app, "--lr-drop-factor", "lr_drop_factor", "divisor applied at each drop");
  flags.add(app, "--momentum", "momentum", "SGD momentum");
  flags.add(app, "--warmup-epochs", "warmup_epochs", "epochs of linear learning-rate ramp");
  flags.add(app, "--clip-norm", "clip_norm", "cap on the global gradient norm, 0 for none");
  flags.add(app, "--seed", "seed", "seed for initialization and batch order");
  flags.add(app, "--augment", "augment", "true or false");
  flags.add(app, "--flip-probability", "flip_probability", "horizontal flip probability");
  flags.add(app, "--scale-min", "scale_min", "lower scale jitter bound");
  flags.add(app, "--scale-max", "scale_max", "upper scale jitter bound");
  flags.add(app, "--target-size", "target_size", "square side after crop/pad");
}

ResolvedConfig resolve(const KeyValues& defaults, const std::string& config_path, const KeyValues& flags) {
  ResolvedConfig rc;
  rc.overlay(defaults, ValueSource::kDefault);
  if (!config_path.empty()) {
    const KeyValues file = read_key_values(config_path);
    for (const auto& [k, v] : file) {
      if (!defaults.count(k)) throw ConfigError("unknown key '" + k + "' in " + config_path);
    }
    rc.overlay(file, ValueSource::kConfigFile);
  }
  rc.overlay(flags, ValueSource::kFlag);
  return rc;
}

TrainConfig train_config_from(const ResolvedConfig& rc) {
  KeyValues values;
  for (const auto& [k, v] : rc.values()) {
    if (is_train_key(k)) values[k] = v;
  }
  TrainConfig cfg;
  apply_train_values(values, cfg);
  cfg.validate();
  cfg.weights.validate();
  return cfg;
}

// Crop/pad to the data's own size unless the user chose a target.
void default_target_size(ResolvedConfig& rc, const std::vector<Sample>& train) {
  if (train.empty() || rc.entries().at("target_size").source != ValueSource::kDefault) return;
  rc.set("target_size", std::to_string(std::max(train.front().height(), train.front().width())),
         ValueSource::kDefault);
}

EpochCallback epoch_printer(std::ostream& out, int epochs) {
  return [&out, epochs](const EpochRecord& r) {
    out << "epoch " << (r.epoch + 1) << "/" << epochs << std::fixed << std::setprecision(4)
        << "  total " << r.total_loss << "  L_S " << r.segmentation_loss << "  L_p " << r.probability_loss
        << "  L_c " << r.consistency_loss << "  lr " << std::setprecision(6) << r.learning_rate << '\n';
    out.unsetf(std::ios::floatfield);
    out.flush();
  };
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_training_outputs(const fs::path& out_dir, const SegNetwork& net, const TrainReport& report,
                            std::span<const Sample> val, std::ostream& out) {
  save_checkpoint(net, out_dir / "model.ckpt");
  std::ostringstream csv;
  write_report_csv(csv, report);
  write_text(out_dir / "report.csv", csv.str());
  if (!val.empty()) {
    const IouResult res = miou(evaluate(net, val));
    std::ostringstream txt, mcsv;
    write_metrics_report(txt, res, std::nullopt);
    write_metrics_csv(mcsv, res, std::nullopt);
    write_text(out_dir / "metrics.txt", txt.str());
    write_text(out_dir / "metrics.csv", mcsv.str());
    out << "val mIoU " << std::fixed << std::setprecision(4) << res.miou << '\n';
    out.unsetf(std::ios::floatfield);
  }
  out << "checkpoint " << (out_dir / "model.ckpt").string() << '\n';
}

std::vector<Sample> load_optional(const std::string& manifest, int n) {
  if (manifest.empty()) return {};
  return load_samples(read_manifest(manifest), n);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (item.empty()) continue;
    if constexpr (std::is_floating_point_v<T>) {
      out.push_back(parse_config_double(key, item));
    } else {
      const int v = parse_config_int(key, item);
      if (v < 0) throw ConfigError("'" + key + "' entries must be non-negative");
      out.push_back(static_cast<T>(v));
    }
  }
  return out;
}

// --- commands ------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  DatasetSpec spec;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const DatasetManifests m = generate_synthetic_dataset(a.spec, a.out);
  RunRecord rec;
  rec.command = "gen-data";
  rec.seed = a.spec.seed;
  rec.config.set("num_train", std::to_string(a.spec.num_train), ValueSource::kFlag);
  rec.config.set("num_val", std::to_string(a.spec.num_val), ValueSource::kFlag);
  rec.config.set("num_unlabeled", std::to_string(a.spec.num_unlabeled), ValueSource::kFlag);
  rec.config.set("size", std::to_string(a.spec.size), ValueSource::kFlag);
  rec.config.set("classes", std::to_string(a.spec.num_classes), ValueSource::kFlag);
  rec.config.set("seed", std::to_string(a.spec.seed), ValueSource::kFlag);
  write_run_record(rec, a.out);
  out << "train " << m.train.string() << '\n' << "val " << m.val.string() << '\n'
      << "unlabeled " << m.unlabeled.string() << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, val, out, config;
  KeyedFlags flags;
};

int cmd_train(TrainArgs& a, std::ostream& out) {
  KeyValues defaults = train_config_values(desk_train_config());
  defaults["role"] = "student";
  defaults["width"] = "1";
  defaults["classes"] = "4";
  ResolvedConfig rc = resolve(defaults, a.config, a.flags.given());
  const int classes = parse_config_int("classes", rc.get("classes"));
  const std::string role_text = rc.get("role");
  if (role_text != "teacher" && role_text != "student") throw UsageError("--role must be teacher or student");
  const Role role = role_text == "teacher" ? Role::kTeacher : Role::kStudent;
  const double width = parse_config_double("width", rc.get("width"));
  if (role == Role::kTeacher && width != 1.0) throw ConfigError("the teacher preset has a fixed width of 1.0");

  const std::vector<Sample> train = load_samples(read_manifest(a.data), classes);
  const std::vector<Sample> val = load_optional(a.val, classes);
  default_target_size(rc, train);
  const TrainConfig cfg = train_config_from(rc);

  SegNetwork net = build_network(role == Role::kTeacher ? teacher_preset(classes) : student_preset(classes, width),
                                 cfg.seed, role);
  ensure_dir(a.out);
  const TrainReport report = train_standalone(net, train, val, cfg, epoch_printer(out, cfg.epochs));
  write_training_outputs(a.out, net, report, val, out);

  RunRecord rec;
  rec.command = "train";
  rec.seed = cfg.seed;
  rec.config = rc;
  rec.inputs.emplace_back(a.data, manifest_content_id(a.data));
  if (!a.val.empty()) rec.inputs.emplace_back(a.val, manifest_content_id(a.val));
  write_run_record(rec, a.out);
  return 0;
}

struct DistillArgs {
  std::string teacher_ckpt, data, val, out, unlabeled, config;
  std::optional<int> classes;
  KeyedFlags flags;
};

int cmd_distill(DistillArgs& a, std::ostream& out) {
  KeyValues defaults = train_config_values(desk_train_config());
  defaults["width"] = "1";
  defaults["threshold"] = format_config_double(kDefaultPseudoThreshold);
  ResolvedConfig rc = resolve(defaults, a.config, a.flags.given());
  const double width = parse_config_double("width", rc.get("width"));
  const double threshold = parse_config_double("threshold", rc.get("threshold"));
  validate_threshold(threshold);

  SegNetwork teacher = load_checkpoint(a.teacher_ckpt, Role::kTeacher);
  teacher.freeze();
  const int n = teacher.config().num_classes;
  if (a.classes && *a.classes != n) {
    throw ConfigError("teacher predicts " + std::to_string(n) + " classes but --classes is " +
                      std::to_string(*a.classes));
  }
  const std::vector<Sample> train = load_samples(read_manifest(a.data), n);
  const std::vector<Sample> val = load_optional(a.val, n);
  default_target_size(rc, train);
  const TrainConfig cfg = train_config_from(rc);

  SegNetwork student = build_network(student_preset(n, width), cfg.seed, Role::kStudent);
  ensure_dir(a.out);
  TrainReport report;
  if (!a.unlabeled.empty()) {
    const fs::path pseudo_manifest = fs::path(a.out) / "pseudo.txt";
    const PseudoLabelSummary summary = pseudo_label_dataset(teacher, read_manifest(a.unlabeled), pseudo_manifest,
                                                            threshold);
    out << "pseudo-labels: " << summary.images.size() - summary.failures << " images, kept fraction "
        << summary.kept_fraction << ", failures " << summary.failures << '\n';
    const std::vector<Sample> pseudo = load_samples(read_manifest(pseudo_manifest), n);
    report = train_distill_joint(student, teacher, train, pseudo, val, cfg, epoch_printer(out, cfg.epochs));
  } else {
    report = train_distill(student, teacher, train, val, cfg, epoch_printer(out, cfg.epochs));
  }
  write_training_outputs(a.out, student, report, val, out);

  RunRecord rec;
  rec.command = "distill";
  rec.seed = cfg.seed;
  rec.config = rc;
  rec.inputs.emplace_back(a.teacher_ckpt, git_blob_id_of_file(a.teacher_ckpt));
  rec.inputs.emplace_back(a.data, manifest_content_id(a.data));
  if (!a.val.empty()) rec.inputs.emplace_back(a.val, manifest_content_id(a.val));
  if (!a.unlabeled.empty()) rec.inputs.emplace_back(a.unlabeled, manifest_content_id(a.unlabeled));
  write_run_record(rec, a.out);
  return 0;
}

struct PseudoArgs {
  std::string teacher_ckpt, manifest, out_manifest;
  double threshold = kDefaultPseudoThreshold;
};

int cmd_pseudo_label(const PseudoArgs& a, std::ostream& out, std::ostream& err) {
  validate_threshold(a.threshold);
  SegNetwork teacher = load_checkpoint(a.teacher_ckpt, Role::kTeacher);
  teacher.freeze();
  const PseudoLabelSummary summary = pseudo_label_dataset(teacher, read_manifest(a.manifest), a.out_manifest,
                                                          a.threshold);
  for (const PseudoLabelStat& s : summary.images) {
    if (!s.ok) err << "failed: " << s.image << ": " << s.error << '\n';
  }
  out << "images " << summary.images.size() << "  kept fraction " << summary.kept_fraction << "  failures "
      << summary.failures << '\n';

  const fs::path out_manifest(a.out_manifest);
  const fs::path root = out_manifest.parent_path().empty() ? fs::path(".") : out_manifest.parent_path();
  RunRecord rec;
  rec.command = "pseudo-label";
  rec.config.set("threshold", format_config_double(a.threshold), ValueSource::kFlag);
  rec.inputs.emplace_back(a.teacher_ckpt, git_blob_id_of_file(a.teacher_ckpt));
  rec.inputs.emplace_back(a.manifest, git_blob_id_of_file(a.manifest));
  write_run_record(rec, root / (out_manifest.stem().string() + "_labels"));
  return summary.failures == 0 ? 0 : 2;
}

struct EvalArgs {
  std::string manifest, ckpt, pred_manifest, out;
  std::optional<int> classes;
  int bench_iterations = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.ckpt.empty() == a.pred_manifest.empty()) throw UsageError("give exactly one of --ckpt or --pred-manifest");
  IouResult result;
  std::optional<BenchResult> bench;
  if (!a.ckpt.empty()) {
    const SegNetwork net = load_checkpoint(a.ckpt);
    const int n = net.config().num_classes;
    if (a.classes && *a.classes != n) throw ConfigError("checkpoint class count differs from --classes");
    const std::vector<Sample> samples = load_samples(read_manifest(a.manifest), n);
    result = miou(evaluate(net, samples));
    if (a.bench_iterations > 0 && !samples.empty()) {
      bench = benchmark(net, samples.front().height(), samples.front().width(), a.bench_iterations,
                        std::max(1, a.bench_iterations / 10));
    }
  } else {
    const int n = a.classes.value_or(4);
    const Manifest gt = read_manifest(a.manifest);
    const Manifest pred = read_manifest(a.pred_manifest);
    if (gt.size() != pred.size()) throw FormatError("prediction and ground-truth manifests differ in length");
    ConfusionMatrix cm(n);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (!gt.entries[i].label) throw FormatError("ground-truth entry " + gt.entries[i].image + " has no label");
      if (!pred.entries[i].label) throw FormatError("prediction entry " + pred.entries[i].image + " has no label");
      const LabelMap g = read_pgm(gt.resolve(*gt.entries[i].label));
      const LabelMap p = read_pgm(pred.resolve(*pred.entries[i].label));
      g.validate(n);
      p.validate(n);
      accumulate(cm, p, g);
    }
    result = miou(cm);
  }
  std::ostringstream txt;
  write_metrics_report(txt, result, bench);
  out << txt.str();
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "metrics.txt", txt.str());
    std::ostringstream csv;
    write_metrics_csv(csv, result, bench);
    write_text(fs::path(a.out) / "metrics.csv", csv.str());
    RunRecord rec;
    rec.command = "eval";
    rec.inputs.emplace_back(a.manifest, manifest_content_id(a.manifest));
    if (!a.ckpt.empty()) rec.inputs.emplace_back(a.ckpt, git_blob_id_of_file(a.ckpt));
    if (!a.pred_manifest.empty()) rec.inputs.emplace_back(a.pred_manifest, manifest_content_id(a.pred_manifest));
    write_run_record(rec, a.out);
  }
  return 0;
}

struct BenchArgs {
  std::string ckpt, role = "student";
  double width = 1.0;
  int classes = 4, size = 32, iterations = 100, warmup = 10;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  SegNetwork net = [&] {
    if (!a.ckpt.empty()) return load_checkpoint(a.ckpt);
    if (a.role == "teacher") return build_network(teacher_preset(a.classes), a.seed, Role::kTeacher);
    if (a.role == "student") return build_network(student_preset(a.classes, a.width), a.seed, Role::kStudent);
    throw UsageError("--role must be teacher or student");
  }();
  const BenchResult r = benchmark(net, a.size, a.size, a.iterations, a.warmup);
  out << "images/sec " << std::fixed << std::setprecision(1) << r.images_per_second << "  input " << r.height << "x"
      << r.width << "  iterations " << r.iterations << "  warmup " << r.warmup << '\n';
  out.unsetf(std::ios::floatfield);
  return 0;
}

struct AblationArgs {
  std::string out, config;
  KeyedFlags flags;
};

KeyValues ablation_defaults(const AblationConfig& d) {
  KeyValues kv = train_config_values(d.student);
  const KeyValues teacher = train_config_values(d.teacher);
  kv["teacher_epochs"] = teacher.at("epochs");
  kv["teacher_lr_initial"] = teacher.at("lr_initial");
  kv["teacher_lr_drop_epochs"] = teacher.at("lr_drop_epochs");
  kv["threshold"] = format_config_double(d.threshold);
  std::string seeds;
  for (std::uint64_t s : d.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  kv["seeds"] = seeds;
  kv["lambda_sweep"] = "";
  kv["width_sweep"] = "";
  kv["num_train"] = std::to_string(d.data.num_train);
  kv["num_val"] = std::to_string(d.data.num_val);
  kv["num_unlabeled"] = std::to_string(d.data.num_unlabeled);
  kv["size"] = std::to_string(d.data.size);
  kv["classes"] = std::to_string(d.data.num_classes);
  kv["bench_iterations"] = std::to_string(d.bench_iterations);
  return kv;
}

int cmd_ablation(AblationArgs& a, std::ostream& out) {
  const AblationConfig defaults;
  ResolvedConfig rc = resolve(ablation_defaults(defaults), a.config, a.flags.given());
  AblationConfig cfg = defaults;
  cfg.student = train_config_from(rc);
  KeyValues teacher_values;
  for (const auto& [k, v] : rc.values()) {
    if (is_train_key(k)) teacher_values[k] = v;
  }
  teacher_values["epochs"] = rc.get("teacher_epochs");
  teacher_values["lr_initial"] = rc.get("teacher_lr_initial");
  teacher_values["lr_drop_epochs"] = rc.get("teacher_lr_drop_epochs");
  apply_train_values(teacher_values, cfg.teacher);
  cfg.threshold = parse_config_double("threshold", rc.get("threshold"));
  cfg.seeds = parse_list<std::uint64_t>("seeds", rc.get("seeds"));
  cfg.lambda_sweep = parse_list<double>("lambda_sweep", rc.get("lambda_sweep"));
  cfg.width_sweep = parse_list<double>("width_sweep", rc.get("width_sweep"));
  cfg.data.num_train = parse_config_int("num_train", rc.get("num_train"));
  cfg.data.num_val = parse_config_int("num_val", rc.get("num_val"));
  cfg.data.num_unlabeled = parse_config_int("num_unlabeled", rc.get("num_unlabeled"));
  cfg.data.size = parse_config_int("size", rc.get("size"));
  cfg.data.num_classes = parse_config_int("classes", rc.get("classes"));
  cfg.bench_iterations = parse_config_int("bench_iterations", rc.get("bench_iterations"));
  cfg.student.augmentation.target_size = cfg.data.size;
  cfg.teacher.augmentation.target_size = cfg.data.size;
  cfg.validate();

  ensure_dir(a.out);
  const AblationResult result = run_ablation(cfg, a.out, [&](const std::string& msg) { out << msg << std::endl; });
  std::ostringstream md, csv;
  write_ablation_markdown(md, result);
  write_ablation_csv(csv, result);
  write_text(fs::path(a.out) / "ablation.md", md.str());
  write_text(fs::path(a.out) / "ablation.csv", csv.str());
  if (!cfg.lambda_sweep.empty()) {
    std::ostringstream l;
    write_lambda_csv(l, result);
    write_text(fs::path(a.out) / "lambda_sweep.csv", l.str());
  }
  if (!cfg.width_sweep.empty()) {
    std::ostringstream w;
    write_width_csv(w, result);
    write_text(fs::path(a.out) / "width_sweep.csv", w.str());
  }
  out << md.str();

  RunRecord rec;
  rec.command = "ablation";
  rec.seed = cfg.seeds.front();
  rec.config = rc;
  write_run_record(rec, a.out);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured knowledge distillation for dense prediction on synthetic scenes", "kdseg"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--train", gen.spec.num_train, "labeled training images");
  gen_cmd->add_option("--val", gen.spec.num_val, "validation images");
  gen_cmd->add_option("--unlabeled", gen.spec.num_unlabeled, "unlabeled images");
  gen_cmd->add_option("--size", gen.spec.size, "image side in pixels");
  gen_cmd->add_option("--classes", gen.spec.num_classes, "class count including background");
  gen_cmd->add_option("--seed", gen.spec.seed, "generation seed");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a teacher or student on labeled data");
  train_cmd->add_option("--data", train.data, "training manifest")->required();
  train_cmd->add_option("--val", train.val, "validation manifest");
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--config", train.config, "key=value config file");
  train.flags.add(train_cmd, "--classes", "classes", "class count");
  train.flags.add(train_cmd, "--role", "role", "teacher or student");
  train.flags.add(train_cmd, "--width", "width", "student width multiplier");
  add_train_flags(train_cmd, train.flags);

  DistillArgs distill;
  auto* distill_cmd = app.add_subcommand("distill", "train a student against a fixed teacher");
  distill_cmd->add_option("--teacher-ckpt", distill.teacher_ckpt, "teacher checkpoint")->required();
  distill_cmd->add_option("--data", distill.data, "training manifest")->required();
  distill_cmd->add_option("--val", distill.val, "validation manifest");
  distill_cmd->add_option("--out", distill.out, "output directory")->required();
  distill_cmd->add_option("--unlabeled-manifest", distill.unlabeled, "unlabeled images for joint training");
  distill_cmd->add_option("--classes", distill.classes, "expected class count");
  distill_cmd->add_option("--config", distill.config, "key=value config file");
  distill.flags.add(distill_cmd, "--alpha", "alpha", "probability loss weight");
  distill.flags.add(distill_cmd, "--beta", "beta", "consistency loss weight");
  distill.flags.add(distill_cmd, "--lambda", "lambda", "unlabeled branch weight");
  distill.flags.add(distill_cmd, "--threshold", "threshold", "pseudo-label confidence threshold");
  distill.flags.add(distill_cmd, "--width", "width", "student width multiplier");
  add_train_flags(distill_cmd, distill.flags);

  PseudoArgs pseudo;
  auto* pseudo_cmd = app.add_subcommand("pseudo-label", "label unlabeled images with a teacher");
  pseudo_cmd->add_option("--teacher-ckpt", pseudo.teacher_ckpt, "teacher checkpoint")->required();
  pseudo_cmd->add_option("--manifest", pseudo.manifest, "input manifest")->required();
  pseudo_cmd->add_option("--out-manifest", pseudo.out_manifest, "output manifest")->required();
  pseudo_cmd->add_option("--threshold", pseudo.threshold, "confidence threshold");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "compute IoU metrics");
  eval_cmd->add_option("--manifest", eval.manifest, "ground-truth manifest")->required();
  eval_cmd->add_option("--ckpt", eval.ckpt, "checkpoint to evaluate");
  eval_cmd->add_option("--pred-manifest", eval.pred_manifest, "manifest of predicted label maps");
  eval_cmd->add_option("--classes", eval.classes, "class count");
  eval_cmd->add_option("--out", eval.out, "directory for metrics files");
  eval_cmd->add_option("--bench-iterations", eval.bench_iterations, "also time the network");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "time single-image inference");
  bench_cmd->add_option("--ckpt", bench.ckpt, "checkpoint (otherwise a preset)");
  bench_cmd->add_option("--role", bench.role, "preset: teacher or student");
  bench_cmd->add_option("--width", bench.width, "student width multiplier");
  bench_cmd->add_option("--classes", bench.classes, "class count for presets");
  bench_cmd->add_option("--size", bench.size, "square input side");
  bench_cmd->add_option("--iterations", bench.iterations, "timed iterations");
  bench_cmd->add_option("--warmup", bench.warmup, "untimed iterations");
  bench_cmd->add_option("--seed", bench.seed, "preset initialization seed");

  AblationArgs ablation;
  auto* ablation_cmd = app.add_subcommand("ablation", "run the teacher/student ablation ladder");
  ablation_cmd->add_option("--out", ablation.out, "output directory")->required();
  ablation_cmd->add_option("--config", ablation.config, "key=value config file");
  ablation.flags.add(ablation_cmd, "--seeds", "seeds", "comma-separated seeds");
  ablation.flags.add(ablation_cmd, "--lambda-sweep", "lambda_sweep", "extra lambdas, e.g. 0.1,0.5,1.0");
  ablation.flags.add(ablation_cmd, "--width-sweep", "width_sweep", "extra student widths, e.g. 0.5,0.75,1.0");
  ablation.flags.add(ablation_cmd, "--alpha", "alpha", "probability loss weight");
  ablation.flags.add(ablation_cmd, "--beta", "beta", "consistency loss weight");
  ablation.flags.add(ablation_cmd, "--lambda", "lambda", "unlabeled branch weight");
  ablation.flags.add(ablation_cmd, "--threshold", "threshold", "pseudo-label confidence threshold");
  ablation.flags.add(ablation_cmd, "--teacher-epochs", "teacher_epochs", "teacher training epochs");
  ablation.flags.add(ablation_cmd, "--teacher-lr", "teacher_lr_initial", "teacher initial learning rate");
  ablation.flags.add(ablation_cmd, "--teacher-lr-drops", "teacher_lr_drop_epochs", "teacher drop epochs");
  ablation.flags.add(ablation_cmd, "--train", "num_train", "labeled training images");
  ablation.flags.add(ablation_cmd, "--val", "num_val", "validation images");
  ablation.flags.add(ablation_cmd, "--unlabeled", "num_unlabeled", "unlabeled images");
  ablation.flags.add(ablation_cmd, "--size", "size", "image side");
  ablation.flags.add(ablation_cmd, "--classes", "classes", "class count");
  ablation.flags.add(ablation_cmd, "--bench-iterations", "bench_iterations", "timed iterations per benchmark");
  ablation.flags.add(ablation_cmd, "--batch-size", "batch_size", "images per step");
  ablation.flags.add(ablation_cmd, "--epochs", "epochs", "student training epochs");
  ablation.flags.add(ablation_cmd, "--lr", "lr_initial", "student initial learning rate");
  ablation.flags.add(ablation_cmd, "--lr-drops", "lr_drop_epochs", "student drop epochs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) return cmd_train(train, out);
    if (*distill_cmd) return cmd_distill(distill, out);
    if (*pseudo_cmd) return cmd_pseudo_label(pseudo, out, err);
    if (*eval_cmd) return cmd_eval(eval, out);
    if (*bench_cmd) return cmd_bench(bench, out);
    if (*ablation_cmd) return cmd_ablation(ablation, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace kdseg::cli
