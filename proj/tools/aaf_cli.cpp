// aaf: validate, train, eval, gradcheck and compare AAF pipelines on the
// synthetic few-shot detection task.
//
// Exit codes: 0 ok, 1 check failed, 2 invalid or infeasible config,
// 3 I/O failure, 4 training diverged, 64 usage error.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aaf/config_dsl.hpp"
#include "aaf/fsod/param_io.hpp"
#include "aaf/fsod/trainer.hpp"
#include "aaf/tensor.hpp"

namespace fs = std::filesystem;
using namespace aaf;
using namespace aaf::fsod;

namespace {

enum Exit : int {
  kOk = 0,
  kCheckFailed = 1,
  kBadConfig = 2,
  kIoFailure = 3,
  kDiverged = 4,
  kUsage = 64,
};

// Carries an exit code out of a subcommand.
struct Failure {
  int code;
  std::string message;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure{kIoFailure, "cannot read " + path.string()};
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Failure{kIoFailure, "cannot read " + path.string()};
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.close();
  if (!out) throw Failure{kIoFailure, "cannot write " + path.string()};
}

std::string config_error_text(const std::string& source, const config::ConfigError& e) {
  std::string s = source + ":" + std::to_string(e.line()) + ":" + std::to_string(e.column()) +
                  ": error: " + e.message();
  if (!e.expected().empty()) s += " (expected " + e.expected() + ")";
  return s;
}

// --preset / --config, exactly one.
struct ConfigChoice {
  std::string preset;
  std::string path;

  void add_to(CLI::App& app) {
    auto* p = app.add_option("--preset", preset, "Named preset: frw, dana_lite, mfrcn_lite, drl");
    auto* c = app.add_option("--config", path, "Pipeline config file");
    p->excludes(c);
  }

  std::string label() const { return preset.empty() ? fs::path(path).stem().string() : preset; }

  PipelineConfig load() const {
    if (preset.empty() == path.empty())
      throw Failure{kUsage, "give exactly one of --preset and --config"};
    if (!preset.empty()) {
      try {
        return aaf::preset(preset);
      } catch (const std::invalid_argument& e) {
        throw Failure{kBadConfig, e.what()};
      }
    }
    const std::string text = read_file(path);
    try {
      return config::parse(text);
    } catch (const config::ConfigError& e) {
      throw Failure{kBadConfig, config_error_text(path, e)};
    }
  }
};

struct RunFlags {
  std::uint64_t seed = 0;
  int k = 1;
  Schedule schedule;
  int support_seeds = 1;

  void add_to(CLI::App& app, bool training) {
    app.add_option("--seed", seed, "Run seed")->capture_default_str();
    app.add_option("--k", k, "Examples per novel class")->capture_default_str()
        ->check(CLI::Range(1, 1000));
    app.add_option("--eval-images", schedule.eval.images, "Evaluation scenes")
        ->capture_default_str()->check(CLI::Range(1, 100000));
    app.add_option("--support-seeds", support_seeds,
                   "Evaluate over this many support draws and report the spread")
        ->capture_default_str()->check(CLI::Range(1, 1000));
    if (!training) return;
    app.add_option("--episodes", schedule.base_episodes, "Base-training episodes")
        ->capture_default_str()->check(CLI::Range(0, 1000000));
    app.add_option("--queries-per-class", schedule.queries_per_class, "Query images per class")
        ->capture_default_str()->check(CLI::Range(1, 100000));
    app.add_option("--finetune-updates", schedule.finetune_updates, "Fine-tuning weight updates")
        ->capture_default_str()->check(CLI::Range(0, 1000000));
    app.add_option("--lr", schedule.base_lr, "Base learning rate; fine-tuning uses a tenth")
        ->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--eval-every", schedule.eval_every,
                   "Evaluate every N episodes of each phase (0: only at the end)")
        ->capture_default_str()->check(CLI::NonNegativeNumber);
  }

  Schedule resolved() const {
    Schedule s = schedule;
    s.finetune_lr = s.base_lr / 10.0;
    s.eval.support_seeds.clear();
    for (int i = 0; i < support_seeds; ++i) s.eval.support_seeds.push_back(static_cast<std::uint64_t>(i));
    return s;
  }
};

fs::path default_out(const std::string& name) {
  const char* root = std::getenv("AAF_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / name;
}

// Artifacts are written into a scratch sibling and moved into place at the
// end, so an interrupted or failed run never leaves a half-written directory.
class Staging {
 public:
  Staging(fs::path out, bool force) : out_(std::move(out)), force_(force) {
    std::error_code ec;
    if (fs::exists(out_, ec) && !force_ && !fs::is_empty(out_, ec))
      throw Failure{kIoFailure, out_.string() + " already exists; pass --force to overwrite"};
    const fs::path parent = out_.has_parent_path() ? out_.parent_path() : fs::path(".");
    fs::create_directories(parent, ec);
    dir_ = parent / ("." + out_.filename().string() + ".partial");
    fs::remove_all(dir_, ec);
    if (!fs::create_directories(dir_, ec) || ec)
      throw Failure{kIoFailure, "cannot create " + dir_.string()};
  }
  ~Staging() {
    std::error_code ec;
    if (!committed_) fs::remove_all(dir_, ec);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;

  fs::path file(const char* name) const { return dir_ / name; }

  void commit() {
    std::error_code ec;
    fs::path old;
    if (fs::exists(out_, ec)) {
      old = out_.parent_path() / ("." + out_.filename().string() + ".old");
      fs::remove_all(old, ec);
      fs::rename(out_, old, ec);
      if (ec) throw Failure{kIoFailure, "cannot replace " + out_.string() + ": " + ec.message()};
    }
    fs::rename(dir_, out_, ec);
    if (ec) throw Failure{kIoFailure, "cannot move results to " + out_.string() + ": " + ec.message()};
    committed_ = true;
    if (!old.empty()) fs::remove_all(old, ec);
  }

 private:
  fs::path out_;
  bool force_;
  fs::path dir_;
  bool committed_ = false;
};

void write_report(const Staging& stage, const EvalReport& report) {
  std::ostringstream text;
  write_text(text, report);
  write_file(stage.file("report.txt"), text.str());
  write_file(stage.file("report.json"), to_json(report).dump(2) + "\n");
}

// ---------------------------------------------------------------------------

int cmd_validate(const std::string& path, const std::string& shapes) {
  const std::string text = read_file(path);
  config::ParsedConfig parsed;
  try {
    parsed = config::parse_source(text);
  } catch (const config::ConfigError& e) {
    std::cerr << config_error_text(path, e) << "\n";
    return kBadConfig;
  }
  if (!shapes.empty()) {
    const auto comma = shapes.find(',');
    const auto q = config::parse_extent(shapes.substr(0, comma));
    const auto s = comma == std::string::npos ? std::nullopt
                                              : config::parse_extent(shapes.substr(comma + 1));
    if (!q || !s) throw Failure{kUsage, "--shapes expects QUERY,SUPPORT such as 8x8x64,4x4x64"};
    if (const auto e = config::check_shapes(parsed.config, *q, *s, &parsed.key_lines)) {
      std::cerr << config_error_text(path, *e) << "\n";
      return kBadConfig;
    }
  }
  std::cout << config::print_config(parsed.config);
  return kOk;
}

int cmd_train(const ConfigChoice& choice, const RunFlags& flags, const std::string& out_flag,
              bool force) {
  DetectorConfig dc;
  dc.pipeline = choice.load();
  const Schedule schedule = flags.resolved();
  const fs::path out = out_flag.empty()
                           ? default_out(choice.label() + "_k" + std::to_string(flags.k) + "_s" +
                                         std::to_string(flags.seed))
                           : fs::path(out_flag);
  Staging stage(out, force);
  write_file(stage.file("config.aaf"), config::print_config(dc.pipeline));

  std::ofstream csv(stage.file("metrics.csv"), std::ios::binary);
  if (!csv) throw Failure{kIoFailure, "cannot write metrics.csv"};
  csv << kLogHeader << "\n";
  TrainResult result;
  try {
    result = train(dc, ClassSplit::standard(), schedule, flags.k, flags.seed, [&](const LogRow& row) {
      csv << csv_line(row) << "\n";
      csv.flush();
      if (!csv) throw Failure{kIoFailure, "cannot write metrics.csv"};
    });
  } catch (const DivergenceError& e) {
    throw Failure{kDiverged, std::string("training diverged: ") + e.what()};
  }
  csv.close();

  EvalReport report =
      evaluate(result.detector, ClassSplit::standard(), result.registry, flags.k, schedule.eval);
  report.method = choice.label();
  report.seed = flags.seed;
  write_report(stage, report);
  try {
    save_params(stage.file("params.bin"), result.detector.params());
  } catch (const ParamIoError& e) {
    throw Failure{kIoFailure, e.what()};
  }
  stage.commit();
  std::cout << "base_map: " << format_number(report.base_map) << "\n"
            << "novel_map: " << format_number(report.novel_map) << "\n"
            << "written to " << out.string() << "\n";
  return kOk;
}

int cmd_eval(const ConfigChoice& choice, const RunFlags& flags, const std::string& params_path,
             const std::string& out_flag, bool force) {
  DetectorConfig dc;
  dc.pipeline = choice.load();
  const Schedule schedule = flags.resolved();
  Rng unused(0);
  const Detector det = Detector::init(dc, unused);
  try {
    load_params(params_path, det.params());
  } catch (const ParamIoError& e) {
    throw Failure{kIoFailure, e.what()};
  }
  // The novel examples are a function of the training seed and k.
  const NovelRegistry registry =
      NovelRegistry::build(flags.seed, ClassSplit::standard(), flags.k, schedule.layout);
  EvalReport report = evaluate(det, ClassSplit::standard(), registry, flags.k, schedule.eval);
  report.method = choice.label();
  report.seed = flags.seed;
  if (out_flag.empty()) {
    write_text(std::cout, report);
    return kOk;
  }
  Staging stage(out_flag, force);
  write_report(stage, report);
  stage.commit();
  return kOk;
}

int cmd_gradcheck(const ConfigChoice& choice, std::uint64_t seed, double fault) {
  testing::set_adjoint_fault(fault);
  DetectorConfig dc;
  dc.pipeline = choice.load();
  // A narrow detector on small images keeps finite differences cheap while
  // exercising every parameter of the backbone, pipeline and head.
  dc.backbone.widths = {3, 4, 4, 4};
  dc.head_hidden = 6;
  dc.image_size = 16;
  Rng rng(seed);
  const Detector det = Detector::init(dc, rng);
  // Zero biases and integer boxes can put a box edge exactly on a target
  // edge, a kink of -log IoU; move to a nearby generic point.
  for (NamedParam p : det.params())
    for (double& v : p.value.mutable_data()) v += 0.05 * rng.normal();
  const std::vector<int> classes = {0, 3};
  LayoutParams layout;
  layout.size = 16;
  layout.min_extent = 5;
  layout.max_extent = 8;
  layout.max_objects = 2;
  std::map<int, std::vector<SupportCrop>> support;
  for (int c : classes) support[c] = sample_support(rng, c, classes, 2, layout);
  for (auto& [c, crops] : support)
    for (SupportCrop& crop : crops) crop.image = crop_resize(crop.image, {0, 0, 32, 32}, 16);
  const SyntheticScene query = generate_scene_with(rng, 0, classes, layout);

  std::vector<NamedParam> named = det.params();
  const GradcheckReport report = gradcheck_params(
      [&] { return image_loss(det, query, det.encode_support(support)); }, named);
  std::cout << "max relative error: " << report.max_rel_error << " at " << report.worst_param
            << "[" << report.worst_index << "] over " << report.coords_checked
            << " coordinates\n";
  testing::set_adjoint_fault(0.0);
  if (report.max_rel_error <= 1e-4) return kOk;
  std::cerr << "gradient check failed: " << report.worst_param << " exceeds 1e-4\n";
  return kCheckFailed;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_compare(const std::string& presets_flag, const std::string& ks_flag, int seeds,
                RunFlags flags, const std::string& out_flag, bool force) {
  const std::vector<std::string> presets = split_list(presets_flag);
  std::vector<int> ks;
  for (const std::string& k : split_list(ks_flag)) {
    try {
      ks.push_back(std::stoi(k));
    } catch (const std::exception&) {
      throw Failure{kUsage, "--ks expects integers, got '" + k + "'"};
    }
    if (ks.back() < 1) throw Failure{kUsage, "--ks values must be positive"};
  }
  if (presets.empty() || ks.empty()) throw Failure{kUsage, "need at least one preset and one k"};
  int kmax = 1;
  for (int k : ks) kmax = std::max(kmax, k);
  const Schedule schedule = flags.resolved();
  const ClassSplit split = ClassSplit::standard();

  struct Cell {
    std::string preset;
    int k;
    int seed;
    double base, novel;
  };
  std::vector<Cell> cells;
  for (const std::string& name : presets) {
    DetectorConfig dc;
    try {
      dc.pipeline = preset(name);
    } catch (const std::invalid_argument& e) {
      throw Failure{kBadConfig, e.what()};
    }
    for (int s = 0; s < seeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s);
      try {
        // The base phase does not depend on k, so every k continues one run.
        const TrainResult base = train_base(dc, split, schedule, kmax, seed);
        for (int k : ks) {
          const TrainResult r = finetune(base, split, schedule, k, seed);
          const EvalReport rep = evaluate(r.detector, split, r.registry, k, schedule.eval);
          cells.push_back({name, k, s, rep.base_map, rep.novel_map});
          std::cerr << name << " k=" << k << " seed=" << s << " base "
                    << format_number(rep.base_map) << " novel " << format_number(rep.novel_map)
                    << "\n";
        }
      } catch (const DivergenceError& e) {
        throw Failure{kDiverged, name + " seed " + std::to_string(s) + ": " + e.what()};
      }
    }
  }

  std::ostringstream csv;
  csv << "preset,k,seed,base_map,novel_map\n";
  for (const std::string& name : presets)
    for (int k : ks)
      for (const Cell& c : cells)
        if (c.preset == name && c.k == k)
          csv << c.preset << "," << c.k << "," << c.seed << "," << format_number(c.base) << ","
              << format_number(c.novel) << "\n";
  for (const std::string& name : presets) {
    for (int k : ks) {
      double b = 0, n = 0;
      for (const Cell& c : cells)
        if (c.preset == name && c.k == k) b += c.base, n += c.novel;
      csv << name << "," << k << ",mean," << format_number(b / seeds) << ","
          << format_number(n / seeds) << "\n";
    }
  }
  const fs::path out = out_flag.empty() ? default_out("compare") : fs::path(out_flag);
  Staging stage(out, force);
  write_file(stage.file("compare.csv"), csv.str());
  stage.commit();
  std::cout << csv.str();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affinity/attention/fusion pipelines for few-shot detection"};
  app.require_subcommand(1);

  std::string out;
  bool force = false;
  auto add_output = [&](CLI::App& sub) {
    sub.add_option("--out", out, "Output directory (default: $AAF_OUTPUT_ROOT or ./runs)");
    sub.add_flag("--force", force, "Replace an existing output directory");
  };

  std::string validate_path, shapes;
  CLI::App* validate = app.add_subcommand("validate", "Parse a config and print it canonically");
  validate->add_option("config", validate_path, "Config file")->required();
  validate->add_option("--shapes", shapes, "Also check feasibility for QUERY,SUPPORT extents");

  ConfigChoice train_choice;
  RunFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "Base-train, fine-tune and evaluate");
  train_choice.add_to(*train_cmd);
  train_flags.add_to(*train_cmd, true);
  add_output(*train_cmd);

  ConfigChoice eval_choice;
  RunFlags eval_flags;
  std::string params_path;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate saved parameters");
  eval_choice.add_to(*eval_cmd);
  eval_flags.add_to(*eval_cmd, false);
  eval_cmd->add_option("--params", params_path, "params.bin from a train run")->required();
  add_output(*eval_cmd);

  ConfigChoice grad_choice;
  std::uint64_t grad_seed = 0;
  double fault = 0.0;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the detector");
  grad_choice.add_to(*grad_cmd);
  grad_cmd->add_option("--seed", grad_seed, "Initialization seed");
  grad_cmd->add_option("--inject-adjoint-fault", fault)->group("");

  std::string presets_flag = "frw,dana_lite,mfrcn_lite,drl", ks_flag = "1,5";
  int seeds = 3;
  RunFlags compare_flags;
  CLI::App* compare = app.add_subcommand("compare", "Table of base/novel mAP over presets and k");
  compare->add_option("--presets", presets_flag, "Comma-separated presets")->capture_default_str();
  compare->add_option("--ks", ks_flag, "Comma-separated k values")->capture_default_str();
  compare->add_option("--seeds", seeds, "Seeds 0..N-1")->capture_default_str()
      ->check(CLI::Range(1, 1000));
  compare_flags.add_to(*compare, true);
  compare->remove_option(compare->get_option("--seed"));
  compare->remove_option(compare->get_option("--k"));
  add_output(*compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*validate) return cmd_validate(validate_path, shapes);
    if (*train_cmd) return cmd_train(train_choice, train_flags, out, force);
    if (*eval_cmd) return cmd_eval(eval_choice, eval_flags, params_path, out, force);
    if (*grad_cmd) return cmd_gradcheck(grad_choice, grad_seed, fault);
    if (*compare) return cmd_compare(presets_flag, ks_flag, seeds, compare_flags, out, force);
  } catch (const Failure& f) {
    std::cerr << "aaf: " << f.message << "\n";
    return f.code;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "aaf: " << e.what() << "\n";
    return kIoFailure;
  }
  return kUsage;
}
