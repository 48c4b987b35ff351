// Command-line front end: phantom generation, training, leave-one-out
// experiments, ensemble segmentation and evaluation.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "cinelstm/checkpoint.hpp"
#include "cinelstm/config.hpp"
#include "cinelstm/errors.hpp"
#include "cinelstm/experiment.hpp"
#include "cinelstm/metrics.hpp"
#include "cinelstm/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cinelstm;

namespace {

std::string cycle_stem(const SequenceId& id) {
  return "s" + std::to_string(id.subject) + "_sc" + std::to_string(id.scan) + "_l" + std::to_string(id.location) +
         "_c" + std::to_string(id.cycle);
}

void make_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::invalid_argument("cannot create output directory " + dir.string());
  const fs::path probe = dir / ".write_probe";
  std::ofstream os(probe);
  if (!os) throw std::invalid_argument("output directory " + dir.string() + " is not writable");
  os.close();
  fs::remove(probe, ec);
}

struct PhantomArgs {
  std::string spec;
  std::string out;
  std::size_t subjects = 1;
  std::size_t cycles = 1;
};

int cmd_phantom(const PhantomArgs& a) {
  const PhantomSpec spec = a.spec.empty() ? PhantomSpec{} : load_phantom_spec(a.spec);
  spec.validate();
  make_output_dir(a.out);
  json manifest = {{"spec", to_json(spec)}, {"subjects", a.subjects}, {"cycles_per_subject", a.cycles},
                   {"files", json::array()}};
  for (const CineSequence& seq : phantom_dataset(spec, a.subjects, a.cycles)) {
    const std::string name = cycle_stem(seq.id) + ".cine";
    write_cine(fs::path(a.out) / name, seq);
    manifest["files"].push_back(name);
  }
  write_json_file(fs::path(a.out) / "manifest.json", manifest);
  std::cout << "wrote " << manifest["files"].size() << " cycles to " << a.out << '\n';
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  int fold = 0;
  std::string variant;
  std::string out;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  const Variant variant = parse_variant(a.variant);
  const Dataset data = load_run_data(cfg);
  const std::vector<FoldSpec> folds = loo_split(cycles_by_subject(data), cfg.seed);
  auto it = std::find_if(folds.begin(), folds.end(), [&](const FoldSpec& f) { return f.test_subject == a.fold; });
  if (it == folds.end()) throw std::invalid_argument("fold subject " + std::to_string(a.fold) + " is not in the data");
  make_output_dir(a.out);
  cfg.variants = {variant};
  write_json_file(fs::path(a.out) / "config.resolved.json", to_json(cfg));
  write_json_file(fs::path(a.out) / "manifest.json", fold_manifest(cfg, {*it}));
  const std::vector<MemberSet> sets = train_fold_ensembles(cfg, cfg.variants, *it, data, a.out);
  std::cout << "trained " << sets.front().members.size() << " " << to_string(variant) << " member(s) for fold "
            << a.fold << " into " << a.out << '\n';
  return kExitOk;
}

struct LooArgs {
  std::string config;
  std::string out;
  std::size_t jobs = 0;
};

int cmd_loo(const LooArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (a.jobs > 0) cfg.jobs = a.jobs;
  const Dataset data = load_run_data(cfg);
  make_output_dir(a.out);
  const int code = run_loo(cfg, data, a.out);
  std::ifstream table(fs::path(a.out) / "report.txt");
  std::cout << table.rdbuf();
  return code;
}

struct SegmentArgs {
  std::vector<std::string> checkpoints;
  std::string in;
  std::string out;
  std::size_t expected = 5;
  bool overlays = true;
};

// Hough box of the cycle's motion map, kept as metadata; null when the
// cycle is too small or shows no motion.
json localization_json(const CineSequence& seq) {
  const std::size_t half = std::min(seq.height(), seq.width()) / 2;
  if (half < 4 || seq.frames.size() < 2) return nullptr;
  LocalizeOptions opts;
  opts.r_max = std::min<std::size_t>(opts.r_max, half - 1);
  opts.r_min = std::min<std::size_t>(opts.r_min, opts.r_max / 2);
  try {
    const Localization loc = localize_cycle(seq, opts);
    return {{"center_row", loc.center_row}, {"center_col", loc.center_col}, {"radius", loc.radius},
            {"box", {loc.box.row, loc.box.col, loc.box.rows, loc.box.cols}}};
  } catch (const std::invalid_argument&) {
    return nullptr;
  }
}

int cmd_segment(const SegmentArgs& a) {
  std::vector<SegModel<float>> models;
  for (const auto& path : a.checkpoints) models.push_back(load_checkpoint(path));
  std::vector<CineSequence> inputs;
  if (fs::is_directory(a.in)) {
    inputs = read_cine_dir(a.in);
  } else {
    inputs.push_back(read_cine(a.in));
  }
  make_output_dir(a.out);
  json manifest = {
      {"checkpoints", a.checkpoints}, {"input", a.in}, {"files", json::array()}, {"localization", json::object()}};
  for (const CineSequence& seq : inputs) {
    std::vector<Mask> pred = ensemble_predict(models, seq, a.expected);
    CineSequence out = seq;
    if (a.overlays) {
      for (std::size_t t = 0; t < seq.frames.size(); ++t) {
        const std::string name = "subject" + std::to_string(seq.id.subject) + "_cycle" + std::to_string(seq.id.cycle) +
                                 "_frame" + std::to_string(t) + ".pgm";
        const Mask* manual = seq.masks ? &(*seq.masks)[t] : nullptr;
        write_overlay_pgm(fs::path(a.out) / name, seq.frames[t], manual, &pred[t]);
      }
    }
    out.masks = std::move(pred);
    const std::string name = cycle_stem(seq.id) + ".cine";
    write_cine(fs::path(a.out) / name, out);
    manifest["files"].push_back(name);
    manifest["localization"][name] = localization_json(seq);
  }
  write_json_file(fs::path(a.out) / "manifest.json", manifest);
  std::cout << "segmented " << inputs.size() << " cycle(s) with " << models.size() << " model(s)\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string pred;
  std::string truth;
  std::string out;
  std::string label = "model";
};

std::map<SliceKey, Mask> slices_of(const fs::path& dir, const char* role) {
  std::map<SliceKey, Mask> out;
  for (const CineSequence& seq : read_cine_dir(dir)) {
    if (!seq.masks) throw std::invalid_argument(std::string(role) + " cycle " + seq.id.str() + " carries no masks");
    for (std::size_t t = 0; t < seq.masks->size(); ++t) {
      if (!out.emplace(SliceKey{seq.id, static_cast<int>(t)}, (*seq.masks)[t]).second) {
        throw std::invalid_argument(std::string(role) + " has duplicate cycle " + seq.id.str());
      }
    }
  }
  return out;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const MetricsReport report = evaluate_dataset(slices_of(a.pred, "prediction"), slices_of(a.truth, "truth"));
  make_output_dir(a.out);
  const std::string table = format_table({{a.label, report}});
  std::ofstream(fs::path(a.out) / "report.txt") << table;
  std::ofstream records(fs::path(a.out) / "report.jsonl");
  write_report_records(records, a.label, report);
  std::cout << table;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ConvLSTM cine MRI myocardium segmentation"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "generate synthetic cine cycles with masks");
  phantom->add_option("--spec", pa.spec, "phantom spec (JSON); defaults when omitted");
  phantom->add_option("--out", pa.out, "output directory")->required();
  phantom->add_option("--subjects", pa.subjects, "number of subjects")->check(CLI::PositiveNumber);
  phantom->add_option("--cycles-per-subject", pa.cycles, "cycles per subject")->check(CLI::PositiveNumber);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train the ensemble of one variant for one fold");
  train->add_option("--config", ta.config, "run config (JSON)")->required();
  train->add_option("--fold", ta.fold, "held-out subject id")->required();
  train->add_option("--variant", ta.variant, "cnn | one-level | multi-level")->required();
  train->add_option("--out", ta.out, "output directory")->required();

  LooArgs la;
  auto* loo = app.add_subcommand("loo", "leave-one-subject-out experiment");
  loo->add_option("--config", la.config, "run config (JSON)")->required();
  loo->add_option("--out", la.out, "output directory")->required();
  loo->add_option("--jobs", la.jobs, "concurrent fold processes (overrides config)");

  SegmentArgs sa;
  auto* segment = app.add_subcommand("segment", "ensemble segmentation of cine cycles");
  segment->add_option("--checkpoints", sa.checkpoints, "ensemble member checkpoints")->required();
  segment->add_option("--in", sa.in, "input .cine file or directory")->required();
  segment->add_option("--out", sa.out, "output directory")->required();
  segment->add_option("--expected-members", sa.expected, "ensemble size that does not trigger a warning");
  segment->add_flag("!--no-overlays", sa.overlays, "skip overlay images");

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "slice-wise DSC, HD and APD against manual masks");
  evaluate->add_option("--pred", ea.pred, "directory of predicted .cine files")->required();
  evaluate->add_option("--truth", ea.truth, "directory of reference .cine files")->required();
  evaluate->add_option("--out", ea.out, "report directory")->required();
  evaluate->add_option("--label", ea.label, "column label in the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*phantom) return cmd_phantom(pa);
    if (*train) return cmd_train(ta);
    if (*loo) return cmd_loo(la);
    if (*segment) return cmd_segment(sa);
    if (*evaluate) return cmd_evaluate(ea);
  } catch (...) {
    const Failure f = classify_current_exception();
    std::cerr << "error: " << f.message << '\n';
    return f.exit_code;
  }
  return kExitInput;
}
