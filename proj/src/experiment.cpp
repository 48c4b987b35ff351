#include "cinelstm/experiment.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <mutex>

#include "cinelstm/checkpoint.hpp"
#include "cinelstm/errors.hpp"
#include "cinelstm/log.hpp"
#include "cinelstm/random.hpp"

namespace cinelstm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json id_json(const SequenceId& id) { return {id.subject, id.scan, id.location, id.cycle}; }

json summary_json(const MetricSummary& s) { return {{"mean", s.mean}, {"std", s.stddev}, {"count", s.count}}; }

MetricSummary summary_from_json(const json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("count").get<std::size_t>()};
}

json report_summary_json(const MetricsReport& r) {
  return {{"dsc", summary_json(r.dsc)},
          {"hd_mm", summary_json(r.hd_mm)},
          {"apd_mm", summary_json(r.apd_mm)},
          {"excluded", r.excluded}};
}

MetricsReport report_from_summary(const json& j) {
  MetricsReport r;
  r.dsc = summary_from_json(j.at("dsc"));
  r.hd_mm = summary_from_json(j.at("hd_mm"));
  r.apd_mm = summary_from_json(j.at("apd_mm"));
  r.excluded = j.at("excluded").get<std::size_t>();
  return r;
}

fs::path fold_dir(const fs::path& out, int subject) { return out / ("fold_" + std::to_string(subject)); }

}  // namespace

std::uint64_t member_seed(std::uint64_t root, int subject, std::size_t k) {
  return substream_seed(root, "fold/" + std::to_string(subject) + "/member") + k;
}

std::vector<MemberSet> train_fold_ensembles(const RunConfig& cfg, const std::vector<Variant>& variants,
                                            const FoldSpec& fold, const Dataset& data, const fs::path& out_dir) {
  std::ofstream log_file;
  std::mutex log_mutex;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log_file.open(out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log_file) throw std::invalid_argument("cannot write training log in " + out_dir.string());
  }

  std::vector<MemberSet> sets;
  for (Variant v : variants) sets.push_back({v, {}});

  for (std::size_t k = 0; k < cfg.ensemble_size; ++k) {
    TrainConfig tc = cfg.train;
    tc.seed = member_seed(cfg.seed, fold.test_subject, k);
    LogSink sink;
    if (log_file.is_open()) {
      sink = [&, k](const TrainLogRecord& r) {
        std::lock_guard<std::mutex> lock(log_mutex);
        log_file << json{{"member", k},      {"stage", r.stage}, {"epoch", r.epoch},
                         {"split", r.split}, {"loss", r.loss},   {"timestamp", r.timestamp}}
                        .dump()
                 << '\n'
                 << std::flush;
      };
    }
    tc.variant = Variant::CnnOnly;
    const TrainResult base = train_model(tc, fold, data, sink);
    for (MemberSet& set : sets) {
      if (set.variant == Variant::CnnOnly) {
        set.members.push_back(base.model);
      } else {
        tc.variant = set.variant;
        set.members.push_back(train_model(tc, fold, data, sink, &base.pretrained).model);
      }
      if (!out_dir.empty()) {
        const fs::path dir = out_dir / to_string(set.variant);
        fs::create_directories(dir);
        save_checkpoint(set.members.back(), dir / ("member_" + std::to_string(k) + ".segm"));
      }
    }
  }
  return sets;
}

VariantEvaluation evaluate_ensemble(const MemberSet& set, const std::vector<SequenceId>& cycles, const Dataset& data,
                                    std::size_t expected_members) {
  VariantEvaluation out;
  out.variant = set.variant;
  std::map<SliceKey, Mask> truths;
  for (const SequenceId& id : cycles) {
    auto it = data.find(id);
    if (it == data.end()) throw std::invalid_argument("test cycle " + id.str() + " is not in the dataset");
    const CineSequence& seq = it->second;
    if (!seq.masks) throw std::invalid_argument("test cycle " + id.str() + " has no masks");
    std::vector<Mask> pred = ensemble_predict(set.members, seq, expected_members);
    for (std::size_t t = 0; t < pred.size(); ++t) {
      const SliceKey key{id, static_cast<int>(t)};
      out.predictions.emplace(key, std::move(pred[t]));
      truths.emplace(key, (*seq.masks)[t]);
    }
  }
  out.report = evaluate_dataset(out.predictions, truths);
  return out;
}

std::vector<VariantEvaluation> run_fold(const RunConfig& cfg, const FoldSpec& fold, const Dataset& data,
                                        const fs::path& out_dir) {
  const std::vector<MemberSet> sets = train_fold_ensembles(cfg, cfg.variants, fold, data, out_dir);
  std::vector<VariantEvaluation> evals;
  json summary = {{"test_subject", fold.test_subject}, {"variants", json::object()}};
  std::ofstream records(out_dir / "report.jsonl", std::ios::trunc);
  for (const MemberSet& set : sets) {
    VariantEvaluation ev = evaluate_ensemble(set, fold.test_cycles, data, cfg.ensemble_size);
    const std::string name = to_string(set.variant);
    write_report_records(records, name, ev.report);
    summary["variants"][name] = report_summary_json(ev.report);

    const fs::path pred_dir = out_dir / name / "pred";
    fs::create_directories(pred_dir);
    for (const SequenceId& id : fold.test_cycles) {
      CineSequence pred = data.at(id);
      for (std::size_t t = 0; t < pred.frames.size(); ++t) {
        (*pred.masks)[t] = ev.predictions.at(SliceKey{id, static_cast<int>(t)});
      }
      write_cine(pred_dir / ("s" + std::to_string(id.subject) + "_c" + std::to_string(id.cycle) + ".cine"), pred);
    }
    evals.push_back(std::move(ev));
  }
  {
    std::vector<std::pair<std::string, MetricsReport>> cols;
    for (const auto& ev : evals) cols.emplace_back(to_string(ev.variant), ev.report);
    std::ofstream table(out_dir / "report.txt", std::ios::trunc);
    table << format_table(cols);
  }
  // Written last: its presence marks the fold as complete.
  write_json_file(out_dir / "summary.json", summary);
  return evals;
}

json fold_manifest(const RunConfig& cfg, const std::vector<FoldSpec>& folds) {
  json j = {{"seed", cfg.seed}, {"ensemble_size", cfg.ensemble_size}, {"folds", json::array()}};
  for (Variant v : cfg.variants) j["variants"].push_back(to_string(v));
  for (const FoldSpec& f : folds) {
    json fold = {{"test_subject", f.test_subject}};
    for (const auto& [key, list] : {std::pair{"test", &f.test_cycles}, std::pair{"train", &f.train_cycles},
                                    std::pair{"val", &f.val_cycles}}) {
      fold[key] = json::array();
      for (const SequenceId& id : *list) fold[key].push_back(id_json(id));
    }
    fold["member_seeds"] = json::array();
    for (std::size_t k = 0; k < cfg.ensemble_size; ++k) {
      fold["member_seeds"].push_back(member_seed(cfg.seed, f.test_subject, k));
    }
    j["folds"].push_back(std::move(fold));
  }
  return j;
}

MetricsReport combine_fold_summaries(const std::vector<MetricsReport>& per_fold) {
  MetricsReport out;
  if (per_fold.empty()) return out;
  auto combine = [&](MetricSummary MetricsReport::*field) {
    MetricSummary s;
    std::size_t used = 0;
    for (const MetricsReport& r : per_fold) {
      s.count += (r.*field).count;
      if ((r.*field).count == 0) continue;
      s.mean += (r.*field).mean;
      s.stddev += (r.*field).stddev;
      ++used;
    }
    if (used > 0) {
      s.mean /= static_cast<double>(used);
      s.stddev /= static_cast<double>(used);
    }
    out.*field = s;
  };
  combine(&MetricsReport::dsc);
  combine(&MetricsReport::hd_mm);
  combine(&MetricsReport::apd_mm);
  for (const MetricsReport& r : per_fold) out.excluded += r.excluded;
  return out;
}

int run_loo(const RunConfig& cfg, const Dataset& data, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_json_file(out_dir / "config.resolved.json", to_json(cfg));
  const std::vector<FoldSpec> folds = loo_split(cycles_by_subject(data), cfg.seed);
  write_json_file(out_dir / "manifest.json", fold_manifest(cfg, folds));

  auto run_one = [&](const FoldSpec& f) -> int {
    try {
      run_fold(cfg, f, data, fold_dir(out_dir, f.test_subject));
      return kExitOk;
    } catch (...) {
      const Failure fail = classify_current_exception();
      std::cerr << "fold " << f.test_subject << " failed: " << fail.message << '\n';
      return fail.exit_code;
    }
  };

  std::map<int, int> codes;
  if (cfg.jobs <= 1) {
    for (const FoldSpec& f : folds) codes[f.test_subject] = run_one(f);
  } else {
    std::map<pid_t, int> running;
    auto reap = [&] {
      int status = 0;
      const pid_t pid = waitpid(-1, &status, 0);
      if (pid <= 0) return;
      const int subject = running.at(pid);
      running.erase(pid);
      codes[subject] = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
    };
    for (const FoldSpec& f : folds) {
      while (running.size() >= cfg.jobs) reap();
      std::cout.flush();
      std::cerr.flush();
      const pid_t pid = fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        const int code = run_one(f);
        std::cout.flush();
        std::cerr.flush();
        _exit(code);
      }
      running[pid] = f.test_subject;
    }
    while (!running.empty()) reap();
  }

  std::map<std::string, std::vector<MetricsReport>> by_variant;
  int first_failure = kExitOk;
  json combined = {{"folds", json::object()}, {"variants", json::object()}};
  for (const FoldSpec& f : folds) {
    const int code = codes.at(f.test_subject);
    combined["folds"][std::to_string(f.test_subject)] = code == kExitOk ? "ok" : "failed";
    if (code != kExitOk) {
      if (first_failure == kExitOk) first_failure = code;
      continue;
    }
    std::ifstream is(fold_dir(out_dir, f.test_subject) / "summary.json");
    const json summary = json::parse(is);
    for (const auto& [name, s] : summary.at("variants").items()) by_variant[name].push_back(report_from_summary(s));
  }
  std::vector<std::pair<std::string, MetricsReport>> cols;
  for (Variant v : cfg.variants) {
    auto it = by_variant.find(to_string(v));
    if (it == by_variant.end()) continue;
    MetricsReport r = combine_fold_summaries(it->second);
    combined["variants"][it->first] = report_summary_json(r);
    combined["variants"][it->first]["folds"] = it->second.size();
    cols.emplace_back(it->first, std::move(r));
  }
  write_json_file(out_dir / "report.json", combined);
  std::ofstream table(out_dir / "report.txt", std::ios::trunc);
  table << format_table(cols);
  return first_failure;
}

}  // namespace cinelstm
