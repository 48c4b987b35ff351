#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cinelstm/config.hpp"
#include "cinelstm/metrics.hpp"
#include "cinelstm/training.hpp"

namespace cinelstm {

struct MemberSet {
  Variant variant = Variant::CnnOnly;
  std::vector<SegModel<float>> members;
};

// Stage-A seed of ensemble member k in the fold that holds out `subject`.
std::uint64_t member_seed(std::uint64_t root, int subject, std::size_t k);

// Trains cfg.ensemble_size members of each variant in `variants`. Member k
// of every temporal variant starts from member k's CNN-only model. When
// out_dir is non-empty, checkpoints go to out_dir/<variant>/member_<k>.segm
// and the training log to out_dir/train_log.jsonl.
std::vector<MemberSet> train_fold_ensembles(const RunConfig& cfg, const std::vector<Variant>& variants,
                                            const FoldSpec& fold, const Dataset& data,
                                            const std::filesystem::path& out_dir);

struct VariantEvaluation {
  Variant variant = Variant::CnnOnly;
  MetricsReport report;
  std::map<SliceKey, Mask> predictions;
};

VariantEvaluation evaluate_ensemble(const MemberSet& set, const std::vector<SequenceId>& cycles, const Dataset& data,
                                    std::size_t expected_members);

// Trains, predicts and evaluates one fold, writing everything under out_dir.
std::vector<VariantEvaluation> run_fold(const RunConfig& cfg, const FoldSpec& fold, const Dataset& data,
                                        const std::filesystem::path& out_dir);

nlohmann::json fold_manifest(const RunConfig& cfg, const std::vector<FoldSpec>& folds);

// Table cell per variant: mean over folds of the per-fold mean and of the
// per-fold standard deviation; counts are summed.
MetricsReport combine_fold_summaries(const std::vector<MetricsReport>& per_fold);

// Full leave-one-out run. Returns the process exit code: 0 when every fold
// succeeded, otherwise the first failing fold's code. Completed folds and a
// combined report over them are kept either way.
int run_loo(const RunConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir);

}  // namespace cinelstm
