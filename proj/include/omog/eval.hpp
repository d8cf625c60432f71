#pragma once

#include "omog/bank.hpp"
#include "omog/fuse.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace omog {

enum class Task { kNodeClassification, kLinkPrediction };
enum class Ablation { kNone, kNoSgc, kNoScore, kNoSource };

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);

struct ExperimentPlan {
  std::vector<std::filesystem::path> dataset_dirs;  // >= 2 for leave-one-out
  Task task = Task::kNodeClassification;
  bool few_shot = false;
  std::int64_t shots = 5;
  std::int64_t k = 2;
  SelectStrategy strategy = SelectStrategy::kTopK;
  Ablation ablation = Ablation::kNone;
  std::vector<std::uint64_t> seeds = {0};
  TrainConfig train;
  double temperature = 1.0;
  std::int64_t sample_cap = 1024;
  // Link-prediction split knobs (positives removed before propagation).
  double lp_holdout_frac = 0.10;
  std::int64_t lp_neg_factor = 10;
  std::int64_t lp_neg_min = 1000;

  void validate() const;
};

ExperimentPlan load_plan(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);

// Exact-match fraction.
double accuracy(const std::vector<std::int32_t>& predictions,
                const std::vector<std::int32_t>& labels);

// Fraction of positives strictly above the K-th largest negative score.
double hits_at_k(const std::vector<double>& pos_scores,
                 const std::vector<double>& neg_scores, std::int64_t k = 100);

struct LpSplit {
  GraphDataset graph;  // original minus the held-out positive edges
  std::vector<std::pair<std::int32_t, std::int32_t>> positives;
  std::vector<std::pair<std::int32_t, std::int32_t>> negatives;
};

// Removes a seeded fraction of edges as LP positives and samples
// non-edge negatives (excluding every original edge), before propagation.
LpSplit make_lp_split(const GraphDataset& ds, double holdout_frac,
                      std::int64_t neg_factor, std::int64_t neg_min, std::uint64_t seed);

struct FoldResult {
  std::string held_out;
  std::uint64_t seed = 0;
  double metric = 0.0;
  std::vector<std::string> bank_names;  // entries actually available to the fold
  std::vector<double> scores;           // relevance per entry; empty when skipped
  FusionWeights weights;                // empty for the no-source ablation
};

struct MetricReport {
  std::string label;  // human-readable config descriptor
  Task task = Task::kNodeClassification;
  std::vector<FoldResult> folds;  // one per (held-out dataset, seed)
  double mean = 0.0;
};

// Trains any missing bank entries for the named datasets (entry name =
// dataset name, training seed = `seed`) into bank_dir, then returns the
// loaded entries in lexicographic order.
std::vector<BankEntry> ensure_bank(const std::filesystem::path& bank_dir,
                                   const std::vector<GraphDataset>& datasets,
                                   const TrainConfig& cfg, std::uint64_t seed);

// Leakage audit: refuses (std::logic_error) any fold bank that contains the
// held-out dataset itself.
void audit_fold_bank(const std::vector<BankEntry>& entries, const std::string& held_out);

// One evaluation of `test` against the given bank entries. The entries must
// not contain the test dataset; callers enforce the leave-one-out audit.
FoldResult run_fold(const std::vector<BankEntry>& entries, const GraphDataset& test,
                    const ExperimentPlan& plan, std::uint64_t seed);

// Full leave-one-out protocol: per seed, pretrain per-dataset entries under
// bank_root/seed-<s>/, then evaluate every dataset against the bank of all
// others. Throws if a held-out name ever shows up in its own fold's bank.
MetricReport leave_one_out(const ExperimentPlan& plan,
                           const std::filesystem::path& bank_root);

std::vector<MetricReport> sweep_k(const ExperimentPlan& plan,
                                  const std::filesystem::path& bank_root,
                                  const std::vector<std::int64_t>& ks);
std::vector<MetricReport> sweep_strategies(const ExperimentPlan& plan,
                                           const std::filesystem::path& bank_root,
                                           const std::vector<SelectStrategy>& strategies);

void write_report_json(const MetricReport& report, const std::filesystem::path& path);
void write_reports_csv(const std::vector<MetricReport>& reports,
                       const std::filesystem::path& path);

}  // namespace omog
