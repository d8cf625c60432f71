#include "omog/eval.hpp"

#include "omog/binio.hpp"
#include "omog/propagate.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace omog {

using nlohmann::json;

Ablation parse_ablation(const std::string& name) {
  if (name == "none") return Ablation::kNone;
  if (name == "no-sgc") return Ablation::kNoSgc;
  if (name == "no-score") return Ablation::kNoScore;
  if (name == "no-source") return Ablation::kNoSource;
  throw std::invalid_argument("unknown ablation '" + name +
                              "' (expected none|no-sgc|no-score|no-source)");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoSgc: return "no-sgc";
    case Ablation::kNoScore: return "no-score";
    case Ablation::kNoSource: return "no-source";
  }
  return "?";
}

void ExperimentPlan::validate() const {
  if (dataset_dirs.empty()) throw std::invalid_argument("plan: no datasets");
  if (few_shot && shots < 1) throw std::invalid_argument("plan: shots must be >= 1");
  if (k < 1) throw std::invalid_argument("plan: k must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("plan: no seeds");
  if (!(lp_holdout_frac > 0.0 && lp_holdout_frac < 1.0)) {
    throw std::invalid_argument("plan: lp_holdout_frac must be in (0, 1)");
  }
  if (lp_neg_factor < 1 || lp_neg_min < 1) {
    throw std::invalid_argument("plan: negative-sampling sizes must be >= 1");
  }
  train.validate();
}

namespace {

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.d_ff = j.value("d_ff", cfg.d_ff);
  cfg.d_h = j.value("d_h", cfg.d_h);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.mask_fraction = j.value("mask_fraction", cfg.mask_fraction);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path.string() + ": cannot open");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw io_error(path.string() + ": " + e.what());
  }
}

}  // namespace

TrainConfig load_train_config(const std::filesystem::path& path) {
  return train_config_from_json(read_json_file(path));
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  ExperimentPlan plan;
  try {
    for (const auto& d : j.at("datasets")) {
      plan.dataset_dirs.emplace_back(d.get<std::string>());
    }
    const std::string task = j.value("task", std::string("nc"));
    if (task == "nc") plan.task = Task::kNodeClassification;
    else if (task == "lp") plan.task = Task::kLinkPrediction;
    else throw std::invalid_argument("plan: unknown task '" + task + "'");
    const std::string mode = j.value("mode", std::string("zero-shot"));
    if (mode == "zero-shot") plan.few_shot = false;
    else if (mode == "few-shot") plan.few_shot = true;
    else throw std::invalid_argument("plan: unknown mode '" + mode + "'");
    plan.shots = j.value("shots", plan.shots);
    plan.k = j.value("k", plan.k);
    plan.strategy = parse_strategy(j.value("strategy", std::string("topk")));
    plan.ablation = parse_ablation(j.value("ablation", std::string("none")));
    if (j.contains("seeds")) {
      plan.seeds.clear();
      for (const auto& s : j.at("seeds")) plan.seeds.push_back(s.get<std::uint64_t>());
    }
    if (j.contains("train")) plan.train = train_config_from_json(j.at("train"));
    plan.temperature = j.value("temperature", plan.temperature);
    plan.sample_cap = j.value("sample_cap", plan.sample_cap);
    plan.lp_holdout_frac = j.value("lp_holdout_frac", plan.lp_holdout_frac);
    plan.lp_neg_factor = j.value("lp_neg_factor", plan.lp_neg_factor);
    plan.lp_neg_min = j.value("lp_neg_min", plan.lp_neg_min);
  } catch (const json::exception& e) {
    throw io_error(path.string() + ": " + e.what());
  }
  plan.validate();
  return plan;
}

double accuracy(const std::vector<std::int32_t>& predictions,
                const std::vector<std::int32_t>& labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("accuracy: " + std::to_string(predictions.size()) +
                                " predictions vs " + std::to_string(labels.size()) +
                                " labels");
  }
  if (predictions.empty()) throw std::invalid_argument("accuracy: empty inputs");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

double hits_at_k(const std::vector<double>& pos_scores,
                 const std::vector<double>& neg_scores, std::int64_t k) {
  if (k < 1) throw std::invalid_argument("hits_at_k: k must be >= 1");
  if (static_cast<std::int64_t>(neg_scores.size()) < k) {
    throw std::invalid_argument("hits_at_k: need at least " + std::to_string(k) +
                                " negative scores, have " +
                                std::to_string(neg_scores.size()));
  }
  if (pos_scores.empty()) throw std::invalid_argument("hits_at_k: no positive scores");
  std::vector<double> neg = neg_scores;
  std::nth_element(neg.begin(), neg.begin() + (k - 1), neg.end(), std::greater<>());
  const double threshold = neg[static_cast<std::size_t>(k - 1)];
  std::size_t hit = 0;
  for (double s : pos_scores) {
    if (s > threshold) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(pos_scores.size());
}

LpSplit make_lp_split(const GraphDataset& ds, double holdout_frac,
                      std::int64_t neg_factor, std::int64_t neg_min, std::uint64_t seed) {
  if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) {
    throw std::invalid_argument("make_lp_split: holdout_frac must be in (0, 1)");
  }
  const std::size_t m = ds.edges.size();
  if (m == 0) throw std::invalid_argument("make_lp_split: graph has no edges");
  std::size_t n_pos = static_cast<std::size_t>(holdout_frac * static_cast<double>(m));
  n_pos = std::max<std::size_t>(n_pos, 1);

  Rng rng(derive_seed(seed, 0));
  std::vector<std::size_t> picked = rng.sample_without_replacement(m, n_pos);
  std::vector<char> removed(m, 0);
  for (std::size_t i : picked) removed[i] = 1;

  LpSplit split;
  split.graph = ds;
  split.graph.edges.clear();
  for (std::size_t i = 0; i < m; ++i) {
    if (removed[i]) split.positives.push_back(ds.edges[i]);
    else split.graph.edges.push_back(ds.edges[i]);
  }
  split.graph.adjacency = build_csr(ds.n, split.graph.edges);

  // Negatives avoid every edge of the *original* graph, including the
  // removed positives.
  std::set<std::int64_t> taken;
  for (const auto& [u, v] : ds.edges) {
    taken.insert(static_cast<std::int64_t>(u) * ds.n + v);
  }
  std::int64_t want = std::max<std::int64_t>(neg_min,
                                             neg_factor * static_cast<std::int64_t>(n_pos));
  const std::int64_t possible =
      ds.n * (ds.n - 1) / 2 - static_cast<std::int64_t>(ds.edges.size());
  want = std::min(want, possible);
  if (want < 1) throw std::invalid_argument("make_lp_split: graph too dense for negatives");

  Rng neg_rng(derive_seed(seed, 1));
  while (static_cast<std::int64_t>(split.negatives.size()) < want) {
    std::int32_t u = static_cast<std::int32_t>(neg_rng.index(static_cast<std::size_t>(ds.n)));
    std::int32_t v = static_cast<std::int32_t>(neg_rng.index(static_cast<std::size_t>(ds.n)));
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    const std::int64_t key = static_cast<std::int64_t>(u) * ds.n + v;
    if (taken.insert(key).second) split.negatives.emplace_back(u, v);
  }
  return split;
}

std::vector<BankEntry> ensure_bank(const std::filesystem::path& bank_dir,
                                   const std::vector<GraphDataset>& datasets,
                                   const TrainConfig& cfg, std::uint64_t seed) {
  ModelBank bank(bank_dir, /*create_if_missing=*/true);
  for (const GraphDataset& ds : datasets) {
    if (bank.contains(ds.name)) continue;
    TrainConfig entry_cfg = cfg;
    entry_cfg.seed = seed;
    bank.add(train_entry(ds.name, ds, entry_cfg));
  }
  return bank.load_all();
}

namespace {

HopStack test_stack(const GraphDataset& ds, const ExperimentPlan& plan) {
  if (plan.ablation == Ablation::kNoSgc) {
    return replicate_stack(ds.features, plan.train.alpha);
  }
  return sgc_propagate(normalized_adjacency(ds), ds.features, plan.train.alpha);
}

// Pooled raw hop stack, used when the source model is ablated away.
MatF raw_pooled(const HopStack& stack) {
  MatF out(stack.n, stack.dim);
  for (std::int64_t i = 0; i < stack.n; ++i) {
    out.row(i) = stack.node(i).colwise().mean();
  }
  return out;
}

std::map<std::int64_t, std::vector<std::int64_t>> build_support(
    const GraphDataset& ds, std::int64_t shots, std::uint64_t seed) {
  if (!ds.splits.support.empty()) return ds.splits.support;
  std::map<std::int64_t, std::vector<std::int64_t>> by_class;
  for (std::int64_t i = 0; i < ds.n; ++i) {
    if (!ds.labels.empty() && ds.labels[static_cast<std::size_t>(i)] >= 0) {
      by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);
    }
  }
  Rng rng(derive_seed(seed, 22));
  std::map<std::int64_t, std::vector<std::int64_t>> support;
  for (auto& [cls, ids] : by_class) {
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(shots), ids.size());
    std::vector<std::size_t> pick = rng.sample_without_replacement(ids.size(), take);
    std::sort(pick.begin(), pick.end());
    for (std::size_t p : pick) support[cls].push_back(ids[p]);
  }
  return support;
}

std::vector<std::int64_t> eval_nodes_for(const GraphDataset& ds) {
  if (!ds.splits.test.empty()) return ds.splits.test;
  std::vector<std::int64_t> ids;
  for (std::int64_t i = 0; i < ds.n; ++i) {
    if (!ds.labels.empty() && ds.labels[static_cast<std::size_t>(i)] >= 0) ids.push_back(i);
  }
  return ids;
}

}  // namespace

void audit_fold_bank(const std::vector<BankEntry>& entries, const std::string& held_out) {
  for (const BankEntry& e : entries) {
    if (e.meta.name == held_out) {
      throw std::logic_error("leave-one-out audit: held-out dataset '" + held_out +
                             "' is present in its own fold bank");
    }
  }
}

FoldResult run_fold(const std::vector<BankEntry>& entries, const GraphDataset& test,
                    const ExperimentPlan& plan, std::uint64_t seed) {
  FoldResult fr;
  fr.held_out = test.name;
  fr.seed = seed;
  for (const BankEntry& e : entries) fr.bank_names.push_back(e.meta.name);

  const GraphDataset* working = &test;
  LpSplit split;
  if (plan.task == Task::kLinkPrediction) {
    split = make_lp_split(test, plan.lp_holdout_frac, plan.lp_neg_factor, plan.lp_neg_min,
                          derive_seed(seed, 21));
    working = &split.graph;
  }
  const HopStack stack = test_stack(*working, plan);

  MatF emb;
  if (plan.ablation == Ablation::kNoSource) {
    emb = raw_pooled(stack);
  } else {
    if (entries.empty()) throw std::invalid_argument("run_fold: empty bank");
    FuseConfig fc;
    fc.strategy = plan.strategy;
    fc.k = plan.k;
    fc.temperature = plan.temperature;
    fc.sample_cap = plan.sample_cap;
    fc.seed = seed;
    if (plan.ablation == Ablation::kNoScore) {
      fr.weights.indices.resize(entries.size());
      std::iota(fr.weights.indices.begin(), fr.weights.indices.end(), 0);
      fr.weights.weights.assign(entries.size(), 1.0 / static_cast<double>(entries.size()));
    } else {
      fr.scores = relevance_scores(entries, stack, fc);
      fr.weights = select_and_weight(fr.scores, fc);
    }
    const SourceParams fused = fuse_models(entries, fr.weights);
    emb = encode_nodes(fused, stack);
  }

  if (plan.task == Task::kLinkPrediction) {
    const std::vector<double> pos = predict_lp(emb, split.positives);
    const std::vector<double> neg = predict_lp(emb, split.negatives);
    fr.metric = hits_at_k(pos, neg, 100);
    return fr;
  }

  if (!test.has_labels() || !test.has_label_embeddings()) {
    throw std::invalid_argument("run_fold: node classification needs labels and "
                                "label embeddings on dataset '" + test.name + "'");
  }
  if (plan.few_shot) {
    const auto support = build_support(test, plan.shots, seed);
    std::set<std::int64_t> in_support;
    for (const auto& [cls, ids] : support) in_support.insert(ids.begin(), ids.end());
    std::vector<std::int64_t> eval_ids;
    for (std::int64_t id : eval_nodes_for(test)) {
      if (!in_support.count(id)) eval_ids.push_back(id);
    }
    if (eval_ids.empty()) throw std::invalid_argument("run_fold: no evaluation nodes left");
    const std::vector<std::int32_t> pred =
        predict_nc_fewshot(emb, test.label_embeddings, support, &eval_ids);
    std::vector<std::int32_t> truth;
    truth.reserve(eval_ids.size());
    for (std::int64_t id : eval_ids) truth.push_back(test.labels[static_cast<std::size_t>(id)]);
    fr.metric = accuracy(pred, truth);
  } else {
    const std::vector<std::int64_t> eval_ids = eval_nodes_for(test);
    if (eval_ids.empty()) throw std::invalid_argument("run_fold: no labeled nodes");
    const std::vector<std::int32_t> all_pred = predict_nc_zero(emb, test.label_embeddings);
    std::vector<std::int32_t> pred, truth;
    pred.reserve(eval_ids.size());
    truth.reserve(eval_ids.size());
    for (std::int64_t id : eval_ids) {
      pred.push_back(all_pred[static_cast<std::size_t>(id)]);
      truth.push_back(test.labels[static_cast<std::size_t>(id)]);
    }
    fr.metric = accuracy(pred, truth);
  }
  return fr;
}

namespace {

std::string plan_label(const ExperimentPlan& plan) {
  std::ostringstream out;
  out << (plan.task == Task::kLinkPrediction ? "lp" : "nc");
  out << (plan.few_shot ? "/few-shot" : "/zero-shot");
  out << "/" << strategy_name(plan.strategy) << "/k=" << plan.k;
  if (plan.ablation != Ablation::kNone) out << "/" << ablation_name(plan.ablation);
  return out.str();
}

}  // namespace

MetricReport leave_one_out(const ExperimentPlan& plan,
                           const std::filesystem::path& bank_root) {
  plan.validate();
  if (plan.dataset_dirs.size() < 2) {
    throw std::invalid_argument("leave_one_out: need at least 2 datasets");
  }
  std::vector<GraphDataset> datasets;
  datasets.reserve(plan.dataset_dirs.size());
  for (const auto& dir : plan.dataset_dirs) datasets.push_back(load_dataset(dir));
  {
    std::set<std::string> names;
    for (const GraphDataset& ds : datasets) {
      if (!names.insert(ds.name).second) {
        throw std::invalid_argument("leave_one_out: duplicate dataset name '" + ds.name +
                                    "'");
      }
    }
  }

  MetricReport rep;
  rep.label = plan_label(plan);
  rep.task = plan.task;
  for (std::uint64_t seed : plan.seeds) {
    const std::filesystem::path bank_dir = bank_root / ("seed-" + std::to_string(seed));
    const std::vector<BankEntry> all = ensure_bank(bank_dir, datasets, plan.train, seed);
    for (const GraphDataset& test : datasets) {
      std::vector<BankEntry> fold_entries;
      for (const BankEntry& e : all) {
        if (e.meta.name != test.name) fold_entries.push_back(e);
      }
      audit_fold_bank(fold_entries, test.name);
      rep.folds.push_back(run_fold(fold_entries, test, plan, seed));
    }
  }
  double sum = 0.0;
  for (const FoldResult& fr : rep.folds) sum += fr.metric;
  rep.mean = rep.folds.empty() ? 0.0 : sum / static_cast<double>(rep.folds.size());
  return rep;
}

std::vector<MetricReport> sweep_k(const ExperimentPlan& plan,
                                  const std::filesystem::path& bank_root,
                                  const std::vector<std::int64_t>& ks) {
  std::vector<MetricReport> out;
  for (std::int64_t k : ks) {
    ExperimentPlan p = plan;
    p.k = k;
    out.push_back(leave_one_out(p, bank_root));
  }
  return out;
}

std::vector<MetricReport> sweep_strategies(const ExperimentPlan& plan,
                                           const std::filesystem::path& bank_root,
                                           const std::vector<SelectStrategy>& strategies) {
  std::vector<MetricReport> out;
  for (SelectStrategy s : strategies) {
    ExperimentPlan p = plan;
    p.strategy = s;
    out.push_back(leave_one_out(p, bank_root));
  }
  return out;
}

void write_report_json(const MetricReport& report, const std::filesystem::path& path) {
  json folds = json::array();
  for (const FoldResult& fr : report.folds) {
    json f{{"held_out", fr.held_out},
           {"seed", fr.seed},
           {"metric", fr.metric},
           {"bank", fr.bank_names}};
    if (!fr.scores.empty()) f["scores"] = fr.scores;
    if (!fr.weights.indices.empty()) {
      f["picked"] = fr.weights.indices;
      f["weights"] = fr.weights.weights;
    }
    folds.push_back(std::move(f));
  }
  const json j{{"label", report.label},
               {"task", report.task == Task::kLinkPrediction ? "lp" : "nc"},
               {"mean", report.mean},
               {"folds", std::move(folds)}};
  std::ofstream out(path);
  if (!out) throw io_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << "\n";
  if (!out) throw io_error(path.string() + ": write failed");
}

void write_reports_csv(const std::vector<MetricReport>& reports,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error(path.string() + ": cannot open for writing");
  out << "label,held_out,seed,metric,report_mean\n";
  for (const MetricReport& rep : reports) {
    for (const FoldResult& fr : rep.folds) {
      out << rep.label << "," << fr.held_out << "," << fr.seed << "," << fr.metric << ","
          << rep.mean << "\n";
    }
  }
  if (!out) throw io_error(path.string() + ": write failed");
}

}  // namespace omog
