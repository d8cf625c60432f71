// Command-line front end: dataset generation, pretraining into a bank,
// bank maintenance, fused inference, evaluation protocols and the
// theory self-checks.

#include "omog/bank.hpp"
#include "omog/binio.hpp"
#include "omog/eval.hpp"
#include "omog/fuse.hpp"
#include "omog/propagate.hpp"
#include "omog/theory.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

namespace {

using nlohmann::json;

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("OMOG_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string("OMOG_SEED is not an integer: '") + v + "'");
  }
}

omog::HopStack stack_with_cache(const omog::GraphDataset& ds, std::int64_t alpha,
                                const std::string& cache_path) {
  namespace fs = std::filesystem;
  if (!cache_path.empty() && fs::exists(cache_path)) {
    omog::HopStack stack = omog::load_hop_stack(cache_path);
    if (stack.n != ds.n || stack.dim != ds.d || stack.hops != alpha + 1) {
      throw omog::io_error(cache_path + ": cached hop stack does not match dataset '" +
                           ds.name + "' at alpha " + std::to_string(alpha));
    }
    return stack;
  }
  omog::HopStack stack =
      omog::sgc_propagate(omog::normalized_adjacency(ds), ds.features, alpha);
  if (!cache_path.empty()) omog::save_hop_stack(stack, cache_path);
  return stack;
}

void write_epoch_log(const std::filesystem::path& path,
                     const std::vector<omog::EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw omog::io_error(path.string() + ": cannot open for writing");
  for (const omog::EpochLog& e : log) {
    out << json{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"wall_ms", e.wall_ms}}
               .dump()
        << "\n";
  }
}

std::ostream& open_out(std::ofstream& file, const std::string& path) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw omog::io_error(path + ": cannot open for writing");
  return file;
}

int cmd_gen_synth(const std::string& out_dir, std::uint64_t seed, std::int64_t n,
                  std::int64_t communities, std::int64_t classes, std::int64_t d,
                  double intra, double inter, double noise, std::string name) {
  omog::SyntheticDomainSpec spec;
  spec.seed = seed;
  spec.n = n;
  spec.communities = communities;
  spec.num_classes = classes;
  spec.intra_prob = intra;
  spec.inter_prob = inter;
  spec.feature_noise = noise;
  if (name.empty()) name = "synth-" + std::to_string(seed);
  spec.name = name;
  spec.class_centers.resize(classes, d);
  omog::Rng rng(omog::derive_seed(seed, 2));
  for (std::int64_t c = 0; c < classes; ++c) {
    for (std::int64_t j = 0; j < d; ++j) {
      spec.class_centers(c, j) = static_cast<float>(rng.normal(0.0, 1.0));
    }
  }
  const omog::GraphDataset ds = omog::generate_synthetic_domain(spec);
  omog::save_dataset(ds, out_dir);
  std::cout << "wrote " << ds.name << ": n=" << ds.n << " d=" << ds.d
            << " edges=" << ds.edges.size() << " classes=" << ds.num_classes << "\n";
  return 0;
}

int cmd_pretrain(const std::string& dataset_dir, const std::string& bank_dir,
                 const std::string& config_path, std::string entry_name,
                 const std::string& cache_hops, bool overwrite) {
  omog::TrainConfig cfg;
  if (!config_path.empty()) cfg = omog::load_train_config(config_path);
  if (auto s = env_seed()) cfg.seed = *s;

  const omog::GraphDataset ds = omog::load_dataset(dataset_dir);
  if (entry_name.empty()) entry_name = ds.name;
  const omog::HopStack stack = stack_with_cache(ds, cfg.alpha, cache_hops);

  std::vector<omog::EpochLog> source_log, scoring_log;
  const omog::BankEntry entry =
      omog::train_entry(entry_name, ds, cfg, &source_log, &scoring_log, &stack);

  omog::ModelBank bank(bank_dir, /*create_if_missing=*/true);
  bank.add(entry, overwrite);
  write_epoch_log(bank.dir() / entry_name / "train_log.jsonl", source_log);
  write_epoch_log(bank.dir() / entry_name / "scoring_log.jsonl", scoring_log);

  std::cout << "added '" << entry_name << "' to " << bank_dir << " (d=" << entry.meta.d
            << ", alpha=" << entry.meta.alpha << ", epochs=" << cfg.epochs << ")\n";
  if (!source_log.empty()) {
    std::cout << "contrastive loss: first epoch " << source_log.front().mean_loss
              << ", last epoch " << source_log.back().mean_loss << "\n";
  }
  return 0;
}

int cmd_bank_list(const std::string& bank_dir) {
  omog::ModelBank bank(bank_dir);
  for (const std::string& name : bank.list()) {
    const omog::BankEntry e = bank.load(name);
    std::cout << name << "  d=" << e.meta.d << " alpha=" << e.meta.alpha
              << " d_ff=" << e.meta.d_ff << " d_h=" << e.meta.d_h
              << " seed=" << e.meta.seed << "\n";
  }
  return 0;
}

int cmd_bank_add(const std::string& bank_dir, const std::string& entry_dir) {
  namespace fs = std::filesystem;
  const fs::path src(entry_dir);
  const std::string name = src.filename().string();
  omog::ModelBank source_view(src.parent_path());
  const omog::BankEntry entry = source_view.load(name);
  omog::ModelBank bank(bank_dir, /*create_if_missing=*/true);
  bank.add(entry);
  std::cout << "imported '" << name << "' into " << bank_dir << "\n";
  return 0;
}

int cmd_bank_verify(const std::string& bank_dir) {
  omog::ModelBank bank(bank_dir);
  const std::vector<omog::BankProblem> problems = bank.verify();
  const std::vector<std::string> names = bank.list();
  if (problems.empty()) {
    std::cout << "ok: " << names.size() << " entr" << (names.size() == 1 ? "y" : "ies")
              << " verified\n";
    return 0;
  }
  for (const omog::BankProblem& p : problems) {
    std::cerr << p.entry << ": " << p.detail << "\n";
  }
  return 1;
}

struct InferOpts {
  std::string bank_dir, dataset_dir, out_path, cache_hops;
  std::int64_t k = 2;
  std::string strategy = "topk";
  double temperature = 1.0;
  std::int64_t sample_cap = 1024;
  std::int64_t few_shot = 0;  // 0 = zero-shot
  std::uint64_t seed = 0;
};

omog::FusionOutcome fuse_from_opts(const InferOpts& opts, const omog::HopStack& stack,
                                   std::vector<omog::BankEntry>& entries) {
  omog::ModelBank bank(opts.bank_dir);
  entries = bank.load_all();
  omog::FuseConfig fc;
  fc.strategy = omog::parse_strategy(opts.strategy);
  fc.k = opts.k;
  fc.temperature = opts.temperature;
  fc.sample_cap = opts.sample_cap;
  fc.seed = opts.seed;
  return omog::fuse_for_test(entries, stack, fc);
}

void print_fusion_summary(const omog::FusionOutcome& outcome) {
  std::cerr << "relevance:";
  for (std::size_t i = 0; i < outcome.names.size(); ++i) {
    std::cerr << " " << outcome.names[i] << "=" << outcome.scores[i];
  }
  std::cerr << "\nfused:";
  for (std::size_t j = 0; j < outcome.weights.indices.size(); ++j) {
    std::cerr << " " << outcome.names[outcome.weights.indices[j]] << "*"
              << outcome.weights.weights[j];
  }
  std::cerr << "\n";
}

int cmd_infer_nc(const InferOpts& opts) {
  const omog::GraphDataset ds = omog::load_dataset(opts.dataset_dir);
  if (!ds.has_label_embeddings()) {
    throw std::invalid_argument("dataset '" + ds.name + "' has no label embeddings");
  }
  omog::ModelBank bank(opts.bank_dir);
  const std::vector<std::string> names = bank.list();
  if (names.empty()) throw std::invalid_argument("bank is empty: " + opts.bank_dir);
  const std::int64_t alpha = bank.load(names.front()).meta.alpha;
  const omog::HopStack stack = stack_with_cache(ds, alpha, opts.cache_hops);

  std::vector<omog::BankEntry> entries;
  const omog::FusionOutcome outcome = fuse_from_opts(opts, stack, entries);
  print_fusion_summary(outcome);
  const omog::MatF emb = omog::encode_nodes(outcome.fused, stack);

  std::vector<std::int32_t> pred;
  if (opts.few_shot > 0) {
    if (!ds.has_labels()) {
      throw std::invalid_argument("few-shot inference needs labels for the support set");
    }
    std::map<std::int64_t, std::vector<std::int64_t>> support = ds.splits.support;
    if (support.empty()) {
      std::map<std::int64_t, std::vector<std::int64_t>> by_class;
      for (std::int64_t i = 0; i < ds.n; ++i) {
        if (ds.labels[static_cast<std::size_t>(i)] >= 0) {
          by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);
        }
      }
      omog::Rng rng(omog::derive_seed(opts.seed, 22));
      for (auto& [cls, ids] : by_class) {
        const std::size_t take = std::min<std::size_t>(
            static_cast<std::size_t>(opts.few_shot), ids.size());
        std::vector<std::size_t> pick = rng.sample_without_replacement(ids.size(), take);
        std::sort(pick.begin(), pick.end());
        for (std::size_t p : pick) support[cls].push_back(ids[p]);
      }
    }
    pred = omog::predict_nc_fewshot(emb, ds.label_embeddings, support);
  } else {
    pred = omog::predict_nc_zero(emb, ds.label_embeddings);
  }

  std::ofstream file;
  std::ostream& out = open_out(file, opts.out_path);
  for (std::int64_t i = 0; i < ds.n; ++i) {
    json rec{{"node", i}, {"prediction", pred[static_cast<std::size_t>(i)]}};
    out << rec.dump() << "\n";
  }
  return 0;
}

int cmd_infer_lp(const InferOpts& opts, const std::string& pairs_path) {
  const omog::GraphDataset ds = omog::load_dataset(opts.dataset_dir);
  std::vector<std::pair<std::int32_t, std::int32_t>> pairs;
  {
    std::ifstream in(pairs_path);
    if (!in) throw omog::io_error(pairs_path + ": cannot open");
    std::int64_t u, v;
    while (in >> u >> v) {
      if (u < 0 || v < 0 || u >= ds.n || v >= ds.n) {
        throw std::invalid_argument(pairs_path + ": pair (" + std::to_string(u) + ", " +
                                    std::to_string(v) + ") out of range for n=" +
                                    std::to_string(ds.n));
      }
      pairs.emplace_back(static_cast<std::int32_t>(u), static_cast<std::int32_t>(v));
    }
    if (!in.eof()) throw omog::io_error(pairs_path + ": malformed pair line");
  }

  omog::ModelBank bank(opts.bank_dir);
  const std::vector<std::string> names = bank.list();
  if (names.empty()) throw std::invalid_argument("bank is empty: " + opts.bank_dir);
  const std::int64_t alpha = bank.load(names.front()).meta.alpha;
  const omog::HopStack stack = stack_with_cache(ds, alpha, opts.cache_hops);

  std::vector<omog::BankEntry> entries;
  const omog::FusionOutcome outcome = fuse_from_opts(opts, stack, entries);
  print_fusion_summary(outcome);
  const omog::MatF emb = omog::encode_nodes(outcome.fused, stack);
  const std::vector<double> logits = omog::predict_lp(emb, pairs);

  std::ofstream file;
  std::ostream& out = open_out(file, opts.out_path);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    json rec{{"pair", {pairs[i].first, pairs[i].second}}, {"score", logits[i]}};
    out << rec.dump() << "\n";
  }
  return 0;
}

omog::ExperimentPlan plan_with_env(const std::string& plan_path) {
  omog::ExperimentPlan plan = omog::load_plan(plan_path);
  if (auto s = env_seed()) plan.seeds = {*s};
  return plan;
}

int cmd_eval_loo(const std::string& plan_path, const std::string& bank_root,
                 const std::string& out_json, const std::string& out_csv) {
  const omog::ExperimentPlan plan = plan_with_env(plan_path);
  const omog::MetricReport rep = omog::leave_one_out(plan, bank_root);
  for (const omog::FoldResult& fr : rep.folds) {
    std::cout << fr.held_out << " seed=" << fr.seed << " metric=" << fr.metric << "\n";
  }
  std::cout << "mean=" << rep.mean << "\n";
  if (!out_json.empty()) omog::write_report_json(rep, out_json);
  if (!out_csv.empty()) omog::write_reports_csv({rep}, out_csv);
  return 0;
}

int cmd_sweep(const std::string& plan_path, const std::string& bank_root,
              const std::string& ks_csv, const std::string& strategies_csv,
              const std::string& out_csv) {
  const omog::ExperimentPlan plan = plan_with_env(plan_path);
  std::vector<omog::MetricReport> reports;
  if (!ks_csv.empty()) {
    std::vector<std::int64_t> ks;
    std::stringstream ss(ks_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) ks.push_back(std::stoll(tok));
    reports = omog::sweep_k(plan, bank_root, ks);
  } else if (!strategies_csv.empty()) {
    std::vector<omog::SelectStrategy> strategies;
    std::stringstream ss(strategies_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) strategies.push_back(omog::parse_strategy(tok));
    reports = omog::sweep_strategies(plan, bank_root, strategies);
  } else {
    throw std::invalid_argument("sweep: pass --ks or --strategies");
  }
  for (const omog::MetricReport& rep : reports) {
    std::cout << rep.label << " mean=" << rep.mean << "\n";
  }
  if (!out_csv.empty()) omog::write_reports_csv(reports, out_csv);
  return 0;
}

int cmd_ablate(const std::string& plan_path, const std::string& bank_root,
               const std::string& mode, const std::string& out_json,
               const std::string& out_csv) {
  omog::ExperimentPlan plan = plan_with_env(plan_path);
  plan.ablation = omog::parse_ablation(mode);
  const omog::MetricReport rep = omog::leave_one_out(plan, bank_root);
  std::cout << rep.label << " mean=" << rep.mean << "\n";
  if (!out_json.empty()) omog::write_report_json(rep, out_json);
  if (!out_csv.empty()) omog::write_reports_csv({rep}, out_csv);
  return 0;
}

int cmd_theory(std::int64_t samples, std::uint64_t seed, const std::string& out_path) {
  if (auto s = env_seed()) seed = *s;
  const omog::TheoryReport rep = omog::run_theory_checks(samples, seed);
  for (const omog::TheoryCheck& c : rep.checks) {
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << "  (" << c.detail << ")\n";
  }
  omog::write_theory_report(rep, out_path);
  std::cout << (rep.all_pass ? "all checks passed" : "SOME CHECKS FAILED") << "\n";
  return rep.all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"per-graph pretraining with relevance-weighted model fusion"};
  app.require_subcommand(1);

  // gen-synth
  std::string gs_out, gs_name;
  std::uint64_t gs_seed = 0;
  std::int64_t gs_n = 400, gs_comm = 4, gs_classes = 4, gs_d = 16;
  double gs_intra = 0.1, gs_inter = 0.01, gs_noise = 0.3;
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic labeled graph");
  gen->add_option("--out", gs_out, "output dataset directory")->required();
  gen->add_option("--seed", gs_seed, "generator seed");
  gen->add_option("--n", gs_n, "node count");
  gen->add_option("--communities", gs_comm, "community count");
  gen->add_option("--classes", gs_classes, "class count");
  gen->add_option("--d", gs_d, "feature dimension");
  gen->add_option("--intra", gs_intra, "intra-community edge probability");
  gen->add_option("--inter", gs_inter, "inter-community edge probability");
  gen->add_option("--noise", gs_noise, "feature noise scale");
  gen->add_option("--name", gs_name, "dataset name");

  // pretrain
  std::string pt_dataset, pt_out, pt_config, pt_name, pt_cache;
  bool pt_overwrite = false;
  auto* pre = app.add_subcommand("pretrain", "train one bank entry from a dataset");
  pre->add_option("--dataset", pt_dataset, "dataset directory")->required();
  pre->add_option("--out", pt_out, "bank directory")->required();
  pre->add_option("--config", pt_config, "training config JSON");
  pre->add_option("--name", pt_name, "entry name (defaults to dataset name)");
  pre->add_option("--cache-hops", pt_cache, "hop-stack cache file (reused when present)");
  pre->add_flag("--overwrite", pt_overwrite, "replace an existing entry");

  // bank
  auto* bank_cmd = app.add_subcommand("bank", "inspect or extend a model bank");
  bank_cmd->require_subcommand(1);
  std::string bl_dir, ba_dir, ba_entry, bv_dir;
  auto* blist = bank_cmd->add_subcommand("list", "list entries");
  blist->add_option("bank", bl_dir, "bank directory")->required();
  auto* badd = bank_cmd->add_subcommand("add", "import an entry directory");
  badd->add_option("bank", ba_dir, "bank directory")->required();
  badd->add_option("--entry", ba_entry, "existing entry directory to import")->required();
  auto* bverify = bank_cmd->add_subcommand("verify", "check every entry");
  bverify->add_option("bank", bv_dir, "bank directory")->required();

  // infer-nc / infer-lp
  InferOpts nc, lp;
  std::string lp_pairs;
  auto add_infer_common = [](CLI::App* cmd, InferOpts& o) {
    cmd->add_option("--bank", o.bank_dir, "bank directory")->required();
    cmd->add_option("--dataset", o.dataset_dir, "test dataset directory")->required();
    cmd->add_option("--k", o.k, "models to fuse");
    cmd->add_option("--strategy", o.strategy, "topk|topk-uniform|random-k|least-k");
    cmd->add_option("--temperature", o.temperature, "softmax temperature");
    cmd->add_option("--sample-cap", o.sample_cap, "relevance node-sample cap");
    cmd->add_option("--seed", o.seed, "inference seed");
    cmd->add_option("--out", o.out_path, "output file ('-' = stdout)");
    cmd->add_option("--cache-hops", o.cache_hops, "hop-stack cache file");
  };
  auto* inc = app.add_subcommand("infer-nc", "node classification on a test graph");
  add_infer_common(inc, nc);
  inc->add_option("--few-shot", nc.few_shot, "shots per class (0 = zero-shot)");
  auto* ilp = app.add_subcommand("infer-lp", "link prediction logits for node pairs");
  add_infer_common(ilp, lp);
  ilp->add_option("--pairs", lp_pairs, "whitespace-separated node-id pairs, one per line")
      ->required();

  // eval-loo / sweep / ablate
  std::string loo_plan, loo_bank = "bank-root", loo_json, loo_csv;
  auto* loo = app.add_subcommand("eval-loo", "leave-one-out evaluation");
  loo->add_option("--plan", loo_plan, "experiment plan JSON")->required();
  loo->add_option("--bank-root", loo_bank, "directory for per-seed banks");
  loo->add_option("--out-json", loo_json, "report JSON path");
  loo->add_option("--out-csv", loo_csv, "report CSV path");

  std::string sw_plan, sw_bank = "bank-root", sw_ks, sw_strategies, sw_csv;
  auto* sw = app.add_subcommand("sweep", "k or strategy sweep over leave-one-out");
  sw->add_option("--plan", sw_plan, "experiment plan JSON")->required();
  sw->add_option("--bank-root", sw_bank, "directory for per-seed banks");
  sw->add_option("--ks", sw_ks, "comma-separated k values");
  sw->add_option("--strategies", sw_strategies, "comma-separated strategies");
  sw->add_option("--out-csv", sw_csv, "report CSV path");

  std::string ab_plan, ab_bank = "bank-root", ab_mode, ab_json, ab_csv;
  auto* ab = app.add_subcommand("ablate", "leave-one-out with a pipeline stage removed");
  ab->add_option("--plan", ab_plan, "experiment plan JSON")->required();
  ab->add_option("--mode", ab_mode, "no-sgc|no-score|no-source")->required();
  ab->add_option("--bank-root", ab_bank, "directory for per-seed banks");
  ab->add_option("--out-json", ab_json, "report JSON path");
  ab->add_option("--out-csv", ab_csv, "report CSV path");

  // theory-check
  std::int64_t th_samples = 100000;
  std::uint64_t th_seed = 0;
  std::string th_out = "theory_report.json";
  auto* th = app.add_subcommand("theory-check", "numeric checks of the fusion analysis");
  th->add_option("--samples", th_samples, "Monte-Carlo sample count");
  th->add_option("--seed", th_seed, "simulation seed");
  th->add_option("--out", th_out, "report path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_synth(gs_out, gs_seed, gs_n, gs_comm, gs_classes, gs_d, gs_intra,
                           gs_inter, gs_noise, gs_name);
    }
    if (pre->parsed()) {
      return cmd_pretrain(pt_dataset, pt_out, pt_config, pt_name, pt_cache, pt_overwrite);
    }
    if (bank_cmd->parsed()) {
      if (blist->parsed()) return cmd_bank_list(bl_dir);
      if (badd->parsed()) return cmd_bank_add(ba_dir, ba_entry);
      if (bverify->parsed()) return cmd_bank_verify(bv_dir);
    }
    if (inc->parsed()) return cmd_infer_nc(nc);
    if (ilp->parsed()) return cmd_infer_lp(lp, lp_pairs);
    if (loo->parsed()) return cmd_eval_loo(loo_plan, loo_bank, loo_json, loo_csv);
    if (sw->parsed()) return cmd_sweep(sw_plan, sw_bank, sw_ks, sw_strategies, sw_csv);
    if (ab->parsed()) return cmd_ablate(ab_plan, ab_bank, ab_mode, ab_json, ab_csv);
    if (th->parsed()) return cmd_theory(th_samples, th_seed, th_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}
