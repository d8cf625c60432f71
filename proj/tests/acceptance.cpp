// End-to-end acceptance checks for the pretraining + fusion pipeline. Each
// criterion prints exactly one [PASS]/[FAIL] line; the exit code is nonzero
// if any criterion fails. Criteria with a wall-clock budget fail when they
// exceed it, even if their assertions hold.
#include "omog/binio.hpp"
#include "omog/eval.hpp"
#include "omog/theory.hpp"
#include "support/gradcheck.hpp"
#include "support/suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace omog;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(4);
  out << v;
  return out.str();
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw io_error(p.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// State threaded through the training-dependent criteria so the bank of
// 4 domains x 5 seeds is only pretrained once.
struct Context {
  fs::path scratch;
  std::vector<GraphDataset> domains;
  std::vector<fs::path> domain_dirs;
  fs::path bank_root;
  std::vector<MetricReport> audit_reports;  // every report produced by 6-7
};

const std::vector<std::uint64_t> kSeeds = {0, 1, 2, 3, 4};

ExperimentPlan base_plan(const Context& ctx) {
  ExperimentPlan plan;
  plan.dataset_dirs.assign(ctx.domain_dirs.begin(), ctx.domain_dirs.end());
  plan.task = Task::kNodeClassification;
  plan.k = 2;
  plan.seeds = kSeeds;
  plan.train = suite::train_config();
  // Sharper softmax keeps topk concentrated on in-family entries even when k
  // forces irrelevant ones into the selection.
  plan.temperature = 0.25;
  return plan;
}

// 1. Analytic gradients of both losses vs central finite differences.
Outcome check_gradients() {
  double worst_contrastive = 0.0, worst_scoring = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SourceParamsT<double> params;
    ViewBatch<double> batch;
    if (!gradcheck::draw_contrastive_trial(seed, params, batch)) {
      return {false, "no well-conditioned contrastive trial for seed " +
                         std::to_string(seed)};
    }
    auto sgrads = zeros_like(params);
    contrastive_batch_grads(params, batch, &sgrads);
    worst_contrastive = std::max(
        worst_contrastive, gradcheck::max_fd_error(params, sgrads, [&] {
          return gradcheck::forward_only_contrastive(params, batch);
        }));

    SourceParamsT<double> source;
    ScoringParamsT<double> scoring;
    VecD center;
    std::vector<MatD> stacks;
    if (!gradcheck::draw_scoring_trial(seed, source, scoring, center, stacks)) {
      return {false, "no well-conditioned scoring trial for seed " +
                         std::to_string(seed)};
    }
    auto mgrads = zeros_like(scoring);
    scoring_batch_grads(source, scoring, center, stacks, &mgrads);
    worst_scoring = std::max(worst_scoring, gradcheck::max_fd_error(scoring, mgrads, [&] {
      return gradcheck::forward_only_scoring(source, scoring, center, stacks);
    }));
  }
  const bool ok = worst_contrastive <= gradcheck::kTol && worst_scoring <= gradcheck::kTol;
  return {ok, "max rel err " + fmt(worst_contrastive) + " (contrastive), " +
                  fmt(worst_scoring) + " (scoring) over 5 seeds"};
}

// 2. Sparse hop propagation vs dense normalized-adjacency matrix powers.
Outcome check_propagation() {
  Rng rng(2024);
  double worst = 0.0;
  for (int g = 0; g < 20; ++g) {
    const std::int64_t n = 5 + static_cast<std::int64_t>(rng.index(46));
    const std::int64_t d = 3 + static_cast<std::int64_t>(rng.index(6));
    const std::int64_t alpha = 1 + static_cast<std::int64_t>(rng.index(4));

    GraphDataset ds;
    ds.name = "random";
    ds.n = n;
    ds.d = d;
    const double p = std::min(1.0, 4.0 / static_cast<double>(n));
    for (std::int32_t u = 0; u < n; ++u) {
      for (std::int32_t v = u + 1; v < n; ++v) {
        if (rng.uniform(0.0, 1.0) < p) ds.edges.emplace_back(u, v);
      }
    }
    ds.adjacency = build_csr(n, ds.edges);
    ds.features.resize(n, d);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t j = 0; j < d; ++j) {
        ds.features(i, j) = static_cast<float>(rng.normal(0.0, 1.0));
      }
    }

    const HopStack stack = sgc_propagate(normalized_adjacency(ds), ds.features, alpha);

    MatD b = MatD::Identity(n, n);
    for (const auto& [u, v] : ds.edges) b(u, v) = b(v, u) = 1.0;
    VecD scale(n);
    for (std::int64_t i = 0; i < n; ++i) scale(i) = 1.0 / std::sqrt(b.row(i).sum());
    const MatD j = scale.asDiagonal() * b * scale.asDiagonal();

    MatD power = ds.features.cast<double>();
    for (std::int64_t k = 0; k <= alpha; ++k) {
      worst = std::max(worst,
                       (stack.hop(k).cast<double>() - power).cwiseAbs().maxCoeff());
      power = j * power;
    }
  }
  return {worst <= 1e-6, "max |sparse - dense| = " + fmt(worst) + " over 20 graphs"};
}

// 3. Fusion identities: singleton copy, convex combination, weight totals.
Outcome check_fusion_identities() {
  std::vector<BankEntry> entries;
  for (int i = 0; i < 3; ++i) {
    BankEntry e;
    e.meta.name = std::string(1, static_cast<char>('a' + i));
    e.meta.d = 16;
    e.meta.alpha = 2;
    e.meta.d_ff = 32;
    e.meta.d_h = 16;
    e.source = init_source_params<float>(16, 2, 32, derive_seed(7, i));
    e.scoring = init_scoring_params<float>(16, 2, 16, derive_seed(8, i));
    e.centroid = VecF::Zero(16);
    entries.push_back(std::move(e));
  }

  FusionWeights single;
  single.indices = {1};
  single.weights = {1.0};
  const bool byte_exact = bitwise_equal(fuse_models(entries, single), entries[1].source);

  FusionWeights pair;
  pair.indices = {0, 2};
  pair.weights = {0.25, 0.75};
  const SourceParams fused = fuse_models(entries, pair);
  std::vector<std::pair<const float*, Eigen::Index>> fa, f0, f2;
  auto collect = [](const SourceParams& p, auto& out) {
    visit_tensors(p, [&](const char*, const auto& t) { out.emplace_back(t.data(), t.size()); });
  };
  collect(fused, fa);
  collect(entries[0].source, f0);
  collect(entries[2].source, f2);
  double worst_convex = 0.0;
  for (std::size_t ti = 0; ti < fa.size(); ++ti) {
    for (Eigen::Index i = 0; i < fa[ti].second; ++i) {
      const double expect = 0.25 * static_cast<double>(f0[ti].first[i]) +
                            0.75 * static_cast<double>(f2[ti].first[i]);
      worst_convex = std::max(worst_convex,
                              std::abs(static_cast<double>(fa[ti].first[i]) - expect));
    }
  }

  Rng rng(31);
  std::vector<double> scores(5);
  for (double& s : scores) s = rng.uniform(-1.0, 1.0);
  double worst_sum = 0.0;
  for (SelectStrategy s : {SelectStrategy::kTopK, SelectStrategy::kTopKUniform,
                           SelectStrategy::kRandomK, SelectStrategy::kLeastK}) {
    for (std::int64_t k = 1; k <= 5; ++k) {
      FuseConfig cfg;
      cfg.strategy = s;
      cfg.k = k;
      cfg.seed = 13;
      const FusionWeights fw = select_and_weight(scores, cfg);
      const double sum = std::accumulate(fw.weights.begin(), fw.weights.end(), 0.0);
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }
  }

  const bool ok = byte_exact && worst_convex <= 1e-7 && worst_sum <= 1e-9;
  return {ok, std::string("k=1 ") + (byte_exact ? "byte-exact" : "DIFFERS") +
                  ", convex err " + fmt(worst_convex) + ", |sum(w)-1| " + fmt(worst_sum)};
}

// 4. Contrastive loss hand case: one node, identical views.
Outcome check_contrastive_hand_case() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    MatD f(1, 16);
    for (int j = 0; j < 16; ++j) f(0, j) = rng.normal(0.0, 1.0);
    worst = std::max(worst, std::abs(contrastive_loss<double>(f, f) - std::log(2.0)));
  }
  return {worst <= 1e-6, "max |loss - log 2| = " + fmt(worst) + " over 5 draws"};
}

// 5. Per-domain training sanity: the contrastive loss falls, and the trained
// scoring module keeps held-out in-domain nodes closer to the centroid than
// their masks alone.
Outcome check_training_sanity(Context& ctx) {
  const TrainConfig cfg = suite::train_config();
  double worst_loss_ratio = 0.0;
  double min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t dom = 0; dom < ctx.domains.size(); ++dom) {
    const GraphDataset& ds = ctx.domains[dom];
    const HopStack stack =
        sgc_propagate(normalized_adjacency(ds), ds.features, cfg.alpha);

    Rng split_rng(derive_seed(55, dom));
    const std::vector<std::size_t> picked = split_rng.sample_without_replacement(
        static_cast<std::size_t>(ds.n), static_cast<std::size_t>(ds.n * 8 / 10));
    std::vector<char> in_train(static_cast<std::size_t>(ds.n), 0);
    std::vector<std::int64_t> train_nodes;
    for (std::size_t i : picked) {
      in_train[i] = 1;
      train_nodes.push_back(static_cast<std::int64_t>(i));
    }
    std::vector<std::int64_t> held;
    for (std::int64_t i = 0; i < ds.n; ++i) {
      if (!in_train[static_cast<std::size_t>(i)]) held.push_back(i);
    }

    std::vector<EpochLog> log;
    const SourceParams source = pretrain_source_on_stack(
        stack, cfg.resolve_d_ff(stack.dim), cfg, &log, &train_nodes);
    if (log.size() < 2 || !(log.back().mean_loss < log.front().mean_loss)) {
      return {false, ds.name + ": contrastive loss did not fall (" +
                         fmt(log.front().mean_loss) + " -> " + fmt(log.back().mean_loss) + ")"};
    }
    worst_loss_ratio = std::max(worst_loss_ratio, log.back().mean_loss / log.front().mean_loss);

    HopStack sub;
    sub.n = static_cast<std::int64_t>(train_nodes.size());
    sub.hops = stack.hops;
    sub.dim = stack.dim;
    sub.data.resize(sub.n, stack.hops * stack.dim);
    for (std::int64_t r = 0; r < sub.n; ++r) {
      sub.data.row(r) = stack.data.row(train_nodes[static_cast<std::size_t>(r)]);
    }
    const VecF center = compute_centroid(source, sub);
    const ScoringParams scoring = train_scoring_on_stack(
        stack, source, center, cfg.resolve_d_h(stack.dim), cfg, nullptr, &train_nodes);

    double sum_pos = 0.0, sum_neg = 0.0;
    for (std::int64_t i : held) {
      const MatF h = stack.node(i);
      const MatF mask = scoring_forward(scoring, h);
      const VecF f_pos = pool<float>(source_forward(source, MatF(h + mask)));
      const VecF f_neg = pool<float>(source_forward(source, mask));
      sum_pos += (f_pos - center).cast<double>().norm();
      sum_neg += (f_neg - center).cast<double>().norm();
    }
    const double mean_pos = sum_pos / static_cast<double>(held.size());
    const double mean_neg = sum_neg / static_cast<double>(held.size());
    if (!(mean_pos < mean_neg)) {
      return {false, ds.name + ": held-out positive distance " + fmt(mean_pos) +
                         " not below negative " + fmt(mean_neg)};
    }
    min_margin = std::min(min_margin, mean_neg - mean_pos);
  }
  return {true, "loss ratio <= " + fmt(worst_loss_ratio) +
                    ", min held-out distance margin " + fmt(min_margin)};
}

// 6. Mean zero-shot NC accuracy ordering across selection strategies.
Outcome check_strategy_trend(Context& ctx) {
  const ExperimentPlan plan = base_plan(ctx);
  const std::vector<MetricReport> reports = sweep_strategies(
      plan, ctx.bank_root,
      {SelectStrategy::kTopK, SelectStrategy::kTopKUniform, SelectStrategy::kRandomK,
       SelectStrategy::kLeastK});
  ctx.audit_reports.insert(ctx.audit_reports.end(), reports.begin(), reports.end());
  const double topk = reports[0].mean;
  const double uniform = reports[1].mean;
  const double random = reports[2].mean;
  const double least = reports[3].mean;
  const bool ok = topk >= uniform && topk >= random && random >= least;
  return {ok, "topk " + fmt(topk) + " >= topk-uniform " + fmt(uniform) + ", topk >= random-k " +
                  fmt(random) + " >= least-k " + fmt(least) + " (20 folds each)"};
}

// 7. K-sweep: topk stays within 5 accuracy points of its max; random-k decays
// from k=1 to the full bank.
Outcome check_k_sweep(Context& ctx) {
  const ExperimentPlan plan = base_plan(ctx);
  const std::vector<MetricReport> topk = sweep_k(plan, ctx.bank_root, {1, 2, 3});
  ExperimentPlan rnd = plan;
  rnd.strategy = SelectStrategy::kRandomK;
  const std::vector<MetricReport> random = sweep_k(rnd, ctx.bank_root, {1, 3});
  ctx.audit_reports.insert(ctx.audit_reports.end(), topk.begin(), topk.end());
  ctx.audit_reports.insert(ctx.audit_reports.end(), random.begin(), random.end());

  double best = 0.0, low = 1.0;
  std::string curve;
  for (const MetricReport& rep : topk) {
    best = std::max(best, rep.mean);
    low = std::min(low, rep.mean);
    curve += fmt(rep.mean) + " ";
  }
  const bool flat = low >= best - 0.05;
  const bool decays = random[1].mean <= random[0].mean;
  return {flat && decays, "topk over k=1..3: " + curve + "(max drop " + fmt(best - low) +
                              "); random-k " + fmt(random[0].mean) + " -> " +
                              fmt(random[1].mean)};
}

// 8. Each bank entry scores its own pretraining graph highest.
Outcome check_relevance_self_match(Context& ctx) {
  const TrainConfig cfg = suite::train_config();
  int hits = 0, total = 0;
  for (std::uint64_t seed : kSeeds) {
    const std::vector<BankEntry> entries = ensure_bank(
        ctx.bank_root / ("seed-" + std::to_string(seed)), ctx.domains, cfg, seed);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].meta.name != ctx.domains[i].name) {
        return {false, "bank order does not match domain order"};
      }
    }
    for (std::size_t i = 0; i < ctx.domains.size(); ++i) {
      const HopStack stack = sgc_propagate(normalized_adjacency(ctx.domains[i]),
                                           ctx.domains[i].features, cfg.alpha);
      FuseConfig fc;
      fc.seed = seed;
      const std::vector<double> scores = relevance_scores(entries, stack, fc);
      const std::size_t arg = static_cast<std::size_t>(
          std::max_element(scores.begin(), scores.end()) - scores.begin());
      hits += arg == i ? 1 : 0;
      ++total;
    }
  }
  return {hits * 10 >= total * 9,
          std::to_string(hits) + "/" + std::to_string(total) + " self-matches"};
}

// 9. Closed-form theory values and the fused-error simulation.
Outcome check_theory() {
  const KlPair kl = gaussian_kl(1.0, 2.0);
  const bool kl_ok = std::abs(kl.exact - 0.5 * (1.0 - std::log(2.0))) <= 1e-12;

  const std::vector<double> w = bma_weights({1.0, 2.0});
  const bool bma_ok =
      std::abs(w[0] - 2.0 / 3.0) <= 1e-12 && std::abs(w[1] - 1.0 / 3.0) <= 1e-12;

  Rng rng(909);
  int agree = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> variances(2 + rng.index(7));
    for (double& v : variances) v = rng.uniform(0.05, 5.0);
    const std::vector<double> wb = bma_weights(variances);
    const std::vector<double> ws = score_weights(variances);
    std::vector<std::size_t> ob(variances.size()), os(variances.size());
    std::iota(ob.begin(), ob.end(), 0);
    os = ob;
    std::sort(ob.begin(), ob.end(), [&](auto a, auto b) { return wb[a] > wb[b]; });
    std::sort(os.begin(), os.end(), [&](auto a, auto b) { return ws[a] > ws[b]; });
    agree += ob == os ? 1 : 0;
  }

  bool fused_ok = true;
  for (WeightRule rule : {WeightRule::kBma, WeightRule::kScore}) {
    EnsembleSpec spec;
    spec.models = {{0.0, 1.0}, {0.0, 1.5}, {0.0, 2.0}};
    spec.samples = 100000;
    spec.seed = derive_seed(3, rule == WeightRule::kBma ? 0 : 1);
    const FusedErrorResult res = fused_error_sim(spec, rule);
    const double best =
        *std::min_element(res.per_model_mse.begin(), res.per_model_mse.end());
    fused_ok = fused_ok && res.fused_mse <= best + 3.0 * res.fused_se;
  }

  const bool self_ok = run_theory_checks(100000, 0).all_pass;
  const bool ok = kl_ok && bma_ok && agree == 1000 && fused_ok && self_ok;
  return {ok, "kl exact " + fmt(kl.exact) + ", bma [" + fmt(w[0]) + ", " + fmt(w[1]) +
                  "], ranking " + std::to_string(agree) + "/1000, fused<=best+3se " +
                  (fused_ok ? "yes" : "NO") + ", self-checks " + (self_ok ? "pass" : "FAIL")};
}

// 10. Leave-one-out leakage audit over every fold produced above, plus the
// audit's own trip wire.
Outcome check_leakage(Context& ctx) {
  std::size_t folds = 0, violations = 0;
  for (const MetricReport& rep : ctx.audit_reports) {
    for (const FoldResult& fr : rep.folds) {
      ++folds;
      if (std::find(fr.bank_names.begin(), fr.bank_names.end(), fr.held_out) !=
          fr.bank_names.end()) {
        ++violations;
      }
    }
  }

  BankEntry poisoned;
  poisoned.meta.name = "north-a";
  bool tripped = false;
  try {
    audit_fold_bank({poisoned}, "north-a");
  } catch (const std::logic_error&) {
    tripped = true;
  }
  bool clean_ok = true;
  try {
    audit_fold_bank({poisoned}, "south-a");
  } catch (...) {
    clean_ok = false;
  }

  const bool ok = folds > 0 && violations == 0 && tripped && clean_ok;
  return {ok, std::to_string(folds) + " folds audited, " + std::to_string(violations) +
                  " violations; trip wire " + (tripped ? "fires" : "SILENT")};
}

// 11. Byte-level bank round-trip and field-level dataset round-trip.
Outcome check_persistence(Context& ctx) {
  const GraphDataset& ds = ctx.domains[0];
  const fs::path d1 = ctx.scratch / "rt1";
  const fs::path d2 = ctx.scratch / "rt2";
  save_dataset(ds, d1);
  const GraphDataset back = load_dataset(d1);
  const bool fields_ok =
      back.name == ds.name && back.n == ds.n && back.d == ds.d &&
      back.num_classes == ds.num_classes && back.edges == ds.edges &&
      back.labels == ds.labels &&
      back.adjacency.indptr == ds.adjacency.indptr &&
      back.adjacency.indices == ds.adjacency.indices &&
      (back.features - ds.features).cwiseAbs().maxCoeff() == 0.0f &&
      (back.label_embeddings - ds.label_embeddings).cwiseAbs().maxCoeff() == 0.0f;
  save_dataset(back, d2);
  bool dataset_bytes_ok = true;
  for (const auto& entry : fs::directory_iterator(d1)) {
    dataset_bytes_ok = dataset_bytes_ok &&
                       slurp(entry.path()) == slurp(d2 / entry.path().filename());
  }

  const TrainConfig cfg = suite::train_config();
  const std::vector<BankEntry> entries =
      ensure_bank(ctx.bank_root / "seed-0", ctx.domains, cfg, 0);
  const BankEntry& e = entries[0];
  ModelBank copy(ctx.scratch / "bank-rt", /*create_if_missing=*/true);
  copy.add(e);
  const BankEntry reloaded = copy.load(e.meta.name);
  const bool bank_fields_ok = bitwise_equal(reloaded.source, e.source) &&
                              bitwise_equal(reloaded.scoring, e.scoring) &&
                              reloaded.centroid == e.centroid &&
                              reloaded.meta.seed == e.meta.seed &&
                              reloaded.meta.created_unix_ms == e.meta.created_unix_ms;
  bool bank_bytes_ok = true;
  const fs::path orig = ctx.bank_root / "seed-0" / e.meta.name;
  const fs::path dup = ctx.scratch / "bank-rt" / e.meta.name;
  for (const char* f : {"entry.json", "source.params", "scoring.params", "centroid.bin"}) {
    bank_bytes_ok = bank_bytes_ok && slurp(orig / f) == slurp(dup / f);
  }

  const bool ok = fields_ok && dataset_bytes_ok && bank_fields_ok && bank_bytes_ok;
  return {ok, std::string("dataset fields ") + (fields_ok ? "ok" : "DIFFER") + ", bytes " +
                  (dataset_bytes_ok ? "ok" : "DIFFER") + "; bank fields " +
                  (bank_fields_ok ? "ok" : "DIFFER") + ", bytes " +
                  (bank_bytes_ok ? "ok" : "DIFFER")};
}

}  // namespace

int main() {
  Context ctx;
  ctx.scratch = fs::temp_directory_path() / "omog-acceptance";
  fs::remove_all(ctx.scratch);
  fs::create_directories(ctx.scratch);
  ctx.domains = suite::make_domains();
  ctx.domain_dirs = suite::save_domains(ctx.domains, ctx.scratch / "domains");
  ctx.bank_root = ctx.scratch / "bank";

  struct Criterion {
    const char* name;
    double budget_s;  // < 0 means no wall-clock requirement
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradients match finite differences", 10, [&] { return check_gradients(); }},
      {"hop propagation matches dense powers", 5, [&] { return check_propagation(); }},
      {"fusion identities", -1, [&] { return check_fusion_identities(); }},
      {"contrastive hand case log 2", -1, [&] { return check_contrastive_hand_case(); }},
      {"training sanity on 4 domains", -1, [&] { return check_training_sanity(ctx); }},
      {"strategy ordering", 300, [&] { return check_strategy_trend(ctx); }},
      {"k-sweep trends", -1, [&] { return check_k_sweep(ctx); }},
      {"relevance self-match", -1, [&] { return check_relevance_self_match(ctx); }},
      {"theory checks", 30, [&] { return check_theory(); }},
      {"leave-one-out leakage audit", -1, [&] { return check_leakage(ctx); }},
      {"persistence round-trips", -1, [&] { return check_persistence(ctx); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[i].run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = criteria[i].budget_s < 0 || secs < criteria[i].budget_s;
    const bool pass = out.pass && in_budget;
    failures += pass ? 0 : 1;
    std::printf("[%s] %2zu/11 %-40s %s%s (%.1fs)\n", pass ? "PASS" : "FAIL", i + 1,
                criteria[i].name, out.detail.c_str(),
                in_budget ? "" : " [over wall-clock budget]", secs);
    std::fflush(stdout);
  }

  fs::remove_all(ctx.scratch);
  return failures == 0 ? 0 : 1;
}
