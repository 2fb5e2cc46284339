// Acceptance suite: one PASS/FAIL line per criterion.
//   orchestra_acceptance [--criterion N]... [--work-dir DIR]
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "orchestra/clustering.hpp"
#include "orchestra/evaluation.hpp"
#include "orchestra/format.hpp"
#include "orchestra_cli/commands.hpp"
#include "orchestra_cli/experiment.hpp"

using namespace orchestra;
using namespace orchestra::cli;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

const std::vector<std::uint64_t> kSeeds = {0, 1, 2};

fs::path g_work = "acceptance_work";

ExperimentConfig base_config() { return load_config(ORCHESTRA_ACCEPTANCE_CONFIG); }

RunOutputs run(ExperimentConfig cfg, const std::string& tag) {
  cfg.output_dir = g_work / tag;
  std::ostringstream log;
  return run_experiment(cfg, log);
}

ExperimentConfig with(std::uint64_t seed, Method method) {
  ExperimentConfig cfg = base_config();
  cfg.federation.seed = seed;
  cfg.federation.method = method;
  return cfg;
}

double final_linear(const FederationResult& r) { return *r.timeline.back().linear_acc; }

// ---- 1 ---------------------------------------------------------------------
Verdict criterion1() {
  const auto t0 = Clock::now();
  const auto report = grad_check(0, 20);
  const double secs = seconds_since(t0);
  Verdict v{secs < 30.0, ""};
  for (const auto& line : report) {
    v.pass = v.pass && line.draws >= 20 && line.max_rel_error < 1e-4;
    v.detail += line.loss + "=" + fmt(line.max_rel_error, 3) + " ";
  }
  v.detail += "(" + fmt(secs, 3) + " s)";
  return v;
}

// ---- 2 ---------------------------------------------------------------------
double exhaustive_balanced_cost(const DenseMatrix& pts) {
  const std::size_t n = pts.rows();
  double best = INFINITY;
  std::vector<std::size_t> a(n);
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    const auto ones = static_cast<std::size_t>(__builtin_popcount(mask));
    if (ones != n / 2 && ones != (n + 1) / 2) continue;
    for (std::size_t i = 0; i < n; ++i) a[i] = (mask >> i) & 1u;
    best = std::min(best, within_cluster_cost(pts, a, 2));
  }
  return best;
}

Verdict criterion2() {
  const auto t0 = Clock::now();
  Rng rng = Rng::stream(2, StreamTag::kTest);
  std::size_t bad_marginal = 0, bad_size = 0, bad_oracle = 0;
  double worst_marginal = 0.0, worst_ratio = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t g = 1 + rng.below(16);
    const std::size_t n = g + rng.below(256 - g + 1);
    const std::size_t d = 2 + rng.below(15);
    DenseMatrix pts(n, d);
    for (double& x : pts.data()) x = rng.normal();
    normalize_rows(pts);
    SinkhornConfig cfg;
    cfg.seed = rng.next_u64();
    const auto r = sinkhorn_balanced(pts, g, cfg);
    const DenseMatrix& plan = r.assignment.plan;
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto row = plan.row(i);
      err = std::max(err, std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0 / static_cast<double>(n)));
    }
    for (std::size_t c = 0; c < g; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += plan(i, c);
      err = std::max(err, std::abs(s - 1.0 / static_cast<double>(g)));
    }
    worst_marginal = std::max(worst_marginal, err);
    bad_marginal += err > 1e-6;
    for (auto s : cluster_sizes(r.assignment.assignment, g)) bad_size += s < n / g || s > (n + g - 1) / g;
  }
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    DenseMatrix pts(n, 2 + rng.below(3));
    for (double& x : pts.data()) x = rng.normal();
    normalize_rows(pts);
    SinkhornConfig cfg;
    cfg.seed = rng.next_u64();
    const auto r = sinkhorn_balanced(pts, 2, cfg);
    const double got = within_cluster_cost(pts, r.assignment.assignment, 2);
    const double opt = exhaustive_balanced_cost(pts);
    worst_ratio = std::max(worst_ratio, opt > 0 ? got / opt : 1.0);
    bad_oracle += got > 1.05 * opt + 1e-12;
  }
  const double secs = seconds_since(t0);
  return {bad_marginal == 0 && bad_size == 0 && bad_oracle == 0 && secs < 60.0,
          "marginal violations " + std::to_string(bad_marginal) + "/100 (worst " + fmt(worst_marginal, 3) +
              "), size violations " + std::to_string(bad_size) + ", oracle misses " +
              std::to_string(bad_oracle) + "/20 (worst ratio " + fmt(worst_ratio, 4) + "), " + fmt(secs, 3) + " s"};
}

// ---- 3 ---------------------------------------------------------------------
Verdict criterion3() {
  const auto t0 = Clock::now();
  const std::vector<std::size_t> gs = {2, 10, 16, 64, 128};
  const std::vector<std::size_t> ns = {3, 100, 2048, 50000};
  const std::vector<double> zetas = {0.0, 0.5};
  const std::vector<double> deltas = {0.0, 0.01, 0.05, 0.1, 0.3, 0.5, 1.0};
  double worst_identity = 0.0;
  std::size_t delta_violations = 0, c_violations = 0, c_checked = 0;
  std::string first_c_violation;
  for (auto g : gs)
    for (auto n : ns)
      for (auto z : zetas) {
        for (double d : deltas) {
          BoundInputs in{.delta = d, .c = 1.0, .G = g, .N = n, .zeta = z};
          const double nn = static_cast<double>(n);
          worst_identity = std::max(worst_identity, std::abs(idealized_bound(in) - two_level_bound(in) -
                                                             static_cast<double>(g) / (nn * (nn - 1.0))));
          double prev = -INFINITY;
          for (int c = 0; c <= 100; ++c) {
            in.c = 1.0 - c / 100.0;  // walking c downward: the bound must grow
            const double b = two_level_bound(in);
            if (c > 0) {
              ++c_checked;
              if (!(b > prev)) {
                if (c_violations++ == 0)
                  first_c_violation = "G=" + std::to_string(g) + " N=" + std::to_string(n) +
                                      " delta=" + fmt(d) + " c=" + fmt(in.c) + "->" + fmt(in.c + 0.01);
              }
            }
            prev = b;
          }
        }
        double prev = -INFINITY;
        for (int k = 0; k <= 100; ++k) {
          const double b = idealized_bound({.delta = k / 100.0, .c = 1.0, .G = g, .N = n, .zeta = z});
          delta_violations += !(b > prev);
          prev = b;
        }
      }
  const double secs = seconds_since(t0);
  std::string detail = "identity max err " + fmt(worst_identity, 3) + ", idealized bound delta-monotone violations " +
                       std::to_string(delta_violations) + ", two-level bound c-decreasing violations " +
                       std::to_string(c_violations) + "/" + std::to_string(c_checked);
  if (c_violations) detail += " (first: " + first_c_violation + ")";
  detail += ", " + fmt(secs, 3) + " s";
  return {worst_identity <= 1e-12 && delta_violations == 0 && c_violations == 0 && secs < 5.0, detail};
}

// ---- 4, 5, 7 ---------------------------------------------------------------
Verdict criterion4() {
  std::vector<double> orch, rand, rot;
  double slowest = 0.0;
  for (auto seed : kSeeds) {
    const auto t0 = Clock::now();
    orch.push_back(final_linear(run(with(seed, Method::kOrchestra), "c4").result));
    rand.push_back(final_linear(run(with(seed, Method::kRandom), "c4").result));
    rot.push_back(final_linear(run(with(seed, Method::kRotPred), "c4").result));
    slowest = std::max(slowest, seconds_since(t0));
  }
  const double mo = median(orch), mr = median(rand), mp = median(rot);
  const double gap = 100.0 * (mo - mr);
  return {gap >= 15.0 && mo >= mp && slowest < 600.0,
          "median linear acc orchestra " + fmt(mo) + ", random-init " + fmt(mr) + " (gap " + fmt(gap, 3) +
              " pp, need >= 15), rotpred " + fmt(mp) + "; slowest seed " + fmt(slowest, 3) + " s"};
}

Verdict criterion5() {
  std::vector<double> first, last;
  for (auto seed : kSeeds) {
    const auto r = run(with(seed, Method::kOrchestra), "c5").result;
    first.push_back(*r.timeline.front().delta);
    last.push_back(*r.timeline.back().delta);
  }
  const double a = median(first), b = median(last);
  return {b < a, "median delta round 1 " + fmt(a) + ", final round " + fmt(b)};
}

Verdict criterion7() {
  bool every = true;
  std::string detail;
  for (auto seed : kSeeds) {
    const auto r = run(with(seed, Method::kOrchestra), "c7").result;
    const double init = r.initial.tuner, fin = r.timeline.back().tuner;
    every = every && fin > init;
    detail += "seed " + std::to_string(seed) + ": init " + fmt(init) + " -> trained " + fmt(fin) + "; ";
  }
  // constant-output encoder
  const ExperimentConfig cfg = base_config();
  Rng rng = Rng::stream(0, StreamTag::kInit);
  EncoderParams collapsed = init_encoder(cfg.federation.encoder, rng);
  for (auto& layer : collapsed.layers) {
    std::fill(layer.weight.data().begin(), layer.weight.data().end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  collapsed.layers.back().bias[0] = 1.0;
  const Dataset ds = build_dataset(cfg);
  const auto shards = build_shards(cfg, ds);
  const auto samples = eval_samples(ds, shards, cfg.federation);
  Rng eval_rng = Rng::stream(0, StreamTag::kEval);
  const double zero = evaluate_tuner(collapsed, samples, cfg.federation.augment, 0.2, eval_rng).combined;
  detail += "collapsed encoder " + format_double(zero);
  return {every && zero == 0.0, detail};
}

// ---- 6 ---------------------------------------------------------------------
double two_level_consistency(const DenseMatrix& reps, std::span<const ClientShard> shards,
                             const FederationConfig& fed, std::uint64_t seed) {
  SinkhornConfig sc = fed.sinkhorn;
  sc.seed = seed;
  const auto direct = sinkhorn_balanced(reps, fed.global_clusters, sc);
  std::vector<DenseMatrix> parts;
  std::vector<std::size_t> ls;
  for (const auto& s : shards) {
    parts.push_back(reps.select_rows(s.sample_ids));
    ls.push_back(std::min(fed.local_clusters, s.sample_ids.size()));
  }
  const auto two = two_level_cluster(parts, ls, fed.global_clusters, sc);
  const auto fedassign = balanced_assign(reps, two.global, sc).assignment;
  return consistency_fraction(direct.assignment.assignment, fedassign, fed.global_clusters);
}

Verdict criterion6() {
  const double skewed = 1e-3, iid = 1e5;
  std::vector<double> c_skewed, c_iid;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig cfg = base_config();
    cfg.federation.seed = seed;
    const Dataset ds = build_dataset(cfg);
    Rng rng = Rng::stream(seed, StreamTag::kInit);
    const DenseMatrix reps = forward(init_encoder(cfg.federation.encoder, rng), ds.features);
    for (double alpha : {skewed, iid}) {
      cfg.federation.alpha = alpha;
      const auto shards = build_shards(cfg, ds);
      (alpha == skewed ? c_skewed : c_iid).push_back(two_level_consistency(reps, shards, cfg.federation, seed));
    }
  }
  std::vector<double> acc_skewed, acc_iid;
  for (auto seed : kSeeds) {
    ExperimentConfig cfg = with(seed, Method::kOrchestra);
    cfg.federation.alpha = skewed;
    acc_skewed.push_back(final_linear(run(cfg, "c6").result));
    cfg.federation.alpha = iid;
    acc_iid.push_back(final_linear(run(cfg, "c6").result));
  }
  const double cs = median(c_skewed), ci = median(c_iid);
  const double as = median(acc_skewed), ai = median(acc_iid);
  return {cs >= ci && as >= ai - 0.03,
          "median consistency alpha=1e-3 " + fmt(cs) + " vs alpha=1e5 " + fmt(ci) +
              "; median linear acc alpha=1e-3 " + fmt(as) + " vs alpha=1e5 " + fmt(ai)};
}

// ---- 8 ---------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict criterion8() {
  ExperimentConfig cfg = with(kSeeds.front(), Method::kOrchestra);
  const auto a = run(cfg, "c8_a");
  const auto b = run(cfg, "c8_b");
  cfg.federation.threads = 4;
  const auto c = run(cfg, "c8_threads");
  const std::string ma = slurp(a.dir / "metrics.jsonl");
  const bool same_replay = !ma.empty() && ma == slurp(b.dir / "metrics.jsonl");
  const bool same_threads = ma == slurp(c.dir / "metrics.jsonl");
  return {same_replay && same_threads, std::string("replay ") + (same_replay ? "identical" : "DIFFERS") +
                                           ", 1 vs 4 threads " + (same_threads ? "identical" : "DIFFERS") +
                                           " (" + std::to_string(ma.size()) + " bytes)"};
}

// ---- 9 ---------------------------------------------------------------------
Verdict criterion9() {
  PartitionStatsRequest req;
  req.mixture.num_classes = 10;
  req.clients = 100;
  req.alphas = {1e5, 1e-1, 1e-3};
  req.seeds = {0, 1, 2, 3, 4};
  const PartitionStats s = partition_stats(req);
  bool ok = s.medians.size() == 3;
  std::string detail = "medians";
  for (std::size_t i = 0; i < s.medians.size(); ++i) {
    const auto& m = s.medians[i];
    ok = ok && m.at_least_one.has_value();
    detail += " alpha=" + fmt(m.alpha) + ":" + (m.at_least_one ? fmt(*m.at_least_one) : "NA");
    if (i > 0 && ok) ok = *m.at_least_one < *s.medians[i - 1].at_least_one;
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> selected;
  std::string work = g_work.string();
  app.add_option("--criterion", selected, "Criterion number(s) to run (default: all)")->check(CLI::Range(1, 9));
  app.add_option("--work-dir", work, "Scratch directory for run outputs");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  g_work = work;

  const std::vector<std::function<Verdict()>> criteria = {criterion1, criterion2, criterion3,
                                                          criterion4, criterion5, criterion6,
                                                          criterion7, criterion8, criterion9};
  bool all = true;
  for (int n : selected) {
    Verdict v;
    try {
      fs::remove_all(g_work / ("c" + std::to_string(n)));
      v = criteria[static_cast<std::size_t>(n - 1)]();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    all = all && v.pass;
    std::cout << "CRITERION " << n << ": " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail << std::endl;
  }
  return all ? 0 : 1;
}
