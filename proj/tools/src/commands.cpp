#include "orchestra_cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>

#include "orchestra/errors.hpp"
#include "orchestra/evaluation.hpp"
#include "orchestra/format.hpp"
#include "orchestra/losses.hpp"

namespace orchestra::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("output_dir: cannot create " + dir.string() + ": " + ec.message());
}

void warn_cluster_count(const ExperimentConfig& cfg, std::size_t num_classes, std::ostream& log) {
  if (!enough_clusters_for_bound(cfg.federation.global_clusters, num_classes)) {
    log << "warning: global_clusters=" << cfg.federation.global_clusters
        << " <= 4M+2=" << 4 * num_classes + 2
        << "; the linear-probe error bound does not apply\n";
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string json_cell(const json& v) {
  if (v.is_string()) return csv_safe(v.get<std::string>());
  if (v.is_number_float()) return format_double(v.get<double>());
  return csv_safe(v.dump());
}

}  // namespace

// ---- run -------------------------------------------------------------------

std::string summary_csv(const FederationResult& result, const ExperimentConfig& cfg,
                        const std::string& hash) {
  const RoundMetrics& init = result.initial;
  const RoundMetrics& last = result.timeline.empty() ? init : result.timeline.back();
  std::ostringstream s;
  s << "config_hash,method,seed,rounds,final_delta,final_knn_acc,final_linear_acc,final_align,"
       "final_unif,final_tuner,init_delta,init_knn_acc,init_linear_acc,init_tuner\n";
  s << hash << ',' << to_string(cfg.federation.method) << ',' << cfg.federation.seed << ','
    << result.timeline.size() << ',' << opt_cell(last.delta) << ',' << opt_cell(last.knn_acc)
    << ',' << opt_cell(last.linear_acc) << ',' << format_double(last.align) << ','
    << format_double(last.unif) << ',' << format_double(last.tuner) << ','
    << opt_cell(init.delta) << ',' << opt_cell(init.knn_acc) << ',' << opt_cell(init.linear_acc)
    << ',' << format_double(init.tuner) << '\n';
  return s.str();
}

RunOutputs run_experiment(const ExperimentConfig& cfg, std::ostream& log) {
  RunOutputs out;
  out.hash = config_hash(cfg);
  out.dir = cfg.output_dir / out.hash;
  make_dir(out.dir);

  const Dataset dataset = build_dataset(cfg);
  warn_cluster_count(cfg, dataset.num_classes, log);
  const std::vector<ClientShard> shards = build_shards(cfg, dataset);

  FederationConfig fed = cfg.federation;
  fed.encoder.input_dim = dataset.input_dim();

  {
    std::ofstream config_file = open_out(out.dir / "config.json");
    config_file << to_json(cfg).dump(2) << '\n';
  }
  std::ofstream metrics = open_out(out.dir / "metrics.jsonl");
  out.result = run_federation(fed, dataset, shards, [&](const RoundMetrics& m) {
    metrics << metrics_record(m, out.hash, fed.seed, fed.method).dump() << '\n';
    metrics.flush();
  });
  metrics.close();
  std::ofstream summary = open_out(out.dir / "summary.csv");
  summary << summary_csv(out.result, cfg, out.hash);
  return out;
}

// ---- tune ------------------------------------------------------------------

TuneOutputs run_tune(const json& grid_file, std::ostream& log, std::size_t threads) {
  if (!grid_file.is_object()) throw ConfigError("grid file must be a JSON object");
  for (const auto& [key, _] : grid_file.items()) {
    if (key != "base" && key != "grid" && key != "tune_rounds")
      throw ConfigError("grid file: unknown field '" + key + "'");
  }
  if (!grid_file.contains("base")) throw ConfigError("grid file: missing required field 'base'");
  if (!grid_file.contains("grid") || !grid_file["grid"].is_object())
    throw ConfigError("grid file: missing required object 'grid'");
  std::size_t tune_rounds = 20;
  if (grid_file.contains("tune_rounds")) {
    const json& t = grid_file["tune_rounds"];
    if (!t.is_number_integer() || t.get<long long>() < 1)
      throw ConfigError("grid file: field 'tune_rounds' must be a positive integer");
    tune_rounds = t.get<std::size_t>();
  }

  static const std::vector<std::string> data_keys = {
      "clients", "alpha", "seed", "dataset", "classes", "input_dim", "per_class", "class_sep",
      "within_std", "data_seed", "cifar_path", "cifar_classes", "min_shard_size", "output_dir"};

  const json& base = grid_file["base"];
  const ExperimentConfig base_cfg = parse_config(base);
  TuneOutputs out;
  std::vector<std::vector<json>> values;
  for (const auto& [key, vals] : grid_file["grid"].items()) {
    if (std::find(data_keys.begin(), data_keys.end(), key) != data_keys.end())
      throw ConfigError("grid: field '" + key + "' changes the data or partition; set it in base");
    if (!vals.is_array() || vals.empty())
      throw ConfigError("grid: field '" + key + "' needs a non-empty array of values");
    out.grid_keys.push_back(key);
    values.emplace_back(vals.begin(), vals.end());
  }
  if (out.grid_keys.empty()) throw ConfigError("grid: empty grid");

  std::vector<FederationConfig> grid;
  std::vector<std::vector<json>> cells;
  std::vector<std::size_t> idx(values.size(), 0);
  for (;;) {
    json cfg_json = base;
    std::vector<json> row;
    for (std::size_t k = 0; k < values.size(); ++k) {
      cfg_json[out.grid_keys[k]] = values[k][idx[k]];
      row.push_back(values[k][idx[k]]);
    }
    ExperimentConfig cfg = parse_config(cfg_json);
    grid.push_back(cfg.federation);
    cells.push_back(std::move(row));
    std::size_t k = values.size();
    while (k-- > 0) {
      if (++idx[k] < values[k].size()) break;
      idx[k] = 0;
    }
    if (k == static_cast<std::size_t>(-1)) break;
  }

  const Dataset dataset = build_dataset(base_cfg);
  const std::vector<ClientShard> shards = build_shards(base_cfg, dataset);
  for (auto& g : grid) g.encoder.input_dim = dataset.input_dim();
  log << "tuning " << grid.size() << " configs for " << tune_rounds << " rounds\n";
  out.search = hyperparam_search(grid, dataset, shards, tune_rounds, threads);

  out.order.resize(out.search.table.size());
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  const auto& table = out.search.table;
  std::stable_sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
    if (table[a].score != table[b].score) return table[a].score > table[b].score;
    return table[a].config.lr < table[b].config.lr;
  });

  const fs::path dir = base_cfg.output_dir / config_hash(base_cfg);
  make_dir(dir);
  out.table_path = dir / "tune.csv";
  std::ofstream csv = open_out(out.table_path);
  for (const auto& key : out.grid_keys) csv << key << ',';
  csv << "align,unif,score,error\n";
  for (std::size_t i : out.order) {
    for (const auto& cell : cells[i]) csv << json_cell(cell) << ',';
    const auto& row = table[i];
    csv << format_double(row.align) << ',' << format_double(row.unif) << ','
        << format_double(row.score) << ',' << csv_safe(row.error) << '\n';
  }
  return out;
}

// ---- partition-stats -------------------------------------------------------

PartitionStats partition_stats(const PartitionStatsRequest& req) {
  if (req.alphas.empty()) throw ConfigError("partition-stats: no alpha values");
  if (req.seeds.empty()) throw ConfigError("partition-stats: no seeds");
  if (req.clients == 0) throw ConfigError("partition-stats: clients must be positive");
  const Dataset dataset = gen_mixture(req.mixture);
  PartitionStats stats;
  for (double alpha : req.alphas) {
    std::vector<double> one, pct;
    for (std::uint64_t seed : req.seeds) {
      PartitionStatsCell cell{alpha, seed, std::nullopt, std::nullopt, {}};
      try {
        const auto shards =
            dirichlet_partition(dataset, req.clients, alpha, seed, req.min_shard_size);
        cell.at_least_one = avg_classes_per_client(shards, dataset.labels, dataset.num_classes,
                                                   ClassPresenceRule::kAtLeastOne);
        cell.at_least_one_pct = avg_classes_per_client(
            shards, dataset.labels, dataset.num_classes, ClassPresenceRule::kAtLeastOnePercent);
        one.push_back(*cell.at_least_one);
        pct.push_back(*cell.at_least_one_pct);
      } catch (const PartitionError& e) {
        cell.error = e.what();
      }
      stats.cells.push_back(std::move(cell));
    }
    PartitionStatsMedian m{alpha, std::nullopt, std::nullopt};
    if (!one.empty()) {
      m.at_least_one = median(one);
      m.at_least_one_pct = median(pct);
    }
    stats.medians.push_back(m);
  }
  return stats;
}

std::string partition_stats_csv(const PartitionStats& stats) {
  std::ostringstream s;
  s << "alpha,seed,avg_classes_at_least_one,avg_classes_at_least_1pct,error\n";
  for (const auto& c : stats.cells) {
    s << format_double(c.alpha) << ',' << c.seed << ',' << opt_cell(c.at_least_one) << ','
      << opt_cell(c.at_least_one_pct) << ',' << csv_safe(c.error) << '\n';
  }
  for (const auto& m : stats.medians) {
    s << format_double(m.alpha) << ",median," << opt_cell(m.at_least_one) << ','
      << opt_cell(m.at_least_one_pct) << ',' << (m.at_least_one ? "" : "all cells failed")
      << '\n';
  }
  return s.str();
}

// ---- cluster ---------------------------------------------------------------

ClusterOutputs run_cluster(const fs::path& csv_in, std::size_t num_clusters,
                           const SinkhornConfig& cfg, const fs::path& out_dir) {
  const Dataset ds = read_dataset_csv(csv_in);
  ClusterOutputs out;
  out.points = ds.features;
  normalize_rows(out.points);
  out.result = sinkhorn_balanced(out.points, num_clusters, cfg);
  const auto& assignment = out.result.assignment.assignment;
  out.sizes = cluster_sizes(assignment, num_clusters);
  out.delta = inter_cluster_mixing(out.result.centroids, out.points, assignment);

  make_dir(out_dir);
  std::ofstream a = open_out(out_dir / "assignments.csv");
  a << "index,cluster\n";
  for (std::size_t i = 0; i < assignment.size(); ++i) a << i << ',' << assignment[i] << '\n';
  std::ofstream c = open_out(out_dir / "centroids.csv");
  c << "cluster";
  for (std::size_t d = 0; d < out.result.centroids.dim(); ++d) c << ",c" << d;
  c << '\n';
  const DenseMatrix rows = out.result.centroids.as_rows();
  for (std::size_t g = 0; g < rows.rows(); ++g) {
    c << g;
    for (double v : rows.row(g)) c << ',' << format_double(v);
    c << '\n';
  }
  return out;
}

Centroids read_centroids_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  const std::size_t dim = split_csv_line(line).size() - 1;
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != dim + 1) throw FormatError(path.string() + ": ragged row");
    for (std::size_t d = 1; d < cells.size(); ++d) values.push_back(parse_double(cells[d], "centroid"));
    ++rows;
  }
  DenseMatrix m(rows, dim);
  std::copy(values.begin(), values.end(), m.data().begin());
  return Centroids(m.transposed());
}

std::vector<std::size_t> read_assignments_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": missing header");
  std::vector<std::size_t> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 2) throw FormatError(path.string() + ": expected index,cluster");
    out.push_back(parse_size(cells[1], "cluster"));
  }
  return out;
}

// ---- grad-check ------------------------------------------------------------

namespace {

std::vector<double> flatten_grads(const Gradients& g) {
  std::vector<double> out;
  for (const auto& l : g.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  out.insert(out.end(), g.rot_head.data().begin(), g.rot_head.data().end());
  return out;
}

DenseMatrix gaussian(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

constexpr std::size_t kCheckBatch = 6;
constexpr std::size_t kCheckClusters = 4;
constexpr double kCheckStep = 1e-5;
constexpr double kRelFloor = 1e-6;

LossSpec make_instance(std::size_t which, std::size_t dim, Rng& rng) {
  switch (which) {
    case 0:
      return SquaredErrorLoss{gaussian(kCheckBatch, dim, rng), gaussian(kCheckBatch, dim, rng)};
    case 1: {
      ClusterLoss l;
      l.augmented = gaussian(kCheckBatch, dim, rng);
      l.target_probs = softmax_rows(gaussian(kCheckBatch, kCheckClusters, rng));
      l.centroids = Centroids::from_rows(gaussian(kCheckClusters, dim, rng));
      l.tau = 0.1;
      return l;
    }
    case 2: {
      DegeneracyLoss l;
      const DenseMatrix x = gaussian(kCheckBatch, dim, rng);
      l.rotated = DenseMatrix(kCheckBatch, dim);
      for (std::size_t i = 0; i < kCheckBatch; ++i) {
        const std::size_t r = rng.below(kNumRotations);
        l.rotation.push_back(r);
        const auto rot = rotate(x.row(i), r);
        std::copy(rot.begin(), rot.end(), l.rotated.row(i).begin());
      }
      return l;
    }
    default: {
      SpecLoss l;
      l.clean = gaussian(kCheckBatch, dim, rng);
      l.augmented = augment_batch(l.clean, AugmentConfig{}, rng);
      return l;
    }
  }
}

}  // namespace

double max_relative_error(const Gradients& analytic, const Gradients& numeric) {
  const auto a = flatten_grads(analytic);
  const auto f = flatten_grads(numeric);
  if (a.size() != f.size()) throw ShapeError("max_relative_error: gradient sizes differ");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(f[i]), kRelFloor});
    worst = std::max(worst, std::abs(a[i] - f[i]) / denom);
  }
  return worst;
}

std::vector<GradCheckLine> grad_check(std::uint64_t seed, std::size_t draws, bool flip_sign) {
  if (draws == 0) throw ConfigError("grad-check: draws must be positive");
  const EncoderShape shape{.input_dim = 8, .hidden = {12, 12}, .rep_dim = 8};
  std::vector<GradCheckLine> lines;
  for (std::size_t which = 0; which < 4; ++which) {
    GradCheckLine line;
    line.draws = draws;
    for (std::size_t d = 0; d < draws; ++d) {
      Rng rng = Rng::stream(seed, StreamTag::kTest, d, which);
      EncoderParams params = init_encoder(shape, rng);
      for (auto& l : params.layers)
        for (double& b : l.bias) b = 0.1 * rng.normal();
      const LossSpec spec = make_instance(which, shape.input_dim, rng);
      line.loss = loss_name(spec);
      LossAndGrads lg = compute_loss_and_grads(params, spec);
      if (flip_sign) {
        Gradients neg = Gradients::zeros_like(params);
        for (std::size_t i = 0; i < neg.layers.size(); ++i) {
          for (std::size_t j = 0; j < neg.layers[i].weight.size(); ++j)
            neg.layers[i].weight.data()[j] = -lg.grads.layers[i].weight.data()[j];
          for (std::size_t j = 0; j < neg.layers[i].bias.size(); ++j)
            neg.layers[i].bias[j] = -lg.grads.layers[i].bias[j];
        }
        for (std::size_t j = 0; j < neg.rot_head.size(); ++j)
          neg.rot_head.data()[j] = -lg.grads.rot_head.data()[j];
        lg.grads = std::move(neg);
      }
      const Gradients numeric = finite_diff_grads(
          params, [&](const EncoderParams& p) { return evaluate_loss(p, spec); }, kCheckStep);
      line.max_rel_error = std::max(line.max_rel_error, max_relative_error(lg.grads, numeric));
    }
    lines.push_back(line);
  }
  return lines;
}

// ---- entry point -----------------------------------------------------------

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
  std::vector<double> out;
  for (auto cell : split_csv_line(text)) out.push_back(parse_double(cell, what));
  return out;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated clustering simulator", "orchestra"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Run one federation and write metrics");
  std::string run_config;
  run->add_option("config", run_config, "Flat JSON config file")->required();
  double o_alpha = 0, o_participation = 0;
  std::size_t o_clients = 0, o_rounds = 0, o_global = 0, o_local = 0, o_threads = 1;
  std::uint64_t o_seed = 0;
  std::string o_method, o_outdir;
  auto* f_alpha = run->add_option("--alpha", o_alpha, "Dirichlet concentration");
  auto* f_clients = run->add_option("--clients", o_clients, "Number of clients");
  auto* f_rounds = run->add_option("--rounds", o_rounds, "Federation rounds");
  auto* f_part = run->add_option("--participation", o_participation, "Participation ratio");
  auto* f_global = run->add_option("--global-clusters", o_global, "Global clusters G");
  auto* f_local = run->add_option("--local-clusters", o_local, "Local clusters L");
  auto* f_method = run->add_option("--method", o_method, "orchestra|specloss|rotpred|random");
  auto* f_seed = run->add_option("--seed", o_seed, "Seed");
  auto* f_threads = run->add_option("--threads", o_threads, "Worker threads");
  auto* f_outdir = run->add_option("--output-dir", o_outdir, "Output directory");

  // tune
  auto* tune = app.add_subcommand("tune", "Grid search scored by align + 0.2 unif");
  std::string grid_path;
  std::size_t tune_threads = 1;
  tune->add_option("grid", grid_path, "Grid JSON file")->required();
  tune->add_option("--threads", tune_threads, "Configs evaluated in parallel");

  // partition-stats
  auto* pstats = app.add_subcommand("partition-stats", "Classes per client under Dirichlet splits");
  PartitionStatsRequest preq;
  std::string alpha_list = "1e5,0.1,1e-3";
  std::size_t num_seeds = 5;
  std::string pstats_out;
  pstats->add_option("--classes", preq.mixture.num_classes, "Classes M")->capture_default_str();
  pstats->add_option("--per-class", preq.mixture.per_class, "Samples per class")->capture_default_str();
  pstats->add_option("--input-dim", preq.mixture.input_dim, "Feature dimension")->capture_default_str();
  pstats->add_option("--data-seed", preq.mixture.seed, "Dataset seed")->capture_default_str();
  pstats->add_option("--clients", preq.clients, "Clients K")->capture_default_str();
  pstats->add_option("--alphas", alpha_list, "Comma-separated alpha values")->capture_default_str();
  pstats->add_option("--seeds", num_seeds, "Partition seeds 0..n-1")->capture_default_str();
  pstats->add_option("--min-shard-size", preq.min_shard_size, "Minimum shard size")->capture_default_str();
  pstats->add_option("--out", pstats_out, "Write the table here instead of stdout");

  // cluster
  auto* cluster = app.add_subcommand("cluster", "Balanced clustering of a CSV of vectors");
  std::string cluster_in, cluster_out = ".";
  std::size_t cluster_g = 0;
  SinkhornConfig scfg;
  cluster->add_option("input", cluster_in, "CSV with header label,f0,...")->required();
  cluster->add_option("-G,--clusters", cluster_g, "Number of clusters")->required();
  cluster->add_option("--epsilon", scfg.epsilon, "Entropic regularization")->capture_default_str();
  cluster->add_option("--outer", scfg.outer_iters, "Outer iterations")->capture_default_str();
  cluster->add_option("--inner", scfg.inner_iters, "Sinkhorn iterations")->capture_default_str();
  cluster->add_option("--tol", scfg.tol, "Marginal tolerance")->capture_default_str();
  cluster->add_option("--seed", scfg.seed, "Seed")->capture_default_str();
  cluster->add_option("--out-dir", cluster_out, "Output directory")->capture_default_str();

  // grad-check
  auto* gcheck = app.add_subcommand("grad-check", "Analytic vs finite-difference gradients");
  std::uint64_t gc_seed = 0;
  std::size_t gc_draws = 20;
  bool gc_flip = false;
  gcheck->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gcheck->add_option("--draws", gc_draws, "Random instances per loss")->capture_default_str();
  gcheck->add_flag("--inject-sign-flip", gc_flip)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) {
      json j = read_json_file(run_config);
      if (!j.is_object()) throw ConfigError("config must be a JSON object");
      if (*f_alpha) j["alpha"] = o_alpha;
      if (*f_clients) j["clients"] = o_clients;
      if (*f_rounds) j["rounds"] = o_rounds;
      if (*f_part) j["participation"] = o_participation;
      if (*f_global) j["global_clusters"] = o_global;
      if (*f_local) j["local_clusters"] = o_local;
      if (*f_method) j["method"] = o_method;
      if (*f_seed) j["seed"] = o_seed;
      if (*f_threads) j["threads"] = o_threads;
      if (*f_outdir) j["output_dir"] = o_outdir;
      const ExperimentConfig cfg = parse_config(j);
      const RunOutputs r = run_experiment(cfg, err);
      out << "config_hash " << r.hash << '\n' << "output " << r.dir.string() << '\n';
      const RoundMetrics& last = r.result.timeline.empty() ? r.result.initial : r.result.timeline.back();
      out << "final linear_acc=" << opt_cell(last.linear_acc) << " knn_acc=" << opt_cell(last.knn_acc)
          << " delta=" << opt_cell(last.delta) << " tuner=" << format_double(last.tuner) << '\n';
    } else if (*tune) {
      const TuneOutputs t = run_tune(read_json_file(grid_path), err, tune_threads);
      const auto& best = t.search.table[t.search.best];
      out << "wrote " << t.table_path.string() << '\n' << "best";
      out << " lr=" << format_double(best.config.lr) << " ema=" << format_double(best.config.ema)
          << " tau_assign=" << format_double(best.config.tau_assign)
          << " local_epochs=" << best.config.local_epochs
          << " global_clusters=" << best.config.global_clusters
          << " local_clusters=" << best.config.local_clusters
          << " score=" << format_double(best.score) << '\n';
    } else if (*pstats) {
      preq.alphas = parse_double_list(alpha_list, "alpha");
      preq.seeds.resize(num_seeds);
      std::iota(preq.seeds.begin(), preq.seeds.end(), std::uint64_t{0});
      const std::string table = partition_stats_csv(partition_stats(preq));
      if (pstats_out.empty()) {
        out << table;
      } else {
        std::ofstream f = open_out(pstats_out);
        f << table;
      }
    } else if (*cluster) {
      const ClusterOutputs c = run_cluster(cluster_in, cluster_g, scfg, cluster_out);
      out << "delta " << (c.delta ? format_double(*c.delta) : std::string("NA")) << '\n' << "sizes";
      for (std::size_t s : c.sizes) out << ' ' << s;
      out << '\n';
    } else if (*gcheck) {
      bool ok = true;
      for (const auto& line : grad_check(gc_seed, gc_draws, gc_flip)) {
        const bool pass = line.max_rel_error < kGradCheckTolerance;
        ok = ok && pass;
        out << line.loss << " max_rel_error=" << format_double(line.max_rel_error)
            << " draws=" << line.draws << ' ' << (pass ? "PASS" : "FAIL") << '\n';
      }
      return ok ? kExitOk : kExitRuntime;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace orchestra::cli
