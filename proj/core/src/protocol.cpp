#include "orchestra/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>

#include "orchestra/errors.hpp"
#include "orchestra/evaluation.hpp"
#include "orchestra/losses.hpp"
#include "orchestra/parallel.hpp"

namespace orchestra {

std::string to_string(Method m) {
  switch (m) {
    case Method::kOrchestra: return "orchestra";
    case Method::kSpecLoss: return "specloss";
    case Method::kRotPred: return "rotpred";
    case Method::kRandom: return "random";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "orchestra") return Method::kOrchestra;
  if (name == "specloss") return Method::kSpecLoss;
  if (name == "rotpred") return Method::kRotPred;
  if (name == "random") return Method::kRandom;
  throw ConfigError("method: unknown value '" + name +
                    "' (expected orchestra, specloss, rotpred or random)");
}

void FederationConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (clients == 0) fail("clients", "must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0)) fail("participation", "must lie in (0, 1]");
  if (batch_size == 0) fail("batch_size", "must be >= 1");
  if (method == Method::kSpecLoss && batch_size < 2) fail("batch_size", "specloss needs >= 2");
  if (!(lr >= 0.0)) fail("lr", "must be >= 0");
  if (!(ema >= 0.0 && ema <= 1.0)) fail("ema", "must lie in [0, 1]");
  if (global_clusters < 2) fail("global_clusters", "must be >= 2");
  if (local_clusters < 1) fail("local_clusters", "must be >= 1");
  if (!(tau_assign > 0.0)) fail("tau_assign", "must be positive");
  if (!(tau_unif > 0.0)) fail("tau_unif", "must be positive");
  if (!(alpha > 0.0)) fail("alpha", "must be positive");
  if (mem_size < local_clusters) fail("mem_size", "must be >= local_clusters");
  if (eval_every == 0) fail("eval_every", "must be >= 1");
  if (encoder.rep_dim == 0) fail("rep_dim", "must be >= 1");
  if (!(sinkhorn.epsilon > 0.0)) fail("sinkhorn_epsilon", "must be positive");
  if (!(probe_lr > 0.0)) fail("probe_lr", "must be positive");
  if (eval_per_client < 2) fail("eval_per_client", "must be >= 2");
  try {
    augment.validate();
  } catch (const ConfigError& e) {
    fail("augment", e.what());
  }
}

MemoryBuffer::MemoryBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("mem_size must be >= 1");
}

void MemoryBuffer::push(std::span<const double> rep) {
  if (rows_.size() == capacity_) rows_.pop_front();
  rows_.emplace_back(rep.begin(), rep.end());
}

void MemoryBuffer::push_rows(const DenseMatrix& reps) {
  for (std::size_t r = 0; r < reps.rows(); ++r) push(reps.row(r));
}

DenseMatrix MemoryBuffer::contents() const {
  if (rows_.empty()) return {};
  DenseMatrix out(rows_.size(), rows_.front().size());
  for (std::size_t r = 0; r < rows_.size(); ++r)
    std::copy(rows_[r].begin(), rows_[r].end(), out.row(r).begin());
  return out;
}

namespace {

DenseMatrix rotate_batch(const DenseMatrix& batch, std::span<const std::size_t> idx,
                         InputLayout layout) {
  DenseMatrix out(batch.rows(), batch.cols());
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    auto rot = rotate_input(batch.row(r), idx[r], layout);
    std::copy(rot.begin(), rot.end(), out.row(r).begin());
  }
  return out;
}

SinkhornConfig seeded(const SinkhornConfig& base, Rng rng) {
  SinkhornConfig c = base;
  c.seed = rng.next_u64();
  return c;
}

}  // namespace

ClientResult client_round(const Dataset& dataset, const ClientShard& shard,
                          const EncoderParams& online, const EncoderParams& target,
                          const Centroids& global_centroids, const FederationConfig& cfg,
                          std::size_t round_idx) {
  ClientResult result;
  result.client_id = shard.client_id;
  result.shard_size = shard.sample_ids.size();
  result.online = online;
  result.target = target;
  if (shard.sample_ids.size() < cfg.batch_size) {
    result.skipped = true;
    return result;
  }

  Rng rng = Rng::stream(cfg.seed, StreamTag::kClient, round_idx, shard.client_id);
  Rng order_rng = rng.split(1);
  Rng aug_rng = rng.split(2);
  Rng rot_rng = rng.split(3);

  MemoryBuffer buffer(cfg.mem_size);
  const bool trains = cfg.method != Method::kRandom;
  const std::size_t steps_per_epoch = shard.sample_ids.size() / cfg.batch_size;
  double sum_cluster = 0.0;
  double sum_deg = 0.0;
  double sum_spec = 0.0;

  std::vector<std::size_t> order = shard.sample_ids;
  for (std::size_t epoch = 0; trains && epoch < cfg.local_epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::span<const std::size_t> ids(order.data() + step * cfg.batch_size, cfg.batch_size);
      const DenseMatrix clean = dataset.features.select_rows(ids);
      const DenseMatrix augmented = augment_batch(clean, cfg.augment, aug_rng);
      const DenseMatrix target_reps = forward(result.target, clean);
      buffer.push_rows(target_reps);

      Gradients grads = Gradients::zeros_like(result.online);
      double total = 0.0;
      if (cfg.method == Method::kOrchestra) {
        ClusterLoss spec{augmented, assignment_probs(target_reps, global_centroids, cfg.tau_assign),
                         global_centroids, cfg.tau_assign};
        auto lg = compute_loss_and_grads(result.online, spec);
        grads += lg.grads;
        sum_cluster += lg.loss;
        total += lg.loss;
      }
      if (cfg.method == Method::kOrchestra || cfg.method == Method::kRotPred) {
        std::vector<std::size_t> rot(cfg.batch_size);
        for (auto& r : rot) r = rot_rng.below(kNumRotations);
        DegeneracyLoss spec{rotate_batch(clean, rot, dataset.layout), std::move(rot)};
        auto lg = compute_loss_and_grads(result.online, spec);
        grads += lg.grads;
        sum_deg += lg.loss;
        total += lg.loss;
      }
      if (cfg.method == Method::kSpecLoss) {
        auto lg = compute_loss_and_grads(result.online, SpecLoss{clean, augmented});
        grads += lg.grads;
        sum_spec += lg.loss;
        total += lg.loss;
      }
      result.online = sgd_step(result.online, grads, cfg.lr);
      result.target = ema_update(result.target, result.online, cfg.ema);
      epoch_total += total;
      ++result.stats.steps;
    }
    result.stats.epoch_losses.push_back(epoch_total / static_cast<double>(steps_per_epoch));
  }

  if (result.stats.steps > 0) {
    const double steps = static_cast<double>(result.stats.steps);
    result.stats.mean_cluster_loss = sum_cluster / steps;
    result.stats.mean_deg_loss = sum_deg / steps;
    result.stats.mean_spec_loss = sum_spec / steps;
  }

  // Too few buffered reps to form L clusters (no training, or tiny E * B):
  // top up with the current target encoding of the shard.
  if (buffer.size() < cfg.local_clusters || buffer.empty()) {
    std::vector<std::size_t> fill = shard.sample_ids;
    rng.split(4).shuffle(fill);
    fill.resize(std::min(fill.size(), cfg.mem_size));
    buffer.push_rows(forward(result.target, dataset.features.select_rows(fill)));
  }
  result.stats.buffer_size = buffer.size();
  result.local_centroids =
      sinkhorn_balanced(buffer.contents(), cfg.local_clusters, seeded(cfg.sinkhorn, rng.split(5)))
          .centroids;
  return result;
}

EncoderParams fedavg(std::span<const EncoderParams> params, std::span<const double> weights) {
  if (params.empty()) throw AggregationError("fedavg: no parameter sets to average");
  if (!weights.empty() && weights.size() != params.size())
    throw ShapeError("fedavg: one weight per parameter set required");
  std::vector<double> w(params.size(), 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw AggregationError("fedavg: weights must sum to a positive value");

  EncoderParams out = params.front();
  for_each_param(out, [](double& v) { v = 0.0; });
  for (std::size_t k = 0; k < params.size(); ++k) {
    const EncoderParams& src = params[k];
    if (src.num_params() != out.num_params() || src.layers.size() != out.layers.size())
      throw ShapeError("fedavg: parameter sets are not shape-congruent");
    const double scale = w[k] / total;
    const std::vector<double> flat = flatten(src);
    std::size_t i = 0;
    for_each_param(out, [&](double& v) { v += scale * flat[i++]; });
  }
  return out;
}

Aggregate aggregate_results(std::vector<ClientResult> results, bool weighted) {
  std::erase_if(results, [](const ClientResult& r) { return r.skipped; });
  if (results.empty()) throw AggregationError("no client results to aggregate");
  std::sort(results.begin(), results.end(),
            [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  std::vector<EncoderParams> online, target;
  std::vector<double> weights;
  std::vector<DenseMatrix> rows;
  Aggregate agg;
  for (auto& r : results) {
    online.push_back(std::move(r.online));
    target.push_back(std::move(r.target));
    weights.push_back(static_cast<double>(r.shard_size));
    rows.push_back(r.local_centroids.as_rows());
    agg.participants.push_back(r.client_id);
  }
  const std::span<const double> w = weighted ? std::span<const double>(weights) : std::span<const double>{};
  agg.online = fedavg(online, w);
  agg.target = fedavg(target, w);
  agg.local_centroid_rows = vstack(rows);
  return agg;
}

Centroids init_global_centroids(const Dataset& dataset, std::span<const ClientShard> shards,
                                const EncoderParams& target, const FederationConfig& cfg) {
  std::vector<DenseMatrix> reps;
  std::vector<std::size_t> ls;
  for (const auto& s : shards) {
    if (s.sample_ids.size() < cfg.local_clusters) continue;
    reps.push_back(forward(target, dataset.features.select_rows(s.sample_ids)));
    ls.push_back(cfg.local_clusters);
  }
  if (reps.empty())
    throw ConfigError("local_clusters: no client holds enough samples to initialize centroids");
  const SinkhornConfig sc = seeded(cfg.sinkhorn, Rng::stream(cfg.seed, StreamTag::kCluster, 0));
  return two_level_cluster(reps, ls, cfg.global_clusters, sc, cfg.threads).global;
}

Split probe_split(const Dataset& dataset, const FederationConfig& cfg) {
  Rng rng = Rng::stream(cfg.seed, StreamTag::kProbe);
  return train_test_split(dataset.size(), 0.8, rng);
}

std::vector<DenseMatrix> eval_samples(const Dataset& dataset, std::span<const ClientShard> shards,
                                      const FederationConfig& cfg) {
  const Split split = probe_split(dataset, cfg);
  std::vector<DenseMatrix> out;
  for (const auto& s : shards) {
    std::vector<std::size_t> owned = s.sample_ids;
    std::sort(owned.begin(), owned.end());
    std::vector<std::size_t> ids;
    std::set_intersection(owned.begin(), owned.end(), split.test.begin(),
                          split.test.end(), std::back_inserter(ids));
    if (ids.size() < 2) continue;
    Rng::stream(cfg.seed, StreamTag::kEval, 0, s.client_id).shuffle(ids);
    ids.resize(std::min(ids.size(), cfg.eval_per_client));
    out.push_back(dataset.features.select_rows(ids));
  }
  return out;
}

namespace {

struct Evaluator {
  const FederationConfig& cfg;
  const Dataset& dataset;
  Split split;
  DenseMatrix delta_batch;
  std::vector<DenseMatrix> samples;

  Evaluator(const FederationConfig& c, const Dataset& d, std::span<const ClientShard> shards)
      : cfg(c), dataset(d) {
    split = probe_split(dataset, cfg);
    std::vector<std::size_t> ids = split.test;
    Rng::stream(cfg.seed, StreamTag::kProbe, 1).shuffle(ids);
    ids.resize(std::min(ids.size(), cfg.delta_probe_size));
    delta_batch = dataset.features.select_rows(ids);
    samples = eval_samples(dataset, shards, cfg);
  }

  void fill(RoundMetrics& m, const EncoderParams& target, const Centroids& centroids,
            bool probes) const {
    const DenseMatrix reps = forward(target, delta_batch);
    m.delta = inter_cluster_mixing(centroids, reps, nearest_centroid(reps, centroids));
    Rng rng = Rng::stream(cfg.seed, StreamTag::kEval, m.round + 1);
    const TunerScore ts = evaluate_tuner(target, samples, cfg.augment, cfg.tau_unif, rng);
    m.align = ts.align;
    m.unif = ts.unif;
    m.tuner = ts.combined;
    if (probes) {
      const ProbeData pd = encode_split(target, dataset, split);
      const std::size_t k = cfg.knn_k == 0 ? default_knn_k(pd.train_labels.size())
                                           : std::min(cfg.knn_k, pd.train_labels.size());
      m.knn_acc = knn_probe(pd.train_reps, pd.train_labels, pd.test_reps, pd.test_labels, k).accuracy;
      m.linear_acc = linear_probe(pd.train_reps, pd.train_labels, pd.test_reps, pd.test_labels,
                                  cfg.probe_epochs, cfg.probe_lr)
                         .accuracy;
    }
  }
};

}  // namespace

FederationResult run_federation(const FederationConfig& cfg, const Dataset& dataset,
                                std::span<const ClientShard> shards, const RoundObserver& observer) {
  cfg.validate();
  dataset.validate();
  if (shards.size() != cfg.clients)
    throw ConfigError("clients: config says " + std::to_string(cfg.clients) + " but " +
                      std::to_string(shards.size()) + " shards were given");
  if (dataset.input_dim() != cfg.encoder.input_dim)
    throw ConfigError("input_dim: encoder expects " + std::to_string(cfg.encoder.input_dim) +
                      ", dataset has " + std::to_string(dataset.input_dim()));

  Rng init_rng = Rng::stream(cfg.seed, StreamTag::kInit);
  FederationResult res;
  res.online = init_encoder(cfg.encoder, init_rng);
  res.target = res.online;
  res.global_centroids = init_global_centroids(dataset, shards, res.target, cfg);

  const Evaluator eval(cfg, dataset, shards);
  res.initial.round = 0;
  eval.fill(res.initial, res.target, res.global_centroids, true);

  const auto per_round = static_cast<std::size_t>(
      std::ceil(cfg.participation * static_cast<double>(cfg.clients) - 1e-9));
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    Rng part_rng = Rng::stream(cfg.seed, StreamTag::kParticipation, round);
    auto chosen = part_rng.sample_without_replacement(cfg.clients, std::max<std::size_t>(per_round, 1));
    std::sort(chosen.begin(), chosen.end());

    std::vector<ClientResult> results(chosen.size());
    parallel_for(chosen.size(), cfg.threads, [&](std::size_t i) {
      results[i] = client_round(dataset, shards[chosen[i]], res.online, res.target,
                                res.global_centroids, cfg, round);
    });

    RoundMetrics m;
    m.round = round;
    std::size_t active = 0;
    for (const auto& r : results) {
      if (r.skipped) continue;
      ++active;
      m.mean_cluster_loss += r.stats.mean_cluster_loss;
      m.mean_deg_loss += r.stats.mean_deg_loss;
      m.mean_spec_loss += r.stats.mean_spec_loss;
    }
    if (active == 0)
      throw RoundError("round " + std::to_string(round) + ": every sampled client was skipped");
    m.mean_cluster_loss /= static_cast<double>(active);
    m.mean_deg_loss /= static_cast<double>(active);
    m.mean_spec_loss /= static_cast<double>(active);

    Aggregate agg = aggregate_results(std::move(results), cfg.weighted_fedavg);
    if (agg.local_centroid_rows.rows() < cfg.global_clusters) {
      throw ConfigError("global_clusters: round " + std::to_string(round) + " produced only " +
                        std::to_string(agg.local_centroid_rows.rows()) + " local centroids");
    }
    res.online = std::move(agg.online);
    res.target = std::move(agg.target);
    const SinkhornConfig sc = seeded(cfg.sinkhorn, Rng::stream(cfg.seed, StreamTag::kCluster, round));
    res.global_centroids = sinkhorn_balanced(agg.local_centroid_rows, cfg.global_clusters, sc).centroids;
    m.participants = std::move(agg.participants);

    const bool probes = round % cfg.eval_every == 0 || round == cfg.rounds;
    eval.fill(m, res.target, res.global_centroids, probes);
    if (!std::isfinite(m.mean_cluster_loss + m.mean_deg_loss + m.mean_spec_loss))
      throw NumericalError("round " + std::to_string(round) + ": losses are not finite");
    if (observer) observer(m);
    res.timeline.push_back(std::move(m));
  }
  return res;
}

std::size_t scale_local_epochs(std::size_t base_epochs, std::size_t base_clients,
                               std::size_t new_clients) {
  if (base_epochs == 0 || base_clients == 0 || new_clients == 0)
    throw ConfigError("scale_local_epochs: inputs must be positive");
  const double scaled = static_cast<double>(base_epochs) * static_cast<double>(new_clients) /
                        static_cast<double>(base_clients);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
}

double scale_lr(double base_lr, double base_ratio, double new_ratio) {
  if (!(base_lr > 0.0 && base_ratio > 0.0 && new_ratio > 0.0))
    throw ConfigError("scale_lr: inputs must be positive");
  return base_lr * std::sqrt(new_ratio / base_ratio);
}

}  // namespace orchestra
