#include "orchestra/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "orchestra/errors.hpp"
#include "orchestra/parallel.hpp"

namespace orchestra {

namespace {

std::size_t class_count(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::size_t m = 0;
  for (std::size_t y : a) m = std::max(m, y + 1);
  for (std::size_t y : b) m = std::max(m, y + 1);
  return m;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::size_t default_knn_k(std::size_t n_train) {
  return std::max<std::size_t>(1, std::min<std::size_t>(200, n_train / 10));
}

ProbeReport knn_probe(const DenseMatrix& train_reps, std::span<const std::size_t> train_labels,
                      const DenseMatrix& test_reps, std::span<const std::size_t> test_labels,
                      std::size_t k) {
  const std::size_t n_train = train_reps.rows();
  if (train_labels.size() != n_train || test_labels.size() != test_reps.rows())
    throw ShapeError("knn_probe: labels do not match representations");
  if (k == 0 || k > n_train)
    throw ConfigError("knn_probe: k=" + std::to_string(k) + " must lie in [1, " +
                      std::to_string(n_train) + "]");
  const std::size_t m = class_count(train_labels, test_labels);
  const DenseMatrix sim = matmul_bt(test_reps, train_reps);

  std::vector<std::size_t> order(n_train);
  std::vector<std::size_t> votes(m);
  std::vector<double> mass(m);
  std::size_t correct = 0;
  for (std::size_t t = 0; t < test_reps.rows(); ++t) {
    auto s = sim.row(t);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    std::fill(votes.begin(), votes.end(), 0);
    std::fill(mass.begin(), mass.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      ++votes[train_labels[order[i]]];
      mass[train_labels[order[i]]] += s[order[i]];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < m; ++c) {
      if (votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best])) best = c;
    }
    if (best == test_labels[t]) ++correct;
  }
  ProbeReport r;
  r.kind = ProbeKind::kKnn;
  r.n_train = n_train;
  r.n_test = test_reps.rows();
  r.hyper = k;
  r.accuracy = r.n_test == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(r.n_test);
  return r;
}

ProbeReport linear_probe(const DenseMatrix& train_reps, std::span<const std::size_t> train_labels,
                         const DenseMatrix& test_reps, std::span<const std::size_t> test_labels,
                         std::size_t epochs, double lr) {
  const std::size_t n = train_reps.rows();
  if (train_labels.size() != n || test_labels.size() != test_reps.rows())
    throw ShapeError("linear_probe: labels do not match representations");
  if (test_reps.cols() != train_reps.cols()) throw ShapeError("linear_probe: dims differ");
  const bool multi_class = std::any_of(train_labels.begin(), train_labels.end(),
                                       [&](std::size_t y) { return y != train_labels.front(); });
  if (n == 0 || !multi_class) throw ConfigError("linear_probe: train set needs at least 2 classes");

  const std::size_t m = class_count(train_labels, test_labels);
  const std::size_t d = train_reps.cols();
  DenseMatrix w(d, m);
  std::vector<double> b(m, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t e = 0; e < epochs; ++e) {
    DenseMatrix logits = matmul(train_reps, w);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = logits.row(i);
      for (std::size_t c = 0; c < m; ++c) row[c] += b[c];
    }
    DenseMatrix g = softmax_rows(logits);
    for (std::size_t i = 0; i < n; ++i) g(i, train_labels[i]) -= 1.0;
    for (double& v : g.data()) v *= inv_n;
    const DenseMatrix gw = matmul_at(train_reps, g);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] -= lr * gw.data()[i];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < m; ++c) b[c] -= lr * g(i, c);
  }

  DenseMatrix logits = matmul(test_reps, w);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_reps.rows(); ++i) {
    auto row = logits.row(i);
    for (std::size_t c = 0; c < m; ++c) row[c] += b[c];
    if (argmax(row) == test_labels[i]) ++correct;
  }
  ProbeReport r;
  r.kind = ProbeKind::kLinear;
  r.n_train = n;
  r.n_test = test_reps.rows();
  r.hyper = epochs;
  r.accuracy = r.n_test == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(r.n_test);
  return r;
}

double alignment_score(const EncoderParams& encoder, std::span<const DenseMatrix> client_samples,
                       const AugmentConfig& augment, Rng& rng) {
  if (client_samples.empty()) throw ConfigError("alignment_score: no evaluation samples");
  double total = 0.0;
  for (const auto& x : client_samples) {
    if (x.rows() == 0) throw ConfigError("alignment_score: empty client sample");
    const DenseMatrix f = forward(encoder, x);
    const DenseMatrix g = forward(encoder, augment_batch(x, augment, rng));
    double s = 0.0;
    for (std::size_t i = 0; i < f.rows(); ++i) s += dot(f.row(i), g.row(i));
    total += s / static_cast<double>(f.rows());
  }
  return total / static_cast<double>(client_samples.size());
}

double uniformity_from_reps(std::span<const DenseMatrix> client_reps, double tau) {
  if (!(tau > 0.0)) throw ConfigError("uniformity: tau must be positive");
  if (client_reps.empty()) throw ConfigError("uniformity: no evaluation samples");
  double total = 0.0;
  for (const auto& f : client_reps) {
    const std::size_t n = f.rows();
    if (n < 2) throw ConfigError("uniformity: each client sample needs >= 2 rows");
    const DenseMatrix sim = matmul_bt(f, f);
    double client = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sim.row(i);
      double mx = -INFINITY;
      for (double v : s) mx = std::max(mx, v / tau);
      double acc = 0.0;
      for (double v : s) acc += std::exp(v / tau - mx);
      client += mx + std::log(acc / static_cast<double>(n));
    }
    total += client / static_cast<double>(n);
  }
  return -total / static_cast<double>(client_reps.size());
}

double uniformity_score(const EncoderParams& encoder, std::span<const DenseMatrix> client_samples,
                        double tau) {
  std::vector<DenseMatrix> reps;
  reps.reserve(client_samples.size());
  for (const auto& x : client_samples) reps.push_back(forward(encoder, x));
  return uniformity_from_reps(reps, tau);
}

double tuner_score(double align, double unif) { return align + kUniformityWeight * unif; }

TunerScore evaluate_tuner(const EncoderParams& encoder, std::span<const DenseMatrix> client_samples,
                          const AugmentConfig& augment, double tau, Rng& rng) {
  TunerScore s;
  s.align = alignment_score(encoder, client_samples, augment, rng);
  s.unif = uniformity_score(encoder, client_samples, tau);
  s.combined = tuner_score(s.align, s.unif);
  return s;
}

SearchResult hyperparam_search(std::span<const FederationConfig> grid, const Dataset& dataset,
                               std::span<const ClientShard> shards, std::size_t tune_rounds,
                               std::size_t threads) {
  if (grid.empty()) throw ConfigError("hyperparam_search: empty grid");
  SearchResult result;
  result.table.resize(grid.size());
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    SearchRow& row = result.table[i];
    row.config = grid[i];
    row.config.rounds = tune_rounds;
    row.config.threads = 1;
    try {
      const FederationResult fr = run_federation(row.config, dataset, shards);
      const std::vector<DenseMatrix> samples = eval_samples(dataset, shards, row.config);
      Rng rng = Rng::stream(row.config.seed, StreamTag::kEval, 0xface);
      const TunerScore ts =
          evaluate_tuner(fr.target, samples, row.config.augment, row.config.tau_unif, rng);
      row.align = ts.align;
      row.unif = ts.unif;
      row.score = ts.combined;
      if (!std::isfinite(row.score)) throw NumericalError("tuner score is not finite");
    } catch (const std::exception& e) {
      row.score = -std::numeric_limits<double>::infinity();
      row.error = e.what();
    }
  });
  for (std::size_t i = 1; i < result.table.size(); ++i) {
    const auto& cand = result.table[i];
    const auto& best = result.table[result.best];
    if (cand.score > best.score || (cand.score == best.score && cand.config.lr < best.config.lr))
      result.best = i;
  }
  return result;
}

ProbeData encode_split(const EncoderParams& encoder, const Dataset& dataset, const Split& split) {
  ProbeData pd;
  pd.train_reps = forward(encoder, dataset.features.select_rows(split.train));
  pd.test_reps = forward(encoder, dataset.features.select_rows(split.test));
  for (std::size_t id : split.train) pd.train_labels.push_back(dataset.labels[id]);
  for (std::size_t id : split.test) pd.test_labels.push_back(dataset.labels[id]);
  return pd;
}

}  // namespace orchestra
