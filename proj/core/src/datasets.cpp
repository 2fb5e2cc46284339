#include "orchestra/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "orchestra/errors.hpp"
#include "orchestra/format.hpp"

namespace orchestra {

namespace {
constexpr std::size_t kMaxRedraws = 100;
constexpr std::size_t kImageSide = 32;
constexpr std::size_t kImagePlane = kImageSide * kImageSide;
}  // namespace

void Dataset::validate() const {
  if (labels.size() < 2) throw ConfigError("dataset needs at least 2 samples");
  if (features.rows() != labels.size()) throw ShapeError("dataset: feature rows != label count");
  for (std::size_t y : labels)
    if (y >= num_classes) throw ConfigError("dataset: label out of range");
}

void AugmentConfig::validate() const {
  if (!(jitter_sigma >= 0.0)) throw ConfigError("augment: jitter_sigma must be >= 0");
  if (!(scale_lo > 0.0 && scale_lo <= scale_hi))
    throw ConfigError("augment: need 0 < scale_lo <= scale_hi");
}

Dataset gen_mixture(const MixtureSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("gen_mixture: need at least 2 classes");
  if (spec.input_dim < 4 || spec.input_dim % 4 != 0)
    throw ConfigError("gen_mixture: input_dim must be a positive multiple of 4");
  if (spec.per_class < 2) throw ConfigError("gen_mixture: per_class must be >= 2");
  if (!(spec.within_std >= 0.0)) throw ConfigError("gen_mixture: within_std must be >= 0");

  Rng rng = Rng::stream(spec.seed, StreamTag::kDataset);
  Rng mean_rng = rng.split(1);
  Rng noise_rng = rng.split(2);

  DenseMatrix means(spec.num_classes, spec.input_dim);
  for (double& v : means.data()) v = mean_rng.normal();
  normalize_rows(means);
  for (double& v : means.data()) v *= spec.class_sep;

  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.features = DenseMatrix(spec.num_classes * spec.per_class, spec.input_dim);
  ds.labels.reserve(ds.features.rows());
  std::size_t r = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i, ++r) {
      auto row = ds.features.row(r);
      auto mean = means.row(c);
      for (std::size_t d = 0; d < row.size(); ++d)
        row[d] = mean[d] + spec.within_std * noise_rng.normal();
      ds.labels.push_back(c);
    }
  }
  return ds;
}

std::vector<double> augment(std::span<const double> x, const AugmentConfig& cfg, Rng& rng) {
  const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) {
    const double noise = cfg.jitter_sigma > 0.0 ? cfg.jitter_sigma * rng.normal() : 0.0;
    v = s * (v + noise);
  }
  return out;
}

DenseMatrix augment_batch(const DenseMatrix& batch, const AugmentConfig& cfg, Rng& rng) {
  DenseMatrix out(batch.rows(), batch.cols());
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    auto a = augment(batch.row(r), cfg, rng);
    std::copy(a.begin(), a.end(), out.row(r).begin());
  }
  return out;
}

std::vector<double> rotate(std::span<const double> x, std::size_t idx) {
  if (idx > 3) throw std::out_of_range("rotate: index must be in 0..3");
  const std::size_t d = x.size();
  if (d == 0 || d % 4 != 0) throw ShapeError("rotate: length must be a positive multiple of 4");
  const std::size_t shift = idx * (d / 4);
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) out[(i + shift) % d] = x[i];
  return out;
}

std::vector<double> rotate_image(std::span<const double> x, std::size_t idx) {
  if (idx > 3) throw std::out_of_range("rotate_image: index must be in 0..3");
  if (x.size() != kCifarPixels) throw ShapeError("rotate_image: expected 3x32x32 input");
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next(cur.size());
  for (std::size_t turn = 0; turn < idx; ++turn) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const std::size_t base = ch * kImagePlane;
      for (std::size_t r = 0; r < kImageSide; ++r)
        for (std::size_t c = 0; c < kImageSide; ++c)
          next[base + r * kImageSide + c] = cur[base + c * kImageSide + (kImageSide - 1 - r)];
    }
    std::swap(cur, next);
  }
  return cur;
}

std::vector<double> rotate_input(std::span<const double> x, std::size_t idx, InputLayout layout) {
  return layout == InputLayout::kImage32 ? rotate_image(x, idx) : rotate(x, idx);
}

namespace {

// Largest-remainder rounding of proportions * total; ties by lower index.
std::vector<std::size_t> apportion(std::span<const double> props, std::size_t total) {
  std::vector<std::size_t> counts(props.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < props.size(); ++c) {
    const double exact = props[c] * static_cast<double>(total);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    rem.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < rem.size(); ++i, ++assigned) ++counts[rem[i].second];
  return counts;
}

std::vector<double> dirichlet(std::size_t m, double alpha, Rng& rng) {
  std::vector<double> logs(m);
  for (double& l : logs) l = rng.log_gamma(alpha);
  const double mx = *std::max_element(logs.begin(), logs.end());
  double s = 0.0;
  for (double& l : logs) {
    l = std::exp(l - mx);
    s += l;
  }
  for (double& l : logs) l /= s;
  return logs;
}

}  // namespace

std::vector<ClientShard> dirichlet_partition(const Dataset& dataset, std::size_t num_clients,
                                             double alpha, std::uint64_t seed,
                                             std::size_t min_shard_size) {
  const std::size_t n = dataset.size();
  if (num_clients == 0) throw ConfigError("dirichlet_partition: need at least one client");
  if (!(alpha > 0.0)) throw ConfigError("dirichlet_partition: alpha must be positive");
  if (n < num_clients * min_shard_size) {
    throw PartitionError("dirichlet_partition: " + std::to_string(n) + " samples cannot give " +
                      std::to_string(num_clients) + " clients " + std::to_string(min_shard_size) +
                      " samples each; use fewer clients or a smaller minimum shard");
  }
  const std::size_t m = dataset.num_classes;

  for (std::size_t attempt = 0; attempt < kMaxRedraws; ++attempt) {
    Rng rng = Rng::stream(seed, StreamTag::kPartition, attempt);
    std::vector<std::vector<std::size_t>> pools(m);
    for (std::size_t i = 0; i < n; ++i) pools[dataset.labels[i]].push_back(i);
    for (auto& p : pools) rng.shuffle(p);
    std::vector<std::size_t> cursor(m, 0);

    std::vector<ClientShard> shards(num_clients);
    for (std::size_t k = 0; k < num_clients; ++k) {
      shards[k].client_id = k;
      const std::size_t target = n / num_clients + (k < n % num_clients ? 1 : 0);
      const auto props = dirichlet(m, alpha, rng);
      const auto want = apportion(props, target);
      for (std::size_t c = 0; c < m; ++c) {
        const std::size_t take = std::min(want[c], pools[c].size() - cursor[c]);
        for (std::size_t t = 0; t < take; ++t) shards[k].sample_ids.push_back(pools[c][cursor[c]++]);
      }
    }

    std::vector<std::size_t> leftover;
    for (std::size_t c = 0; c < m; ++c)
      leftover.insert(leftover.end(), pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]),
                      pools[c].end());
    std::sort(leftover.begin(), leftover.end());
    for (std::size_t id : leftover) {
      auto smallest = std::min_element(shards.begin(), shards.end(), [](const auto& a, const auto& b) {
        return a.sample_ids.size() < b.sample_ids.size();
      });
      smallest->sample_ids.push_back(id);
    }

    const bool ok = std::all_of(shards.begin(), shards.end(), [&](const ClientShard& s) {
      return s.sample_ids.size() >= min_shard_size;
    });
    if (!ok) continue;
    for (auto& s : shards) std::sort(s.sample_ids.begin(), s.sample_ids.end());
    return shards;
  }
  throw PartitionError("dirichlet_partition: no valid split after " + std::to_string(kMaxRedraws) +
                       " redraws; use a larger alpha or fewer clients");
}

double avg_classes_per_client(std::span<const ClientShard> shards,
                              std::span<const std::size_t> labels, std::size_t num_classes,
                              ClassPresenceRule rule) {
  if (shards.empty()) throw PartitionError("avg_classes_per_client: no shards");
  double total = 0.0;
  std::vector<std::size_t> hist(num_classes);
  for (const auto& s : shards) {
    if (s.sample_ids.empty())
      throw PartitionError("avg_classes_per_client: client " + std::to_string(s.client_id) +
                           " has an empty shard");
    std::fill(hist.begin(), hist.end(), 0);
    for (std::size_t id : s.sample_ids) ++hist.at(labels[id]);
    const double threshold =
        rule == ClassPresenceRule::kAtLeastOne ? 1.0 : 0.01 * static_cast<double>(s.sample_ids.size());
    for (std::size_t h : hist)
      if (h > 0 && static_cast<double>(h) >= threshold) total += 1.0;
  }
  return total / static_cast<double>(shards.size());
}

Dataset load_cifar_binary(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() % kCifarRecordBytes != 0)
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                      " is not a multiple of 3073");
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  if (n == 0) throw FormatError(path.string() + ": no records");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.layout = InputLayout::kImage32;
  ds.features = DenseMatrix(n, kCifarPixels);
  ds.labels.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
    if (rec[0] >= num_classes)
      throw FormatError(path.string() + ": record " + std::to_string(r) + " has label " +
                        std::to_string(rec[0]) + " >= " + std::to_string(num_classes));
    ds.labels[r] = rec[0];
    auto row = ds.features.row(r);
    for (std::size_t p = 0; p < kCifarPixels; ++p) row[p] = rec[1 + p] / 255.0;
  }
  return ds;
}

void write_cifar_binary(const std::filesystem::path& path, const Dataset& dataset) {
  if (dataset.input_dim() != kCifarPixels) throw ShapeError("write_cifar_binary: need 3072 features");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  std::vector<char> rec(kCifarRecordBytes);
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    if (dataset.labels[r] > 255) throw FormatError("write_cifar_binary: label exceeds a byte");
    rec[0] = static_cast<char>(dataset.labels[r]);
    auto row = dataset.features.row(r);
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      const double v = std::clamp(row[p], 0.0, 1.0);
      rec[1 + p] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "label";
  for (std::size_t d = 0; d < dataset.input_dim(); ++d) out << ",f" << d;
  out << '\n';
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    out << dataset.labels[r];
    for (double v : dataset.features.row(r)) out << ',' << format_double(v);
    out << '\n';
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0)
    throw FormatError(path.string() + ": missing `label,f0,...` header");
  const std::size_t dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (dim == 0) throw FormatError(path.string() + ": header lists no feature columns");

  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != dim + 1)
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(dim + 1) + " fields");
    labels.push_back(parse_size(fields[0], "label"));
    for (std::size_t d = 1; d <= dim; ++d) values.push_back(parse_double(fields[d], "feature"));
  }
  Dataset ds;
  ds.features = DenseMatrix(labels.size(), dim, std::move(values));
  ds.labels = std::move(labels);
  ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

Split train_test_split(std::size_t n, double train_fraction, Rng& rng) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  rng.shuffle(ids);
  const auto n_train = static_cast<std::size_t>(std::round(train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace orchestra
