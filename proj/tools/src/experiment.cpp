#include "orchestra_cli/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>

#include "orchestra/errors.hpp"

namespace orchestra::cli {

using nlohmann::json;

namespace {

std::size_t as_count(const json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::size_t>(v.get<long long>());
  throw ConfigError("field '" + key + "': expected a non-negative integer");
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("field '" + key + "': expected a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("field '" + key + "': expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("field '" + key + "': expected a string");
  return v.get<std::string>();
}

struct Field {
  std::string key;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

#define COUNT_FIELD(name, expr)                                                    \
  Field {                                                                          \
    name, [](const ExperimentConfig& c) { return json(c.expr); },                  \
        [](ExperimentConfig& c, const json& v) { c.expr = as_count(v, name); }     \
  }
#define REAL_FIELD(name, expr)                                                     \
  Field {                                                                          \
    name, [](const ExperimentConfig& c) { return json(c.expr); },                  \
        [](ExperimentConfig& c, const json& v) { c.expr = as_real(v, name); }      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      COUNT_FIELD("clients", federation.clients),
      REAL_FIELD("participation", federation.participation),
      COUNT_FIELD("rounds", federation.rounds),
      COUNT_FIELD("local_epochs", federation.local_epochs),
      COUNT_FIELD("batch_size", federation.batch_size),
      REAL_FIELD("lr", federation.lr),
      REAL_FIELD("ema", federation.ema),
      COUNT_FIELD("global_clusters", federation.global_clusters),
      COUNT_FIELD("local_clusters", federation.local_clusters),
      REAL_FIELD("tau_assign", federation.tau_assign),
      REAL_FIELD("tau_unif", federation.tau_unif),
      REAL_FIELD("alpha", federation.alpha),
      Field{"seed", [](const ExperimentConfig& c) { return json(c.federation.seed); },
            [](ExperimentConfig& c, const json& v) {
              c.federation.seed = static_cast<std::uint64_t>(as_count(v, "seed"));
            }},
      Field{"method", [](const ExperimentConfig& c) { return json(to_string(c.federation.method)); },
            [](ExperimentConfig& c, const json& v) {
              c.federation.method = parse_method(as_string(v, "method"));
            }},
      COUNT_FIELD("mem_size", federation.mem_size),
      COUNT_FIELD("eval_every", federation.eval_every),
      Field{"weighted_fedavg", [](const ExperimentConfig& c) { return json(c.federation.weighted_fedavg); },
            [](ExperimentConfig& c, const json& v) {
              c.federation.weighted_fedavg = as_bool(v, "weighted_fedavg");
            }},
      Field{"hidden", [](const ExperimentConfig& c) { return json(c.federation.encoder.hidden); },
            [](ExperimentConfig& c, const json& v) {
              if (!v.is_array()) throw ConfigError("field 'hidden': expected an array of widths");
              c.federation.encoder.hidden.clear();
              for (const auto& w : v) {
                const std::size_t width = as_count(w, "hidden");
                if (width == 0) throw ConfigError("field 'hidden': widths must be positive");
                c.federation.encoder.hidden.push_back(width);
              }
            }},
      COUNT_FIELD("rep_dim", federation.encoder.rep_dim),
      REAL_FIELD("rot_head_std", federation.encoder.rot_head_std),
      REAL_FIELD("jitter_sigma", federation.augment.jitter_sigma),
      REAL_FIELD("scale_lo", federation.augment.scale_lo),
      REAL_FIELD("scale_hi", federation.augment.scale_hi),
      REAL_FIELD("sinkhorn_epsilon", federation.sinkhorn.epsilon),
      COUNT_FIELD("sinkhorn_outer_iters", federation.sinkhorn.outer_iters),
      COUNT_FIELD("sinkhorn_inner_iters", federation.sinkhorn.inner_iters),
      REAL_FIELD("sinkhorn_tol", federation.sinkhorn.tol),
      COUNT_FIELD("knn_k", federation.knn_k),
      COUNT_FIELD("probe_epochs", federation.probe_epochs),
      REAL_FIELD("probe_lr", federation.probe_lr),
      COUNT_FIELD("delta_probe_size", federation.delta_probe_size),
      COUNT_FIELD("eval_per_client", federation.eval_per_client),
      COUNT_FIELD("threads", federation.threads),
      Field{"dataset",
            [](const ExperimentConfig& c) {
              return json(c.dataset.kind == DatasetKind::kCifar ? "cifar" : "synthetic");
            },
            [](ExperimentConfig& c, const json& v) {
              const std::string kind = as_string(v, "dataset");
              if (kind == "synthetic") c.dataset.kind = DatasetKind::kSynthetic;
              else if (kind == "cifar") c.dataset.kind = DatasetKind::kCifar;
              else throw ConfigError("field 'dataset': expected \"synthetic\" or \"cifar\", got \"" + kind + "\"");
            }},
      COUNT_FIELD("classes", dataset.mixture.num_classes),
      COUNT_FIELD("input_dim", dataset.mixture.input_dim),
      COUNT_FIELD("per_class", dataset.mixture.per_class),
      REAL_FIELD("class_sep", dataset.mixture.class_sep),
      REAL_FIELD("within_std", dataset.mixture.within_std),
      Field{"data_seed", [](const ExperimentConfig& c) { return json(c.dataset.mixture.seed); },
            [](ExperimentConfig& c, const json& v) {
              c.dataset.mixture.seed = static_cast<std::uint64_t>(as_count(v, "data_seed"));
            }},
      Field{"cifar_path", [](const ExperimentConfig& c) { return json(c.dataset.cifar_path.string()); },
            [](ExperimentConfig& c, const json& v) { c.dataset.cifar_path = as_string(v, "cifar_path"); }},
      COUNT_FIELD("cifar_classes", dataset.cifar_classes),
      COUNT_FIELD("min_shard_size", min_shard_size),
      Field{"output_dir", [](const ExperimentConfig& c) { return json(c.output_dir.string()); },
            [](ExperimentConfig& c, const json& v) { c.output_dir = as_string(v, "output_dir"); }},
  };
  return table;
}

#undef COUNT_FIELD
#undef REAL_FIELD

void validate(const ExperimentConfig& cfg) {
  FederationConfig fed = cfg.federation;
  fed.encoder.input_dim = cfg.dataset.kind == DatasetKind::kCifar ? kCifarPixels
                                                                  : cfg.dataset.mixture.input_dim;
  fed.validate();
  if (cfg.dataset.kind == DatasetKind::kSynthetic) {
    const auto& m = cfg.dataset.mixture;
    if (m.num_classes < 1) throw ConfigError("field 'classes': must be at least 1");
    if (m.input_dim == 0 || m.input_dim % 4 != 0)
      throw ConfigError("field 'input_dim': must be a positive multiple of 4");
    if (m.per_class == 0) throw ConfigError("field 'per_class': must be positive");
    if (!(m.within_std >= 0.0)) throw ConfigError("field 'within_std': must be non-negative");
    if (!(m.class_sep >= 0.0)) throw ConfigError("field 'class_sep': must be non-negative");
  } else if (cfg.dataset.cifar_path.empty()) {
    throw ConfigError("field 'cifar_path': required when dataset is \"cifar\"");
  }
  if (cfg.output_dir.empty()) throw ConfigError("field 'output_dir': must not be empty");
}

}  // namespace

const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys = {"clients", "rounds", "seed", "method"};
  return keys;
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& key : required_config_keys()) {
    if (!j.contains(key)) throw ConfigError("missing required field '" + key + "'");
  }
  ExperimentConfig cfg;
  for (const auto& [key, value] : j.items()) {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError("unknown field '" + key + "'");
    it->set(cfg, value);
  }
  cfg.federation.encoder.input_dim = cfg.dataset.kind == DatasetKind::kCifar
                                         ? kCifarPixels
                                         : cfg.dataset.mixture.input_dim;
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& cfg) {
  json j = json::object();
  for (const auto& f : fields()) j[f.key] = f.get(cfg);
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("threads");
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  Dataset ds = cfg.dataset.kind == DatasetKind::kCifar
                   ? load_cifar_binary(cfg.dataset.cifar_path, cfg.dataset.cifar_classes)
                   : gen_mixture(cfg.dataset.mixture);
  ds.validate();
  return ds;
}

std::vector<ClientShard> build_shards(const ExperimentConfig& cfg, const Dataset& dataset) {
  const std::size_t min_size =
      cfg.min_shard_size == 0 ? cfg.federation.batch_size : cfg.min_shard_size;
  return dirichlet_partition(dataset, cfg.federation.clients, cfg.federation.alpha,
                             cfg.federation.seed, min_size);
}

json metrics_record(const RoundMetrics& m, const std::string& hash, std::uint64_t seed,
                    Method method) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j = json::object();
  j["round"] = m.round;
  j["mean_cluster_loss"] = m.mean_cluster_loss;
  j["mean_deg_loss"] = m.mean_deg_loss;
  j["mean_spec_loss"] = m.mean_spec_loss;
  j["delta"] = opt(m.delta);
  j["knn_acc"] = opt(m.knn_acc);
  j["linear_acc"] = opt(m.linear_acc);
  j["align"] = m.align;
  j["unif"] = m.unif;
  j["tuner"] = m.tuner;
  j["participants"] = m.participants;
  j["config_hash"] = hash;
  j["seed"] = seed;
  j["method"] = to_string(method);
  return j;
}

}  // namespace orchestra::cli
