#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "orchestra/datasets.hpp"
#include "orchestra/protocol.hpp"

namespace orchestra::cli {

enum class DatasetKind { kSynthetic, kCifar };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kSynthetic;
  MixtureSpec mixture{};
  std::filesystem::path cifar_path;
  std::size_t cifar_classes = 10;
};

struct ExperimentConfig {
  FederationConfig federation{};
  DatasetSpec dataset{};
  std::filesystem::path output_dir = "runs";
  std::size_t min_shard_size = 0;  // 0: batch size
};

/// Keys a config file must contain.
const std::vector<std::string>& required_config_keys();

/// Flat JSON -> config. Unknown keys and missing required keys throw
/// ConfigError naming the key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical flat JSON with every key (defaults filled in).
nlohmann::json to_json(const ExperimentConfig& cfg);

/// FNV-1a of the canonical JSON minus execution-only keys (threads,
/// output_dir), as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

Dataset build_dataset(const ExperimentConfig& cfg);
std::vector<ClientShard> build_shards(const ExperimentConfig& cfg, const Dataset& dataset);

/// One metrics.jsonl line.
nlohmann::json metrics_record(const RoundMetrics& m, const std::string& hash, std::uint64_t seed,
                              Method method);

}  // namespace orchestra::cli
