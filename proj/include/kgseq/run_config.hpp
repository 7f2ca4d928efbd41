#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "kgseq/baselines.hpp"
#include "kgseq/encoder.hpp"
#include "kgseq/kg_store.hpp"
#include "kgseq/tasks.hpp"
#include "kgseq/textseq.hpp"

namespace kgseq {

/// Everything a CLI run needs. Serialized as flat JSON; every key is optional
/// in a config file and falls back to the default listed here.
struct RunConfig {
  std::string dataset;                  // "dataset": directory with the TSV splits
  std::string task = "link_prediction";  // "task"
  std::string text_source = "names";    // "text_source": names | descriptions
  std::string out = "run";              // "out": output directory
  std::uint64_t seed = 42;              // "seed"

  int vocab_size = 1000;  // "vocab_size": target subword vocabulary size
  int max_len = 64;       // "max_len": packed sequence length limit

  int num_layers = 2;       // "num_layers"
  int num_heads = 4;        // "num_heads"
  int hidden_size = 128;    // "hidden_size"
  int ffn_size = 512;       // "ffn_size"
  int max_positions = 64;   // "max_positions"
  double dropout = 0.1;     // "dropout"

  int batch_size = 32;                  // "batch_size"
  double learning_rate = 5e-5;          // "learning_rate"
  std::optional<int> epochs;            // "epochs": null selects the task default (3 / 5 / 20)
  std::optional<int> negatives;         // "negatives": null selects the task default (1 / 5)
  double warmup_fraction = 0.1;         // "warmup_fraction"
  double adam_beta1 = 0.9;              // "adam_beta1"
  double adam_beta2 = 0.999;            // "adam_beta2"
  double adam_epsilon = 1e-8;           // "adam_epsilon"
  int workers = 1;                      // "workers"
  int shard_size = 8;                   // "shard_size"
  double train_proportion = 1.0;        // "train_proportion"

  int baseline_dim = 64;                  // "baseline_dim"
  double baseline_margin = 1.0;           // "baseline_margin"
  double baseline_learning_rate = 0.01;   // "baseline_learning_rate"
  int baseline_epochs = 500;              // "baseline_epochs"
  int baseline_negatives = 1;             // "baseline_negatives"
  std::string baseline_distance = "l2";   // "baseline_distance": l1 | l2
  double baseline_l2 = 0.0;               // "baseline_l2"

  Task parsed_task() const { return parse_task(task); }
  TextSource parsed_text_source() const { return parse_text_source(text_source); }
  EncoderConfig encoder_config(std::size_t vocab) const;
  PackingConfig packing_config() const;
  /// Resolves optional epochs/negatives against the task defaults.
  TrainConfig train_config() const;
  BaselineConfig baseline_config() const;

  /// Throws ConfigError on unknown keys or wrongly typed values.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace kgseq
