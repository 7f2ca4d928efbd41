#include "kgseq/run_config.hpp"

#include <fstream>
#include <sstream>

#include "kgseq/checkpoint.hpp"
#include "kgseq/error.hpp"

namespace kgseq {

namespace {

// One accessor per key keeps to_json and from_json in lockstep.
template <class F>
void visit_fields(RunConfig& c, F&& f) {
  f("dataset", c.dataset);
  f("task", c.task);
  f("text_source", c.text_source);
  f("out", c.out);
  f("seed", c.seed);
  f("vocab_size", c.vocab_size);
  f("max_len", c.max_len);
  f("num_layers", c.num_layers);
  f("num_heads", c.num_heads);
  f("hidden_size", c.hidden_size);
  f("ffn_size", c.ffn_size);
  f("max_positions", c.max_positions);
  f("dropout", c.dropout);
  f("batch_size", c.batch_size);
  f("learning_rate", c.learning_rate);
  f("epochs", c.epochs);
  f("negatives", c.negatives);
  f("warmup_fraction", c.warmup_fraction);
  f("adam_beta1", c.adam_beta1);
  f("adam_beta2", c.adam_beta2);
  f("adam_epsilon", c.adam_epsilon);
  f("workers", c.workers);
  f("shard_size", c.shard_size);
  f("train_proportion", c.train_proportion);
  f("baseline_dim", c.baseline_dim);
  f("baseline_margin", c.baseline_margin);
  f("baseline_learning_rate", c.baseline_learning_rate);
  f("baseline_epochs", c.baseline_epochs);
  f("baseline_negatives", c.baseline_negatives);
  f("baseline_distance", c.baseline_distance);
  f("baseline_l2", c.baseline_l2);
}

template <class T>
void read_value(const nlohmann::json& v, T& out) {
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError("expected a string");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("expected a number");
  } else {
    if (!v.is_number_integer()) throw ConfigError("expected an integer");
    if constexpr (std::is_unsigned_v<T>)
      if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
        throw ConfigError("expected a non-negative integer");
  }
  out = v.get<T>();
}

template <class T>
void read_value(const nlohmann::json& v, std::optional<T>& out) {
  if (v.is_null()) {
    out.reset();
    return;
  }
  T value{};
  read_value(v, value);
  out = value;
}

}  // namespace

EncoderConfig RunConfig::encoder_config(std::size_t vocab) const {
  EncoderConfig cfg;
  cfg.num_layers = num_layers;
  cfg.num_heads = num_heads;
  cfg.hidden_size = hidden_size;
  cfg.ffn_size = ffn_size;
  cfg.max_positions = max_positions;
  cfg.vocab_size = static_cast<int>(vocab);
  cfg.dropout_rate = dropout;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

PackingConfig RunConfig::packing_config() const {
  PackingConfig cfg;
  cfg.max_len = max_len;
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  const Task t = parsed_task();
  TrainConfig cfg = TrainConfig::for_task(t);
  cfg.batch_size = batch_size;
  cfg.learning_rate = learning_rate;
  if (epochs) cfg.epochs = *epochs;
  if (negatives) cfg.negatives_per_positive = *negatives;
  cfg.warmup_fraction = warmup_fraction;
  cfg.beta1 = adam_beta1;
  cfg.beta2 = adam_beta2;
  cfg.epsilon = adam_epsilon;
  cfg.seed = seed;
  cfg.workers = workers;
  cfg.shard_size = shard_size;
  cfg.validate(t);
  return cfg;
}

BaselineConfig RunConfig::baseline_config() const {
  BaselineConfig cfg;
  cfg.dim = baseline_dim;
  cfg.margin = baseline_margin;
  cfg.learning_rate = baseline_learning_rate;
  cfg.epochs = baseline_epochs;
  cfg.negatives = baseline_negatives;
  cfg.seed = seed;
  cfg.distance = parse_distance(baseline_distance);
  cfg.l2 = baseline_l2;
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  std::size_t matched = 0;
  visit_fields(c, [&](const char* key, auto& field) {
    const auto it = j.find(key);
    if (it == j.end()) return;
    ++matched;
    try {
      read_value(*it, field);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
  });
  if (matched != j.size()) {
    RunConfig probe;
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      visit_fields(probe, [&](const char* k, auto&) { known = known || key == k; });
      if (!known) throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  auto copy = *this;
  visit_fields(copy, [&](const char* key, auto& field) {
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, std::optional<int>>)
      j[key] = field ? nlohmann::json(*field) : nlohmann::json(nullptr);
    else
      j[key] = field;
  });
  return j;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

void RunConfig::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(2) + "\n"); }

}  // namespace kgseq
