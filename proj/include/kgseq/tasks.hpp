#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kgseq/checkpoint.hpp"
#include "kgseq/encoder.hpp"
#include "kgseq/eval.hpp"
#include "kgseq/kg_store.hpp"
#include "kgseq/textseq.hpp"

namespace kgseq {

enum class Task { triple_classification, link_prediction, relation_prediction };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

/// Fine-tuning epochs: 3 / 5 / 20.
int default_epochs(Task task);
/// Negatives per positive: 1 for classification, 5 for link prediction, 0 for relations.
int default_negatives(Task task);

enum class HeadKind { triple, relation };
HeadKind head_kind(Task task);
SequenceMode sequence_mode(HeadKind kind);

/// Two-way plausibility head W (2 × H).
template <class S>
struct TripleHead {
  Matrix<S> weight;
};

/// R-way relation head W' (R × H).
template <class S>
struct RelationHead {
  Matrix<S> weight;
};

/// (s0, s1) with s0 the positive-class probability.
struct TripleScore {
  double positive = 0.5;
  double negative = 0.5;
};

struct RelationScore {
  std::vector<double> probs;
};

inline constexpr double kLogClamp = 1e-12;

/// Encoder, classification head and the packing/vocabulary it was trained with.
template <class S>
struct Model {
  EncoderConfig config;
  EncoderParams<S> encoder;
  HeadKind kind = HeadKind::triple;
  Matrix<S> head;  // 2 × H (triple) or R × H (relation)
  Vocabulary vocab;
  PackingConfig packing;

  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(head.rows()); }
};

/// Fresh model: encoder from init_params, head drawn from the same
/// truncated normal under a derived seed.
template <class S>
Model<S> make_model(const EncoderConfig& cfg, HeadKind kind, std::size_t num_relations, Vocabulary vocab,
                    PackingConfig packing);

template <class S>
TripleScore score_triple(const EncoderParams<S>& encoder, const EncoderConfig& cfg, const TripleHead<S>& head,
                         const PackedSequence& packed);
template <class S>
RelationScore score_relations(const EncoderParams<S>& encoder, const EncoderConfig& cfg, const RelationHead<S>& head,
                              const PackedSequence& packed);

/// Softmax over C W^T for a batch of [CLS] vectors (rows).
template <class S>
Matrix<S> head_probabilities(const Matrix<S>& cls, const Matrix<S>& head);

/// -sum [y log s0 + (1 - y) log s1], probabilities clamped to [1e-12, 1 - 1e-12].
double triple_loss(std::span<const TripleScore> scores, std::span<const int> labels);
/// -sum log s'_{true relation}, same clamping.
double relation_loss(std::span<const RelationScore> scores, std::span<const int> relation_labels);

template <class S>
struct ModelGrads {
  EncoderParams<S> encoder;
  Matrix<S> head;
};

template <class S>
ModelGrads<S> zero_grads(const Model<S>& model);

/// Summed cross-entropy of a batch (binary targets for triple heads, relation ids for
/// relation heads). `labels` are 0/1 for triple heads, relation ids otherwise.
/// When `grads` is given, the gradient of the summed loss is added to it.
template <class S>
double batch_loss(const Model<S>& model, std::span<const PackedSequence> batch, std::span<const int> labels,
                  Mode mode, std::uint64_t dropout_seed, ModelGrads<S>* grads);

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 5e-5;
  int epochs = 3;
  int negatives_per_positive = 1;
  double warmup_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 42;
  int workers = 1;
  /// Examples per gradient shard; shards are summed in a fixed order so any
  /// worker count gives bit-identical updates.
  int shard_size = 8;

  static TrainConfig for_task(Task task);
  void validate(Task task) const;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_ms = 0.0;
  std::size_t num_examples = 0;
};

struct TrainLog {
  std::size_t num_train_triples = 0;
  std::vector<EpochRecord> epochs;
};

/// Adam with bias correction and no weight decay over a flat list of tensors.
class AdamOptimizer {
 public:
  AdamOptimizer(const TrainConfig& cfg, std::vector<std::size_t> sizes);
  /// params[i] -= lr * m̂ / (sqrt(v̂) + eps), elementwise per tensor.
  void step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads, double lr);
  long steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

/// Linear warmup over the first warmup_fraction of steps, then linear decay to 0.
double learning_rate_at(const TrainConfig& cfg, long step, long total_steps);

/// Labeled training examples for one epoch: each training positive followed
/// by its sampled negatives (triple tasks), or (head, tail) → relation pairs.
struct Example {
  Triple triple;
  int label;
};
std::vector<Example> epoch_examples(const KnowledgeGraph& kg, Task task, const TrainConfig& cfg, int epoch);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Fine-tunes `model` in place on the training split of `kg`.
TrainLog train(Model<float>& model, const KnowledgeGraph& kg, Task task, const TrainConfig& cfg,
               const EpochCallback& on_epoch = {});

/// Eval-mode scorer over a trained model. Triples are packed per call and run
/// through the encoder in chunks of `batch_size`.
class ModelScorer : public Scorer {
 public:
  ModelScorer(const Model<float>& model, const KnowledgeGraph& kg, int batch_size = 128);

  std::vector<double> plausibility(std::span<const Triple> triples) const override;
  bool has_relation_scores() const override { return model_.kind == HeadKind::relation; }
  std::vector<double> relation_scores(EntityId head, EntityId tail) const override;

  std::vector<TripleScore> triple_scores(std::span<const Triple> triples) const;

 private:
  const Model<float>& model_;
  TextEncoder encoder_;
  int batch_size_;
};

/// Fraction of labeled triples classified correctly by s0 > 0.5.
double classification_accuracy(const Model<float>& model, const KnowledgeGraph& kg,
                               std::span<const LabeledTriple> labeled);

void save_model(const std::filesystem::path& path, const Model<float>& model, nlohmann::json extra_meta = {});
Model<float> load_model(const std::filesystem::path& path);

}  // namespace kgseq
