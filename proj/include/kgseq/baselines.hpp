#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string_view>

#include <Eigen/Dense>

#include "kgseq/encoder.hpp"
#include "kgseq/eval.hpp"
#include "kgseq/kg_store.hpp"

namespace kgseq {

enum class BaselineKind { transe, distmult };

std::string_view to_string(BaselineKind kind);
/// Throws ArgumentError for anything but "transe" or "distmult".
BaselineKind parse_baseline_kind(std::string_view name);

/// Entity (|E| × d) and relation (|R| × d) embedding tables.
struct EmbeddingTables {
  Matrix<double> entity;
  Matrix<double> relation;

  Eigen::Index dim() const noexcept { return entity.cols(); }
};

struct TransEParams : EmbeddingTables {};
struct DistMultParams : EmbeddingTables {};

/// TransE dissimilarity norm.
enum class Distance { l2, l1 };
std::string_view to_string(Distance d);
Distance parse_distance(std::string_view name);

/// -||h + r - t||_2
double transe_score(std::span<const double> h, std::span<const double> r, std::span<const double> t);
/// -||h + r - t|| under the chosen norm.
double transe_score(std::span<const double> h, std::span<const double> r, std::span<const double> t, Distance d);
double transe_score(const TransEParams& params, const Triple& triple, Distance d = Distance::l2);

/// sum_i h_i r_i t_i
double distmult_score(std::span<const double> h, std::span<const double> r, std::span<const double> t);
double distmult_score(const DistMultParams& params, const Triple& triple);

struct BaselineConfig {
  int dim = 64;
  double margin = 1.0;
  double learning_rate = 0.01;
  int epochs = 500;
  int negatives = 1;
  std::uint64_t seed = 42;
  Distance distance = Distance::l2;  // TransE only
  /// L2 penalty on the embeddings touched by each DistMult update.
  double l2 = 0.0;

  void validate() const;
};

struct BaselineEpoch {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};
using BaselineCallback = std::function<void(const BaselineEpoch&)>;

/// uniform(-6/sqrt(d), 6/sqrt(d)) for both tables; relations normalized once,
/// entities normalized to unit length.
TransEParams init_transe(std::size_t num_entities, std::size_t num_relations, const BaselineConfig& cfg);
DistMultParams init_distmult(std::size_t num_entities, std::size_t num_relations, const BaselineConfig& cfg);

/// Per-triple SGD on max(0, margin - f(pos) + f(neg)) with one-slot
/// corruptions resampled each epoch. Entity rows are renormalized after every
/// update and at the end of every epoch.
TransEParams train_transe(const KnowledgeGraph& kg, const BaselineConfig& cfg, const BaselineCallback& on_epoch = {});
/// Per-triple SGD on log(1 + exp(-y f)) with the same negatives.
DistMultParams train_distmult(const KnowledgeGraph& kg, const BaselineConfig& cfg,
                              const BaselineCallback& on_epoch = {});

struct BaselineModel {
  BaselineKind kind = BaselineKind::transe;
  Distance distance = Distance::l2;
  EmbeddingTables params;
};

BaselineModel train_baseline(BaselineKind kind, const KnowledgeGraph& kg, const BaselineConfig& cfg,
                             const BaselineCallback& on_epoch = {});

class BaselineScorer : public Scorer {
 public:
  explicit BaselineScorer(const BaselineModel& model);
  std::vector<double> plausibility(std::span<const Triple> triples) const override;

 private:
  const BaselineModel& model_;
};

void save_baseline(const std::filesystem::path& path, const BaselineModel& model, const BaselineConfig& cfg);
BaselineModel load_baseline(const std::filesystem::path& path);

}  // namespace kgseq
