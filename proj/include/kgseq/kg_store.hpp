#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace kgseq {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept;
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

struct LabeledTriple {
  Triple triple;
  int label = 1;  // 1 = positive, 0 = negative

  friend bool operator==(const LabeledTriple&, const LabeledTriple&) = default;
};

enum class Split { train, dev, test };
enum class TextSource { names, descriptions };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);
TextSource parse_text_source(std::string_view name);

/// Entity/relation tables, the three splits and the truth-set index.
///
/// Immutable after construction. Ids are dense, assigned in byte order of the
/// raw identifiers. Dev/test files may carry a fourth label column (1 or -1/0)
/// as in the triple-classification benchmarks; labeled negatives are kept in
/// labeled() but never enter the truth set.
class KnowledgeGraph {
 public:
  struct Symbol {
    std::string raw_id;
    std::string text;
  };

  KnowledgeGraph() = default;

  /// Builds a graph from in-memory tables. Texts are indexed by id.
  static KnowledgeGraph from_tables(std::vector<Symbol> entities, std::vector<Symbol> relations,
                                    std::vector<Triple> train, std::vector<Triple> dev,
                                    std::vector<Triple> test);

  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }

  const Symbol& entity(EntityId id) const;
  const Symbol& relation(RelationId id) const;
  const std::vector<Symbol>& entities() const noexcept { return entities_; }
  const std::vector<Symbol>& relations() const noexcept { return relations_; }

  /// Positive triples of a split.
  const std::vector<Triple>& split(Split s) const noexcept;
  /// All triples of a split with labels; equals split() labeled 1 unless the
  /// file carried explicit negatives.
  const std::vector<LabeledTriple>& labeled(Split s) const noexcept;
  bool has_labeled_negatives(Split s) const noexcept;

  /// Membership in train ∪ dev ∪ test. Throws PreconditionError on invalid ids.
  bool is_known(const Triple& t) const;
  /// Membership in the training positives, the positive set used for
  /// negative sampling.
  bool in_train(const Triple& t) const;
  const TripleSet& truth_set() const noexcept { return truth_; }

  bool valid(const Triple& t) const noexcept;
  void check_valid(const Triple& t) const;

  std::optional<EntityId> find_entity(std::string_view raw_id) const;
  std::optional<RelationId> find_relation(std::string_view raw_id) const;

  /// Returns a copy with a replaced training split; the truth set is kept.
  KnowledgeGraph with_train(std::vector<Triple> train) const;

 private:
  friend KnowledgeGraph load_dataset(const std::filesystem::path&, TextSource);
  void build_indexes();

  std::vector<Symbol> entities_;
  std::vector<Symbol> relations_;
  std::unordered_map<std::string, EntityId> entity_index_;
  std::unordered_map<std::string, RelationId> relation_index_;
  std::vector<Triple> splits_[3];
  std::vector<LabeledTriple> labeled_[3];
  TripleSet truth_;
  TripleSet train_set_;
};

/// Reads train.tsv, dev.tsv, test.tsv and the text maps from a dataset directory.
///
/// TextSource::names reads entity2text.txt; TextSource::descriptions reads
/// entity2textlong.txt. Relation text always comes from relation2text.txt.
KnowledgeGraph load_dataset(const std::filesystem::path& directory, TextSource text_source = TextSource::names);

struct NegativeSamplingConfig {
  enum class Corruption { head_or_tail_uniform };

  NegativeSamplingConfig(int negatives_per_positive, std::uint64_t seed, int max_rejection_attempts = 0,
                         Corruption corruption = Corruption::head_or_tail_uniform);

  int negatives_per_positive;
  std::uint64_t seed;
  int max_rejection_attempts;  // 0 at construction selects 100 × negatives_per_positive
  Corruption corruption;
};

struct NegativeSample {
  std::vector<LabeledTriple> negatives;
  bool shortfall = false;
};

/// Draws corrupted triples for one positive by rejection against the training
/// positives. Each result replaces exactly one of head or tail; results are distinct.
NegativeSample sample_negatives(const KnowledgeGraph& kg, const Triple& positive, const NegativeSamplingConfig& cfg);

/// Every corruption admissible for `positive`: head replacements first, then
/// tail replacements, each in entity-id order.
std::vector<Triple> enumerate_negatives(const KnowledgeGraph& kg, const Triple& positive);

/// Training split reduced to round-half-even(proportion × |train|) triples
/// drawn uniformly without replacement, original order kept.
KnowledgeGraph subsample_training(const KnowledgeGraph& kg, double proportion, std::uint64_t seed);

std::size_t subsample_size(std::size_t n, double proportion);

}  // namespace kgseq
