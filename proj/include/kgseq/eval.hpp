#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgseq/error.hpp"
#include "kgseq/kg_store.hpp"

namespace kgseq {

/// Anything that can rate triples; higher means more plausible. Implementations
/// must be deterministic and safe to call concurrently.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual std::vector<double> plausibility(std::span<const Triple> triples) const = 0;
  double score(const Triple& t) const { return plausibility(std::span<const Triple>(&t, 1)).front(); }

  virtual bool has_relation_scores() const { return false; }
  /// One score per relation id for the pair (head, tail).
  virtual std::vector<double> relation_scores(EntityId head, EntityId tail) const;
};

/// Scorer failure during evaluation, tagged with the query that triggered it.
class EvaluationError : public Error {
 public:
  EvaluationError(const Triple& query, const std::string& side, const std::string& what);
  const Triple& query() const noexcept { return query_; }

 private:
  Triple query_;
};

/// 1 + #(strictly better) + #(ties)/2 in descending score order.
double rank_of(double correct_score, std::span<const double> candidate_scores);

enum class QuerySide { head, tail, relation };
std::string_view to_string(QuerySide side);

struct QueryRecord {
  Triple triple;
  QuerySide side;
  double rank;
};

struct RankingReport {
  std::vector<QueryRecord> queries;
  double mean_rank = 0.0;
  std::map<int, double> hits_at;
  std::size_t num_queries = 0;

  std::vector<double> ranks() const;
};

/// Aggregates ranks in query order.
RankingReport make_report(std::vector<QueryRecord> queries, std::span<const int> ks);

struct EvalOptions {
  bool filtered = true;
  int workers = 1;
  std::vector<int> hits_at{1, 3, 10};
};

/// Head- and tail-corruption ranking of every triple in `split`; the head
/// query precedes the tail query for each triple.
RankingReport link_prediction_eval(const Scorer& scorer, const KnowledgeGraph& kg, Split split,
                                   const EvalOptions& options = {});

/// Ranks the true relation among all relations for each (head, tail) of the split.
RankingReport relation_prediction_eval(const Scorer& scorer, const KnowledgeGraph& kg, Split split,
                                       const EvalOptions& options = {});

/// Corrupted candidates of one query, filtered against the truth set when requested.
std::vector<Triple> link_candidates(const KnowledgeGraph& kg, const Triple& query, QuerySide side, bool filtered);

/// Fraction of triples where (score > threshold) agrees with the label.
double triple_classification_eval(const Scorer& scorer, std::span<const LabeledTriple> labeled, double threshold = 0.5);

/// Threshold maximizing accuracy on `labeled` (midpoints between sorted scores).
double tune_threshold(const Scorer& scorer, std::span<const LabeledTriple> labeled);

/// Labeled set for classification: the split's own labels if it carries
/// negatives, otherwise each positive followed by one sampled corruption
/// that is not a known triple.
std::vector<LabeledTriple> classification_set(const KnowledgeGraph& kg, Split split, std::uint64_t seed);

nlohmann::json report_to_json(const RankingReport& report, std::string_view task, std::string_view split, double wall_ms);
void write_query_csv(const std::filesystem::path& path, const KnowledgeGraph& kg, const RankingReport& report);

/// Scores 1 for triples in the truth set, 0 otherwise.
class OracleScorer : public Scorer {
 public:
  explicit OracleScorer(const KnowledgeGraph& kg) : kg_(kg) {}
  std::vector<double> plausibility(std::span<const Triple> triples) const override;
  bool has_relation_scores() const override { return true; }
  std::vector<double> relation_scores(EntityId head, EntityId tail) const override;

 private:
  const KnowledgeGraph& kg_;
};

}  // namespace kgseq
