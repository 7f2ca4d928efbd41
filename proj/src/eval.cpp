#include "kgseq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "kgseq/parallel.hpp"
#include "kgseq/random.hpp"

namespace kgseq {

std::vector<double> Scorer::relation_scores(EntityId, EntityId) const {
  throw ModeError("this scorer does not provide relation scores");
}

namespace {
std::string triple_text(const Triple& t) {
  return "(" + std::to_string(t.head) + ", " + std::to_string(t.relation) + ", " + std::to_string(t.tail) + ")";
}
}  // namespace

EvaluationError::EvaluationError(const Triple& query, const std::string& side, const std::string& what)
    : Error("scoring failed for query " + triple_text(query) + " [" + side + "]: " + what), query_(query) {}

double rank_of(double correct_score, std::span<const double> candidate_scores) {
  if (!std::isfinite(correct_score)) throw NumericError("non-finite score for the correct candidate");
  std::size_t greater = 0, equal = 0;
  for (double s : candidate_scores) {
    if (!std::isfinite(s)) throw NumericError("non-finite candidate score");
    if (s > correct_score) ++greater;
    else if (s == correct_score) ++equal;
  }
  return 1.0 + static_cast<double>(greater) + static_cast<double>(equal) / 2.0;
}

std::string_view to_string(QuerySide side) {
  switch (side) {
    case QuerySide::head: return "head";
    case QuerySide::tail: return "tail";
    case QuerySide::relation: return "relation";
  }
  return "?";
}

std::vector<double> RankingReport::ranks() const {
  std::vector<double> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(q.rank);
  return out;
}

RankingReport make_report(std::vector<QueryRecord> queries, std::span<const int> ks) {
  RankingReport report;
  report.queries = std::move(queries);
  report.num_queries = report.queries.size();
  double sum = 0.0;
  for (const auto& q : report.queries) sum += q.rank;
  report.mean_rank = report.num_queries ? sum / static_cast<double>(report.num_queries) : 0.0;
  for (int k : ks) {
    std::size_t hit = 0;
    for (const auto& q : report.queries) hit += q.rank <= static_cast<double>(k);
    report.hits_at[k] = report.num_queries ? static_cast<double>(hit) / static_cast<double>(report.num_queries) : 0.0;
  }
  return report;
}

std::vector<Triple> link_candidates(const KnowledgeGraph& kg, const Triple& query, QuerySide side, bool filtered) {
  kg.check_valid(query);
  std::vector<Triple> out;
  const auto n = static_cast<EntityId>(kg.num_entities());
  for (EntityId e = 0; e < n; ++e) {
    Triple c = query;
    if (side == QuerySide::head) {
      if (e == query.head) continue;
      c.head = e;
    } else {
      if (e == query.tail) continue;
      c.tail = e;
    }
    if (filtered && kg.truth_set().contains(c)) continue;
    out.push_back(c);
  }
  return out;
}

RankingReport link_prediction_eval(const Scorer& scorer, const KnowledgeGraph& kg, Split split,
                                   const EvalOptions& options) {
  const auto& triples = kg.split(split);
  std::vector<QueryRecord> records(2 * triples.size());
  parallel_for(records.size(), options.workers, [&](std::size_t q) {
    const Triple& truth = triples[q / 2];
    const QuerySide side = q % 2 == 0 ? QuerySide::head : QuerySide::tail;
    std::vector<Triple> batch{truth};
    const auto candidates = link_candidates(kg, truth, side, options.filtered);
    batch.insert(batch.end(), candidates.begin(), candidates.end());
    std::vector<double> scores;
    try {
      scores = scorer.plausibility(batch);
    } catch (const std::exception& e) {
      throw EvaluationError(truth, std::string(to_string(side)), e.what());
    }
    if (scores.size() != batch.size())
      throw EvaluationError(truth, std::string(to_string(side)), "scorer returned the wrong number of scores");
    records[q] = {truth, side, rank_of(scores.front(), std::span<const double>(scores).subspan(1))};
  });
  return make_report(std::move(records), options.hits_at);
}

RankingReport relation_prediction_eval(const Scorer& scorer, const KnowledgeGraph& kg, Split split,
                                       const EvalOptions& options) {
  if (!scorer.has_relation_scores()) throw ModeError("relation prediction needs a scorer with relation scores");
  const auto& triples = kg.split(split);
  std::vector<QueryRecord> records(triples.size());
  parallel_for(records.size(), options.workers, [&](std::size_t q) {
    const Triple& truth = triples[q];
    kg.check_valid(truth);
    std::vector<double> scores;
    try {
      scores = scorer.relation_scores(truth.head, truth.tail);
    } catch (const std::exception& e) {
      throw EvaluationError(truth, "relation", e.what());
    }
    if (scores.size() != kg.num_relations())
      throw EvaluationError(truth, "relation", "scorer returned " + std::to_string(scores.size()) + " relation scores, graph has " +
                                                   std::to_string(kg.num_relations()));
    std::vector<double> competitors;
    for (RelationId r = 0; r < static_cast<RelationId>(scores.size()); ++r) {
      if (r == truth.relation) continue;
      if (options.filtered && kg.truth_set().contains(Triple{truth.head, r, truth.tail})) continue;
      competitors.push_back(scores[static_cast<std::size_t>(r)]);
    }
    records[q] = {truth, QuerySide::relation, rank_of(scores[static_cast<std::size_t>(truth.relation)], competitors)};
  });
  return make_report(std::move(records), options.hits_at);
}

double triple_classification_eval(const Scorer& scorer, std::span<const LabeledTriple> labeled, double threshold) {
  if (labeled.empty()) throw ArgumentError("triple classification needs at least one labeled triple");
  std::vector<Triple> triples;
  triples.reserve(labeled.size());
  for (const auto& l : labeled) triples.push_back(l.triple);
  const auto scores = scorer.plausibility(triples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) correct += (scores[i] > threshold) == (labeled[i].label == 1);
  return static_cast<double>(correct) / static_cast<double>(labeled.size());
}

double tune_threshold(const Scorer& scorer, std::span<const LabeledTriple> labeled) {
  if (labeled.empty()) throw ArgumentError("threshold tuning needs at least one labeled triple");
  std::vector<Triple> triples;
  for (const auto& l : labeled) triples.push_back(l.triple);
  const auto scores = scorer.plausibility(triples);
  std::vector<std::pair<double, int>> sorted;
  for (std::size_t i = 0; i < scores.size(); ++i) sorted.emplace_back(scores[i], labeled[i].label);
  std::sort(sorted.begin(), sorted.end());

  // threshold below everything: all predicted positive
  long positives = 0;
  for (const auto& s : sorted) positives += s.second == 1;
  long correct = positives;
  long best = correct;
  double best_threshold = sorted.front().first - 1.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    correct += sorted[i].second == 1 ? -1 : 1;  // sorted[i] now predicted negative
    if (i + 1 < sorted.size() && sorted[i + 1].first == sorted[i].first) continue;
    if (correct > best) {
      best = correct;
      best_threshold = i + 1 < sorted.size() ? 0.5 * (sorted[i].first + sorted[i + 1].first) : sorted[i].first;
    }
  }
  return best_threshold;
}

std::vector<LabeledTriple> classification_set(const KnowledgeGraph& kg, Split split, std::uint64_t seed) {
  if (kg.has_labeled_negatives(split)) return kg.labeled(split);
  std::vector<LabeledTriple> out;
  const auto& positives = kg.split(split);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    out.push_back({positives[i], 1});
    // Training negatives only avoid train; evaluation negatives avoid every known triple.
    for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
      const auto neg =
          sample_negatives(kg, positives[i], NegativeSamplingConfig(1, derive_seed(derive_seed(seed, i), attempt)));
      if (!neg.negatives.empty() && !kg.is_known(neg.negatives.front().triple)) {
        out.push_back(neg.negatives.front());
        break;
      }
    }
  }
  return out;
}

nlohmann::json report_to_json(const RankingReport& report, std::string_view task, std::string_view split, double wall_ms) {
  nlohmann::json hits = nlohmann::json::object();
  for (const auto& [k, v] : report.hits_at) hits[std::to_string(k)] = v;
  return {{"task", task},
          {"split", split},
          {"mean_rank", report.mean_rank},
          {"hits", hits},
          {"num_queries", report.num_queries},
          {"wall_ms", wall_ms}};
}

void write_query_csv(const std::filesystem::path& path, const KnowledgeGraph& kg, const RankingReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  out << "head,relation,tail,side,rank\n";
  for (const auto& q : report.queries)
    out << quote(kg.entity(q.triple.head).raw_id) << ',' << quote(kg.relation(q.triple.relation).raw_id) << ','
        << quote(kg.entity(q.triple.tail).raw_id) << ',' << to_string(q.side) << ',' << q.rank << '\n';
}

std::vector<double> OracleScorer::plausibility(std::span<const Triple> triples) const {
  std::vector<double> out;
  out.reserve(triples.size());
  for (const auto& t : triples) out.push_back(kg_.is_known(t) ? 1.0 : 0.0);
  return out;
}

std::vector<double> OracleScorer::relation_scores(EntityId head, EntityId tail) const {
  std::vector<double> out;
  for (RelationId r = 0; r < static_cast<RelationId>(kg_.num_relations()); ++r)
    out.push_back(kg_.is_known(Triple{head, r, tail}) ? 1.0 : 0.0);
  return out;
}

}  // namespace kgseq
