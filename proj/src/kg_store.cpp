#include "kgseq/kg_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "kgseq/error.hpp"
#include "kgseq/random.hpp"

namespace kgseq {

namespace {

struct RawRow {
  std::vector<std::string> fields;
  std::size_t line_no;
};

std::vector<RawRow> read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetFormatError("missing or unreadable dataset file: " + path.string());
  std::vector<RawRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    RawRow row{{}, line_no};
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      row.fields.emplace_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string where(const std::filesystem::path& path, std::size_t line_no) {
  return path.filename().string() + ":" + std::to_string(line_no);
}

std::vector<KnowledgeGraph::Symbol> read_text_map(const std::filesystem::path& path) {
  std::vector<KnowledgeGraph::Symbol> symbols;
  for (auto& row : read_tsv(path)) {
    if (row.fields.size() < 2)
      throw DatasetFormatError("expected '<id>\\t<text>' at " + where(path, row.line_no));
    // Text may itself contain tabs; keep everything after the first one verbatim.
    std::string text = row.fields[1];
    for (std::size_t i = 2; i < row.fields.size(); ++i) text += "\t" + row.fields[i];
    symbols.push_back({std::move(row.fields[0]), std::move(text)});
  }
  std::sort(symbols.begin(), symbols.end(), [](const auto& a, const auto& b) { return a.raw_id < b.raw_id; });
  for (std::size_t i = 1; i < symbols.size(); ++i)
    if (symbols[i].raw_id == symbols[i - 1].raw_id)
      throw DatasetFormatError("duplicate identifier '" + symbols[i].raw_id + "' in " + path.filename().string());
  return symbols;
}

int parse_label(const std::string& field, const std::filesystem::path& path, std::size_t line_no) {
  if (field == "1" || field == "+1") return 1;
  if (field == "-1" || field == "0") return 0;
  throw DatasetFormatError("bad label '" + field + "' at " + where(path, line_no));
}

}  // namespace

std::size_t TripleHash::operator()(const Triple& t) const noexcept {
  const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.head)) << 32) ^
                   (static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.relation)) << 21) ^
                   static_cast<std::uint64_t>(static_cast<std::uint32_t>(t.tail));
  return static_cast<std::size_t>(mix64(key));
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "dev" || name == "valid") return Split::dev;
  if (name == "test") return Split::test;
  throw ArgumentError("unknown split '" + std::string(name) + "' (expected train, dev or test)");
}

TextSource parse_text_source(std::string_view name) {
  if (name == "names") return TextSource::names;
  if (name == "descriptions") return TextSource::descriptions;
  throw ArgumentError("unknown text source '" + std::string(name) + "' (expected names or descriptions)");
}

KnowledgeGraph KnowledgeGraph::from_tables(std::vector<Symbol> entities, std::vector<Symbol> relations,
                                           std::vector<Triple> train, std::vector<Triple> dev,
                                           std::vector<Triple> test) {
  KnowledgeGraph kg;
  kg.entities_ = std::move(entities);
  kg.relations_ = std::move(relations);
  kg.splits_[0] = std::move(train);
  kg.splits_[1] = std::move(dev);
  kg.splits_[2] = std::move(test);
  for (int s = 0; s < 3; ++s) {
    for (const auto& t : kg.splits_[s]) {
      if (!kg.valid(t)) throw PreconditionError("triple references an unregistered entity or relation");
      kg.labeled_[s].push_back({t, 1});
    }
  }
  kg.build_indexes();
  return kg;
}

void KnowledgeGraph::build_indexes() {
  entity_index_.clear();
  relation_index_.clear();
  for (std::size_t i = 0; i < entities_.size(); ++i) entity_index_.emplace(entities_[i].raw_id, static_cast<EntityId>(i));
  for (std::size_t i = 0; i < relations_.size(); ++i)
    relation_index_.emplace(relations_[i].raw_id, static_cast<RelationId>(i));
  truth_.clear();
  train_set_.clear();
  for (const auto& split : splits_) truth_.insert(split.begin(), split.end());
  train_set_.insert(splits_[0].begin(), splits_[0].end());
}

const KnowledgeGraph::Symbol& KnowledgeGraph::entity(EntityId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entities_.size())
    throw PreconditionError("entity id " + std::to_string(id) + " out of range");
  return entities_[static_cast<std::size_t>(id)];
}

const KnowledgeGraph::Symbol& KnowledgeGraph::relation(RelationId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= relations_.size())
    throw PreconditionError("relation id " + std::to_string(id) + " out of range");
  return relations_[static_cast<std::size_t>(id)];
}

const std::vector<Triple>& KnowledgeGraph::split(Split s) const noexcept { return splits_[static_cast<int>(s)]; }

const std::vector<LabeledTriple>& KnowledgeGraph::labeled(Split s) const noexcept {
  return labeled_[static_cast<int>(s)];
}

bool KnowledgeGraph::has_labeled_negatives(Split s) const noexcept {
  const auto& l = labeled(s);
  return std::any_of(l.begin(), l.end(), [](const LabeledTriple& x) { return x.label == 0; });
}

bool KnowledgeGraph::valid(const Triple& t) const noexcept {
  const auto ne = static_cast<EntityId>(entities_.size());
  const auto nr = static_cast<RelationId>(relations_.size());
  return t.head >= 0 && t.head < ne && t.tail >= 0 && t.tail < ne && t.relation >= 0 && t.relation < nr;
}

void KnowledgeGraph::check_valid(const Triple& t) const {
  if (!valid(t))
    throw PreconditionError("triple (" + std::to_string(t.head) + ", " + std::to_string(t.relation) + ", " +
                            std::to_string(t.tail) + ") has an out-of-range id");
}

bool KnowledgeGraph::is_known(const Triple& t) const {
  check_valid(t);
  return truth_.contains(t);
}

bool KnowledgeGraph::in_train(const Triple& t) const {
  check_valid(t);
  return train_set_.contains(t);
}

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view raw_id) const {
  const auto it = entity_index_.find(std::string(raw_id));
  if (it == entity_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view raw_id) const {
  const auto it = relation_index_.find(std::string(raw_id));
  if (it == relation_index_.end()) return std::nullopt;
  return it->second;
}

KnowledgeGraph KnowledgeGraph::with_train(std::vector<Triple> train) const {
  KnowledgeGraph copy = *this;
  copy.labeled_[0].clear();
  for (const auto& t : train) copy.labeled_[0].push_back({t, 1});
  copy.splits_[0] = std::move(train);
  copy.train_set_.clear();
  copy.train_set_.insert(copy.splits_[0].begin(), copy.splits_[0].end());
  return copy;
}

KnowledgeGraph load_dataset(const std::filesystem::path& directory, TextSource text_source) {
  const char* split_files[] = {"train.tsv", "dev.tsv", "test.tsv"};
  for (const char* f : split_files)
    if (!std::filesystem::is_regular_file(directory / f))
      throw DatasetFormatError("dataset directory " + directory.string() + " has no " + f);
  const auto entity_file = directory / (text_source == TextSource::names ? "entity2text.txt" : "entity2textlong.txt");
  const auto relation_file = directory / "relation2text.txt";

  KnowledgeGraph kg;
  kg.entities_ = read_text_map(entity_file);
  kg.relations_ = read_text_map(relation_file);
  kg.build_indexes();

  for (int s = 0; s < 3; ++s) {
    const auto path = directory / split_files[s];
    const auto rows = read_tsv(path);
    if (rows.empty()) throw EmptySplitError("split file " + path.string() + " is empty");
    for (const auto& row : rows) {
      if (row.fields.size() != 3 && row.fields.size() != 4)
        throw DatasetFormatError("expected '<head>\\t<relation>\\t<tail>[\\t<label>]' at " + where(path, row.line_no));
      const auto h = kg.find_entity(row.fields[0]);
      if (!h) throw UnknownIdentifierError(row.fields[0], where(path, row.line_no));
      const auto r = kg.find_relation(row.fields[1]);
      if (!r) throw UnknownIdentifierError(row.fields[1], where(path, row.line_no));
      const auto t = kg.find_entity(row.fields[2]);
      if (!t) throw UnknownIdentifierError(row.fields[2], where(path, row.line_no));
      const Triple triple{*h, *r, *t};
      const int label = row.fields.size() == 4 ? parse_label(row.fields[3], path, row.line_no) : 1;
      kg.labeled_[s].push_back({triple, label});
      if (label == 1) kg.splits_[s].push_back(triple);
    }
  }
  kg.build_indexes();
  return kg;
}

NegativeSamplingConfig::NegativeSamplingConfig(int negatives_per_positive_, std::uint64_t seed_,
                                               int max_rejection_attempts_, Corruption corruption_)
    : negatives_per_positive(negatives_per_positive_),
      seed(seed_),
      max_rejection_attempts(max_rejection_attempts_ == 0 ? 100 * negatives_per_positive_ : max_rejection_attempts_),
      corruption(corruption_) {
  if (negatives_per_positive < 1) throw ArgumentError("negatives_per_positive must be >= 1");
  if (max_rejection_attempts < negatives_per_positive)
    throw ArgumentError("max_rejection_attempts must be >= negatives_per_positive");
}

NegativeSample sample_negatives(const KnowledgeGraph& kg, const Triple& positive, const NegativeSamplingConfig& cfg) {
  if (kg.num_entities() < 2) throw PreconditionError("negative sampling needs at least two entities");
  if (!kg.is_known(positive)) throw PreconditionError("sample_negatives called with a triple outside the truth set");

  Rng rng(cfg.seed);
  std::bernoulli_distribution corrupt_head(0.5);
  NegativeSample out;
  out.negatives.reserve(static_cast<std::size_t>(cfg.negatives_per_positive));
  for (int attempt = 0; attempt < cfg.max_rejection_attempts &&
                        out.negatives.size() < static_cast<std::size_t>(cfg.negatives_per_positive);
       ++attempt) {
    Triple candidate = positive;
    const auto replacement = static_cast<EntityId>(uniform_index(rng, kg.num_entities()));
    if (corrupt_head(rng)) {
      if (replacement == positive.head) continue;
      candidate.head = replacement;
    } else {
      if (replacement == positive.tail) continue;
      candidate.tail = replacement;
    }
    if (kg.in_train(candidate)) continue;
    if (std::any_of(out.negatives.begin(), out.negatives.end(),
                    [&](const LabeledTriple& n) { return n.triple == candidate; }))
      continue;
    out.negatives.push_back({candidate, 0});
  }
  out.shortfall = out.negatives.size() < static_cast<std::size_t>(cfg.negatives_per_positive);
  return out;
}

std::vector<Triple> enumerate_negatives(const KnowledgeGraph& kg, const Triple& positive) {
  kg.check_valid(positive);
  std::vector<Triple> out;
  const auto n = static_cast<EntityId>(kg.num_entities());
  for (EntityId e = 0; e < n; ++e) {
    const Triple c{e, positive.relation, positive.tail};
    if (e != positive.head && !kg.in_train(c)) out.push_back(c);
  }
  for (EntityId e = 0; e < n; ++e) {
    const Triple c{positive.head, positive.relation, e};
    if (e != positive.tail && !kg.in_train(c)) out.push_back(c);
  }
  return out;
}

std::size_t subsample_size(std::size_t n, double proportion) {
  if (!(proportion > 0.0 && proportion <= 1.0))
    throw ArgumentError("training proportion must lie in (0, 1], got " + std::to_string(proportion));
  // nearbyint honours the default round-to-nearest-even mode
  return static_cast<std::size_t>(std::nearbyint(proportion * static_cast<double>(n)));
}

KnowledgeGraph subsample_training(const KnowledgeGraph& kg, double proportion, std::uint64_t seed) {
  const auto& train = kg.split(Split::train);
  const std::size_t keep = subsample_size(train.size(), proportion);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  // partial Fisher-Yates: the first `keep` slots are a uniform sample
  for (std::size_t i = 0; i < keep; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, order.size() - i));
    std::swap(order[i], order[j]);
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<Triple> sampled;
  sampled.reserve(keep);
  for (auto i : order) sampled.push_back(train[i]);
  return kg.with_train(std::move(sampled));
}

}  // namespace kgseq
