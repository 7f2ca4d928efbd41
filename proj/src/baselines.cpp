#include "kgseq/baselines.hpp"

#include <chrono>
#include <cmath>

#include "kgseq/checkpoint.hpp"
#include "kgseq/error.hpp"
#include "kgseq/random.hpp"

namespace kgseq {

std::string_view to_string(BaselineKind kind) { return kind == BaselineKind::transe ? "transe" : "distmult"; }

BaselineKind parse_baseline_kind(std::string_view name) {
  if (name == "transe") return BaselineKind::transe;
  if (name == "distmult") return BaselineKind::distmult;
  throw ArgumentError("unknown baseline kind '" + std::string(name) + "' (expected transe or distmult)");
}

namespace {

void check_lengths(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  if (h.size() != r.size() || h.size() != t.size()) throw ArgumentError("embedding lengths differ");
}

std::span<const double> row(const Matrix<double>& m, Eigen::Index i) {
  if (i < 0 || i >= m.rows()) throw PreconditionError("embedding id " + std::to_string(i) + " out of range");
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace

double transe_score(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  check_lengths(h, r, t);
  double sq = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = h[i] + r[i] - t[i];
    sq += d * d;
  }
  return -std::sqrt(sq);
}

double transe_score(std::span<const double> h, std::span<const double> r, std::span<const double> t, Distance d) {
  if (d == Distance::l2) return transe_score(h, r, t);
  check_lengths(h, r, t);
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += std::abs(h[i] + r[i] - t[i]);
  return -s;
}

double transe_score(const TransEParams& p, const Triple& t, Distance d) {
  return transe_score(row(p.entity, t.head), row(p.relation, t.relation), row(p.entity, t.tail), d);
}

std::string_view to_string(Distance d) { return d == Distance::l2 ? "l2" : "l1"; }

Distance parse_distance(std::string_view name) {
  if (name == "l2") return Distance::l2;
  if (name == "l1") return Distance::l1;
  throw ArgumentError("unknown distance '" + std::string(name) + "' (expected l1 or l2)");
}

double distmult_score(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  check_lengths(h, r, t);
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * r[i] * t[i];
  return s;
}

double distmult_score(const DistMultParams& p, const Triple& t) {
  return distmult_score(row(p.entity, t.head), row(p.relation, t.relation), row(p.entity, t.tail));
}

void BaselineConfig::validate() const {
  if (dim < 1) throw ArgumentError("baseline dim must be positive");
  if (!(margin > 0)) throw ArgumentError("margin must be positive");
  if (!(learning_rate > 0)) throw ArgumentError("baseline learning rate must be positive");
  if (epochs < 0) throw ArgumentError("epochs must be non-negative");
  if (negatives < 1) throw ArgumentError("negatives must be >= 1");
  if (!(l2 >= 0)) throw ArgumentError("l2 must be non-negative");
}

namespace {

void fill_uniform(Matrix<double>& m, Rng& rng, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

void normalize_row(Matrix<double>& m, Eigen::Index i) {
  const double n = m.row(i).norm();
  if (n > 0) m.row(i) /= n;
}

void normalize_rows(Matrix<double>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) normalize_row(m, i);
}

EmbeddingTables init_tables(std::size_t ne, std::size_t nr, const BaselineConfig& cfg) {
  cfg.validate();
  EmbeddingTables p;
  p.entity.resize(static_cast<Eigen::Index>(ne), cfg.dim);
  p.relation.resize(static_cast<Eigen::Index>(nr), cfg.dim);
  Rng rng(derive_seed(cfg.seed, 0xba5eULL));
  const double bound = 6.0 / std::sqrt(static_cast<double>(cfg.dim));
  fill_uniform(p.entity, rng, bound);
  fill_uniform(p.relation, rng, bound);
  return p;
}

// Positive paired with its negatives, one pair per update, in a shuffled order.
struct Pair {
  Triple pos;
  Triple neg;
};

std::vector<Pair> epoch_pairs(const KnowledgeGraph& kg, const BaselineConfig& cfg, int epoch) {
  const auto& train = kg.split(Split::train);
  const std::uint64_t epoch_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
  std::vector<Pair> pairs;
  pairs.reserve(train.size() * static_cast<std::size_t>(cfg.negatives));
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto sample = sample_negatives(kg, train[i], NegativeSamplingConfig(cfg.negatives, derive_seed(epoch_seed, i)));
    for (const auto& n : sample.negatives) pairs.push_back({train[i], n.triple});
  }
  Rng rng(derive_seed(epoch_seed, ~0ULL));
  for (std::size_t i = pairs.size(); i > 1; --i) std::swap(pairs[i - 1], pairs[uniform_index(rng, i)]);
  return pairs;
}

template <class Update>
void run_epochs(const KnowledgeGraph& kg, const BaselineConfig& cfg, const BaselineCallback& on_epoch,
                Update&& update, const std::function<void()>& end_of_epoch) {
  if (kg.split(Split::train).empty()) throw ArgumentError("empty training set");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto pairs = epoch_pairs(kg, cfg, epoch);
    double total = 0.0;
    for (const auto& p : pairs) total += update(p);
    if (!std::isfinite(total)) throw NumericError("non-finite baseline loss at epoch " + std::to_string(epoch));
    if (end_of_epoch) end_of_epoch();
    if (on_epoch) {
      BaselineEpoch rec;
      rec.epoch = epoch;
      rec.mean_loss = pairs.empty() ? 0.0 : total / static_cast<double>(pairs.size());
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      on_epoch(rec);
    }
  }
}

}  // namespace

TransEParams init_transe(std::size_t ne, std::size_t nr, const BaselineConfig& cfg) {
  TransEParams p{init_tables(ne, nr, cfg)};
  normalize_rows(p.relation);
  normalize_rows(p.entity);
  return p;
}

DistMultParams init_distmult(std::size_t ne, std::size_t nr, const BaselineConfig& cfg) {
  return DistMultParams{init_tables(ne, nr, cfg)};
}

TransEParams train_transe(const KnowledgeGraph& kg, const BaselineConfig& cfg, const BaselineCallback& on_epoch) {
  TransEParams p = init_transe(kg.num_entities(), kg.num_relations(), cfg);
  const double lr = cfg.learning_rate;
  const bool l1 = cfg.distance == Distance::l1;
  Eigen::RowVectorXd dpos, dneg;
  auto update = [&](const Pair& pr) {
    const auto& a = pr.pos;
    const auto& b = pr.neg;
    dpos = p.entity.row(a.head) + p.relation.row(a.relation) - p.entity.row(a.tail);
    dneg = p.entity.row(b.head) + p.relation.row(b.relation) - p.entity.row(b.tail);
    const double npos = l1 ? dpos.lpNorm<1>() : dpos.norm();
    const double nneg = l1 ? dneg.lpNorm<1>() : dneg.norm();
    const double loss = cfg.margin + npos - nneg;
    if (loss <= 0) return 0.0;
    // Gradient of each distance with respect to its residual h + r - t.
    if (l1) {
      dpos = dpos.array().sign().matrix();
      dneg = dneg.array().sign().matrix();
    } else {
      if (npos > 0) dpos /= npos;
      if (nneg > 0) dneg /= nneg;
    }
    p.entity.row(a.head) -= lr * dpos;
    p.entity.row(a.tail) += lr * dpos;
    p.relation.row(a.relation) -= lr * dpos;
    p.entity.row(b.head) += lr * dneg;
    p.entity.row(b.tail) -= lr * dneg;
    p.relation.row(b.relation) += lr * dneg;
    for (EntityId e : {a.head, a.tail, b.head, b.tail}) normalize_row(p.entity, e);
    return loss;
  };
  run_epochs(kg, cfg, on_epoch, update, [&] { normalize_rows(p.entity); });
  if (!p.entity.allFinite() || !p.relation.allFinite()) throw NumericError("TransE training produced non-finite embeddings");
  return p;
}

DistMultParams train_distmult(const KnowledgeGraph& kg, const BaselineConfig& cfg, const BaselineCallback& on_epoch) {
  DistMultParams p = init_distmult(kg.num_entities(), kg.num_relations(), cfg);
  const double lr = cfg.learning_rate;
  Eigen::RowVectorXd h, r, t;
  auto step = [&](const Triple& x, double y) {
    h = p.entity.row(x.head);
    r = p.relation.row(x.relation);
    t = p.entity.row(x.tail);
    const double f = (h.array() * r.array() * t.array()).sum();
    const double z = -y * f;
    const double loss = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    const double g = -y / (1.0 + std::exp(-z));  // d loss / d f
    p.entity.row(x.head) -= lr * (g * (r.array() * t.array()).matrix() + cfg.l2 * h);
    p.relation.row(x.relation) -= lr * (g * (h.array() * t.array()).matrix() + cfg.l2 * r);
    p.entity.row(x.tail) -= lr * (g * (h.array() * r.array()).matrix() + cfg.l2 * t);
    return loss;
  };
  auto update = [&](const Pair& pr) { return step(pr.pos, 1.0) + step(pr.neg, -1.0); };
  run_epochs(kg, cfg, on_epoch, update, {});
  if (!p.entity.allFinite() || !p.relation.allFinite())
    throw NumericError("DistMult training produced non-finite embeddings");
  return p;
}

BaselineModel train_baseline(BaselineKind kind, const KnowledgeGraph& kg, const BaselineConfig& cfg,
                             const BaselineCallback& on_epoch) {
  if (kind == BaselineKind::transe) return {kind, cfg.distance, train_transe(kg, cfg, on_epoch)};
  return {kind, cfg.distance, train_distmult(kg, cfg, on_epoch)};
}

BaselineScorer::BaselineScorer(const BaselineModel& model) : model_(model) {
  if (model.params.entity.cols() != model.params.relation.cols())
    throw ConfigMismatchError("entity and relation embeddings differ in width");
}

std::vector<double> BaselineScorer::plausibility(std::span<const Triple> triples) const {
  std::vector<double> out;
  out.reserve(triples.size());
  const auto& p = model_.params;
  for (const auto& t : triples) {
    const auto h = row(p.entity, t.head), r = row(p.relation, t.relation), tl = row(p.entity, t.tail);
    out.push_back(model_.kind == BaselineKind::transe ? transe_score(h, r, tl, model_.distance) : distmult_score(h, r, tl));
  }
  return out;
}

void save_baseline(const std::filesystem::path& path, const BaselineModel& model, const BaselineConfig& cfg) {
  CheckpointFile file;
  file.meta = {{"model", "kgseq-baseline"},
               {"kind", std::string(to_string(model.kind))},
               {"distance", std::string(to_string(model.distance))},
               {"dim", cfg.dim},
               {"margin", cfg.margin},
               {"learning_rate", cfg.learning_rate},
               {"epochs", cfg.epochs},
               {"negatives", cfg.negatives},
               {"seed", cfg.seed},
               {"l2", cfg.l2}};
  append_tensor(file, "entity", model.params.entity);
  append_tensor(file, "relation", model.params.relation);
  write_checkpoint_file(path, file);
}

BaselineModel load_baseline(const std::filesystem::path& path) {
  const auto file = read_checkpoint_file(path);
  if (file.meta.value("model", "") != "kgseq-baseline") throw CheckpointError("checkpoint does not hold a baseline model");
  BaselineModel model;
  try {
    model.kind = parse_baseline_kind(file.meta.at("kind").get<std::string>());
    model.distance = parse_distance(file.meta.value("distance", "l2"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt baseline metadata: ") + e.what());
  } catch (const ArgumentError& e) {
    throw CheckpointError(std::string("corrupt baseline metadata: ") + e.what());
  }
  const auto* ent = file.find("entity");
  const auto* rel = file.find("relation");
  if (!ent || !rel) throw CheckpointIntegrityError("checkpoint integrity error: missing baseline tables");
  if (ent->cols != rel->cols) throw CheckpointIntegrityError("checkpoint integrity error: table widths differ");
  model.params.entity = tensor_matrix<double>(file, "entity", ent->rows, ent->cols);
  model.params.relation = tensor_matrix<double>(file, "relation", rel->rows, rel->cols);
  return model;
}

}  // namespace kgseq
