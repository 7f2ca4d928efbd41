#include "kgseq/tasks.hpp"

#include <chrono>
#include <cmath>

#include "kgseq/error.hpp"
#include "kgseq/parallel.hpp"
#include "kgseq/random.hpp"

namespace kgseq {

std::string_view to_string(Task task) {
  switch (task) {
    case Task::triple_classification: return "triple_classification";
    case Task::link_prediction: return "link_prediction";
    case Task::relation_prediction: return "relation_prediction";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "triple_classification") return Task::triple_classification;
  if (name == "link_prediction") return Task::link_prediction;
  if (name == "relation_prediction") return Task::relation_prediction;
  throw ArgumentError("unknown task '" + std::string(name) +
                      "' (expected triple_classification, link_prediction or relation_prediction)");
}

int default_epochs(Task task) {
  switch (task) {
    case Task::triple_classification: return 3;
    case Task::link_prediction: return 5;
    case Task::relation_prediction: return 20;
  }
  return 3;
}

int default_negatives(Task task) {
  switch (task) {
    case Task::triple_classification: return 1;
    case Task::link_prediction: return 5;
    case Task::relation_prediction: return 0;
  }
  return 1;
}

HeadKind head_kind(Task task) { return task == Task::relation_prediction ? HeadKind::relation : HeadKind::triple; }

SequenceMode sequence_mode(HeadKind kind) { return kind == HeadKind::triple ? SequenceMode::triple : SequenceMode::pair; }

template <class S>
Model<S> make_model(const EncoderConfig& cfg, HeadKind kind, std::size_t num_relations, Vocabulary vocab,
                    PackingConfig packing) {
  if (static_cast<std::size_t>(cfg.vocab_size) != vocab.size())
    throw ConfigMismatchError("encoder vocab_size " + std::to_string(cfg.vocab_size) + " differs from vocabulary size " +
                              std::to_string(vocab.size()));
  if (packing.max_len > cfg.max_positions)
    throw ConfigError("packing max_len " + std::to_string(packing.max_len) + " exceeds max_positions " +
                      std::to_string(cfg.max_positions));
  if (kind == HeadKind::relation && num_relations == 0) throw ArgumentError("relation head needs at least one relation");
  Model<S> m;
  m.config = cfg;
  m.encoder = init_params<S>(cfg);
  m.kind = kind;
  m.head = Matrix<S>(kind == HeadKind::triple ? 2 : static_cast<Eigen::Index>(num_relations), cfg.hidden_size);
  Rng rng(derive_seed(cfg.seed, 0x4eadULL));
  fill_truncated_normal(std::span<S>(m.head.data(), static_cast<std::size_t>(m.head.size())), rng, 0.02);
  m.vocab = std::move(vocab);
  m.packing = packing;
  return m;
}

template <class S>
Matrix<S> head_probabilities(const Matrix<S>& cls, const Matrix<S>& head) {
  if (cls.cols() != head.cols())
    throw ConfigMismatchError("head width " + std::to_string(head.cols()) + " differs from hidden size " +
                              std::to_string(cls.cols()));
  // lazyProduct keeps one-row batches on the same kernel as larger ones.
  Matrix<S> probs = cls.lazyProduct(head.transpose());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    auto row = probs.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return probs;
}

namespace {

template <class S>
Matrix<S> cls_matrix(const std::vector<EncoderOutput<S>>& outputs, Eigen::Index hidden) {
  Matrix<S> cls(static_cast<Eigen::Index>(outputs.size()), hidden);
  for (std::size_t i = 0; i < outputs.size(); ++i) cls.row(static_cast<Eigen::Index>(i)) = outputs[i].cls;
  return cls;
}

double clamp_probability(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }

}  // namespace

template <class S>
TripleScore score_triple(const EncoderParams<S>& encoder, const EncoderConfig& cfg, const TripleHead<S>& head,
                         const PackedSequence& packed) {
  if (packed.mode != SequenceMode::triple) throw ModeError("score_triple needs a triple-mode sequence");
  if (head.weight.rows() != 2) throw ConfigMismatchError("triple head must have two rows");
  const auto out = forward(encoder, cfg, std::span<const PackedSequence>(&packed, 1));
  const Matrix<S> probs = head_probabilities(cls_matrix(out.outputs, cfg.hidden_size), head.weight);
  return {static_cast<double>(probs(0, 0)), static_cast<double>(probs(0, 1))};
}

template <class S>
RelationScore score_relations(const EncoderParams<S>& encoder, const EncoderConfig& cfg, const RelationHead<S>& head,
                              const PackedSequence& packed) {
  if (packed.mode != SequenceMode::pair) throw ModeError("score_relations needs a pair-mode sequence");
  const auto out = forward(encoder, cfg, std::span<const PackedSequence>(&packed, 1));
  const Matrix<S> probs = head_probabilities(cls_matrix(out.outputs, cfg.hidden_size), head.weight);
  RelationScore score;
  for (Eigen::Index r = 0; r < probs.cols(); ++r) score.probs.push_back(static_cast<double>(probs(0, r)));
  return score;
}

double triple_loss(std::span<const TripleScore> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ArgumentError("triple_loss: scores and labels differ in length");
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("triple labels must be 0 or 1");
    loss -= labels[i] == 1 ? std::log(clamp_probability(scores[i].positive))
                           : std::log(clamp_probability(scores[i].negative));
  }
  return loss;
}

double relation_loss(std::span<const RelationScore> scores, std::span<const int> relation_labels) {
  if (scores.size() != relation_labels.size()) throw ArgumentError("relation_loss: scores and labels differ in length");
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int r = relation_labels[i];
    if (r < 0 || static_cast<std::size_t>(r) >= scores[i].probs.size())
      throw ArgumentError("relation label " + std::to_string(r) + " out of range for " +
                          std::to_string(scores[i].probs.size()) + " relations");
    loss -= std::log(clamp_probability(scores[i].probs[static_cast<std::size_t>(r)]));
  }
  return loss;
}

template <class S>
ModelGrads<S> zero_grads(const Model<S>& model) {
  return {zero_params<S>(model.config), Matrix<S>::Zero(model.head.rows(), model.head.cols())};
}

template <class S>
double batch_loss(const Model<S>& model, std::span<const PackedSequence> batch, std::span<const int> labels, Mode mode,
                  std::uint64_t dropout_seed, ModelGrads<S>* grads) {
  if (batch.size() != labels.size()) throw ArgumentError("batch and labels differ in length");
  const auto expected_mode = sequence_mode(model.kind);
  for (const auto& seq : batch)
    if (seq.mode != expected_mode)
      throw ModeError(model.kind == HeadKind::triple ? "triple head needs triple-mode sequences"
                                                     : "relation head needs pair-mode sequences");
  ForwardOptions options;
  options.mode = mode;
  options.dropout_seed = dropout_seed;
  options.record_trace = grads != nullptr;
  const auto fr = forward(model.encoder, model.config, batch, options);
  const Matrix<S> cls = cls_matrix(fr.outputs, model.config.hidden_size);
  const Matrix<S> probs = head_probabilities(cls, model.head);

  double loss = 0.0;
  Matrix<S> dlogits = probs;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    Eigen::Index target;
    if (model.kind == HeadKind::triple) {
      if (labels[i] != 0 && labels[i] != 1) throw ArgumentError("triple labels must be 0 or 1");
      target = labels[i] == 1 ? 0 : 1;
    } else {
      if (labels[i] < 0 || labels[i] >= probs.cols())
        throw ArgumentError("relation label " + std::to_string(labels[i]) + " out of range");
      target = labels[i];
    }
    const double p = static_cast<double>(probs(row, target));
    loss -= std::log(clamp_probability(p));
    if (p > kLogClamp && p < 1.0 - kLogClamp) dlogits(row, target) -= S(1);
    else dlogits.row(row).setZero();  // clamped: the loss is locally constant
  }
  if (grads) {
    grads->head.noalias() += dlogits.transpose() * cls;
    const Matrix<S> dcls = dlogits * model.head;
    backward_accumulate(model.encoder, *fr.trace, dcls, grads->encoder);
  }
  return loss;
}

TrainConfig TrainConfig::for_task(Task task) {
  TrainConfig cfg;
  cfg.epochs = default_epochs(task);
  cfg.negatives_per_positive = std::max(1, default_negatives(task));
  return cfg;
}

void TrainConfig::validate(Task task) const {
  if (batch_size < 1) throw ArgumentError("batch_size must be positive");
  if (!(learning_rate > 0)) throw ArgumentError("learning_rate must be positive");
  if (epochs < 0) throw ArgumentError("epochs must be non-negative");
  if (task != Task::relation_prediction && negatives_per_positive < 1)
    throw ArgumentError("negatives_per_positive must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 0.5)) throw ArgumentError("warmup_fraction must lie in [0, 0.5]");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ArgumentError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ArgumentError("Adam epsilon must be positive");
  if (workers < 1) throw ArgumentError("workers must be >= 1");
  if (shard_size < 1) throw ArgumentError("shard_size must be >= 1");
}

AdamOptimizer::AdamOptimizer(const TrainConfig& cfg, std::vector<std::size_t> sizes)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), epsilon_(cfg.epsilon) {
  for (auto n : sizes) {
    m_.emplace_back(n, 0.0f);
    v_.emplace_back(n, 0.0f);
  }
}

void AdamOptimizer::step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads,
                         double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ArgumentError("optimizer tensor count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(epsilon_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = m_[k];
    auto& v = v_[k];
    if (p.size() != m.size() || g.size() != m.size()) throw ArgumentError("optimizer tensor size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

double learning_rate_at(const TrainConfig& cfg, long step, long total_steps) {
  if (total_steps <= 0) return cfg.learning_rate;
  const auto warmup = static_cast<long>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double remaining = static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
  return cfg.learning_rate * std::max(0.0, remaining);
}

std::vector<Example> epoch_examples(const KnowledgeGraph& kg, Task task, const TrainConfig& cfg, int epoch) {
  const auto& train = kg.split(Split::train);
  const std::uint64_t epoch_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch));
  std::vector<Example> examples;
  if (task == Task::relation_prediction) {
    for (const auto& t : train) examples.push_back({t, t.relation});
  } else {
    examples.reserve(train.size() * static_cast<std::size_t>(1 + cfg.negatives_per_positive));
    for (std::size_t i = 0; i < train.size(); ++i) {
      examples.push_back({train[i], 1});
      const auto sample = sample_negatives(kg, train[i], NegativeSamplingConfig(cfg.negatives_per_positive, derive_seed(epoch_seed, i)));
      for (const auto& n : sample.negatives) examples.push_back({n.triple, 0});
    }
  }
  Rng rng(derive_seed(epoch_seed, ~0ULL));
  for (std::size_t i = examples.size(); i > 1; --i) std::swap(examples[i - 1], examples[uniform_index(rng, i)]);
  return examples;
}

namespace {

std::vector<std::span<float>> parameter_spans(Model<float>& model) {
  std::vector<std::span<float>> out;
  for (auto& v : tensors(model.encoder)) out.push_back(v.span());
  out.emplace_back(model.head.data(), static_cast<std::size_t>(model.head.size()));
  return out;
}

std::vector<std::span<const float>> gradient_spans(ModelGrads<float>& grads) {
  std::vector<std::span<const float>> out;
  for (auto& v : tensors(grads.encoder)) out.emplace_back(v.data, static_cast<std::size_t>(v.size()));
  out.emplace_back(grads.head.data(), static_cast<std::size_t>(grads.head.size()));
  return out;
}

void add_into(ModelGrads<float>& acc, ModelGrads<float>& other) {
  auto a = tensors(acc.encoder);
  auto b = tensors(other.encoder);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (Eigen::Index i = 0; i < a[k].size(); ++i) a[k].data[i] += b[k].data[i];
  acc.head += other.head;
}

void scale(ModelGrads<float>& g, float factor) {
  for (auto& v : tensors(g.encoder))
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data[i] *= factor;
  g.head *= factor;
}

}  // namespace

TrainLog train(Model<float>& model, const KnowledgeGraph& kg, Task task, const TrainConfig& cfg,
               const EpochCallback& on_epoch) {
  cfg.validate(task);
  if (head_kind(task) != model.kind) throw ModeError("model head does not match task " + std::string(to_string(task)));
  if (model.kind == HeadKind::relation && model.num_classes() != kg.num_relations())
    throw ConfigMismatchError("relation head has " + std::to_string(model.num_classes()) + " rows, graph has " +
                              std::to_string(kg.num_relations()) + " relations");
  const auto& train_split = kg.split(Split::train);
  if (train_split.empty()) throw ArgumentError("empty training set");

  TrainLog log;
  log.num_train_triples = train_split.size();
  if (cfg.epochs == 0) return log;

  const TextEncoder text(kg, model.vocab, model.packing);
  const std::size_t per_positive = task == Task::relation_prediction ? 1 : 1 + static_cast<std::size_t>(cfg.negatives_per_positive);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((train_split.size() * per_positive + batch - 1) / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;

  std::vector<std::size_t> sizes;
  for (auto s : parameter_spans(model)) sizes.push_back(s.size());
  AdamOptimizer adam(cfg, std::move(sizes));
  const std::uint64_t dropout_root = derive_seed(cfg.seed, 0xd809ULL);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto examples = epoch_examples(kg, task, cfg, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += batch) {
      const std::size_t len = std::min(batch, examples.size() - start);
      std::vector<PackedSequence> packed;
      std::vector<int> labels;
      packed.reserve(len);
      for (std::size_t i = start; i < start + len; ++i) {
        const auto& ex = examples[i];
        packed.push_back(model.kind == HeadKind::triple ? text.triple(ex.triple) : text.pair(ex.triple.head, ex.triple.tail));
        labels.push_back(ex.label);
      }

      const auto shard = static_cast<std::size_t>(cfg.shard_size);
      const std::size_t shards = (len + shard - 1) / shard;
      std::vector<ModelGrads<float>> shard_grads(shards);
      std::vector<double> shard_loss(shards, 0.0);
      const std::uint64_t step_seed = derive_seed(dropout_root, static_cast<std::uint64_t>(step));
      parallel_for(shards, cfg.workers, [&](std::size_t s) {
        const std::size_t b = s * shard, n = std::min(shard, len - b);
        shard_grads[s] = zero_grads(model);
        shard_loss[s] = batch_loss<float>(model, std::span<const PackedSequence>(packed).subspan(b, n),
                                          std::span<const int>(labels).subspan(b, n), Mode::train,
                                          derive_seed(step_seed, s), &shard_grads[s]);
      });
      double batch_sum = 0.0;
      for (std::size_t s = 0; s < shards; ++s) {
        batch_sum += shard_loss[s];
        if (s > 0) add_into(shard_grads[0], shard_grads[s]);
      }
      if (!std::isfinite(batch_sum))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      loss_sum += batch_sum;
      scale(shard_grads[0], 1.0f / static_cast<float>(len));

      const auto params = parameter_spans(model);
      const auto grads = gradient_spans(shard_grads[0]);
      adam.step(params, grads, learning_rate_at(cfg, step, total_steps));
      ++step;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.num_examples = examples.size();
    rec.mean_loss = examples.empty() ? 0.0 : loss_sum / static_cast<double>(examples.size());
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!all_finite(model.encoder) || !model.head.allFinite()) throw NumericError("training produced non-finite parameters");
  return log;
}

ModelScorer::ModelScorer(const Model<float>& model, const KnowledgeGraph& kg, int batch_size)
    : model_(model), encoder_(kg, model.vocab, model.packing), batch_size_(batch_size) {
  if (batch_size < 1) throw ArgumentError("score batch size must be positive");
  if (model.kind == HeadKind::relation && model.num_classes() != kg.num_relations())
    throw ConfigMismatchError("relation head has " + std::to_string(model.num_classes()) + " rows, dataset has " +
                              std::to_string(kg.num_relations()) + " relations");
}

std::vector<TripleScore> ModelScorer::triple_scores(std::span<const Triple> triples) const {
  if (model_.kind != HeadKind::triple) throw ModeError("triple scores need a triple-head model");
  std::vector<TripleScore> out;
  out.reserve(triples.size());
  for (std::size_t start = 0; start < triples.size(); start += static_cast<std::size_t>(batch_size_)) {
    const std::size_t len = std::min(static_cast<std::size_t>(batch_size_), triples.size() - start);
    std::vector<PackedSequence> packed;
    packed.reserve(len);
    for (std::size_t i = start; i < start + len; ++i) packed.push_back(encoder_.triple(triples[i]));
    const auto fr = forward(model_.encoder, model_.config, std::span<const PackedSequence>(packed));
    const Matrix<float> probs = head_probabilities(cls_matrix(fr.outputs, model_.config.hidden_size), model_.head);
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
      out.push_back({static_cast<double>(probs(r, 0)), static_cast<double>(probs(r, 1))});
  }
  return out;
}

std::vector<double> ModelScorer::plausibility(std::span<const Triple> triples) const {
  std::vector<double> out;
  out.reserve(triples.size());
  for (const auto& s : triple_scores(triples)) out.push_back(s.positive);
  return out;
}

std::vector<double> ModelScorer::relation_scores(EntityId head, EntityId tail) const {
  if (model_.kind != HeadKind::relation) throw ModeError("relation scores need a relation-head model");
  const PackedSequence packed = encoder_.pair(head, tail);
  const auto fr = forward(model_.encoder, model_.config, std::span<const PackedSequence>(&packed, 1));
  const Matrix<float> probs = head_probabilities(cls_matrix(fr.outputs, model_.config.hidden_size), model_.head);
  std::vector<double> out;
  for (Eigen::Index r = 0; r < probs.cols(); ++r) out.push_back(static_cast<double>(probs(0, r)));
  return out;
}

double classification_accuracy(const Model<float>& model, const KnowledgeGraph& kg,
                               std::span<const LabeledTriple> labeled) {
  const ModelScorer scorer(model, kg);
  return triple_classification_eval(scorer, labeled, 0.5);
}

void save_model(const std::filesystem::path& path, const Model<float>& model, nlohmann::json extra_meta) {
  CheckpointFile extra;
  extra.meta = extra_meta.is_object() ? std::move(extra_meta) : nlohmann::json::object();
  extra.meta["model"] = "kgseq-encoder";
  extra.meta["head_kind"] = model.kind == HeadKind::triple ? "triple" : "relation";
  extra.meta["num_classes"] = model.num_classes();
  extra.meta["vocab"] = model.vocab.tokens();
  extra.meta["packing"] = {{"max_len", model.packing.max_len}, {"truncation", "longest_first"}};
  append_tensor(extra, "head.weight", model.head);
  save_checkpoint(path, model.encoder, model.config, std::move(extra));
}

Model<float> load_model(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  const auto& meta = ck.file.meta;
  Model<float> model;
  try {
    if (meta.value("model", "") != "kgseq-encoder") throw CheckpointError("checkpoint does not hold an encoder model");
    const auto kind = meta.at("head_kind").get<std::string>();
    if (kind != "triple" && kind != "relation") throw CheckpointError("unknown head kind '" + kind + "'");
    model.kind = kind == "triple" ? HeadKind::triple : HeadKind::relation;
    model.vocab = Vocabulary(meta.at("vocab").get<std::vector<std::string>>());
    model.packing.max_len = meta.at("packing").at("max_len").get<int>();
    const auto classes = meta.at("num_classes").get<Eigen::Index>();
    model.head = tensor_matrix<float>(ck.file, "head.weight", classes, ck.config.hidden_size);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt model metadata: ") + e.what());
  } catch (const ConfigMismatchError& e) {
    throw CheckpointIntegrityError(std::string("checkpoint integrity error: ") + e.what());
  }
  if (model.vocab.size() != static_cast<std::size_t>(ck.config.vocab_size))
    throw CheckpointIntegrityError("checkpoint integrity error: vocabulary has " + std::to_string(model.vocab.size()) +
                                   " tokens, encoder expects " + std::to_string(ck.config.vocab_size));
  model.config = ck.config;
  model.encoder = std::move(ck.params);
  return model;
}

template Model<float> make_model<float>(const EncoderConfig&, HeadKind, std::size_t, Vocabulary, PackingConfig);
template Model<double> make_model<double>(const EncoderConfig&, HeadKind, std::size_t, Vocabulary, PackingConfig);
template Matrix<float> head_probabilities(const Matrix<float>&, const Matrix<float>&);
template Matrix<double> head_probabilities(const Matrix<double>&, const Matrix<double>&);
template TripleScore score_triple(const EncoderParams<float>&, const EncoderConfig&, const TripleHead<float>&, const PackedSequence&);
template TripleScore score_triple(const EncoderParams<double>&, const EncoderConfig&, const TripleHead<double>&, const PackedSequence&);
template RelationScore score_relations(const EncoderParams<float>&, const EncoderConfig&, const RelationHead<float>&, const PackedSequence&);
template RelationScore score_relations(const EncoderParams<double>&, const EncoderConfig&, const RelationHead<double>&, const PackedSequence&);
template ModelGrads<float> zero_grads(const Model<float>&);
template ModelGrads<double> zero_grads(const Model<double>&);
template double batch_loss(const Model<float>&, std::span<const PackedSequence>, std::span<const int>, Mode, std::uint64_t, ModelGrads<float>*);
template double batch_loss(const Model<double>&, std::span<const PackedSequence>, std::span<const int>, Mode, std::uint64_t, ModelGrads<double>*);

}  // namespace kgseq
