#include "kgseq/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "kgseq/baselines.hpp"
#include "kgseq/checkpoint.hpp"
#include "kgseq/error.hpp"
#include "kgseq/eval.hpp"
#include "kgseq/run_config.hpp"
#include "kgseq/tasks.hpp"

namespace kgseq {

namespace {

using nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

void setup_logging() {
  auto logger = spdlog::get("kgseq");
  if (!logger) logger = spdlog::stderr_color_mt("kgseq");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("KGSEQ_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps anything unrecognized to off
    if (level == spdlog::level::off && std::string_view(env) != "off")
      spdlog::warn("KGSEQ_LOG='{}' not recognized; using info", env);
    else
      spdlog::set_level(level);
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Writes JSON to the --out path if given, else to stdout.
void emit_json(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::filesystem::path path(out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
  spdlog::info("wrote {}", path.string());
}

// Flags shared by the commands; a config file supplies the defaults.
struct Common {
  std::string config;
  std::string dataset;
  std::string task;
  std::string split;
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  double train_proportion = 1.0;
  int workers = 1;
  int layer = 0;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* proportion_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
};

// Defaults come from --config, else from the run stored in --checkpoint.
RunConfig base_config(const Common& c) {
  if (!c.config.empty()) return RunConfig::load(c.config);
  if (!c.checkpoint.empty() && std::filesystem::exists(c.checkpoint)) {
    const auto file = read_checkpoint_file(c.checkpoint);
    if (file.meta.contains("run")) return RunConfig::from_json(file.meta["run"]);
  }
  return RunConfig{};
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = base_config(c);
  if (!c.dataset.empty()) cfg.dataset = c.dataset;
  if (!c.task.empty()) cfg.task = c.task;
  if (!c.out.empty()) cfg.out = c.out;
  if (c.seed_opt && c.seed_opt->count()) cfg.seed = c.seed;
  if (c.proportion_opt && c.proportion_opt->count()) cfg.train_proportion = c.train_proportion;
  if (c.workers_opt && c.workers_opt->count()) cfg.workers = c.workers;
  parse_task(cfg.task);
  return cfg;
}

KnowledgeGraph load_kg(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw UsageError("--dataset is required");
  auto kg = load_dataset(cfg.dataset, cfg.parsed_text_source());
  spdlog::info("loaded {}: {} entities, {} relations, {}/{}/{} triples", cfg.dataset, kg.num_entities(),
               kg.num_relations(), kg.split(Split::train).size(), kg.split(Split::dev).size(),
               kg.split(Split::test).size());
  return kg;
}

json dataset_summary(const KnowledgeGraph& kg) {
  return {{"entities", kg.num_entities()},
          {"relations", kg.num_relations()},
          {"train", kg.split(Split::train).size()},
          {"dev", kg.split(Split::dev).size()},
          {"test", kg.split(Split::test).size()}};
}

int cmd_prepare(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  const auto kg = load_kg(cfg);
  const auto vocab = build_vocab(kg, static_cast<std::size_t>(cfg.vocab_size));
  const std::filesystem::path out(cfg.out);
  std::filesystem::create_directories(out);
  vocab.save(out / "vocab.txt");
  json summary = dataset_summary(kg);
  summary["vocab_size"] = vocab.size();
  summary["dataset"] = cfg.dataset;
  write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_train(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = resolve_config(c);
  const Task task = cfg.parsed_task();
  const TrainConfig tc = cfg.train_config();
  KnowledgeGraph kg = load_kg(cfg);
  if (cfg.train_proportion != 1.0) kg = subsample_training(kg, cfg.train_proportion, cfg.seed);

  const std::filesystem::path out(cfg.out);
  std::filesystem::create_directories(out);
  const auto vocab_path = out / "vocab.txt";
  Vocabulary vocab = std::filesystem::exists(vocab_path) ? Vocabulary::load(vocab_path)
                                                         : build_vocab(kg, static_cast<std::size_t>(cfg.vocab_size));
  if (!std::filesystem::exists(vocab_path)) vocab.save(vocab_path);

  const EncoderConfig ec = cfg.encoder_config(vocab.size());
  Model<float> model = make_model<float>(ec, head_kind(task), kg.num_relations(), vocab, cfg.packing_config());
  spdlog::info("training {} on {} training triples for {} epochs", to_string(task), kg.split(Split::train).size(),
               tc.epochs);
  cfg.save(out / "config.json");

  std::ostringstream loss_log;
  const auto log = train(model, kg, task, tc, [&](const EpochRecord& r) {
    spdlog::info("epoch {} mean loss {:.6f} ({:.0f} ms)", r.epoch, r.mean_loss, r.wall_ms);
    loss_log << json{{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"wall_ms", r.wall_ms}}.dump() << "\n";
    write_file_atomic(out / "loss.jsonl", loss_log.str());
  });
  if (log.epochs.empty()) write_file_atomic(out / "loss.jsonl", "");

  json meta{{"task", std::string(to_string(task))}, {"dataset", dataset_summary(kg)}, {"run", cfg.to_json()}};
  save_model(out / "model.ckpt", model, meta);
  json summary{{"task", std::string(to_string(task))},
               {"num_train_triples", log.num_train_triples},
               {"epochs", log.epochs.size()},
               {"final_mean_loss", log.epochs.empty() ? json(nullptr) : json(log.epochs.back().mean_loss)},
               {"checkpoint", (out / "model.ckpt").string()},
               {"wall_ms", elapsed_ms(t0)}};
  write_file_atomic(out / "train.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

Split parse_eval_split(const std::string& name) { return parse_split(name.empty() ? "test" : name); }

int cmd_evaluate(const Common& c, bool oracle, bool raw, bool tune, const std::string& queries_csv, int batch) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = resolve_config(c);
  const Split split = parse_eval_split(c.split);
  const KnowledgeGraph kg = load_kg(cfg);

  std::optional<Model<float>> model;
  std::unique_ptr<Scorer> scorer;
  Task task = cfg.parsed_task();
  if (oracle) {
    scorer = std::make_unique<OracleScorer>(kg);
  } else {
    if (c.checkpoint.empty()) throw UsageError("--checkpoint is required unless --oracle is given");
    model = load_model(c.checkpoint);
    if (head_kind(task) != model->kind)
      throw ModeError("checkpoint head is " + std::string(model->kind == HeadKind::triple ? "triple" : "relation") +
                      ", task " + std::string(to_string(task)) + " needs the other head");
    scorer = std::make_unique<ModelScorer>(*model, kg, batch);
  }

  EvalOptions options;
  options.filtered = !raw;
  options.workers = cfg.workers;
  json metrics;
  if (task == Task::triple_classification) {
    const auto labeled = classification_set(kg, split, cfg.seed);
    const double threshold = tune ? tune_threshold(*scorer, classification_set(kg, Split::dev, cfg.seed)) : 0.5;
    const double accuracy = triple_classification_eval(*scorer, labeled, threshold);
    metrics = {{"task", std::string(to_string(task))},
               {"split", std::string(to_string(split))},
               {"accuracy", accuracy},
               {"threshold", threshold},
               {"num_examples", labeled.size()},
               {"wall_ms", elapsed_ms(t0)}};
  } else {
    const RankingReport report = task == Task::link_prediction ? link_prediction_eval(*scorer, kg, split, options)
                                                               : relation_prediction_eval(*scorer, kg, split, options);
    metrics = report_to_json(report, to_string(task), to_string(split), elapsed_ms(t0));
    metrics["filtered"] = !raw;
    if (!queries_csv.empty()) write_query_csv(queries_csv, kg, report);
    spdlog::info("MR {:.4f} over {} queries", report.mean_rank, report.num_queries);
  }
  emit_json(metrics, c.out);
  return 0;
}

// Reads raw-id triples (h, r, t[, label]) from a TSV file.
std::vector<LabeledTriple> read_triples(const KnowledgeGraph& kg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DatasetFormatError("cannot read triples file " + path);
  std::vector<LabeledTriple> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, '\t');) cols.push_back(col);
    if (cols.size() < 3) throw DatasetFormatError("expected head<TAB>relation<TAB>tail in " + path);
    const auto h = kg.find_entity(cols[0]);
    const auto r = kg.find_relation(cols[1]);
    const auto t = kg.find_entity(cols[2]);
    if (!h) throw UnknownIdentifierError(cols[0], path);
    if (!r) throw UnknownIdentifierError(cols[1], path);
    if (!t) throw UnknownIdentifierError(cols[2], path);
    int label = 1;
    if (cols.size() > 3) label = (cols[3] == "1" || cols[3] == "+1") ? 1 : 0;
    out.push_back({{*h, *r, *t}, label});
  }
  return out;
}

int cmd_classify(const Common& c, const std::string& triples_path) {
  RunConfig cfg = resolve_config(c);
  const KnowledgeGraph kg = load_kg(cfg);
  if (c.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const Model<float> model = load_model(c.checkpoint);
  if (model.kind != HeadKind::triple) throw ModeError("classify needs a triple-classification checkpoint");
  const std::vector<LabeledTriple> labeled =
      triples_path.empty() ? classification_set(kg, parse_eval_split(c.split), cfg.seed) : read_triples(kg, triples_path);
  if (labeled.empty()) throw ArgumentError("no triples to classify");

  std::vector<Triple> triples;
  for (const auto& l : labeled) triples.push_back(l.triple);
  const ModelScorer scorer(model, kg);
  const auto scores = scorer.triple_scores(triples);
  json rows = json::array();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    const auto& t = labeled[i].triple;
    const int predicted = scores[i].positive > 0.5 ? 1 : 0;
    correct += predicted == labeled[i].label;
    rows.push_back({{"head", kg.entity(t.head).raw_id},
                    {"relation", kg.relation(t.relation).raw_id},
                    {"tail", kg.entity(t.tail).raw_id},
                    {"score", scores[i].positive},
                    {"predicted", predicted},
                    {"label", labeled[i].label}});
  }
  emit_json({{"accuracy", static_cast<double>(correct) / static_cast<double>(labeled.size())},
             {"num_examples", labeled.size()},
             {"triples", rows}},
            c.out);
  return 0;
}

int cmd_attn_dump(const Common& c, const std::vector<std::string>& texts) {
  if (c.checkpoint.empty()) throw UsageError("--checkpoint is required");
  const Model<float> model = load_model(c.checkpoint);
  const bool triple = model.kind == HeadKind::triple;
  const std::size_t want = triple ? 3 : 2;
  if (texts.size() != want)
    throw UsageError("attn-dump expects " + std::to_string(want) + " texts for a " + (triple ? "triple" : "pair") +
                     " model, got " + std::to_string(texts.size()));
  if (c.layer < 0 || c.layer >= model.config.num_layers)
    throw ArgumentError("layer " + std::to_string(c.layer) + " out of range (valid 0.." +
                        std::to_string(model.config.num_layers - 1) + ")");
  const PackedSequence packed = triple ? pack_triple(model.vocab, texts[0], texts[1], texts[2], model.packing)
                                       : pack_pair(model.vocab, texts[0], texts[1], model.packing);
  ForwardOptions options;
  options.attention_maps = true;
  const auto fr = forward(model.encoder, model.config, std::span<const PackedSequence>(&packed, 1), options);
  const ClsAttention att = extract_cls_attention(fr.outputs.front(), c.layer);
  const auto tokens = token_strings(model.vocab, packed);
  json out{{"layer", c.layer},
           {"num_heads", model.config.num_heads},
           {"tokens", tokens},
           {"segments", packed.segment_ids},
           {"positions", att.positions},
           {"heads", att.heads}};
  emit_json(out, c.out);
  return 0;
}

int cmd_baseline(const Common& c, const std::string& kind_name, const std::string& save_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const BaselineKind kind = [&] {
    try {
      return parse_baseline_kind(kind_name);
    } catch (const ArgumentError& e) {
      throw UsageError(e.what());
    }
  }();
  RunConfig cfg = resolve_config(c);
  const BaselineConfig bc = cfg.baseline_config();
  KnowledgeGraph kg = load_kg(cfg);
  if (cfg.train_proportion != 1.0) kg = subsample_training(kg, cfg.train_proportion, cfg.seed);
  const Split split = parse_eval_split(c.split);
  const BaselineModel model = train_baseline(kind, kg, bc, [](const BaselineEpoch& e) {
    spdlog::debug("epoch {} mean loss {:.6f}", e.epoch, e.mean_loss);
  });
  if (!save_path.empty()) save_baseline(save_path, model, bc);
  const BaselineScorer scorer(model);
  EvalOptions options;
  options.workers = cfg.workers;
  const RankingReport report = link_prediction_eval(scorer, kg, split, options);
  json metrics = report_to_json(report, "link_prediction", to_string(split), elapsed_ms(t0));
  metrics["model"] = std::string(to_string(kind));
  spdlog::info("{}: MR {:.4f}, Hits@10 {:.4f}", to_string(kind), report.mean_rank, report.hits_at.at(10));
  emit_json(metrics, c.out);
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Knowledge-graph completion with a sequence encoder"};
  app.require_subcommand(1);
  Common c;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "Flat JSON run config; flags override its values");
    sub->add_option("--dataset", c.dataset, "Dataset directory");
    sub->add_option("--task", c.task, "triple_classification | link_prediction | relation_prediction");
    sub->add_option("--out", c.out, "Output directory or file");
  };

  auto* prepare = app.add_subcommand("prepare", "Build the vocabulary and a dataset summary");
  add_common(prepare);

  auto* train_cmd = app.add_subcommand("train", "Fine-tune an encoder and write a checkpoint and loss log");
  add_common(train_cmd);
  auto* train_seed = train_cmd->add_option("--seed", c.seed);
  auto* train_prop = train_cmd->add_option("--train-proportion", c.train_proportion, "Fraction of training triples kept");
  auto* train_workers = train_cmd->add_option("--workers", c.workers);

  bool oracle = false, raw = false, tune = false;
  std::string queries_csv;
  int batch = 128;
  auto* evaluate = app.add_subcommand("evaluate", "Score a split with a checkpoint and write metrics JSON");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", c.checkpoint);
  evaluate->add_option("--split", c.split, "train | dev | test (default test)");
  auto* eval_seed = evaluate->add_option("--seed", c.seed);
  auto* eval_workers = evaluate->add_option("--workers", c.workers);
  evaluate->add_flag("--oracle", oracle, "Use the truth-set oracle scorer (harness self-test)");
  evaluate->add_flag("--raw", raw, "Unfiltered ranking");
  evaluate->add_flag("--tune-threshold", tune, "Classification threshold tuned on dev instead of 0.5");
  evaluate->add_option("--queries-csv", queries_csv, "Write per-query ranks to this CSV");
  evaluate->add_option("--batch", batch, "Sequences per encoder call")->check(CLI::PositiveNumber);

  std::string triples_path;
  auto* classify = app.add_subcommand("classify", "Per-triple plausibility scores and accuracy");
  add_common(classify);
  classify->add_option("--checkpoint", c.checkpoint);
  classify->add_option("--split", c.split);
  classify->add_option("--triples", triples_path, "TSV of raw-id triples with optional label column");
  auto* classify_seed = classify->add_option("--seed", c.seed);

  std::vector<std::string> texts;
  auto* attn = app.add_subcommand("attn-dump", "Export [CLS] attention weights for given texts");
  attn->add_option("--checkpoint", c.checkpoint);
  attn->add_option("--layer", c.layer, "Layer index, 0-based");
  attn->add_option("--out", c.out);
  attn->add_option("texts", texts, "head relation tail (triple model) or head tail (pair model)");

  std::string kind_name, save_path;
  auto* baseline = app.add_subcommand("baseline", "Train and evaluate a TransE or DistMult baseline");
  add_common(baseline);
  baseline->add_option("--kind", kind_name, "transe | distmult")->required();
  baseline->add_option("--split", c.split);
  baseline->add_option("--checkpoint", save_path, "Save the trained embeddings here");
  auto* base_seed = baseline->add_option("--seed", c.seed);
  auto* base_prop = baseline->add_option("--train-proportion", c.train_proportion);
  auto* base_workers = baseline->add_option("--workers", c.workers);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*prepare) return cmd_prepare(c);
    if (*train_cmd) {
      c.seed_opt = train_seed;
      c.proportion_opt = train_prop;
      c.workers_opt = train_workers;
      return cmd_train(c);
    }
    if (*evaluate) {
      c.seed_opt = eval_seed;
      c.workers_opt = eval_workers;
      return cmd_evaluate(c, oracle, raw, tune, queries_csv, batch);
    }
    if (*classify) {
      c.seed_opt = classify_seed;
      return cmd_classify(c, triples_path);
    }
    if (*attn) return cmd_attn_dump(c, texts);
    if (*baseline) {
      c.seed_opt = base_seed;
      c.proportion_opt = base_prop;
      c.workers_opt = base_workers;
      return cmd_baseline(c, kind_name, save_path);
    }
  } catch (const UsageError& e) {
    spdlog::error("usage: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}

}  // namespace kgseq
