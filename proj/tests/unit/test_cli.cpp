#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "kgseq/cli.hpp"
#include "kgseq/error.hpp"
#include "kgseq/run_config.hpp"

using namespace kgseq;
using nlohmann::json;

namespace {

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "kgseq");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Ten entities on a ring with two relation types.
void write_dataset(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string train, dev, test, ents, rels = "next\tis next to\nskip\tskips over\n";
  for (int i = 0; i < 10; ++i) {
    ents += "n" + std::to_string(i) + "\tnode number " + std::to_string(i) + "\n";
    const std::string a = "n" + std::to_string(i), b = "n" + std::to_string((i + 1) % 10),
                      c = "n" + std::to_string((i + 2) % 10);
    (i == 9 ? dev : train) += a + "\tnext\t" + b + "\n";
    (i == 8 ? test : train) += a + "\tskip\t" + c + "\n";
  }
  testutil::write_text(dir / "train.tsv", train);
  testutil::write_text(dir / "dev.tsv", dev);
  testutil::write_text(dir / "test.tsv", test);
  testutil::write_text(dir / "entity2text.txt", ents);
  testutil::write_text(dir / "relation2text.txt", rels);
}

json strip_wall(json j) {
  if (j.is_object()) {
    j.erase("wall_ms");
    for (auto& [k, v] : j.items()) v = strip_wall(v);
  }
  return j;
}

std::vector<json> jsonl(const std::filesystem::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(strip_wall(json::parse(line)));
  return out;
}

}  // namespace

TEST_CASE("run config JSON") {
  RunConfig c;
  c.dataset = "x";
  c.epochs = 7;
  c.learning_rate = 1e-3;
  CHECK(RunConfig::from_json(c.to_json()) == c);
  CHECK(RunConfig::from_json(json::object()) == RunConfig{});
  CHECK_THROWS_AS(RunConfig::from_json({{"not_a_key", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"epochs", "five"}}), ConfigError);

  RunConfig r;
  r.task = "relation_prediction";
  CHECK(r.train_config().epochs == 20);
  r.task = "link_prediction";
  CHECK(r.train_config().epochs == 5);
  CHECK(r.train_config().negatives_per_positive == 5);
  r.negatives = 2;
  CHECK(r.train_config().negatives_per_positive == 2);

  testutil::TempDir dir;
  c.save(dir / "c.json");
  CHECK(RunConfig::load(dir / "c.json") == c);
}

TEST_CASE("cli end to end") {
  testutil::TempDir dir;
  write_dataset(dir / "ring");
  const json cfg = {{"dataset", (dir / "ring").string()},
                    {"vocab_size", 40},
                    {"max_len", 16},
                    {"num_layers", 1},
                    {"num_heads", 2},
                    {"hidden_size", 8},
                    {"ffn_size", 16},
                    {"max_positions", 16},
                    {"batch_size", 4},
                    {"learning_rate", 1e-3},
                    {"epochs", 2},
                    {"negatives", 2}};
  testutil::write_text(dir / "cfg.json", cfg.dump());
  const std::string c = (dir / "cfg.json").string();

  CHECK(cli({"prepare", "--config", c, "--out", (dir / "prep").string()}) == 0);
  const auto summary = json::parse(slurp(dir / "prep" / "summary.json"));
  CHECK(summary["entities"] == 10);
  CHECK(summary["relations"] == 2);
  CHECK(summary["train"] == 18);

  // identical runs, including a different worker count, agree on everything but timing
  std::vector<std::vector<json>> losses;
  std::vector<json> metrics;
  for (auto [name, workers] : {std::pair{"a", "1"}, {"b", "1"}, {"c", "2"}}) {
    const auto out = dir / name;
    REQUIRE(cli({"train", "--config", c, "--out", out.string(), "--workers", workers}) == 0);
    CHECK(std::filesystem::exists(out / "model.ckpt"));
    CHECK(std::filesystem::exists(out / "config.json"));
    losses.push_back(jsonl(out / "loss.jsonl"));
    REQUIRE(cli({"evaluate", "--checkpoint", (out / "model.ckpt").string(), "--out", (out / "m.json").string(),
                 "--workers", workers}) == 0);
    metrics.push_back(strip_wall(json::parse(slurp(out / "m.json"))));
  }
  REQUIRE(losses[0].size() == 2);
  CHECK(losses[0][1]["epoch"] == 1);
  CHECK(losses[0] == losses[1]);
  CHECK(losses[0] == losses[2]);
  CHECK(metrics[0] == metrics[1]);
  CHECK(metrics[0] == metrics[2]);
  CHECK(metrics[0]["task"] == "link_prediction");
  CHECK(metrics[0]["num_queries"] == 2);

  const auto ckpt = (dir / "a" / "model.ckpt").string();
  CHECK(cli({"evaluate", "--checkpoint", ckpt, "--oracle", "--out", (dir / "o.json").string()}) == 0);
  CHECK(json::parse(slurp(dir / "o.json"))["mean_rank"] == 1.0);

  CHECK(cli({"attn-dump", "--checkpoint", ckpt, "--layer", "0", "--out", (dir / "attn.json").string(),
             "node number 1", "is next to", "node number 2"}) == 0);
  const auto attn = json::parse(slurp(dir / "attn.json"));
  CHECK(attn["num_heads"] == 2);
  CHECK(attn["heads"].size() == 2);
  CHECK(attn["tokens"][0] == "[CLS]");
  CHECK(cli({"attn-dump", "--checkpoint", ckpt, "--layer", "3", "a", "b", "c"}) == 1);
  CHECK(cli({"attn-dump", "--checkpoint", ckpt, "--layer", "0", "a", "b"}) != 0);

  CHECK(cli({"classify", "--checkpoint", ckpt, "--split", "test", "--out", (dir / "cls.json").string()}) == 0);
  const auto cls = json::parse(slurp(dir / "cls.json"));
  CHECK(cls["num_examples"] == 2);
  CHECK(cls["triples"][0]["label"] == 1);

  CHECK(cli({"evaluate", "--checkpoint", ckpt, "--task", "relation_prediction"}) == 1);
  CHECK(cli({"baseline", "--config", c, "--kind", "transe", "--out", (dir / "base.json").string()}) == 0);
  CHECK(json::parse(slurp(dir / "base.json"))["model"] == "transe");
}

TEST_CASE("cli error exits") {
  testutil::TempDir dir;
  CHECK(cli({}) == 2);
  CHECK(cli({"bogus"}) == 2);
  CHECK(cli({"baseline", "--kind", "foo", "--dataset", "x"}) == 2);
  CHECK(cli({"prepare", "--dataset", (dir / "missing").string(), "--out", (dir / "o").string()}) == 1);
  CHECK(cli({"evaluate", "--checkpoint", (dir / "missing.ckpt").string()}) == 2);
  CHECK(cli({"evaluate", "--dataset", testutil::umls_dir().string(), "--checkpoint", (dir / "missing.ckpt").string()}) ==
        1);
  testutil::write_text(dir / "bad.json", "{\"nope\": 1}");
  CHECK(cli({"train", "--config", (dir / "bad.json").string()}) == 1);
}
