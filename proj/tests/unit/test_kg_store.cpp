#include <algorithm>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "kgseq/error.hpp"
#include "kgseq/kg_store.hpp"

using namespace kgseq;
using testutil::make_kg;

namespace {

// E = {A, B, C}, one relation, D+ = {(A, r, B)}.
KnowledgeGraph three_entity_kg() {
  return KnowledgeGraph::from_tables({{"A", "a"}, {"B", "b"}, {"C", "c"}}, {{"r", "r"}}, {{0, 0, 1}}, {}, {});
}

void write_dataset(const std::filesystem::path& dir) {
  testutil::write_text(dir / "entity2text.txt", "m/zeta\tZeta\nm/alpha\tAlpha one\nm/mid\tMiddle\n");
  testutil::write_text(dir / "relation2text.txt", "likes\tlikes\nhates\thates\n");
  testutil::write_text(dir / "train.tsv", "m/alpha\tlikes\tm/zeta\nm/zeta\thates\tm/mid\n");
  testutil::write_text(dir / "dev.tsv", "m/mid\tlikes\tm/alpha\n");
  testutil::write_text(dir / "test.tsv", "m/alpha\thates\tm/mid\n");
}

}  // namespace

TEST_CASE("enumerating one-slot corruptions on the three-entity graph") {
  const auto kg = three_entity_kg();
  const auto got = enumerate_negatives(kg, {0, 0, 1});
  const std::set<Triple> expected{{1, 0, 1}, {2, 0, 1}, {0, 0, 0}, {0, 0, 2}};
  CHECK(std::set<Triple>(got.begin(), got.end()) == expected);
  CHECK(got.size() == 4);
  // head replacements first, then tail replacements
  CHECK(got[0] == Triple{1, 0, 1});
  CHECK(got[3] == Triple{0, 0, 2});
}

TEST_CASE("sampled negatives corrupt exactly one slot and avoid training positives") {
  const auto kg = testutil::random_kg(20, 3, 150, 7);
  for (const auto& pos : kg.split(Split::train)) {
    const auto sample = sample_negatives(kg, pos, NegativeSamplingConfig(5, 11));
    CHECK_FALSE(sample.shortfall);
    CHECK(sample.negatives.size() == 5);
    for (const auto& n : sample.negatives) {
      CHECK(n.label == 0);
      CHECK_FALSE(kg.in_train(n.triple));
      CHECK(n.triple.relation == pos.relation);
      CHECK(((n.triple.head != pos.head) != (n.triple.tail != pos.tail)));
    }
  }
}

TEST_CASE("sampling is deterministic in the seed") {
  const auto kg = testutil::random_kg(30, 2, 100, 3);
  const auto& pos = kg.split(Split::train).front();
  const auto a = sample_negatives(kg, pos, NegativeSamplingConfig(4, 99));
  const auto b = sample_negatives(kg, pos, NegativeSamplingConfig(4, 99));
  CHECK(a.negatives == b.negatives);
  const auto c = sample_negatives(kg, pos, NegativeSamplingConfig(4, 100));
  CHECK(a.negatives != c.negatives);
}

TEST_CASE("sampling config invariants") {
  CHECK_THROWS_AS(NegativeSamplingConfig(0, 1), ArgumentError);
  CHECK_THROWS_AS(NegativeSamplingConfig(5, 1, 3), ArgumentError);
  CHECK(NegativeSamplingConfig(3, 1).max_rejection_attempts == 300);
}

TEST_CASE("dense graph reports a shortfall") {
  // Only 4 admissible corruptions exist; asking for 10 must fall short.
  const auto kg = three_entity_kg();
  const auto sample = sample_negatives(kg, {0, 0, 1}, NegativeSamplingConfig(10, 5));
  CHECK(sample.shortfall);
  CHECK(sample.negatives.size() < 10);
  for (const auto& n : sample.negatives) CHECK_FALSE(kg.in_train(n.triple));
}

TEST_CASE("sampling preconditions") {
  const auto kg = three_entity_kg();
  CHECK_THROWS_AS(sample_negatives(kg, {0, 0, 2}, NegativeSamplingConfig(1, 1)), PreconditionError);
  const auto single = KnowledgeGraph::from_tables({{"A", "a"}}, {{"r", "r"}}, {{0, 0, 0}}, {}, {});
  CHECK_THROWS_AS(sample_negatives(single, {0, 0, 0}, NegativeSamplingConfig(1, 1)), PreconditionError);
}

TEST_CASE("is_known agrees with a linear scan") {
  const auto kg = testutil::random_kg(25, 4, 400, 5);
  std::vector<Triple> all;
  for (auto s : {Split::train, Split::dev, Split::test})
    all.insert(all.end(), kg.split(s).begin(), kg.split(s).end());
  for (EntityId h = 0; h < 25; ++h)
    for (RelationId r = 0; r < 4; ++r)
      for (EntityId t = 0; t < 25; ++t) {
        const Triple q{h, r, t};
        CHECK(kg.is_known(q) == (std::find(all.begin(), all.end(), q) != all.end()));
      }
  CHECK(kg.truth_set().size() == 400);
}

TEST_CASE("is_known on the three-entity graph") {
  const auto kg = three_entity_kg();
  CHECK(kg.is_known({0, 0, 1}));
  CHECK_FALSE(kg.is_known({0, 0, 2}));
  CHECK_THROWS_AS(kg.is_known({5, 0, 1}), PreconditionError);
}

TEST_CASE("from_tables rejects invalid ids") {
  CHECK_THROWS_AS(make_kg(2, 1, {{0, 0, 2}}), PreconditionError);
  CHECK_THROWS_AS(make_kg(2, 1, {{0, 1, 1}}), PreconditionError);
}

TEST_CASE("subsample sizes round half to even") {
  CHECK(subsample_size(316232, 0.05) == 15812);
  CHECK(subsample_size(112581, 0.1) == 11258);
  CHECK(subsample_size(5, 0.5) == 2);
  CHECK(subsample_size(7, 0.5) == 4);
  CHECK(subsample_size(10, 1.0) == 10);
  CHECK_THROWS_AS(subsample_size(10, 0.0), ArgumentError);
  CHECK_THROWS_AS(subsample_size(10, 1.5), ArgumentError);
}

TEST_CASE("subsample_training keeps order, truth set and reproducibility") {
  const auto kg = testutil::random_kg(40, 3, 500, 9);
  const auto sub = subsample_training(kg, 0.3, 17);
  const auto& full = kg.split(Split::train);
  const auto& part = sub.split(Split::train);
  CHECK(part.size() == subsample_size(full.size(), 0.3));
  // order preserved: part is a subsequence of full
  std::size_t j = 0;
  for (const auto& t : full)
    if (j < part.size() && part[j] == t) ++j;
  CHECK(j == part.size());
  CHECK(sub.truth_set() == kg.truth_set());
  CHECK(sub.split(Split::test) == kg.split(Split::test));
  CHECK(subsample_training(kg, 0.3, 17).split(Split::train) == part);

  const auto same = subsample_training(kg, 1.0, 1);
  CHECK(std::set<Triple>(same.split(Split::train).begin(), same.split(Split::train).end()) ==
        std::set<Triple>(full.begin(), full.end()));
  CHECK_THROWS_AS(subsample_training(kg, 0.0, 1), ArgumentError);
}

TEST_CASE("load_dataset assigns ids in sorted raw-id order") {
  testutil::TempDir dir;
  write_dataset(dir.path());
  const auto kg = load_dataset(dir.path());
  REQUIRE(kg.num_entities() == 3);
  REQUIRE(kg.num_relations() == 2);
  CHECK(kg.entity(0).raw_id == "m/alpha");
  CHECK(kg.entity(0).text == "Alpha one");
  CHECK(kg.entity(2).raw_id == "m/zeta");
  CHECK(kg.relation(0).raw_id == "hates");
  CHECK(kg.split(Split::train).size() == 2);
  CHECK(kg.split(Split::train)[0] == Triple{0, 1, 2});
  CHECK(kg.is_known({1, 1, 0}));
  // reload gives identical ids
  const auto again = load_dataset(dir.path());
  CHECK(again.split(Split::test) == kg.split(Split::test));
}

TEST_CASE("load_dataset error contract") {
  testutil::TempDir dir;
  write_dataset(dir.path());
  SUBCASE("missing dev split") {
    std::filesystem::remove(dir / "dev.tsv");
    CHECK_THROWS_AS(load_dataset(dir.path()), DatasetFormatError);
  }
  SUBCASE("unknown identifier is named") {
    testutil::write_text(dir / "test.tsv", "m/alpha\thates\tm/ghost\n");
    try {
      load_dataset(dir.path());
      FAIL("expected UnknownIdentifierError");
    } catch (const UnknownIdentifierError& e) {
      CHECK(e.identifier() == "m/ghost");
      CHECK(std::string(e.what()).find("m/ghost") != std::string::npos);
    }
  }
  SUBCASE("empty split") {
    testutil::write_text(dir / "test.tsv", "");
    CHECK_THROWS_AS(load_dataset(dir.path()), EmptySplitError);
  }
  SUBCASE("descriptions need entity2textlong.txt") {
    CHECK_THROWS_AS(load_dataset(dir.path(), TextSource::descriptions), DatasetFormatError);
    testutil::write_text(dir / "entity2textlong.txt", "m/zeta\tthe last letter\nm/alpha\tthe first\nm/mid\tcentre\n");
    CHECK(load_dataset(dir.path(), TextSource::descriptions).entity(0).text == "the first");
  }
  SUBCASE("labeled negatives stay out of the truth set") {
    testutil::write_text(dir / "test.tsv", "m/alpha\thates\tm/mid\t1\nm/zeta\tlikes\tm/alpha\t-1\n");
    const auto kg = load_dataset(dir.path());
    CHECK(kg.has_labeled_negatives(Split::test));
    CHECK(kg.split(Split::test).size() == 1);
    CHECK(kg.labeled(Split::test).size() == 2);
    CHECK(kg.labeled(Split::test)[1].label == 0);
    CHECK_FALSE(kg.is_known({2, 1, 0}));
  }
}

TEST_CASE("UMLS statistics" * doctest::skip(!std::filesystem::exists(testutil::umls_dir() / "train.tsv"))) {
  const auto kg = load_dataset(testutil::umls_dir());
  CHECK(kg.num_entities() == 135);
  CHECK(kg.num_relations() == 46);
  CHECK(kg.split(Split::train).size() == 5216);
  CHECK(kg.split(Split::dev).size() == 652);
  CHECK(kg.split(Split::test).size() == 661);
}
