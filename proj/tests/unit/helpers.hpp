#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "kgseq/kg_store.hpp"

namespace testutil {

inline kgseq::KnowledgeGraph make_kg(int num_entities, int num_relations, std::vector<kgseq::Triple> train,
                                     std::vector<kgseq::Triple> dev = {}, std::vector<kgseq::Triple> test = {}) {
  std::vector<kgseq::KnowledgeGraph::Symbol> ents, rels;
  for (int i = 0; i < num_entities; ++i) ents.push_back({"e" + std::to_string(i), "entity " + std::to_string(i)});
  for (int i = 0; i < num_relations; ++i) rels.push_back({"r" + std::to_string(i), "relation " + std::to_string(i)});
  return kgseq::KnowledgeGraph::from_tables(std::move(ents), std::move(rels), std::move(train), std::move(dev),
                                            std::move(test));
}

/// Random KG with distinct triples spread over the three splits.
inline kgseq::KnowledgeGraph random_kg(int num_entities, int num_relations, int num_triples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ent(0, num_entities - 1), rel(0, num_relations - 1);
  kgseq::TripleSet seen;
  std::vector<kgseq::Triple> splits[3];
  while (static_cast<int>(seen.size()) < num_triples) {
    kgseq::Triple t{ent(rng), rel(rng), ent(rng)};
    if (!seen.insert(t).second) continue;
    const auto k = seen.size() % 10;
    splits[k < 8 ? 0 : (k == 8 ? 1 : 2)].push_back(t);
  }
  return make_kg(num_entities, num_relations, splits[0], splits[1], splits[2]);
}

inline std::filesystem::path umls_dir() { return std::filesystem::path(KGSEQ_SOURCE_DIR) / "data" / "umls"; }

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("kgseq_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream(path, std::ios::binary) << contents;
}

}  // namespace testutil
