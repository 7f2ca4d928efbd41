#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgseq/kg_store.hpp"

namespace kgseq {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId pad = 0;
inline constexpr TokenId unk = 1;
inline constexpr TokenId cls = 2;
inline constexpr TokenId sep = 3;
inline constexpr TokenId mask = 4;
inline constexpr int count = 5;
}  // namespace special

/// Subword vocabulary. Ids 0..4 are [PAD], [UNK], [CLS], [SEP], [MASK];
/// word-internal pieces carry a leading "##".
class Vocabulary {
 public:
  Vocabulary();
  /// Validates the special-token prefix and uniqueness.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Appends a token if absent and returns its id.
  TokenId add(std::string token);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercases ASCII letters and splits on whitespace; every ASCII punctuation
/// character becomes a word of its own.
std::vector<std::string> split_words(std::string_view text);

/// Learns a vocabulary of at most target_size tokens by iterative pair merging
/// over the given texts.
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t target_size);
/// Corpus = every entity text and relation text of the graph.
Vocabulary build_vocab(const KnowledgeGraph& kg, std::size_t target_size);

/// Greedy longest-match segmentation. Characters that no vocabulary entry
/// covers become [UNK].
std::vector<std::string> tokenize(const Vocabulary& vocab, std::string_view text);
std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text);

enum class SequenceMode { triple, pair };
enum class Segment : std::int8_t { a = 0, b = 1 };

struct PackingConfig {
  enum class Truncation { longest_first };
  int max_len = 64;
  Truncation truncation = Truncation::longest_first;
};

struct PackedSequence {
  SequenceMode mode = SequenceMode::triple;
  std::vector<TokenId> token_ids;
  std::vector<std::int8_t> segment_ids;
  std::vector<std::int32_t> position_ids;
  std::vector<std::uint8_t> attention_mask;
  std::optional<int> label;

  std::size_t size() const noexcept { return token_ids.size(); }
  std::size_t num_real_tokens() const noexcept;
};

/// [CLS] head [SEP] relation [SEP] tail [SEP]; the relation span and the
/// [SEP] closing it are segment B, everything else segment A.
PackedSequence pack_triple(const Vocabulary& vocab, std::string_view h_text, std::string_view r_text,
                           std::string_view t_text, const PackingConfig& cfg);
/// [CLS] head [SEP] tail [SEP]; the tail span and final [SEP] are segment B.
PackedSequence pack_pair(const Vocabulary& vocab, std::string_view h_text, std::string_view t_text,
                         const PackingConfig& cfg);

// Same layouts over already-encoded token ids.
PackedSequence pack_triple_ids(std::span<const TokenId> head, std::span<const TokenId> relation,
                               std::span<const TokenId> tail, const PackingConfig& cfg);
PackedSequence pack_pair_ids(std::span<const TokenId> head, std::span<const TokenId> tail, const PackingConfig& cfg);

/// Appends [PAD] tokens (mask 0) up to `length`.
void pad_to(PackedSequence& seq, std::size_t length);

/// Token strings of a packed sequence, in order.
std::vector<std::string> token_strings(const Vocabulary& vocab, const PackedSequence& seq);

/// Token-id cache for every entity and relation text of a graph, so that
/// candidate triples can be packed without re-tokenizing.
class TextEncoder {
 public:
  TextEncoder(const KnowledgeGraph& kg, const Vocabulary& vocab, PackingConfig cfg);

  PackedSequence triple(const Triple& t) const;
  PackedSequence pair(EntityId head, EntityId tail) const;
  const PackingConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<std::vector<TokenId>> entity_ids_;
  std::vector<std::vector<TokenId>> relation_ids_;
  PackingConfig cfg_;
};

}  // namespace kgseq
