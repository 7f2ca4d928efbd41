#include "kgseq/textseq.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "kgseq/checkpoint.hpp"
#include "kgseq/error.hpp"

namespace kgseq {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return tokens;
}

bool is_ascii_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

// Byte length of the UTF-8 sequence starting with `lead`; malformed leads count as one byte.
std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;
}

std::vector<std::string> split_chars(const std::string& word) {
  std::vector<std::string> chars;
  for (std::size_t i = 0; i < word.size();) {
    const auto n = std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
    chars.push_back(word.substr(i, n));
    i += n;
  }
  return chars;
}

std::string_view strip_continuation(std::string_view piece) {
  return piece.starts_with("##") ? piece.substr(2) : piece;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const auto& t : special_tokens()) add(t);
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin()))
    throw ArgumentError("vocabulary must start with [PAD], [UNK], [CLS], [SEP], [MASK]");
  for (auto& t : tokens) {
    if (index_.contains(t)) throw ArgumentError("duplicate vocabulary token '" + t + "'");
    add(std::move(t));
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw PreconditionError("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::add(std::string token) {
  if (const auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string contents;
  for (const auto& t : tokens_) contents.append(t).push_back('\n');
  write_file_atomic(path, contents);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::exchange(current, {}));
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_ascii_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

namespace {

// Byte-pair style merge learner over a word-frequency table.
class MergeLearner {
 public:
  explicit MergeLearner(const std::map<std::string, long>& word_freq) {
    for (const auto& [word, freq] : word_freq) {
      std::vector<int> symbols;
      const auto chars = split_chars(word);
      for (std::size_t i = 0; i < chars.size(); ++i) symbols.push_back(intern(i == 0 ? chars[i] : "##" + chars[i]));
      words_.push_back(std::move(symbols));
      freq_.push_back(freq);
    }
  }

  /// Single pieces ordered by descending frequency, then string.
  std::vector<std::string> alphabet() const {
    std::map<int, long> counts;
    for (std::size_t w = 0; w < words_.size(); ++w)
      for (int s : words_[w]) counts[s] += freq_[w];
    std::vector<std::pair<long, std::string>> ranked;
    for (const auto& [s, c] : counts) ranked.emplace_back(c, strings_[static_cast<std::size_t>(s)]);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::vector<std::string> out;
    for (auto& r : ranked) out.push_back(std::move(r.second));
    return out;
  }

  /// Runs merges, calling `emit` with each new token string until it returns false.
  template <class Emit>
  void run(Emit&& emit) {
    for (std::size_t w = 0; w < words_.size(); ++w) count_word(static_cast<int>(w), +1);
    while (!ranking_.empty()) {
      const auto best = *ranking_.begin();
      const int merged = intern(merged_string(best.a, best.b));
      apply(best.a, best.b, merged);
      if (!emit(strings_[static_cast<std::size_t>(merged)])) return;
    }
  }

 private:
  struct Entry {
    long count;
    int a, b;
  };
  struct EntryOrder {
    const MergeLearner* self;
    bool operator()(const Entry& x, const Entry& y) const {
      if (x.count != y.count) return x.count > y.count;
      const auto& sx = self->strings_;
      if (x.a != y.a) return sx[static_cast<std::size_t>(x.a)] < sx[static_cast<std::size_t>(y.a)];
      return sx[static_cast<std::size_t>(x.b)] < sx[static_cast<std::size_t>(y.b)];
    }
  };

  static std::uint64_t key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  }

  int intern(const std::string& s) {
    const auto [it, inserted] = ids_.emplace(s, static_cast<int>(strings_.size()));
    if (inserted) strings_.push_back(s);
    return it->second;
  }

  std::string merged_string(int a, int b) const {
    return strings_[static_cast<std::size_t>(a)] + std::string(strip_continuation(strings_[static_cast<std::size_t>(b)]));
  }

  void bump(int a, int b, long delta, int word) {
    const auto k = key(a, b);
    long& c = counts_[k];
    if (c > 0) ranking_.erase(Entry{c, a, b});
    c += delta;
    if (c > 0) {
      ranking_.insert(Entry{c, a, b});
      if (delta > 0) pair_words_[k].push_back(word);
    } else {
      counts_.erase(k);
    }
  }

  void count_word(int w, int sign) {
    const auto& s = words_[static_cast<std::size_t>(w)];
    for (std::size_t i = 0; i + 1 < s.size(); ++i) bump(s[i], s[i + 1], sign * freq_[static_cast<std::size_t>(w)], w);
  }

  void apply(int a, int b, int merged) {
    const auto k = key(a, b);
    auto affected = std::move(pair_words_[k]);
    pair_words_.erase(k);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    for (int w : affected) {
      auto& s = words_[static_cast<std::size_t>(w)];
      bool has = false;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) has = has || (s[i] == a && s[i + 1] == b);
      if (!has) continue;
      count_word(w, -1);
      std::vector<int> next;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == a && s[i + 1] == b) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(s[i]);
        }
      }
      s = std::move(next);
      count_word(w, +1);
    }
  }

  std::vector<std::string> strings_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::vector<int>> words_;
  std::vector<long> freq_;
  std::unordered_map<std::uint64_t, long> counts_;
  std::unordered_map<std::uint64_t, std::vector<int>> pair_words_;
  std::set<Entry, EntryOrder> ranking_{EntryOrder{this}};
};

}  // namespace

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t target_size) {
  if (target_size < static_cast<std::size_t>(special::count))
    throw ArgumentError("target vocabulary size must be at least " + std::to_string(special::count));
  std::map<std::string, long> word_freq;
  for (const auto& text : corpus)
    for (auto& w : split_words(text)) ++word_freq[std::move(w)];
  if (word_freq.empty()) throw ArgumentError("cannot build a vocabulary from an empty corpus");

  Vocabulary vocab;
  MergeLearner learner(word_freq);
  for (auto& piece : learner.alphabet()) {
    if (vocab.size() >= target_size) return vocab;
    vocab.add(std::move(piece));
  }
  learner.run([&](const std::string& token) {
    if (vocab.size() >= target_size) return false;
    vocab.add(token);
    return vocab.size() < target_size;
  });
  return vocab;
}

Vocabulary build_vocab(const KnowledgeGraph& kg, std::size_t target_size) {
  std::vector<std::string> corpus;
  corpus.reserve(kg.num_entities() + kg.num_relations());
  for (const auto& e : kg.entities()) corpus.push_back(e.text);
  for (const auto& r : kg.relations()) corpus.push_back(r.text);
  return build_vocab(corpus, target_size);
}

std::vector<std::string> tokenize(const Vocabulary& vocab, std::string_view text) {
  std::vector<std::string> out;
  for (const auto& word : split_words(text)) {
    const auto chars = split_chars(word);
    std::size_t start = 0;
    while (start < chars.size()) {
      std::size_t end = chars.size();
      std::string piece;
      for (; end > start; --end) {
        piece = start > 0 ? "##" : "";
        for (std::size_t i = start; i < end; ++i) piece += chars[i];
        if (vocab.contains(piece)) break;
      }
      if (end == start) {
        out.push_back(vocab.token(special::unk));
        ++start;
      } else {
        out.push_back(std::move(piece));
        start = end;
      }
    }
  }
  return out;
}

std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& t : tokenize(vocab, text)) ids.push_back(vocab.find(t).value_or(special::unk));
  return ids;
}

std::size_t PackedSequence::num_real_tokens() const noexcept {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), std::uint8_t{1}));
}

namespace {

constexpr int kMinPackLen = 8;

void check_pack_config(const PackingConfig& cfg, int specials, int spans) {
  if (cfg.max_len < kMinPackLen || cfg.max_len < specials + spans)
    throw PackingError("max_len " + std::to_string(cfg.max_len) + " cannot hold the special tokens plus one token per segment (minimum " +
                       std::to_string(kMinPackLen) + ")");
}

void append(PackedSequence& seq, TokenId id, Segment segment) {
  seq.position_ids.push_back(static_cast<std::int32_t>(seq.token_ids.size()));
  seq.token_ids.push_back(id);
  seq.segment_ids.push_back(static_cast<std::int8_t>(segment));
  seq.attention_mask.push_back(1);
}

void append(PackedSequence& seq, std::span<const TokenId> ids, Segment segment) {
  for (auto id : ids) append(seq, id, segment);
}

// Shrinks head/tail longest-first (head on ties), then the middle span, until
// the spans fit `budget`.
void truncate_longest_first(std::size_t& head, std::size_t& middle, std::size_t& tail, std::size_t budget) {
  while (head + middle + tail > budget) {
    if (head > 1 || tail > 1) {
      if (head >= tail) --head;
      else --tail;
    } else if (middle > 1) {
      --middle;
    } else {
      throw PackingError("sequence cannot be truncated to fit");
    }
  }
}

}  // namespace

PackedSequence pack_triple_ids(std::span<const TokenId> head, std::span<const TokenId> relation,
                               std::span<const TokenId> tail, const PackingConfig& cfg) {
  check_pack_config(cfg, 4, 3);
  if (head.empty() || relation.empty() || tail.empty())
    throw PreconditionError("every triple text must tokenize to at least one token");
  std::size_t nh = head.size(), nr = relation.size(), nt = tail.size();
  truncate_longest_first(nh, nr, nt, static_cast<std::size_t>(cfg.max_len) - 4);

  PackedSequence seq;
  seq.mode = SequenceMode::triple;
  append(seq, special::cls, Segment::a);
  append(seq, head.first(nh), Segment::a);
  append(seq, special::sep, Segment::a);
  append(seq, relation.first(nr), Segment::b);
  append(seq, special::sep, Segment::b);
  append(seq, tail.first(nt), Segment::a);
  append(seq, special::sep, Segment::a);
  return seq;
}

PackedSequence pack_pair_ids(std::span<const TokenId> head, std::span<const TokenId> tail, const PackingConfig& cfg) {
  check_pack_config(cfg, 3, 2);
  if (head.empty() || tail.empty()) throw PreconditionError("both entity texts must tokenize to at least one token");
  std::size_t nh = head.size(), none = 0, nt = tail.size();
  truncate_longest_first(nh, none, nt, static_cast<std::size_t>(cfg.max_len) - 3);

  PackedSequence seq;
  seq.mode = SequenceMode::pair;
  append(seq, special::cls, Segment::a);
  append(seq, head.first(nh), Segment::a);
  append(seq, special::sep, Segment::a);
  append(seq, tail.first(nt), Segment::b);
  append(seq, special::sep, Segment::b);
  return seq;
}

PackedSequence pack_triple(const Vocabulary& vocab, std::string_view h_text, std::string_view r_text,
                           std::string_view t_text, const PackingConfig& cfg) {
  return pack_triple_ids(encode(vocab, h_text), encode(vocab, r_text), encode(vocab, t_text), cfg);
}

PackedSequence pack_pair(const Vocabulary& vocab, std::string_view h_text, std::string_view t_text,
                         const PackingConfig& cfg) {
  return pack_pair_ids(encode(vocab, h_text), encode(vocab, t_text), cfg);
}

void pad_to(PackedSequence& seq, std::size_t length) {
  while (seq.token_ids.size() < length) {
    seq.position_ids.push_back(static_cast<std::int32_t>(seq.token_ids.size()));
    seq.token_ids.push_back(special::pad);
    seq.segment_ids.push_back(0);
    seq.attention_mask.push_back(0);
  }
}

std::vector<std::string> token_strings(const Vocabulary& vocab, const PackedSequence& seq) {
  std::vector<std::string> out;
  out.reserve(seq.size());
  for (auto id : seq.token_ids) out.push_back(vocab.token(id));
  return out;
}

TextEncoder::TextEncoder(const KnowledgeGraph& kg, const Vocabulary& vocab, PackingConfig cfg) : cfg_(cfg) {
  for (const auto& e : kg.entities()) entity_ids_.push_back(encode(vocab, e.text));
  for (const auto& r : kg.relations()) relation_ids_.push_back(encode(vocab, r.text));
}

PackedSequence TextEncoder::triple(const Triple& t) const {
  return pack_triple_ids(entity_ids_.at(static_cast<std::size_t>(t.head)), relation_ids_.at(static_cast<std::size_t>(t.relation)),
                         entity_ids_.at(static_cast<std::size_t>(t.tail)), cfg_);
}

PackedSequence TextEncoder::pair(EntityId head, EntityId tail) const {
  return pack_pair_ids(entity_ids_.at(static_cast<std::size_t>(head)), entity_ids_.at(static_cast<std::size_t>(tail)), cfg_);
}

}  // namespace kgseq
