#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace minigen::bpe {

// Reserved ids; everything else is assigned in vocabulary order.
inline constexpr int kPad = 0;
inline constexpr int kDelim = 1;
inline constexpr int kEos = 2;
inline constexpr const char* kPadTok = "<pad>";
inline constexpr const char* kDelimTok = "<delim>";
inline constexpr const char* kEosTok = "<eos>";
inline constexpr int kNumSpecials = 3;

// Fallback base symbol for characters never seen in training.
inline constexpr const char* kUnkTok = "<unk>";
// End-of-word sentinel appended to every word before merging.
inline constexpr const char* kEow = "</w>";

// Ordered merge rules; rank = position in the list.
struct MergeTable {
  std::vector<std::pair<std::string, std::string>> rules;
};

struct Vocabulary {
  std::vector<std::string> tokens;           // id -> token
  std::unordered_map<std::string, int> ids;  // token -> id

  int add(std::string tok);                      // throws on duplicate token
  int id_of(std::string_view tok) const;         // -1 when absent
  const std::string& token_of(int id) const;     // throws on unknown id
  int size() const { return static_cast<int>(tokens.size()); }
};

// Immutable once trained; safe to share across workers.
struct Tokenizer {
  MergeTable merges;
  Vocabulary vocab;
  bool lowercase = false;  // pre-tokenization flag; default keeps case

  std::vector<int> encode(std::string_view text) const;
  std::vector<int> encode_word(std::string_view word) const;
  std::string decode(const std::vector<int>& ids) const;

  std::string serialize() const;
  void save(const std::string& path) const;
  static Tokenizer deserialize(const std::string& text);
  static Tokenizer load(const std::string& path);
  std::uint64_t hash() const;
};

// Learns `num_merges` most-frequent-pair merges from the corpus. Words are
// whitespace-delimited (any byte <= 0x20 separates); ties break on the
// lexicographically smaller (left, right) pair, with the bare end-of-word
// sentinel ordering after every ordinary symbol. Stops early if no pair is
// left to merge.
Tokenizer train_bpe(const std::string& corpus, int num_merges,
                    bool lowercase = false);

// Splits a word into UTF-8 code points (continuation bytes stay attached).
std::vector<std::string> codepoints(std::string_view word);

// Whitespace pre-tokenization shared by training and encoding.
std::vector<std::string> split_words(std::string_view text, bool lowercase);

}  // namespace minigen::bpe
