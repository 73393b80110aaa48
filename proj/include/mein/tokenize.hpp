#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mein {

using TokenIds = std::vector<std::int32_t>;

/// Lowercases ASCII letters and splits on whitespace.
std::vector<std::string> word_tokens(std::string_view text);

/// Splits on whitespace without any normalization.
std::vector<std::string> raw_words(std::string_view text);

// Expert vocabulary V.
class WordVocabulary {
 public:
  static constexpr std::int32_t kUnknown = 0;
  static constexpr std::int32_t kEndOfSequence = 1;
  static constexpr std::string_view kUnknownToken = "<unk>";
  static constexpr std::string_view kEndToken = "</s>";

  WordVocabulary();

  /// Keeps every token seen at least `min_count` times across `corpus`.
  /// Ids are assigned by descending frequency, ties by token text.
  static WordVocabulary build(std::span<const std::string> corpus, std::size_t min_count = 2);

  std::size_t size() const { return tokens_.size(); }
  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(std::string_view token) const;

  /// Normalized tokens mapped to ids, truncated so that the sequence plus a
  /// trailing end-of-sequence id fits in `max_len`.
  TokenIds encode(std::string_view text, std::size_t max_len) const;

  void save(const std::filesystem::path& path) const;
  static WordVocabulary load(const std::filesystem::path& path);

  friend bool operator==(const WordVocabulary& a, const WordVocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// Imitator vocabulary V': byte-pair-encoding merges over UTF-8 characters
// with an end-of-word marker.
class BpeVocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnknown = 1;
  static constexpr std::int32_t kEndOfWord = 2;
  static constexpr std::string_view kPadSymbol = "$";
  static constexpr std::string_view kUnknownSymbol = "<unk>";
  static constexpr std::string_view kEndOfWordSymbol = "</w>";

  using Merge = std::pair<std::string, std::string>;

  BpeVocabulary();

  /// Greedy BPE: repeatedly merges the most frequent adjacent pair inside
  /// words; ties go to the lexicographically smallest (left, right) pair.
  /// Stops early only when no adjacent pair is left.
  static BpeVocabulary learn(std::span<const std::string> corpus, std::size_t num_merges);

  /// Rebuilds the symbol table from a character alphabet and a merge list.
  static BpeVocabulary from_merges(std::vector<std::string> alphabet, std::vector<Merge> merges);

  std::size_t size() const { return symbols_.size(); }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }
  const std::string& symbol(std::int32_t id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  std::int32_t id(std::string_view symbol) const;

  /// Replays merges in learned order on each word. Characters not in the
  /// alphabet become the unknown symbol.
  TokenIds encode(std::string_view text) const;
  TokenIds encode_word(std::string_view word) const;
  std::string decode(std::span<const std::int32_t> ids) const;

  /// Writes `<stem>.symbols` (alphabet, one per line) and `<stem>.merges`
  /// (one "left right" pair per line, in merge order).
  void save(const std::filesystem::path& stem) const;
  static BpeVocabulary load(const std::filesystem::path& stem);

  friend bool operator==(const BpeVocabulary& a, const BpeVocabulary& b) {
    return a.alphabet_ == b.alphabet_ && a.merges_ == b.merges_;
  }

 private:
  std::int32_t intern(const std::string& symbol);

  std::vector<std::string> alphabet_;
  std::vector<Merge> merges_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int32_t> index_;
  // (left id, right id) -> (rank, merged id)
  std::unordered_map<std::uint64_t, std::pair<std::size_t, std::int32_t>> ranks_;
};

/// Splits UTF-8 text into code-point substrings; invalid bytes stand alone.
std::vector<std::string> utf8_chars(std::string_view word);

}  // namespace mein
