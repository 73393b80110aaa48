#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mein/expert.hpp"
#include "mein/random.hpp"
#include "mein/tokenize.hpp"

namespace mein {

struct LabeledText {
  std::string text;
  std::int32_t label = 0;
};

struct Corpus {
  std::vector<LabeledText> train;
  std::vector<LabeledText> dev;
  std::vector<LabeledText> test;
  std::vector<std::string> unlabeled;
  std::size_t num_classes = 0;

  /// Texts used to build vocabularies: labeled train followed by unlabeled.
  std::vector<std::string> vocabulary_texts() const;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads `train.tsv`, `dev.tsv`, `test.tsv` (lines `<class-id>\t<text>`) and
/// `unlabeled.txt` (one text per line) from `dir`. Only train.tsv is
/// required. The class count comes from `classes.txt` (one name per line)
/// when present, otherwise from the largest train label.
Corpus load_corpus(const std::filesystem::path& dir);

/// Writes the same layout `load_corpus` reads.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Synthetic classification corpus. Each class owns `lexicon_size` key
// phrases of 1..max_span tokens. A sentence is uniform filler interleaved
// with phrases mostly drawn from one class; its clean label is the class
// whose phrases occur most often. Labels are then flipped with probability
// `noise`.
struct SyntheticSpec {
  std::size_t vocab_size = 100;
  std::size_t num_classes = 2;
  std::size_t lexicon_size = 4;  // phrases per class
  std::size_t max_span = 4;      // phrase lengths cycle through 1..max_span
  std::size_t min_length = 10;
  std::size_t max_length = 40;
  std::size_t max_gap = 12;       // filler tokens between phrases, drawn from [0, max_gap]
  double distractor_rate = 0.1;   // chance a phrase comes from another class
  double noise = 0.1;
  std::size_t train = 200;
  std::size_t dev = 200;
  std::size_t test = 1000;
  std::size_t unlabeled = 10000;
  std::uint64_t seed = 1;
};

class SyntheticLexicon {
 public:
  SyntheticLexicon(const SyntheticSpec& spec, Rng& rng);

  /// Clean label: argmax over classes of phrase occurrence counts, or -1 on
  /// a tie (including no phrase at all).
  std::int32_t rule_label(std::span<const std::string> words) const;
  std::vector<std::size_t> class_counts(std::span<const std::string> words) const;

  const std::vector<std::vector<std::vector<std::string>>>& phrases() const { return phrases_; }

 private:
  std::vector<std::vector<std::vector<std::string>>> phrases_;  // [class][phrase][token]
};

struct SyntheticCorpus {
  Corpus corpus;
  SyntheticLexicon lexicon;
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

struct EncodedExample {
  TokenIds expert;    // ids over V, ending with end-of-sequence
  TokenIds imitator;  // ids over V'
  std::int32_t label = -1;
};

std::vector<EncodedExample> encode_texts(std::span<const std::string> texts,
                                         const WordVocabulary& words, const BpeVocabulary& bpe,
                                         std::size_t max_len);
std::vector<EncodedExample> encode_labeled(std::span<const LabeledText> examples,
                                           const WordVocabulary& words, const BpeVocabulary& bpe,
                                           std::size_t max_len);

/// Example indices split into batches; shuffled when `rng` is non-null.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    Rng* rng);

struct Batch {
  SequenceBatch expert;
  SequenceBatch imitator;
  std::vector<std::int32_t> labels;
  std::vector<std::size_t> indices;
};

/// Views into `examples`; the examples must outlive the batch.
Batch gather_batch(std::span<const EncodedExample> examples, std::span<const std::size_t> indices);

/// One shuffled epoch of batches.
std::vector<Batch> batch_iter(std::span<const EncodedExample> examples, std::size_t batch_size,
                              Rng& rng);

}  // namespace mein
