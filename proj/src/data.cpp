#include "mein/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <numeric>

namespace mein {

std::vector<std::string> Corpus::vocabulary_texts() const {
  std::vector<std::string> texts;
  texts.reserve(train.size() + unlabeled.size());
  for (const auto& ex : train) texts.push_back(ex.text);
  texts.insert(texts.end(), unlabeled.begin(), unlabeled.end());
  return texts;
}

namespace {

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<LabeledText> read_labeled(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::vector<LabeledText> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (tab == std::string::npos) throw CorpusError(where + ": expected <class-id><TAB><text>");
    std::int32_t label = 0;
    const char* first = line.data();
    const char* last = line.data() + tab;
    auto [ptr, ec] = std::from_chars(first, last, label);
    if (ec != std::errc() || ptr != last || tab == 0) {
      throw CorpusError(where + ": class id '" + line.substr(0, tab) + "' is not an integer");
    }
    if (label < 0) throw CorpusError(where + ": unknown class label " + std::to_string(label));
    out.push_back({line.substr(tab + 1), label});
  }
  return out;
}

void check_labels(const std::vector<LabeledText>& examples, std::size_t classes,
                  const std::string& split) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (static_cast<std::size_t>(examples[i].label) >= classes) {
      throw CorpusError(split + " example " + std::to_string(i + 1) + ": unknown class label " +
                        std::to_string(examples[i].label) + " (corpus has " +
                        std::to_string(classes) + " classes)");
    }
  }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  corpus.train = read_labeled(dir / "train.tsv");
  if (std::filesystem::exists(dir / "dev.tsv")) corpus.dev = read_labeled(dir / "dev.tsv");
  if (std::filesystem::exists(dir / "test.tsv")) corpus.test = read_labeled(dir / "test.tsv");

  const auto unlabeled_path = dir / "unlabeled.txt";
  if (std::filesystem::exists(unlabeled_path)) {
    std::ifstream in(unlabeled_path);
    std::string line;
    while (std::getline(in, line)) {
      line = strip_cr(std::move(line));
      if (!line.empty()) corpus.unlabeled.push_back(std::move(line));
    }
  } else {
    std::cerr << "warning: " << unlabeled_path.string()
              << " not found; continuing with no unlabeled data\n";
  }

  const auto classes_path = dir / "classes.txt";
  if (std::filesystem::exists(classes_path)) {
    std::ifstream in(classes_path);
    std::string line;
    while (std::getline(in, line))
      if (!strip_cr(line).empty()) ++corpus.num_classes;
  } else {
    for (const auto& ex : corpus.train)
      corpus.num_classes = std::max(corpus.num_classes, static_cast<std::size_t>(ex.label) + 1);
  }
  if (corpus.num_classes == 0) throw CorpusError(dir.string() + ": no classes found");
  check_labels(corpus.train, corpus.num_classes, "train");
  check_labels(corpus.dev, corpus.num_classes, "dev");
  check_labels(corpus.test, corpus.num_classes, "test");
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_split = [&](const std::vector<LabeledText>& xs, const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    for (const auto& ex : xs) out << ex.label << '\t' << ex.text << '\n';
  };
  write_split(corpus.train, "train.tsv");
  write_split(corpus.dev, "dev.tsv");
  write_split(corpus.test, "test.tsv");
  std::ofstream out(dir / "unlabeled.txt", std::ios::binary);
  for (const auto& t : corpus.unlabeled) out << t << '\n';
  std::ofstream classes(dir / "classes.txt", std::ios::binary);
  for (std::size_t k = 0; k < corpus.num_classes; ++k) classes << k << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

bool contains_run(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  if (needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) {
      return true;
    }
  }
  return false;
}

std::string vocab_word(std::size_t i) { return "w" + std::to_string(i); }

}  // namespace

SyntheticLexicon::SyntheticLexicon(const SyntheticSpec& spec, Rng& rng) {
  if (spec.num_classes < 2) throw std::invalid_argument("synthetic: need at least two classes");
  if (spec.max_span < 1 || spec.lexicon_size < 1) {
    throw std::invalid_argument("synthetic: lexicon size and max span must be positive");
  }
  std::uniform_int_distribution<std::size_t> token(0, spec.vocab_size - 1);
  std::vector<std::vector<std::string>> all;
  phrases_.assign(spec.num_classes, {});
  // Shorter phrases first so that containment is checked in both directions.
  for (std::size_t f = 0; f < spec.lexicon_size; ++f) {
    const std::size_t span = 1 + f % spec.max_span;
    for (std::size_t k = 0; k < spec.num_classes; ++k) {
      for (int attempt = 0;; ++attempt) {
        if (attempt > 100000) {
          throw std::invalid_argument("synthetic: vocabulary too small for the requested lexicon");
        }
        std::vector<std::string> phrase(span);
        for (auto& w : phrase) w = vocab_word(token(rng));
        bool clash = false;
        for (const auto& other : all) {
          if (contains_run(phrase, other) || contains_run(other, phrase)) {
            clash = true;
            break;
          }
        }
        if (clash) continue;
        all.push_back(phrase);
        phrases_[k].push_back(std::move(phrase));
        break;
      }
    }
  }
}

std::vector<std::size_t> SyntheticLexicon::class_counts(std::span<const std::string> words) const {
  std::vector<std::size_t> counts(phrases_.size(), 0);
  for (std::size_t k = 0; k < phrases_.size(); ++k) {
    for (const auto& phrase : phrases_[k]) {
      if (phrase.size() > words.size()) continue;
      for (std::size_t i = 0; i + phrase.size() <= words.size(); ++i) {
        if (std::equal(phrase.begin(), phrase.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
          ++counts[k];
        }
      }
    }
  }
  return counts;
}

std::int32_t SyntheticLexicon::rule_label(std::span<const std::string> words) const {
  const auto counts = class_counts(words);
  const auto best = std::max_element(counts.begin(), counts.end());
  if (std::count(counts.begin(), counts.end(), *best) > 1) return -1;
  return static_cast<std::int32_t>(best - counts.begin());
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.noise < 0.0 || spec.noise >= 0.5) {
    throw std::invalid_argument("synthetic: noise rate must lie in [0, 0.5)");
  }
  if (spec.min_length < 1 || spec.max_length < spec.min_length) {
    throw std::invalid_argument("synthetic: invalid sentence length range");
  }
  Rng rng(spec.seed);
  SyntheticLexicon lexicon(spec, rng);

  std::uniform_int_distribution<std::size_t> filler(0, spec.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> gap(0, spec.max_gap);
  std::uniform_int_distribution<std::size_t> cls(0, spec.num_classes - 1);
  std::uniform_int_distribution<std::size_t> other(1, spec.num_classes - 1);
  std::uniform_int_distribution<std::size_t> pick(0, spec.lexicon_size - 1);
  std::bernoulli_distribution distract(spec.distractor_rate);
  std::bernoulli_distribution flip(spec.noise);

  auto sentence = [&]() -> LabeledText {
    for (;;) {
      const auto target_len = length(rng);
      const auto planted = cls(rng);
      std::vector<std::string> words;
      while (words.size() < target_len) {
        const auto g = gap(rng);
        for (std::size_t i = 0; i < g; ++i) words.push_back(vocab_word(filler(rng)));
        if (words.size() >= target_len) break;
        auto k = planted;
        if (distract(rng)) k = (planted + other(rng)) % spec.num_classes;
        const auto& phrase = lexicon.phrases()[k][pick(rng)];
        words.insert(words.end(), phrase.begin(), phrase.end());
      }
      words.resize(target_len);
      const auto clean = lexicon.rule_label(words);
      if (clean < 0) continue;
      auto label = clean;
      if (flip(rng)) {
        label = static_cast<std::int32_t>((static_cast<std::size_t>(clean) + other(rng)) %
                                          spec.num_classes);
      }
      std::string text;
      for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) text += ' ';
        text += words[i];
      }
      return {std::move(text), label};
    }
  };

  Corpus corpus;
  corpus.num_classes = spec.num_classes;
  for (std::size_t i = 0; i < spec.train; ++i) corpus.train.push_back(sentence());
  for (std::size_t i = 0; i < spec.dev; ++i) corpus.dev.push_back(sentence());
  for (std::size_t i = 0; i < spec.test; ++i) corpus.test.push_back(sentence());
  corpus.unlabeled.reserve(spec.unlabeled);
  for (std::size_t i = 0; i < spec.unlabeled; ++i) corpus.unlabeled.push_back(sentence().text);
  return {std::move(corpus), std::move(lexicon)};
}

// ---------------------------------------------------------------------------
// Encoding and batching

std::vector<EncodedExample> encode_texts(std::span<const std::string> texts,
                                         const WordVocabulary& words, const BpeVocabulary& bpe,
                                         std::size_t max_len) {
  std::vector<EncodedExample> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    EncodedExample ex;
    ex.expert = words.encode(t, max_len);
    ex.imitator = bpe.encode(t);
    if (max_len > 0 && ex.imitator.size() > max_len) ex.imitator.resize(max_len);
    // An empty text still needs one imitator position.
    if (ex.imitator.empty()) ex.imitator.push_back(BpeVocabulary::kEndOfWord);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<EncodedExample> encode_labeled(std::span<const LabeledText> examples,
                                           const WordVocabulary& words, const BpeVocabulary& bpe,
                                           std::size_t max_len) {
  std::vector<std::string> texts;
  texts.reserve(examples.size());
  for (const auto& ex : examples) texts.push_back(ex.text);
  auto out = encode_texts(texts, words, bpe, max_len);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].label = examples[i].label;
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    Rng* rng) {
  if (batch_size == 0) throw std::invalid_argument("batch_indices: batch size must be positive");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (rng != nullptr) std::shuffle(order.begin(), order.end(), *rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const auto end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch gather_batch(std::span<const EncodedExample> examples, std::span<const std::size_t> indices) {
  Batch batch;
  batch.indices.assign(indices.begin(), indices.end());
  for (auto i : indices) {
    const auto& ex = examples[i];
    batch.expert.emplace_back(ex.expert);
    batch.imitator.emplace_back(ex.imitator);
    batch.labels.push_back(ex.label);
  }
  return batch;
}

std::vector<Batch> batch_iter(std::span<const EncodedExample> examples, std::size_t batch_size,
                              Rng& rng) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(examples.size(), batch_size, &rng)) {
    out.push_back(gather_batch(examples, idx));
  }
  return out;
}

}  // namespace mein
