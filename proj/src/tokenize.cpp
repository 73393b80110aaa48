#include "mein/tokenize.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <stdexcept>

namespace mein {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::uint64_t pair_key(std::int32_t a, std::int32_t b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  auto p = stem;
  p += suffix;
  return p;
}

}  // namespace

std::vector<std::string> raw_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  auto words = raw_words(text);
  for (auto& w : words) {
    for (auto& c : w) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
  }
  return words;
}

std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead < 0xF8) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    if (lead >= 0xF8 || i + len > word.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(word[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// WordVocabulary

WordVocabulary::WordVocabulary() {
  add(std::string(kUnknownToken));
  add(std::string(kEndToken));
}

void WordVocabulary::add(std::string token) {
  const auto id = static_cast<std::int32_t>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
}

WordVocabulary WordVocabulary::build(std::span<const std::string> corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus)
    for (auto& tok : word_tokens(text)) ++counts[std::move(tok)];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= std::max<std::size_t>(min_count, 1) && tok != kUnknownToken && tok != kEndToken) {
      kept.emplace_back(tok, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  WordVocabulary vocab;
  for (auto& [tok, n] : kept) vocab.add(tok);
  return vocab;
}

std::int32_t WordVocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

bool WordVocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

TokenIds WordVocabulary::encode(std::string_view text, std::size_t max_len) const {
  TokenIds ids;
  for (const auto& tok : word_tokens(text)) ids.push_back(id(tok));
  if (max_len > 0 && ids.size() + 1 > max_len) ids.resize(max_len - 1);
  ids.push_back(kEndOfSequence);
  return ids;
}

void WordVocabulary::save(const std::filesystem::path& path) const { write_lines(path, tokens_); }

WordVocabulary WordVocabulary::load(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.size() < 2 || lines[0] != kUnknownToken || lines[1] != kEndToken) {
    throw std::runtime_error("word vocabulary " + path.string() +
                             " does not start with the special tokens");
  }
  WordVocabulary vocab;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (lines[i].empty() || vocab.contains(lines[i])) {
      throw std::runtime_error("word vocabulary " + path.string() + ": bad or duplicate token on line " +
                               std::to_string(i + 1));
    }
    vocab.add(lines[i]);
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// BpeVocabulary

BpeVocabulary::BpeVocabulary() {
  symbols_ = {std::string(kPadSymbol), std::string(kUnknownSymbol), std::string(kEndOfWordSymbol)};
  index_.emplace(std::string(kEndOfWordSymbol), kEndOfWord);
}

std::int32_t BpeVocabulary::intern(const std::string& symbol) {
  auto [it, inserted] = index_.emplace(symbol, static_cast<std::int32_t>(symbols_.size()));
  if (inserted) symbols_.push_back(symbol);
  return it->second;
}

std::int32_t BpeVocabulary::id(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  return it == index_.end() ? kUnknown : it->second;
}

BpeVocabulary BpeVocabulary::from_merges(std::vector<std::string> alphabet,
                                         std::vector<Merge> merges) {
  BpeVocabulary vocab;
  for (const auto& ch : alphabet) vocab.intern(ch);
  for (std::size_t rank = 0; rank < merges.size(); ++rank) {
    const auto& [left, right] = merges[rank];
    auto l = vocab.index_.find(left);
    auto r = vocab.index_.find(right);
    if (l == vocab.index_.end() || r == vocab.index_.end()) {
      throw std::runtime_error("bpe: merge " + std::to_string(rank) + " (" + left + ", " + right +
                               ") uses an unknown symbol");
    }
    const auto key = pair_key(l->second, r->second);
    const auto merged = vocab.intern(left + right);
    vocab.ranks_.emplace(key, std::make_pair(rank, merged));
  }
  vocab.alphabet_ = std::move(alphabet);
  vocab.merges_ = std::move(merges);
  return vocab;
}

BpeVocabulary BpeVocabulary::learn(std::span<const std::string> corpus, std::size_t num_merges) {
  std::map<std::string, std::int64_t> word_counts;
  for (const auto& text : corpus)
    for (auto& w : raw_words(text)) ++word_counts[std::move(w)];

  // Local symbol table; strings compared for tie-breaking.
  std::vector<std::string> names = {std::string(kEndOfWordSymbol)};
  std::unordered_map<std::string, std::int32_t> lookup = {{names[0], 0}};
  auto intern = [&](const std::string& s) {
    auto [it, inserted] = lookup.emplace(s, static_cast<std::int32_t>(names.size()));
    if (inserted) names.push_back(s);
    return it->second;
  };

  std::set<std::string> alphabet;
  std::vector<std::vector<std::int32_t>> words;
  std::vector<std::int64_t> freq;
  for (const auto& [w, n] : word_counts) {
    std::vector<std::int32_t> syms;
    for (auto& ch : utf8_chars(w)) {
      alphabet.insert(ch);
      syms.push_back(intern(ch));
    }
    syms.push_back(0);
    words.push_back(std::move(syms));
    freq.push_back(n);
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> where;
  struct Entry {
    std::int64_t count;
    std::int32_t left;
    std::int32_t right;
  };
  auto worse = [&](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count < b.count;
    if (names[a.left] != names[b.left]) return names[a.left] > names[b.left];
    return names[a.right] > names[b.right];
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);

  auto add_pairs = [&](std::size_t w, std::int64_t sign, std::set<std::uint64_t>& touched) {
    const auto& syms = words[w];
    for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
      const auto key = pair_key(syms[k], syms[k + 1]);
      counts[key] += sign * freq[w];
      if (sign > 0) where[key].push_back(w);
      touched.insert(key);
    }
  };
  auto push = [&](std::uint64_t key) {
    const auto c = counts[key];
    if (c > 0) {
      heap.push({c, static_cast<std::int32_t>(key >> 32), static_cast<std::int32_t>(key & 0xffffffffu)});
    }
  };

  {
    std::set<std::uint64_t> touched;
    for (std::size_t w = 0; w < words.size(); ++w) add_pairs(w, +1, touched);
    for (auto key : touched) push(key);
  }

  std::vector<Merge> merges;
  std::vector<std::size_t> stamp(words.size(), static_cast<std::size_t>(-1));
  while (merges.size() < num_merges && !heap.empty()) {
    const Entry top = heap.top();
    heap.pop();
    const auto key = pair_key(top.left, top.right);
    if (counts[key] != top.count || top.count <= 0) continue;  // stale

    const auto merged = intern(names[top.left] + names[top.right]);
    merges.emplace_back(names[top.left], names[top.right]);
    const std::size_t round = merges.size();

    std::set<std::uint64_t> touched;
    const auto candidates = where[key];
    for (auto w : candidates) {
      if (stamp[w] == round) continue;
      stamp[w] = round;
      auto& syms = words[w];
      bool present = false;
      for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
        if (syms[k] == top.left && syms[k + 1] == top.right) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      add_pairs(w, -1, touched);
      std::vector<std::int32_t> next;
      next.reserve(syms.size());
      for (std::size_t k = 0; k < syms.size(); ++k) {
        if (k + 1 < syms.size() && syms[k] == top.left && syms[k + 1] == top.right) {
          next.push_back(merged);
          ++k;
        } else {
          next.push_back(syms[k]);
        }
      }
      syms = std::move(next);
      add_pairs(w, +1, touched);
    }
    for (auto t : touched) push(t);
  }

  return from_merges(std::vector<std::string>(alphabet.begin(), alphabet.end()), std::move(merges));
}

TokenIds BpeVocabulary::encode_word(std::string_view word) const {
  TokenIds syms;
  for (const auto& ch : utf8_chars(word)) {
    auto it = index_.find(ch);
    syms.push_back(it == index_.end() ? kUnknown : it->second);
  }
  syms.push_back(kEndOfWord);

  while (syms.size() > 1) {
    std::size_t best_rank = static_cast<std::size_t>(-1);
    std::int32_t left = 0, right = 0, merged = 0;
    for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
      auto it = ranks_.find(pair_key(syms[k], syms[k + 1]));
      if (it != ranks_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        left = syms[k];
        right = syms[k + 1];
        merged = it->second.second;
      }
    }
    if (best_rank == static_cast<std::size_t>(-1)) break;
    TokenIds next;
    next.reserve(syms.size());
    for (std::size_t k = 0; k < syms.size(); ++k) {
      if (k + 1 < syms.size() && syms[k] == left && syms[k + 1] == right) {
        next.push_back(merged);
        ++k;
      } else {
        next.push_back(syms[k]);
      }
    }
    syms = std::move(next);
  }
  return syms;
}

TokenIds BpeVocabulary::encode(std::string_view text) const {
  TokenIds ids;
  for (const auto& w : raw_words(text)) {
    auto part = encode_word(w);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

std::string BpeVocabulary::decode(std::span<const std::int32_t> ids) const {
  std::string joined;
  for (auto id : ids) {
    if (id == kPad) continue;
    joined += symbol(id);
  }
  std::string out;
  const std::string marker(kEndOfWordSymbol);
  std::size_t pos = 0;
  while (true) {
    const auto hit = joined.find(marker, pos);
    if (hit == std::string::npos) {
      out.append(joined, pos, std::string::npos);
      break;
    }
    out.append(joined, pos, hit - pos);
    out += ' ';
    pos = hit + marker.size();
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

void BpeVocabulary::save(const std::filesystem::path& stem) const {
  write_lines(with_suffix(stem, ".symbols"), alphabet_);
  std::vector<std::string> lines;
  lines.reserve(merges_.size());
  for (const auto& [l, r] : merges_) lines.push_back(l + " " + r);
  write_lines(with_suffix(stem, ".merges"), lines);
}

BpeVocabulary BpeVocabulary::load(const std::filesystem::path& stem) {
  auto alphabet = read_lines(with_suffix(stem, ".symbols"));
  std::vector<Merge> merges;
  const auto lines = read_lines(with_suffix(stem, ".merges"));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto space = lines[i].find(' ');
    if (space == std::string::npos || space == 0 || space + 1 == lines[i].size()) {
      throw std::runtime_error("bpe merges " + with_suffix(stem, ".merges").string() +
                               ": malformed line " + std::to_string(i + 1));
    }
    merges.emplace_back(lines[i].substr(0, space), lines[i].substr(space + 1));
  }
  return from_merges(std::move(alphabet), std::move(merges));
}

}  // namespace mein
