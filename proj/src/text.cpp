#include "graphtext/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace graphtext {

namespace {

const char* kReservedPieces[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

std::string lowercase(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

SubwordVocabulary::SubwordVocabulary()
    : SubwordVocabulary(std::vector<std::string>{}) {}

SubwordVocabulary::SubwordVocabulary(std::vector<std::string> extra_pieces) {
  for (const char* p : kReservedPieces) {
    ids_[p] = static_cast<int64_t>(pieces_.size());
    pieces_.push_back(p);
  }
  for (std::string& p : extra_pieces) {
    if (ids_.count(p)) {
      throw std::invalid_argument("vocabulary: duplicate piece: " + p);
    }
    ids_[p] = static_cast<int64_t>(pieces_.size());
    pieces_.push_back(std::move(p));
  }
}

int64_t SubwordVocabulary::id_of(const std::string& piece) const {
  auto it = ids_.find(piece);
  return it == ids_.end() ? -1 : it->second;
}

const std::string& SubwordVocabulary::piece(int64_t id) const {
  if (id < 0 || id >= size()) {
    throw std::invalid_argument("vocabulary: id out of range: " +
                                std::to_string(id));
  }
  return pieces_[id];
}

void SubwordVocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  for (const std::string& p : pieces_) out << p << "\n";
}

SubwordVocabulary SubwordVocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pieces.push_back(line);
  }
  for (int64_t i = 0; i < kReservedCount; ++i) {
    if (i >= static_cast<int64_t>(pieces.size()) ||
        pieces[i] != kReservedPieces[i]) {
      throw std::runtime_error("vocabulary file missing reserved tokens: " +
                               path);
    }
  }
  return SubwordVocabulary(
      std::vector<std::string>(pieces.begin() + kReservedCount, pieces.end()));
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

namespace {

// Greedy longest-match segmentation of one word; empty result means no full
// segmentation exists.
std::vector<int64_t> segment_word(const std::string& word,
                                  const SubwordVocabulary& vocab) {
  std::vector<int64_t> out;
  size_t pos = 0;
  while (pos < word.size()) {
    size_t len = word.size() - pos;
    int64_t id = -1;
    while (len > 0) {
      std::string candidate = word.substr(pos, len);
      if (pos > 0) candidate = "##" + candidate;
      id = vocab.id_of(candidate);
      if (id >= 0) break;
      --len;
    }
    if (id < 0) return {};
    out.push_back(id);
    pos += len;
  }
  return out;
}

}  // namespace

std::vector<int64_t> tokenize(const std::string& text,
                              const SubwordVocabulary& vocab) {
  std::vector<int64_t> out;
  for (const std::string& word : split_words(lowercase(text))) {
    std::vector<int64_t> pieces = segment_word(word, vocab);
    if (pieces.empty()) {
      out.push_back(SubwordVocabulary::kUnk);
    } else {
      out.insert(out.end(), pieces.begin(), pieces.end());
    }
  }
  return out;
}

TextSequence encode_text(const std::vector<std::pair<int, std::string>>& sections,
                         const SubwordVocabulary& vocab, int64_t max_len) {
  TextSequence seq;
  bool first = true;
  int64_t content_tokens = 0;
  for (const auto& [header, text] : sections) {
    if (header < 0 || header > 2) {
      throw std::invalid_argument("encode_text: section header out of range: " +
                                  std::to_string(header));
    }
    if (first) {
      seq.token_ids.push_back(SubwordVocabulary::kCls);
      seq.section_ids.push_back(header);
      first = false;
    }
    for (int64_t id : tokenize(text, vocab)) {
      seq.token_ids.push_back(id);
      seq.section_ids.push_back(header);
      ++content_tokens;
    }
    seq.token_ids.push_back(SubwordVocabulary::kSep);
    seq.section_ids.push_back(header);
  }
  if (content_tokens == 0) {
    throw std::invalid_argument("encode_text: empty text");
  }
  if (seq.length() > max_len) {
    seq.token_ids.resize(max_len);
    seq.section_ids.resize(max_len);
    seq.token_ids.back() = SubwordVocabulary::kSep;
  }
  seq.positions.resize(seq.token_ids.size());
  for (size_t i = 0; i < seq.positions.size(); ++i) {
    seq.positions[i] = static_cast<int64_t>(i);
  }
  return seq;
}

SubwordVocabulary build_text_vocab(const std::vector<std::string>& corpus,
                                   int64_t target_size) {
  std::map<std::string, int64_t> word_freq;
  std::set<char> alphabet;
  for (const std::string& doc : corpus) {
    for (const std::string& word : split_words(lowercase(doc))) {
      word_freq[word] += 1;
      for (char c : word) alphabet.insert(c);
    }
  }
  int64_t floor_size = SubwordVocabulary::kReservedCount +
                       2 * static_cast<int64_t>(alphabet.size());
  if (target_size < floor_size) {
    throw std::invalid_argument(
        "build_text_vocab: target size " + std::to_string(target_size) +
        " below reserved plus alphabet fallback " + std::to_string(floor_size));
  }

  std::vector<std::string> pieces;
  std::set<std::string> seen;
  auto push = [&](const std::string& p) {
    if (seen.insert(p).second) pieces.push_back(p);
  };
  // character fallback first so every word stays segmentable
  for (char c : alphabet) {
    push(std::string(1, c));
    push("##" + std::string(1, c));
  }
  // then whole words by frequency, ties broken lexicographically
  std::vector<std::pair<std::string, int64_t>> by_freq(word_freq.begin(),
                                                       word_freq.end());
  std::stable_sort(by_freq.begin(), by_freq.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  for (const auto& [word, freq] : by_freq) {
    if (static_cast<int64_t>(pieces.size()) +
            SubwordVocabulary::kReservedCount >=
        target_size) {
      break;
    }
    push(word);
  }
  return SubwordVocabulary(std::move(pieces));
}

std::string detokenize(const std::vector<int64_t>& ids,
                       const SubwordVocabulary& vocab) {
  std::string out;
  for (int64_t id : ids) {
    if (vocab.is_reserved(id)) continue;
    const std::string& p = vocab.piece(id);
    if (p.rfind("##", 0) == 0) {
      out += p.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += p;
    }
  }
  return out;
}

}  // namespace graphtext
