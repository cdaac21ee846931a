#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace graphtext {

// Subword vocabulary with greedy longest-match segmentation. Continuation
// pieces carry the "##" prefix. Reserved tokens occupy the first ids.
class SubwordVocabulary {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kUnk = 1;
  static constexpr int64_t kCls = 2;
  static constexpr int64_t kSep = 3;
  static constexpr int64_t kMask = 4;
  static constexpr int64_t kReservedCount = 5;

  SubwordVocabulary();
  explicit SubwordVocabulary(std::vector<std::string> extra_pieces);

  int64_t size() const { return static_cast<int64_t>(pieces_.size()); }
  // -1 when the piece is unknown.
  int64_t id_of(const std::string& piece) const;
  const std::string& piece(int64_t id) const;
  bool is_reserved(int64_t id) const { return id < kReservedCount; }

  void save(const std::string& path) const;  // one piece per line
  static SubwordVocabulary load(const std::string& path);

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int64_t> ids_;
};

// Token ids with positions and per-token section ids, framed by [CLS]/[SEP].
struct TextSequence {
  std::vector<int64_t> token_ids;
  std::vector<int64_t> positions;
  std::vector<int> section_ids;  // 0 = Dx, 1 = Px, 2 = Rx

  int64_t length() const { return static_cast<int64_t>(token_ids.size()); }
};

constexpr int64_t kMaxTextLength = 512;

// Lowercases, splits on whitespace, and segments each word by greedy longest
// match. A word with no full segmentation becomes a single [UNK].
std::vector<int64_t> tokenize(const std::string& text,
                              const SubwordVocabulary& vocab);

// [CLS] + tokens of each (header id, text) section, a [SEP] closing every
// section. Truncation keeps the prefix and forces a terminal [SEP].
TextSequence encode_text(const std::vector<std::pair<int, std::string>>& sections,
                         const SubwordVocabulary& vocab,
                         int64_t max_len = kMaxTextLength);

// Frequency-ranked whole words on top of single-character fallback pieces,
// deterministic in the corpus order.
SubwordVocabulary build_text_vocab(const std::vector<std::string>& corpus,
                                   int64_t target_size);

// Inverse of tokenize for report output: merges "##" continuations and skips
// reserved tokens.
std::string detokenize(const std::vector<int64_t>& ids,
                       const SubwordVocabulary& vocab);

// Whitespace word split, the unit ROUGE runs on.
std::vector<std::string> split_words(const std::string& text);

}  // namespace graphtext
