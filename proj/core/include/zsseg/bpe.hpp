#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "zsseg/real.hpp"

ZSSEG_NAMESPACE_BEGIN

using TokenId = std::size_t;
using MergePair = std::pair<std::string, std::string>;

/// Byte-level BPE vocabulary: special tokens, base symbols, ranked merges.
///
/// Token ids are laid out as [PAD, BOS, EOS, UNK], then base symbols in the
/// order given, then one id per distinct merge result in rank order.
class BpeVocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kNumSpecial = 4;

  BpeVocab() = default;
  /// Validates that every merge only references symbols that exist at its rank.
  BpeVocab(std::vector<std::string> base_symbols, std::vector<MergePair> merges);

  const std::vector<std::string>& base_symbols() const { return base_; }
  const std::vector<MergePair>& merges() const { return merges_; }
  std::size_t size() const { return tokens_.size(); }

  std::optional<TokenId> id_of(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool is_special(TokenId id) const { return id < kNumSpecial; }
  /// Rank of a merge pair, or nullopt when the pair is never merged.
  std::optional<std::size_t> merge_rank(const std::string& left, const std::string& right) const;

  void write(std::ostream& os) const;
  static BpeVocab read(std::istream& is);
  void save(const std::string& path) const;
  static BpeVocab load(const std::string& path);

 private:
  std::vector<std::string> base_;
  std::vector<MergePair> merges_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::map<MergePair, std::size_t> ranks_;
};

/// Half-open byte range into the caption text.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool empty() const { return begin == end; }
  bool intersects(const CharSpan& other) const {
    return !empty() && !other.empty() && begin < other.end && other.begin < end;
  }
  bool operator==(const CharSpan&) const = default;
};

/// One concept found in a caption: its bank id, the caption range of the
/// refined concept words, and the token indices S spanned by those words.
struct ConceptOccurrence {
  std::size_t concept_id = 0;
  std::string text;
  std::vector<CharSpan> word_spans;
  std::vector<std::size_t> token_indices;
};

struct TokenizedCaption {
  std::string text;
  std::vector<TokenId> ids;
  std::vector<CharSpan> spans;
  std::vector<ConceptOccurrence> concepts;

  std::size_t size() const { return ids.size(); }
};

/// True for bytes that belong to words: ASCII letters and digits plus any
/// byte of a multi-byte UTF-8 sequence. Merges never cross other bytes.
bool is_word_byte(unsigned char c);

/// Greedy most-frequent-pair BPE training over word-internal pairs. Ties are
/// broken by the lexicographically smallest pair.
BpeVocab train_bpe(std::span<const std::string> corpus, std::size_t num_merges);

/// Encodes `text` with [BOS] and [EOS] around it, recording the byte span of
/// every token. Unknown bytes become [UNK].
TokenizedCaption tokenize(const BpeVocab& vocab, std::string_view text);

/// Concatenates token strings, skipping specials.
std::string decode(const BpeVocab& vocab, std::span<const TokenId> ids);

/// Drops tokens beyond `context` (keeping [EOS] last) and any concept whose
/// tokens no longer fit. Returns true when the caption was shortened.
bool truncate_to_context(TokenizedCaption& caption, std::size_t context);

ZSSEG_NAMESPACE_END
