#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "zsseg/bpe.hpp"

ZSSEG_NAMESPACE_BEGIN

enum class PosTag { Noun, Adj, Det, Verb, Prep, Num, Other };

std::string_view to_string(PosTag tag);
std::optional<PosTag> parse_pos_tag(std::string_view name);

/// Word-to-tag lexicon with ordered suffix fallbacks. Tagging cascade:
/// exact lexicon entry, then the first matching suffix rule, then OTHER.
class PosLexicon {
 public:
  void add_word(std::string word, PosTag tag);
  void add_suffix(std::string suffix, PosTag tag);
  PosTag tag(std::string_view word) const;

  std::size_t word_count() const { return words_.size(); }
  const std::vector<std::pair<std::string, PosTag>>& suffix_rules() const { return suffixes_; }

  /// Text format: "[words]" then "word<TAB>TAG" lines, "[suffixes]" then
  /// "suffix<TAB>TAG" lines. A leading '-' on a suffix is optional.
  static PosLexicon parse(std::string_view text);
  static PosLexicon load(const std::string& path);

 private:
  std::unordered_map<std::string, PosTag> words_;
  std::vector<std::pair<std::string, PosTag>> suffixes_;
};

/// A lowercased word and its byte range in the original text.
struct Word {
  std::string text;
  CharSpan span;
};

/// Splits on non-word bytes (see is_word_byte) and lowercases ASCII.
std::vector<Word> split_words(std::string_view text);

std::vector<PosTag> tag_pos(const PosLexicon& lexicon, std::span<const std::string> words);

/// Half-open range of word indices.
struct WordRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const WordRange&) const = default;
};

/// Maximal, non-overlapping matches of DET? (ADJ|NOUN)* NOUN, scanned greedily
/// from the left.
std::vector<WordRange> chunk_noun_phrases(std::span<const PosTag> tags);

struct RefinedConcept {
  std::string text;
  /// Word indices kept: the optional compound then the head noun.
  std::vector<std::size_t> words;
};

/// Reduces a noun phrase to its head noun, prefixed by the immediately
/// preceding word when that word is itself a noun (the compound).
RefinedConcept refine_to_concept(std::span<const Word> words, std::span<const PosTag> tags, WordRange phrase);

/// Ordered list of canonical lowercase concepts; ids are list positions.
class ConceptBank {
 public:
  ConceptBank() = default;
  explicit ConceptBank(std::vector<std::string> concepts);

  std::optional<std::size_t> lookup(std::string_view name) const;
  const std::string& name(std::size_t id) const;
  const std::vector<std::string>& concepts() const { return concepts_; }
  std::size_t size() const { return concepts_.size(); }

  /// One concept per line; blank lines and '#' comments ignored.
  static ConceptBank parse(std::string_view text);
  static ConceptBank load(const std::string& path);

 private:
  std::vector<std::string> concepts_;
  std::unordered_map<std::string, std::size_t> ids_;
};

struct ExtractOptions {
  /// Map "circles" to "circle" when only the singular is in the bank.
  bool fold_plurals = false;
};

/// Tokenizes the caption and fills in every bank concept with the token
/// indices whose byte spans intersect the concept words.
TokenizedCaption extract_concepts(const BpeVocab& vocab, const PosLexicon& lexicon, const ConceptBank& bank,
                                  std::string_view caption, const ExtractOptions& options = {});

ZSSEG_NAMESPACE_END
