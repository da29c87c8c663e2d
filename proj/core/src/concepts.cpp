#include "zsseg/concepts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::string_view to_string(PosTag tag) {
  switch (tag) {
    case PosTag::Noun: return "NOUN";
    case PosTag::Adj: return "ADJ";
    case PosTag::Det: return "DET";
    case PosTag::Verb: return "VERB";
    case PosTag::Prep: return "PREP";
    case PosTag::Num: return "NUM";
    case PosTag::Other: return "OTHER";
  }
  return "OTHER";
}

std::optional<PosTag> parse_pos_tag(std::string_view name) {
  for (auto tag : {PosTag::Noun, PosTag::Adj, PosTag::Det, PosTag::Verb, PosTag::Prep, PosTag::Num, PosTag::Other}) {
    if (to_string(tag) == name) return tag;
  }
  return std::nullopt;
}

void PosLexicon::add_word(std::string word, PosTag tag) { words_[lower(word)] = tag; }

void PosLexicon::add_suffix(std::string suffix, PosTag tag) {
  if (!suffix.empty() && suffix.front() == '-') suffix.erase(0, 1);
  if (suffix.empty()) throw FormatError("lexicon: empty suffix rule");
  suffixes_.emplace_back(lower(suffix), tag);
}

PosTag PosLexicon::tag(std::string_view word) const {
  const std::string key = lower(word);
  if (auto it = words_.find(key); it != words_.end()) return it->second;
  for (const auto& [suffix, tag] : suffixes_) {
    if (key.size() > suffix.size() && ends_with(key, suffix)) return tag;
  }
  return PosTag::Other;
}

PosLexicon PosLexicon::parse(std::string_view text) {
  PosLexicon lex;
  enum class Section { Words, Suffixes } section = Section::Words;
  std::istringstream is{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line == "[words]") {
      section = Section::Words;
      continue;
    }
    if (line == "[suffixes]") {
      section = Section::Suffixes;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw FormatError("lexicon line " + std::to_string(line_no) + ": expected '<entry>\\t<TAG>'");
    }
    const auto entry = trim(line.substr(0, tab));
    const auto tag = parse_pos_tag(trim(line.substr(tab + 1)));
    if (!tag) throw FormatError("lexicon line " + std::to_string(line_no) + ": unknown tag '" + std::string(line.substr(tab + 1)) + "'");
    if (section == Section::Words) {
      lex.add_word(std::string(entry), *tag);
    } else {
      lex.add_suffix(std::string(entry), *tag);
    }
  }
  return lex;
}

PosLexicon PosLexicon::load(const std::string& path) { return parse(read_file(path)); }

std::vector<Word> split_words(std::string_view text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
    words.push_back({lower(text.substr(i, j - i)), {i, j}});
    i = j;
  }
  return words;
}

std::vector<PosTag> tag_pos(const PosLexicon& lexicon, std::span<const std::string> words) {
  std::vector<PosTag> tags;
  tags.reserve(words.size());
  for (const auto& w : words) tags.push_back(lexicon.tag(w));
  return tags;
}

std::vector<WordRange> chunk_noun_phrases(std::span<const PosTag> tags) {
  std::vector<WordRange> phrases;
  std::size_t i = 0;
  while (i < tags.size()) {
    std::size_t j = i;
    if (tags[j] == PosTag::Det) ++j;
    // Longest (ADJ|NOUN)* run, then back off to its last NOUN.
    std::size_t last_noun = tags.size();
    std::size_t k = j;
    while (k < tags.size() && (tags[k] == PosTag::Adj || tags[k] == PosTag::Noun)) {
      if (tags[k] == PosTag::Noun) last_noun = k;
      ++k;
    }
    if (last_noun == tags.size()) {
      ++i;
      continue;
    }
    phrases.push_back({i, last_noun + 1});
    i = last_noun + 1;
  }
  return phrases;
}

RefinedConcept refine_to_concept(std::span<const Word> words, std::span<const PosTag> tags, WordRange phrase) {
  if (phrase.end == 0 || phrase.end > words.size() || phrase.begin >= phrase.end || tags.size() != words.size()) {
    throw ContractError("refine_to_concept: invalid noun phrase range");
  }
  const std::size_t head = phrase.end - 1;
  RefinedConcept out;
  if (head > phrase.begin && tags[head - 1] == PosTag::Noun) {
    out.words = {head - 1, head};
    out.text = words[head - 1].text + " " + words[head].text;
  } else {
    out.words = {head};
    out.text = words[head].text;
  }
  return out;
}

ConceptBank::ConceptBank(std::vector<std::string> concepts) {
  for (auto& c : concepts) {
    std::string canonical = lower(trim(c));
    if (canonical.empty()) throw FormatError("concept bank: empty concept");
    if (ids_.count(canonical)) throw FormatError("concept bank: duplicate concept '" + canonical + "'");
    ids_[canonical] = concepts_.size();
    concepts_.push_back(std::move(canonical));
  }
}

std::optional<std::size_t> ConceptBank::lookup(std::string_view name) const {
  auto it = ids_.find(lower(name));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& ConceptBank::name(std::size_t id) const {
  if (id >= concepts_.size()) throw LookupError("concept bank: id " + std::to_string(id) + " out of range");
  return concepts_[id];
}

ConceptBank ConceptBank::parse(std::string_view text) {
  std::vector<std::string> concepts;
  std::istringstream is{std::string(text)};
  std::string raw;
  while (std::getline(is, raw)) {
    auto hash = raw.find('#');
    std::string_view line = trim(std::string_view(raw).substr(0, hash));
    if (!line.empty()) concepts.emplace_back(line);
  }
  return ConceptBank(std::move(concepts));
}

ConceptBank ConceptBank::load(const std::string& path) { return parse(read_file(path)); }

TokenizedCaption extract_concepts(const BpeVocab& vocab, const PosLexicon& lexicon, const ConceptBank& bank,
                                  std::string_view caption, const ExtractOptions& options) {
  TokenizedCaption out = tokenize(vocab, caption);
  const auto words = split_words(caption);
  std::vector<std::string> texts;
  texts.reserve(words.size());
  for (const auto& w : words) texts.push_back(w.text);
  const auto tags = tag_pos(lexicon, texts);

  for (const auto& phrase : chunk_noun_phrases(tags)) {
    RefinedConcept refined = refine_to_concept(words, tags, phrase);
    auto id = bank.lookup(refined.text);
    if (!id && options.fold_plurals && refined.text.size() > 1 && refined.text.back() == 's') {
      id = bank.lookup(std::string_view(refined.text).substr(0, refined.text.size() - 1));
      if (id) refined.text = bank.name(*id);
    }
    if (!id) continue;

    ConceptOccurrence occ;
    occ.concept_id = *id;
    occ.text = bank.name(*id);
    for (auto w : refined.words) occ.word_spans.push_back(words[w].span);
    for (std::size_t t = 0; t < out.spans.size(); ++t) {
      if (vocab.is_special(out.ids[t])) continue;
      const bool hit = std::any_of(occ.word_spans.begin(), occ.word_spans.end(),
                                   [&](const CharSpan& s) { return out.spans[t].intersects(s); });
      if (hit) occ.token_indices.push_back(t);
    }
    if (!occ.token_indices.empty()) out.concepts.push_back(std::move(occ));
  }
  return out;
}

ZSSEG_NAMESPACE_END
