#include "zsseg/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace {

constexpr std::string_view kHeader = "SZBPE v1";
const char* const kSpecialNames[] = {"[PAD]", "[BOS]", "[EOS]", "[UNK]"};

std::string escape(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (c > 0x20 && c < 0x7F && c != '%') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xF]);
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 2 >= s.size()) throw FormatError("bpe vocab: truncated escape in '" + std::string(s) + "'");
    const std::string hex(s.substr(i + 1, 2));
    if (hex.size() != 2 || !std::isxdigit(static_cast<unsigned char>(hex[0])) ||
        !std::isxdigit(static_cast<unsigned char>(hex[1]))) {
      throw FormatError("bpe vocab: bad escape in '" + std::string(s) + "'");
    }
    out.push_back(static_cast<char>(std::stoi(hex, nullptr, 16)));
    i += 2;
  }
  return out;
}

// Splits text into chunks: maximal runs of word bytes, and single other bytes.
std::vector<CharSpan> pre_tokenize(std::string_view text) {
  std::vector<CharSpan> chunks;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_word_byte(static_cast<unsigned char>(text[i]))) {
      std::size_t j = i;
      while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      chunks.push_back({i, j});
      i = j;
    } else {
      chunks.push_back({i, i + 1});
      ++i;
    }
  }
  return chunks;
}

using PairCounts = std::map<MergePair, long long>;

void count_pairs(const std::vector<std::string>& symbols, long long weight, PairCounts& counts) {
  for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
    auto& c = counts[{symbols[i], symbols[i + 1]}];
    c += weight;
  }
}

std::vector<std::string> apply_merge(const std::vector<std::string>& symbols, const MergePair& pair) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size();) {
    if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
      out.push_back(pair.first + pair.second);
      i += 2;
    } else {
      out.push_back(symbols[i]);
      ++i;
    }
  }
  return out;
}

}  // namespace

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

BpeVocab::BpeVocab(std::vector<std::string> base_symbols, std::vector<MergePair> merges)
    : base_(std::move(base_symbols)), merges_(std::move(merges)) {
  for (auto* name : kSpecialNames) {
    ids_[name] = tokens_.size();
    tokens_.emplace_back(name);
  }
  for (const auto& s : base_) {
    if (s.empty()) throw FormatError("bpe vocab: empty base symbol");
    if (ids_.count(s)) throw FormatError("bpe vocab: duplicate base symbol '" + escape(s) + "'");
    ids_[s] = tokens_.size();
    tokens_.push_back(s);
  }
  for (std::size_t rank = 0; rank < merges_.size(); ++rank) {
    const auto& [left, right] = merges_[rank];
    auto l = ids_.find(left);
    auto r = ids_.find(right);
    if (l == ids_.end() || r == ids_.end() || l->second < kNumSpecial || r->second < kNumSpecial) {
      throw FormatError("bpe vocab: merge " + std::to_string(rank) + " ('" + escape(left) + "', '" + escape(right) +
                        "') references a symbol that does not exist at that rank");
    }
    if (!ranks_.emplace(merges_[rank], rank).second) {
      throw FormatError("bpe vocab: duplicate merge at rank " + std::to_string(rank));
    }
    const std::string merged = left + right;
    if (!ids_.count(merged)) {
      ids_[merged] = tokens_.size();
      tokens_.push_back(merged);
    }
  }
}

std::optional<TokenId> BpeVocab::id_of(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& BpeVocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw LookupError("bpe vocab: token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::optional<std::size_t> BpeVocab::merge_rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find({left, right});
  if (it == ranks_.end()) return std::nullopt;
  return it->second;
}

void BpeVocab::write(std::ostream& os) const {
  os << kHeader << '\n';
  os << "base " << base_.size() << '\n';
  for (const auto& s : base_) os << escape(s) << '\n';
  os << "merges " << merges_.size() << '\n';
  for (const auto& [l, r] : merges_) os << escape(l) << ' ' << escape(r) << '\n';
}

BpeVocab BpeVocab::read(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kHeader) throw FormatError("bpe vocab: missing 'SZBPE v1' header");
  auto read_count = [&](const std::string& keyword) {
    if (!std::getline(is, line)) throw FormatError("bpe vocab: missing '" + keyword + "' section");
    std::istringstream ls(line);
    std::string word;
    std::size_t n = 0;
    if (!(ls >> word >> n) || word != keyword) throw FormatError("bpe vocab: expected '" + keyword + " <count>', got '" + line + "'");
    return n;
  };
  const std::size_t n_base = read_count("base");
  std::vector<std::string> base;
  for (std::size_t i = 0; i < n_base; ++i) {
    if (!std::getline(is, line)) throw FormatError("bpe vocab: truncated base symbol list");
    base.push_back(unescape(line));
  }
  const std::size_t n_merges = read_count("merges");
  std::vector<MergePair> merges;
  for (std::size_t i = 0; i < n_merges; ++i) {
    if (!std::getline(is, line)) throw FormatError("bpe vocab: truncated merge list");
    const auto space = line.find(' ');
    if (space == std::string::npos) throw FormatError("bpe vocab: malformed merge line '" + line + "'");
    merges.emplace_back(unescape(line.substr(0, space)), unescape(line.substr(space + 1)));
  }
  return BpeVocab(std::move(base), std::move(merges));
}

void BpeVocab::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write(os);
  if (!os) throw IoError("failed writing " + path);
}

BpeVocab BpeVocab::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read(is);
}

BpeVocab train_bpe(std::span<const std::string> corpus, std::size_t num_merges) {
  if (corpus.empty()) throw ParameterError("train_bpe: empty corpus");

  std::set<unsigned char> bytes;
  std::map<std::string, long long> word_freq;
  for (const auto& text : corpus) {
    for (unsigned char c : text) bytes.insert(c);
    for (const auto& chunk : pre_tokenize(text)) {
      if (is_word_byte(static_cast<unsigned char>(text[chunk.begin]))) {
        ++word_freq[text.substr(chunk.begin, chunk.end - chunk.begin)];
      }
    }
  }
  std::vector<std::string> base;
  for (unsigned char c : bytes) base.emplace_back(1, static_cast<char>(c));

  struct Word {
    std::vector<std::string> symbols;
    long long freq;
  };
  std::vector<Word> words;
  PairCounts counts;
  for (const auto& [w, f] : word_freq) {
    Word word{{}, f};
    for (char c : w) word.symbols.emplace_back(1, c);
    count_pairs(word.symbols, f, counts);
    words.push_back(std::move(word));
  }

  std::vector<MergePair> merges;
  while (merges.size() < num_merges) {
    // std::map iterates pairs in lexicographic order, so the first maximum
    // found is the tie-break winner.
    const MergePair* best = nullptr;
    long long best_count = 0;
    for (const auto& [pair, c] : counts) {
      if (c > best_count) {
        best = &pair;
        best_count = c;
      }
    }
    if (!best) break;
    const MergePair chosen = *best;
    merges.push_back(chosen);
    for (auto& word : words) {
      bool present = false;
      for (std::size_t i = 0; i + 1 < word.symbols.size(); ++i) {
        if (word.symbols[i] == chosen.first && word.symbols[i + 1] == chosen.second) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      count_pairs(word.symbols, -word.freq, counts);
      word.symbols = apply_merge(word.symbols, chosen);
      count_pairs(word.symbols, word.freq, counts);
    }
    for (auto it = counts.begin(); it != counts.end();) {
      it = it->second <= 0 ? counts.erase(it) : std::next(it);
    }
  }
  return BpeVocab(std::move(base), std::move(merges));
}

TokenizedCaption tokenize(const BpeVocab& vocab, std::string_view text) {
  TokenizedCaption out;
  out.text = std::string(text);
  out.ids.push_back(BpeVocab::kBos);
  out.spans.push_back({0, 0});

  for (const auto& chunk : pre_tokenize(text)) {
    // Symbols with their spans; unknown bytes are pinned as [UNK].
    std::vector<std::string> symbols;
    std::vector<CharSpan> spans;
    std::vector<bool> unknown;
    for (std::size_t i = chunk.begin; i < chunk.end; ++i) {
      std::string s(1, text[i]);
      unknown.push_back(!vocab.id_of(s).has_value());
      symbols.push_back(std::move(s));
      spans.push_back({i, i + 1});
    }
    while (symbols.size() > 1) {
      std::size_t best_rank = std::numeric_limits<std::size_t>::max();
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        if (unknown[i] || unknown[i + 1]) continue;
        if (auto r = vocab.merge_rank(symbols[i], symbols[i + 1]); r && *r < best_rank) best_rank = *r;
      }
      if (best_rank == std::numeric_limits<std::size_t>::max()) break;
      const auto& pair = vocab.merges()[best_rank];
      std::vector<std::string> next_symbols;
      std::vector<CharSpan> next_spans;
      std::vector<bool> next_unknown;
      for (std::size_t i = 0; i < symbols.size();) {
        if (i + 1 < symbols.size() && !unknown[i] && !unknown[i + 1] && symbols[i] == pair.first &&
            symbols[i + 1] == pair.second) {
          next_symbols.push_back(symbols[i] + symbols[i + 1]);
          next_spans.push_back({spans[i].begin, spans[i + 1].end});
          next_unknown.push_back(false);
          i += 2;
        } else {
          next_symbols.push_back(symbols[i]);
          next_spans.push_back(spans[i]);
          next_unknown.push_back(unknown[i]);
          ++i;
        }
      }
      symbols = std::move(next_symbols);
      spans = std::move(next_spans);
      unknown = std::move(next_unknown);
    }
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      out.ids.push_back(unknown[i] ? BpeVocab::kUnk : *vocab.id_of(symbols[i]));
      out.spans.push_back(spans[i]);
    }
  }
  out.ids.push_back(BpeVocab::kEos);
  out.spans.push_back({text.size(), text.size()});
  return out;
}

std::string decode(const BpeVocab& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (auto id : ids) {
    if (vocab.is_special(id)) continue;
    out += vocab.token(id);
  }
  return out;
}

bool truncate_to_context(TokenizedCaption& caption, std::size_t context) {
  if (context < 2) throw ParameterError("context length must be at least 2");
  if (caption.ids.size() <= context) return false;
  const TokenId eos = caption.ids.back();
  const CharSpan eos_span = caption.spans.back();
  caption.ids.resize(context - 1);
  caption.spans.resize(context - 1);
  caption.ids.push_back(eos);
  caption.spans.push_back(eos_span);
  std::erase_if(caption.concepts, [&](const ConceptOccurrence& c) {
    return std::any_of(c.token_indices.begin(), c.token_indices.end(), [&](std::size_t i) { return i >= context - 1; });
  });
  return true;
}

ZSSEG_NAMESPACE_END
