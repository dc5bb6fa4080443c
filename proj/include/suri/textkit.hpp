#pragma once

// Tokenization, n-gram counting and the lexical statistics shared by the
// corpus filter and the evaluation harness.
//
// Character lengths are measured in Unicode code points. Separators between
// tokens never count toward character mass.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "suri/error.hpp"

namespace suri {

enum class Scheme { kWordWhitespace, kByte };

struct TokenSeq {
  std::vector<std::string> tokens;
  Scheme scheme = Scheme::kWordWhitespace;

  [[nodiscard]] std::size_t size() const noexcept { return tokens.size(); }
  [[nodiscard]] bool empty() const noexcept { return tokens.empty(); }
};

using Ngram = std::vector<std::string>;

struct NgramStats {
  std::size_t n = 1;
  std::map<Ngram, std::size_t> counts;
  std::size_t total_positions = 0;
};

namespace utf8 {

/// Decodes one code point starting at `pos`, advancing `pos`. Invalid bytes
/// decode to U+FFFD and consume exactly one byte.
inline char32_t next(std::string_view s, std::size_t& pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  auto cont = [&](std::size_t i) -> int {
    if (pos + i >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[pos + i]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++pos;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++pos;
    return 0xFFFD;
  }
  for (int i = 1; i < len; ++i) {
    const int c = cont(i);
    if (c < 0) {
      ++pos;
      return 0xFFFD;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  pos += len;
  return cp;
}

inline std::size_t length(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t pos = 0; pos < s.size(); ++n) next(s, pos);
  return n;
}

inline bool is_space(char32_t c) {
  return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
         (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F ||
         c == 0x205F || c == 0x3000;
}

/// Letter test: ASCII exactly, plus the major alphabetic blocks (Latin-1
/// letters, Latin Extended, Greek, Cyrillic, Armenian, Hebrew, Arabic,
/// Devanagari, Thai, kana, CJK ideographs, Hangul). Not a full Unicode table.
inline bool is_alpha(char32_t c) {
  if (c < 0x80) return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  struct Range {
    char32_t lo, hi;
  };
  static constexpr Range kRanges[] = {
      {0x00AA, 0x00AA}, {0x00B5, 0x00B5}, {0x00BA, 0x00BA}, {0x00C0, 0x00D6},
      {0x00D8, 0x00F6}, {0x00F8, 0x02C1}, {0x02C6, 0x02D1}, {0x02E0, 0x02E4},
      {0x0370, 0x0373}, {0x0376, 0x0377}, {0x037B, 0x037D}, {0x0386, 0x0386},
      {0x0388, 0x03F5}, {0x03F7, 0x0481}, {0x048A, 0x052F}, {0x0531, 0x0556},
      {0x0561, 0x0587}, {0x05D0, 0x05EA}, {0x0620, 0x064A}, {0x0904, 0x0939},
      {0x0E01, 0x0E30}, {0x1E00, 0x1FBC}, {0x3041, 0x3096}, {0x30A1, 0x30FA},
      {0x4E00, 0x9FFF}, {0xAC00, 0xD7A3},
  };
  for (const auto& r : kRanges) {
    if (c >= r.lo && c <= r.hi) return true;
  }
  return false;
}

}  // namespace utf8

/// ASCII case folding; non-ASCII bytes pass through.
inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return out;
}

/// Lowercases and trims leading/trailing ASCII punctuation. Used for
/// dictionary and blocklist matching.
inline std::string normalize_word(std::string_view word) {
  auto is_punct = [](char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 0x80 && !std::isalnum(u);
  };
  std::size_t b = 0;
  std::size_t e = word.size();
  while (b < e && is_punct(word[b])) ++b;
  while (e > b && is_punct(word[e - 1])) --e;
  return ascii_lower(word.substr(b, e - b));
}

inline TokenSeq tokenize(std::string_view text, Scheme scheme, bool lowercase = false) {
  TokenSeq seq;
  seq.scheme = scheme;
  if (scheme == Scheme::kByte) {
    seq.tokens.reserve(text.size());
    for (char ch : text) {
      std::string tok(1, ch);
      if (lowercase && ch >= 'A' && ch <= 'Z') tok[0] = static_cast<char>(ch - 'A' + 'a');
      seq.tokens.push_back(std::move(tok));
    }
    return seq;
  }
  std::size_t pos = 0;
  std::size_t start = std::string_view::npos;
  while (pos < text.size()) {
    const std::size_t here = pos;
    const char32_t cp = utf8::next(text, pos);
    if (utf8::is_space(cp)) {
      if (start != std::string_view::npos) {
        seq.tokens.emplace_back(text.substr(start, here - start));
        start = std::string_view::npos;
      }
    } else if (start == std::string_view::npos) {
      start = here;
    }
  }
  if (start != std::string_view::npos) seq.tokens.emplace_back(text.substr(start));
  if (lowercase) {
    for (auto& t : seq.tokens) t = ascii_lower(t);
  }
  return seq;
}

inline std::string detokenize(const TokenSeq& seq) {
  std::string out;
  const char* sep = seq.scheme == Scheme::kWordWhitespace ? " " : "";
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (i > 0) out += sep;
    out += seq.tokens[i];
  }
  return out;
}

inline NgramStats ngram_stats(const TokenSeq& seq, std::size_t n) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "ngram order must be >= 1");
  NgramStats stats;
  stats.n = n;
  if (seq.size() < n) return stats;
  stats.total_positions = seq.size() - n + 1;
  for (std::size_t i = 0; i < stats.total_positions; ++i) {
    Ngram g(seq.tokens.begin() + static_cast<std::ptrdiff_t>(i),
            seq.tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++stats.counts[std::move(g)];
  }
  return stats;
}

inline double unigram_entropy(const TokenSeq& seq) {
  if (seq.empty()) throw Error(ErrorCode::kDomain, "entropy of an empty sequence");
  std::unordered_map<std::string_view, std::size_t> counts;
  for (const auto& t : seq.tokens) ++counts[t];
  const auto total = static_cast<double>(seq.size());
  double h = 0.0;
  for (const auto& [tok, c] : counts) {
    const double p = static_cast<double>(c) / total;
    h -= p * std::log(p);
  }
  // A single-symbol distribution is exactly zero; avoid printing -0.
  return h == 0.0 ? 0.0 : h;
}

namespace detail {

/// Interned window ids: window_id[i] identifies the n-gram starting at i.
/// Equal ids mean equal n-grams.
struct WindowIndex {
  std::vector<std::size_t> window_id;
  std::vector<std::size_t> id_count;
  std::vector<std::size_t> id_first_start;
};

inline WindowIndex index_windows(const TokenSeq& seq, std::size_t n) {
  WindowIndex idx;
  if (seq.size() < n) return idx;
  std::unordered_map<std::string_view, std::uint32_t> vocab;
  std::vector<std::uint32_t> ids;
  ids.reserve(seq.size());
  for (const auto& t : seq.tokens) {
    auto [it, inserted] = vocab.try_emplace(t, static_cast<std::uint32_t>(vocab.size()));
    ids.push_back(it->second);
  }
  std::map<std::vector<std::uint32_t>, std::size_t> seen;
  const std::size_t positions = seq.size() - n + 1;
  idx.window_id.reserve(positions);
  for (std::size_t i = 0; i < positions; ++i) {
    std::vector<std::uint32_t> key(ids.begin() + static_cast<std::ptrdiff_t>(i),
                                   ids.begin() + static_cast<std::ptrdiff_t>(i + n));
    auto [it, inserted] = seen.try_emplace(std::move(key), idx.id_count.size());
    if (inserted) {
      idx.id_count.push_back(0);
      idx.id_first_start.push_back(i);
    }
    ++idx.id_count[it->second];
    idx.window_id.push_back(it->second);
  }
  return idx;
}

inline std::size_t total_chars(const TokenSeq& seq) {
  std::size_t total = 0;
  for (const auto& t : seq.tokens) total += utf8::length(t);
  return total;
}

}  // namespace detail

/// Fraction of character mass covered by at least one n-gram occurring
/// two or more times. Each token is counted once however many duplicated
/// windows cover it.
inline double frac_chars_dupe_ngrams(const TokenSeq& seq, std::size_t n) {
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "dupe n-gram order must be >= 2");
  if (seq.empty()) return 0.0;
  const std::size_t total = detail::total_chars(seq);
  if (total == 0) return 0.0;
  const auto idx = detail::index_windows(seq, n);
  std::vector<bool> covered(seq.size(), false);
  for (std::size_t i = 0; i < idx.window_id.size(); ++i) {
    if (idx.id_count[idx.window_id[i]] >= 2) {
      for (std::size_t j = i; j < i + n; ++j) covered[j] = true;
    }
  }
  std::size_t dup = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (covered[i]) dup += utf8::length(seq.tokens[i]);
  }
  return static_cast<double>(dup) / static_cast<double>(total);
}

/// count(top n-gram) * chars(top n-gram) / total chars, clamped to 1.
/// Ties on count go to the lexicographically smallest n-gram.
inline double frac_chars_top_ngram(const TokenSeq& seq, std::size_t n) {
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "top n-gram order must be >= 2");
  if (seq.size() < n) return 0.0;
  const std::size_t total = detail::total_chars(seq);
  if (total == 0) return 0.0;
  const auto idx = detail::index_windows(seq, n);
  const std::size_t best_count = *std::max_element(idx.id_count.begin(), idx.id_count.end());

  auto window_at = [&](std::size_t start) {
    return Ngram(seq.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                 seq.tokens.begin() + static_cast<std::ptrdiff_t>(start + n));
  };
  Ngram best;
  bool have = false;
  for (std::size_t id = 0; id < idx.id_count.size(); ++id) {
    if (idx.id_count[id] != best_count) continue;
    Ngram g = window_at(idx.id_first_start[id]);
    if (!have || g < best) {
      best = std::move(g);
      have = true;
    }
  }
  std::size_t chars = 0;
  for (const auto& t : best) chars += utf8::length(t);
  const double frac = static_cast<double>(best_count * chars) / static_cast<double>(total);
  return std::min(frac, 1.0);
}

inline double frac_no_alpha_words(const TokenSeq& seq) {
  if (seq.empty()) return 0.0;
  std::size_t no_alpha = 0;
  for (const auto& t : seq.tokens) {
    bool any = false;
    for (std::size_t pos = 0; pos < t.size() && !any;) any = utf8::is_alpha(utf8::next(t, pos));
    if (!any) ++no_alpha;
  }
  return static_cast<double>(no_alpha) / static_cast<double>(seq.size());
}

}  // namespace suri
