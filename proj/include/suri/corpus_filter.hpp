#pragma once

// Document quality signals and the threshold table used to select web
// documents as long-form gold responses.
//
// Signal semantics:
//   - n-gram, entropy and no-alpha signals run over raw whitespace words;
//   - blocklist and religious-dictionary matches use normalize_word() forms
//     (lowercased, edge punctuation trimmed), whole-word / whole-phrase;
//   - character counts are Unicode code points.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

#include "suri/error.hpp"
#include "suri/textkit.hpp"

namespace suri {

inline constexpr std::size_t kDupeNgramMin = 5;
inline constexpr std::size_t kDupeNgramMax = 10;
inline constexpr std::size_t kTopNgramMin = 2;
inline constexpr std::size_t kTopNgramMax = 4;

struct QualitySignals {
  std::size_t word_count = 0;
  double unigram_entropy = 0.0;
  double frac_no_alpha = 0.0;
  double curly_bracket_ratio = 0.0;
  double lorem_ipsum_ratio = 0.0;
  std::size_t javascript_line_hits = 0;
  std::map<std::size_t, double> dupe_ngram_fracs;
  std::map<std::size_t, double> top_ngram_fracs;
  std::size_t blocklist_word_hits = 0;
  bool ut1_category_hit = false;
  bool news_domain_hit = false;
  double religious_word_frac = 0.0;
  // Filled only by external scorers.
  std::optional<double> ccnet_language_score;
  std::optional<double> ccnet_perplexity;
  std::optional<double> books_importance;
};

/// Blocklists and dictionaries. Entries are stored normalized.
struct BlocklistBundle {
  std::vector<std::vector<std::string>> bad_word_phrases;  // LDNOOBW-style
  std::set<std::string> ut1_domains;
  std::set<std::string> news_domains;
  std::set<std::string> religious_words;

  /// Reads a UTF-8 list: one entry per line, '#' starts a comment line.
  static std::vector<std::string> read_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIo, "cannot open list " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto b = line.find_first_not_of(" \t");
      if (b == std::string::npos || line[b] == '#') continue;
      const auto e = line.find_last_not_of(" \t");
      out.push_back(ascii_lower(line.substr(b, e - b + 1)));
    }
    return out;
  }

  void add_bad_phrase(std::string_view phrase) {
    std::vector<std::string> words;
    for (auto& w : tokenize(phrase, Scheme::kWordWhitespace).tokens) {
      auto n = normalize_word(w);
      if (!n.empty()) words.push_back(std::move(n));
    }
    if (!words.empty()) bad_word_phrases.push_back(std::move(words));
  }

  /// Loads ldnoobw.txt, ut1_domains.txt, news_domains.txt and religious.txt
  /// from `dir`. Absent files leave the corresponding list empty.
  static BlocklistBundle load_dir(const std::filesystem::path& dir) {
    BlocklistBundle b;
    auto maybe = [&](const char* name) {
      const auto p = dir / name;
      return std::filesystem::exists(p) ? read_list(p) : std::vector<std::string>{};
    };
    for (const auto& p : maybe("ldnoobw.txt")) b.add_bad_phrase(p);
    for (auto& d : maybe("ut1_domains.txt")) b.ut1_domains.insert(std::move(d));
    for (auto& d : maybe("news_domains.txt")) b.news_domains.insert(std::move(d));
    for (const auto& w : maybe("religious.txt")) {
      auto n = normalize_word(w);
      if (!n.empty()) b.religious_words.insert(std::move(n));
    }
    return b;
  }
};

/// True when `domain` equals an entry or is a subdomain of one.
inline bool domain_listed(std::string_view domain, const std::set<std::string>& list) {
  std::string d = ascii_lower(domain);
  while (!d.empty()) {
    if (list.count(d)) return true;
    const auto dot = d.find('.');
    if (dot == std::string::npos) break;
    d.erase(0, dot + 1);
  }
  return false;
}

namespace detail {

inline std::vector<std::string> normalized_words(const TokenSeq& words) {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words.tokens) {
    auto n = normalize_word(w);
    if (!n.empty()) out.push_back(std::move(n));
  }
  return out;
}

inline std::size_t count_substr(std::string_view hay, std::string_view needle) {
  std::size_t c = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++c;
  return c;
}

}  // namespace detail

inline QualitySignals compute_signals(std::string_view doc, const BlocklistBundle& lists,
                                      std::optional<std::string_view> source_domain = std::nullopt) {
  QualitySignals s;
  const TokenSeq words = tokenize(doc, Scheme::kWordWhitespace);
  s.word_count = words.size();
  s.unigram_entropy = words.empty() ? 0.0 : unigram_entropy(words);
  s.frac_no_alpha = frac_no_alpha_words(words);

  const std::size_t chars = utf8::length(doc);
  if (chars > 0) {
    const auto brackets = std::count_if(doc.begin(), doc.end(), [](char c) { return c == '{' || c == '}'; });
    s.curly_bracket_ratio = static_cast<double>(brackets) / static_cast<double>(chars);
  }

  const std::string normalized = detokenize(tokenize(doc, Scheme::kWordWhitespace, true));
  if (!normalized.empty()) {
    s.lorem_ipsum_ratio = static_cast<double>(detail::count_substr(normalized, "lorem ipsum")) /
                          static_cast<double>(utf8::length(normalized));
  }

  std::size_t line_start = 0;
  while (line_start <= doc.size()) {
    auto line_end = doc.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = doc.size();
    if (ascii_lower(doc.substr(line_start, line_end - line_start)).find("javascript") != std::string::npos) {
      ++s.javascript_line_hits;
    }
    line_start = line_end + 1;
  }

  for (std::size_t n = kDupeNgramMin; n <= kDupeNgramMax; ++n) s.dupe_ngram_fracs[n] = frac_chars_dupe_ngrams(words, n);
  for (std::size_t n = kTopNgramMin; n <= kTopNgramMax; ++n) s.top_ngram_fracs[n] = frac_chars_top_ngram(words, n);

  const auto norm = detail::normalized_words(words);
  for (std::size_t i = 0; i < norm.size(); ++i) {
    for (const auto& phrase : lists.bad_word_phrases) {
      if (i + phrase.size() <= norm.size() && std::equal(phrase.begin(), phrase.end(), norm.begin() + static_cast<std::ptrdiff_t>(i))) {
        ++s.blocklist_word_hits;
      }
    }
  }
  if (source_domain) {
    s.ut1_category_hit = domain_listed(*source_domain, lists.ut1_domains);
    s.news_domain_hit = domain_listed(*source_domain, lists.news_domains);
  }
  if (s.word_count > 0) {
    const auto religious = std::count_if(norm.begin(), norm.end(),
                                         [&](const std::string& w) { return lists.religious_words.count(w) > 0; });
    s.religious_word_frac = static_cast<double>(religious) / static_cast<double>(s.word_count);
  }
  return s;
}

/// Threshold table. Comparisons follow the table text: "(a, b)" is an open
/// interval, "≥ x" is inclusive, a bare maximum passes at equality, and the
/// no-alpha fraction must be strictly below its value.
struct FilterConfig {
  double ccnet_language_score_min = 0.65;                  // >
  std::pair<double, double> ccnet_perplexity = {35, 350};  // open
  double books_importance_min = 0.0;                       // >
  double curly_bracket_max = 0.0;                          // <=
  double frac_no_alpha_max = 0.3;                          // <
  double lorem_ipsum_max = 0.0;                            // <=
  double unigram_entropy_min = 3.0;                        // >=
  std::pair<double, double> word_count = {2048, 5024};     // open
  double javascript_lines_max = 0;                         // <=
  std::map<std::size_t, double> dupe_ngram_max = {{5, 0.15}, {6, 0.14}, {7, 0.13},
                                                   {8, 0.12}, {9, 0.11}, {10, 0.10}};
  std::map<std::size_t, double> top_ngram_max = {{2, 0.20}, {3, 0.18}, {4, 0.16}};
  double ldnoobw_words_max = 0;  // <=
  bool reject_ut1 = true;

  static std::string dupe_tag(std::size_t n) { return "rps_doc_frac_chars_dupe_" + std::to_string(n) + "grams"; }
  static std::string top_tag(std::size_t n) { return "rps_doc_frac_chars_top_" + std::to_string(n) + "gram"; }

  /// Overrides from a JSON object keyed by tag name. Unknown keys are errors.
  void update_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::kParse, "filter config must be an object");
    auto pair_of = [](const nlohmann::json& v, const std::string& key) {
      if (!v.is_array() || v.size() != 2) throw Error(ErrorCode::kParse, key + " expects [low, high]");
      return std::pair<double, double>{v[0].get<double>(), v[1].get<double>()};
    };
    for (const auto& [key, v] : j.items()) {
      if (key == "ccnet_language_score") ccnet_language_score_min = v.get<double>();
      else if (key == "ccnet_perplexity") ccnet_perplexity = pair_of(v, key);
      else if (key == "rps_doc_books_importance") books_importance_min = v.get<double>();
      else if (key == "rps_doc_curly_bracket") curly_bracket_max = v.get<double>();
      else if (key == "rps_doc_frac_no_alph_words") frac_no_alpha_max = v.get<double>();
      else if (key == "rps_doc_lorem_ipsum") lorem_ipsum_max = v.get<double>();
      else if (key == "rps_doc_unigram_entropy") unigram_entropy_min = v.get<double>();
      else if (key == "rps_doc_word_count") word_count = pair_of(v, key);
      else if (key == "rps_lines_javascript_counts") javascript_lines_max = v.get<double>();
      else if (key == "rps_doc_ldnoobw_words") ldnoobw_words_max = v.get<double>();
      else if (key == "rps_doc_ut1_blacklist") reject_ut1 = v.get<double>() == 0;
      else {
        bool matched = false;
        for (std::size_t n = kDupeNgramMin; n <= kDupeNgramMax && !matched; ++n) {
          if (key == dupe_tag(n)) {
            dupe_ngram_max[n] = v.get<double>();
            matched = true;
          }
        }
        for (std::size_t n = kTopNgramMin; n <= kTopNgramMax && !matched; ++n) {
          if (key == top_tag(n)) {
            top_ngram_max[n] = v.get<double>();
            matched = true;
          }
        }
        if (!matched) throw Error(ErrorCode::kParse, "unknown filter key: " + key);
      }
    }
  }
};

struct FilterDecision {
  bool accepted = true;
  std::vector<std::string> failed_rules;
  QualitySignals signals;
};

inline FilterDecision apply_filters(const QualitySignals& s, const FilterConfig& cfg) {
  FilterDecision d;
  d.signals = s;
  auto check = [&](bool ok, std::string tag) {
    if (!ok) d.failed_rules.push_back(std::move(tag));
  };
  if (s.ccnet_language_score) check(*s.ccnet_language_score > cfg.ccnet_language_score_min, "ccnet_language_score");
  if (s.ccnet_perplexity) {
    check(*s.ccnet_perplexity > cfg.ccnet_perplexity.first && *s.ccnet_perplexity < cfg.ccnet_perplexity.second,
          "ccnet_perplexity");
  }
  if (s.books_importance) check(*s.books_importance > cfg.books_importance_min, "rps_doc_books_importance");
  check(s.curly_bracket_ratio <= cfg.curly_bracket_max, "rps_doc_curly_bracket");
  check(s.frac_no_alpha < cfg.frac_no_alpha_max, "rps_doc_frac_no_alph_words");
  check(s.lorem_ipsum_ratio <= cfg.lorem_ipsum_max, "rps_doc_lorem_ipsum");
  check(s.unigram_entropy >= cfg.unigram_entropy_min, "rps_doc_unigram_entropy");
  const auto wc = static_cast<double>(s.word_count);
  check(wc > cfg.word_count.first && wc < cfg.word_count.second, "rps_doc_word_count");
  check(static_cast<double>(s.javascript_line_hits) <= cfg.javascript_lines_max, "rps_lines_javascript_counts");
  for (const auto& [n, limit] : cfg.dupe_ngram_max) {
    const auto it = s.dupe_ngram_fracs.find(n);
    if (it != s.dupe_ngram_fracs.end()) check(it->second <= limit, FilterConfig::dupe_tag(n));
  }
  for (const auto& [n, limit] : cfg.top_ngram_max) {
    const auto it = s.top_ngram_fracs.find(n);
    if (it != s.top_ngram_fracs.end()) check(it->second <= limit, FilterConfig::top_tag(n));
  }
  check(static_cast<double>(s.blocklist_word_hits) <= cfg.ldnoobw_words_max, "rps_doc_ldnoobw_words");
  check(!(cfg.reject_ut1 && s.ut1_category_hit), "rps_doc_ut1_blacklist");
  d.accepted = d.failed_rules.empty();
  return d;
}

inline constexpr double kReligiousWordFracMax = 0.0005;

/// News/religion downsampling: false means drop.
inline bool downsample_topical(std::string_view doc, std::optional<std::string_view> source_domain,
                               const BlocklistBundle& lists) {
  if (source_domain && domain_listed(*source_domain, lists.news_domains)) return false;
  const TokenSeq words = tokenize(doc, Scheme::kWordWhitespace);
  if (words.empty()) return true;
  std::size_t hits = 0;
  for (const auto& w : words.tokens) hits += lists.religious_words.count(normalize_word(w));
  return static_cast<double>(hits) / static_cast<double>(words.size()) <= kReligiousWordFracMax;
}

struct CorpusDocument {
  std::string id;
  std::string text;
  std::optional<std::string> source_domain;
  std::string source = "redpajama";
};

struct CorpusVerdict {
  FilterDecision decision;
  bool topical_keep = true;
  [[nodiscard]] bool kept() const { return decision.accepted && topical_keep; }
};

/// Filters documents on `threads` workers. Output index i belongs to input i.
inline std::vector<CorpusVerdict> filter_corpus(const std::vector<CorpusDocument>& docs, const BlocklistBundle& lists,
                                                const FilterConfig& cfg, unsigned threads = 1) {
  std::vector<CorpusVerdict> out(docs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < docs.size(); i = next++) {
      const auto& d = docs[i];
      std::optional<std::string_view> dom;
      if (d.source_domain) dom = *d.source_domain;
      out[i].decision = apply_filters(compute_signals(d.text, lists, dom), cfg);
      out[i].topical_keep = downsample_topical(d.text, dom, lists);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(docs.size(), 1))));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace suri
