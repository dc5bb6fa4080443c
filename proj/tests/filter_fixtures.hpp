#pragma once

// Twelve synthetic documents whose quality signals are known in closed form.
// Every regular word is "w" + five digits (six characters), so character
// fractions reduce to word fractions.

#include <cstdio>
#include <string>
#include <vector>

#include "suri/corpus_filter.hpp"

namespace fixtures {

inline std::string word(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%05d", i);
  return buf;
}

inline std::string distinct_words(int n, int offset = 0) {
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += word(offset + i);
  }
  return s;
}

struct FilterCase {
  std::string name;
  std::string text;
  std::optional<std::string> domain;
  std::vector<std::string> expected_failed;
};

inline suri::BlocklistBundle fixture_lists() {
  suri::BlocklistBundle b;
  b.add_bad_phrase("badword");
  b.add_bad_phrase("two word");
  b.ut1_domains.insert("casino.example");
  b.news_domains.insert("news.example");
  b.religious_words = {"church", "prayer", "scripture"};
  return b;
}

inline std::vector<FilterCase> twelve_documents() {
  using V = std::vector<std::string>;
  std::vector<FilterCase> c;
  c.push_back({"clean_3000", distinct_words(3000), std::nullopt, {}});
  c.push_back({"short_1000", distinct_words(1000), std::nullopt, {"rps_doc_word_count"}});
  c.push_back({"long_6000", distinct_words(6000), std::nullopt, {"rps_doc_word_count"}});
  c.push_back({"boundary_2048", distinct_words(2048), std::nullopt, {"rps_doc_word_count"}});
  c.push_back({"curly", distinct_words(2999) + " {", std::nullopt, {"rps_doc_curly_bracket"}});
  c.push_back({"lorem", "Lorem ipsum " + distinct_words(2998), std::nullopt, {"rps_doc_lorem_ipsum"}});
  c.push_back({"javascript", distinct_words(1500) + "\nplease enable JavaScript\n" + distinct_words(1497, 1500),
               std::nullopt, {"rps_lines_javascript_counts"}});
  {
    // 1200 of 3000 tokens are distinct pure numbers: no-alpha fraction 0.4.
    std::string s = distinct_words(1800);
    for (int i = 0; i < 1200; ++i) s += " " + std::to_string(100000 + i);
    c.push_back({"numeric", s, std::nullopt, {"rps_doc_frac_no_alph_words"}});
  }
  {
    // Eight-word cycle x375: entropy ln 8, every n-gram duplicated, top
    // bigram count 375 * 12 chars / 18000 chars = 0.25.
    std::string s;
    for (int r = 0; r < 375; ++r) {
      for (int i = 0; i < 8; ++i) s += (s.empty() ? "" : " ") + word(i);
    }
    V failed{"rps_doc_unigram_entropy"};
    for (int n = 5; n <= 10; ++n) failed.push_back(suri::FilterConfig::dupe_tag(n));
    for (int n = 2; n <= 4; ++n) failed.push_back(suri::FilterConfig::top_tag(n));
    c.push_back({"cycle8", s, std::nullopt, failed});
  }
  c.push_back({"badword", distinct_words(1000) + " Badword! " + distinct_words(1999, 1000), std::nullopt,
               {"rps_doc_ldnoobw_words"}});
  c.push_back({"ut1_domain", distinct_words(3000), std::string("www.casino.example"), {"rps_doc_ut1_blacklist"}});
  {
    // A 158-word passage repeated once inside 3000 words: dupe fraction
    // 316/3000 = 0.10533 for every n <= 158, failing only the 10-gram row.
    std::string s = distinct_words(2842) + " " + distinct_words(158);
    c.push_back({"dupe10_only", s, std::nullopt, {"rps_doc_frac_chars_dupe_10grams"}});
  }
  return c;
}

}  // namespace fixtures
