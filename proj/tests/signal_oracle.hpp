#pragma once

// Independent recomputation of the real-valued quality signals for ASCII
// documents. Shares no code with corpus_filter beyond the struct layout.

#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"

namespace oracle {

struct RealSignals {
  double entropy = 0, no_alpha = 0, curly = 0, lorem = 0, religious = 0;
  std::map<std::size_t, double> dupe, top;
};

inline std::vector<std::string> ascii_split(const std::string& doc) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : doc) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline RealSignals real_signals(const std::string& doc, const std::vector<std::string>& religious_words) {
  RealSignals r;
  const auto w = ascii_split(doc);
  if (!w.empty()) {
    std::map<std::string, double> counts;
    for (const auto& x : w) counts[x] += 1;
    for (const auto& [k, c] : counts) {
      const double p = c / static_cast<double>(w.size());
      r.entropy -= p * std::log(p);
    }
    double na = 0;
    for (const auto& x : w) {
      bool alpha = false;
      for (char ch : x) alpha = alpha || std::isalpha(static_cast<unsigned char>(ch));
      na += alpha ? 0 : 1;
    }
    r.no_alpha = na / static_cast<double>(w.size());
    double rel = 0;
    for (const auto& x : w) {
      std::string lower;
      for (char ch : x) {
        if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '\'') lower += static_cast<char>(std::tolower(ch));
      }
      for (const auto& rw : religious_words) rel += (lower == rw) ? 1 : 0;
    }
    r.religious = rel / static_cast<double>(w.size());
  }
  if (!doc.empty()) {
    double br = 0;
    for (char c : doc) br += (c == '{' || c == '}') ? 1 : 0;
    r.curly = br / static_cast<double>(doc.size());
  }
  std::string norm;
  for (const auto& x : w) {
    if (!norm.empty()) norm += ' ';
    for (char ch : x) norm += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  if (!norm.empty()) {
    double hits = 0;
    for (std::size_t i = 0; i + 11 <= norm.size(); ++i) {
      if (norm.compare(i, 11, "lorem ipsum") == 0) {
        ++hits;
        i += 10;
      }
    }
    r.lorem = hits / static_cast<double>(norm.size());
  }
  for (std::size_t n = 5; n <= 10; ++n) r.dupe[n] = frac_chars_dupe(w, n);
  for (std::size_t n = 2; n <= 4; ++n) r.top[n] = frac_chars_top(w, n);
  return r;
}

}  // namespace oracle
