#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "suri/textkit.hpp"

using namespace suri;

namespace {

TokenSeq words(std::vector<std::string> t) { return TokenSeq{std::move(t), Scheme::kWordWhitespace}; }

TEST(Tokenize, CollapsesWhitespaceRuns) {
  EXPECT_EQ(tokenize("a  b", Scheme::kWordWhitespace).tokens, (std::vector<std::string>{"a", "b"}));
  EXPECT_TRUE(tokenize("", Scheme::kWordWhitespace).empty());
  EXPECT_EQ(tokenize("  \t\n x 　y ", Scheme::kWordWhitespace).tokens,
            (std::vector<std::string>{"x", "y"}));
}

TEST(Tokenize, ByteScheme) {
  EXPECT_EQ(tokenize("ab", Scheme::kByte).tokens, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(tokenize("\xC3\xA9", Scheme::kByte).size(), 2u);
}

TEST(Tokenize, LowercaseFlag) {
  EXPECT_EQ(tokenize("Hello WORLD", Scheme::kWordWhitespace, true).tokens,
            (std::vector<std::string>{"hello", "world"}));
}

TEST(Tokenize, WordRoundTripIsIdempotentAndWhitespaceFree) {
  std::mt19937_64 rng(7);
  const char* pieces[] = {"a", "bc", " ", "  ", "\t", "\n", "dé", "　", "!"};
  for (int iter = 0; iter < 300; ++iter) {
    std::string text;
    const int len = static_cast<int>(rng() % 20);
    for (int i = 0; i < len; ++i) text += pieces[rng() % 9];
    const auto once = tokenize(text, Scheme::kWordWhitespace);
    for (const auto& t : once.tokens) {
      EXPECT_FALSE(t.empty());
      for (std::size_t pos = 0; pos < t.size();) EXPECT_FALSE(utf8::is_space(utf8::next(t, pos)));
    }
    const auto twice = tokenize(detokenize(once), Scheme::kWordWhitespace);
    EXPECT_EQ(once.tokens, twice.tokens);
  }
}

TEST(NgramStats, HandEnumeratedWindows) {
  const auto s = ngram_stats(words({"a", "b", "a", "b", "a"}), 2);
  EXPECT_EQ(s.total_positions, 4u);
  ASSERT_EQ(s.counts.size(), 2u);
  EXPECT_EQ(s.counts.at({"a", "b"}), 2u);
  EXPECT_EQ(s.counts.at({"b", "a"}), 2u);

  const auto shorter = ngram_stats(words({"a"}), 2);
  EXPECT_TRUE(shorter.counts.empty());
  EXPECT_EQ(shorter.total_positions, 0u);

  const auto uni = ngram_stats(words({"a", "a", "a"}), 1);
  EXPECT_EQ(uni.counts.at({"a"}), 3u);
  EXPECT_THROW(ngram_stats(words({"a"}), 0), Error);
}

TEST(NgramStats, CountsSumToPositions) {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 500; ++iter) {
    const auto t = oracle::random_tokens(rng, 5, 50);
    const std::size_t n = 1 + rng() % 6;
    const auto s = ngram_stats(words(t), n);
    std::size_t sum = 0;
    for (const auto& [g, c] : s.counts) {
      EXPECT_EQ(g.size(), n);
      sum += c;
    }
    EXPECT_EQ(sum, t.size() >= n ? t.size() - n + 1 : 0u);
    EXPECT_EQ(sum, s.total_positions);
  }
}

TEST(UnigramEntropy, Examples) {
  EXPECT_DOUBLE_EQ(unigram_entropy(words({"a", "a", "a"})), 0.0);
  EXPECT_NEAR(unigram_entropy(words({"a", "b"})), std::log(2.0), 1e-12);
  EXPECT_NEAR(unigram_entropy(words({"a", "a", "b", "b", "c", "c", "d", "d"})), std::log(4.0), 1e-12);
  EXPECT_THROW(unigram_entropy(words({})), Error);
}

TEST(UnigramEntropy, BoundedByLogDistinct) {
  std::mt19937_64 rng(3);
  for (int iter = 0; iter < 300; ++iter) {
    auto t = oracle::random_tokens(rng, 5, 50);
    if (t.empty()) continue;
    std::map<std::string, int> distinct;
    for (auto& x : t) ++distinct[x];
    const double h = unigram_entropy(words(t));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(distinct.size())) + 1e-12);
  }
}

TEST(FracCharsDupe, Examples) {
  EXPECT_DOUBLE_EQ(frac_chars_dupe_ngrams(words({"a", "b", "a", "b"}), 2), 1.0);
  EXPECT_DOUBLE_EQ(frac_chars_dupe_ngrams(words({"a", "b", "c"}), 2), 0.0);
  // ("aa","b") occurs at starts 0 and 2, covering tokens 0..3: 6 of 10 chars.
  const oracle::Tokens t{"aa", "b", "aa", "b", "zzzz"};
  EXPECT_DOUBLE_EQ(oracle::frac_chars_dupe(t, 2), 0.6);
  EXPECT_DOUBLE_EQ(frac_chars_dupe_ngrams(words(t), 2), 0.6);
  EXPECT_DOUBLE_EQ(frac_chars_dupe_ngrams(words({}), 2), 0.0);
  EXPECT_THROW(frac_chars_dupe_ngrams(words({"a"}), 1), Error);
}

TEST(FracCharsTop, Examples) {
  EXPECT_DOUBLE_EQ(frac_chars_top_ngram(words({"a", "b", "a", "b", "a"}), 2), 0.8);
  // All bigrams unique; lexicographic winner ("a","b") has 2 of 4 chars.
  EXPECT_DOUBLE_EQ(oracle::frac_chars_top({"a", "b", "c", "d"}, 2), 0.5);
  EXPECT_DOUBLE_EQ(frac_chars_top_ngram(words({"a", "b", "c", "d"}), 2), 0.5);
  EXPECT_DOUBLE_EQ(frac_chars_top_ngram(words({}), 2), 0.0);
}

TEST(FracCharsTop, TieBreakIsLexicographic) {
  // ("zz","y") and ("a","bbb") both occur once; ("a","bbb") wins.
  const auto t = words({"zz", "y", "a", "bbb"});
  EXPECT_DOUBLE_EQ(frac_chars_top_ngram(t, 2), 4.0 / 7.0);
}

TEST(FracChars, MatchBruteForceOnRandomSequences) {
  std::mt19937_64 rng(2024);
  for (int iter = 0; iter < 2000; ++iter) {
    auto t = oracle::random_tokens(rng, 1 + rng() % 5, 50);
    // Vary token widths so character mass matters.
    for (auto& x : t) x = std::string(1 + (x[0] - 'a') % 3, x[0]);
    const std::size_t n = 2 + rng() % 4;
    const double dupe = frac_chars_dupe_ngrams(words(t), n);
    const double top = frac_chars_top_ngram(words(t), n);
    EXPECT_DOUBLE_EQ(dupe, oracle::frac_chars_dupe(t, n));
    EXPECT_DOUBLE_EQ(top, oracle::frac_chars_top(t, n));
    EXPECT_GE(dupe, 0.0);
    EXPECT_LE(dupe, 1.0);
    EXPECT_GE(top, 0.0);
    EXPECT_LE(top, 1.0);
  }
}

TEST(FracNoAlpha, Examples) {
  EXPECT_NEAR(frac_no_alpha_words(words({"abc", "123", "?!"})), 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(frac_no_alpha_words(words({"abc"})), 0.0);
  EXPECT_DOUBLE_EQ(frac_no_alpha_words(words({"123"})), 1.0);
  EXPECT_DOUBLE_EQ(frac_no_alpha_words(words({})), 0.0);
  EXPECT_DOUBLE_EQ(frac_no_alpha_words(words({"café", "日本"})), 0.0);
}

TEST(NormalizeWord, StripsPunctuationAndCase) {
  EXPECT_EQ(normalize_word("\"Church,\""), "church");
  EXPECT_EQ(normalize_word("..."), "");
  EXPECT_EQ(normalize_word("don't"), "don't");
}

}  // namespace
