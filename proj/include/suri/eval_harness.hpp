#pragma once

// Evaluation procedures: length and repetition statistics, specificity
// pairs and ranking accuracy, the LLM-judge protocol, annotation agreement
// and the preference-prompt probe.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "suri/dataset_builder.hpp"
#include "suri/error.hpp"
#include "suri/llm_gateway.hpp"
#include "suri/rng.hpp"
#include "suri/textkit.hpp"
#include "suri/tiny_lm.hpp"

namespace suri {

namespace eval_detail {

/// Single left-to-right pass, so slot values that look like slots stay put.
inline std::string fill_slots(std::string_view tmpl, const std::vector<std::pair<std::string_view, std::string_view>>& slots) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    bool hit = false;
    for (const auto& [name, value] : slots) {
      if (tmpl.substr(pos, name.size()) == name) {
        out += value;
        pos += name.size();
        hit = true;
        break;
      }
    }
    if (!hit) out += tmpl[pos++];
  }
  return out;
}

/// Linear interpolation between closest ranks; `sorted` must be non-empty.
inline double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace eval_detail

// --- lengths --------------------------------------------------------------------

struct LengthStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double p10 = 0.0;
  double p90 = 0.0;
};

inline LengthStats length_stats(const std::vector<std::string>& texts, Scheme scheme = Scheme::kWordWhitespace) {
  if (texts.empty()) throw Error(ErrorCode::kInvalidArgument, "length_stats of an empty list");
  std::vector<double> n;
  n.reserve(texts.size());
  for (const auto& t : texts) n.push_back(static_cast<double>(tokenize(t, scheme).size()));
  std::sort(n.begin(), n.end());
  LengthStats s;
  s.count = n.size();
  double total = 0.0;
  for (double x : n) total += x;
  s.mean = total / static_cast<double>(n.size());
  s.median = eval_detail::percentile(n, 0.5);
  s.p10 = eval_detail::percentile(n, 0.1);
  s.p90 = eval_detail::percentile(n, 0.9);
  return s;
}

// --- repetition -----------------------------------------------------------------

inline constexpr std::size_t kRepetitionMinCount = 3;

struct Repetition {
  Ngram ngram;
  std::size_t count = 0;

  friend bool operator==(const Repetition&, const Repetition&) = default;
};

/// n-grams occurring at least `min_count` times (overlaps count), sorted by
/// count descending, then lexicographically.
inline std::vector<Repetition> detect_repetitions(const TokenSeq& seq, std::size_t n,
                                                  std::size_t min_count = kRepetitionMinCount) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "ngram order must be >= 1");
  const auto idx = detail::index_windows(seq, n);
  std::vector<Repetition> out;
  for (std::size_t id = 0; id < idx.id_count.size(); ++id) {
    if (idx.id_count[id] < min_count) continue;
    const auto b = seq.tokens.begin() + static_cast<std::ptrdiff_t>(idx.id_first_start[id]);
    out.push_back({Ngram(b, b + static_cast<std::ptrdiff_t>(n)), idx.id_count[id]});
  }
  std::sort(out.begin(), out.end(), [](const Repetition& a, const Repetition& b) {
    return a.count != b.count ? a.count > b.count : a.ngram < b.ngram;
  });
  return out;
}

/// Fraction of texts with at least one repeated n-gram.
inline double repetition_flag_rate(const std::vector<TokenSeq>& texts, std::size_t n,
                                   std::size_t min_count = kRepetitionMinCount) {
  if (texts.empty()) throw Error(ErrorCode::kInvalidArgument, "repetition_flag_rate of an empty list");
  std::size_t flagged = 0;
  for (const auto& t : texts) flagged += detect_repetitions(t, n, min_count).empty() ? 0 : 1;
  return static_cast<double>(flagged) / static_cast<double>(texts.size());
}

struct SegmentedRate {
  double before = 0.0;
  double after = 0.0;
};

/// Per segment, the fraction of window starts whose n-gram occurs at least
/// `min_count` times anywhere in the text. A window belongs to the segment
/// its start falls in; a segment without windows has rate 0.
inline SegmentedRate segmented_repetition_rate(const TokenSeq& seq, std::size_t n = 5, std::size_t boundary = 2048,
                                               std::size_t min_count = kRepetitionMinCount) {
  if (n < 1) throw Error(ErrorCode::kInvalidArgument, "ngram order must be >= 1");
  const auto idx = detail::index_windows(seq, n);
  std::array<std::size_t, 2> total{}, hit{};
  for (std::size_t i = 0; i < idx.window_id.size(); ++i) {
    const std::size_t seg = i < boundary ? 0 : 1;
    ++total[seg];
    hit[seg] += idx.id_count[idx.window_id[i]] >= min_count ? 1 : 0;
  }
  auto rate = [&](std::size_t s) {
    return total[s] ? static_cast<double>(hit[s]) / static_cast<double>(total[s]) : 0.0;
  };
  return {rate(0), rate(1)};
}

// --- specificity ----------------------------------------------------------------

enum class CountSpec { kAll, kHalf, kOne };

/// Resolves a count against M constraints; half is floor(M/2), at least 1.
inline std::size_t resolve_count(CountSpec c, std::size_t m) {
  switch (c) {
    case CountSpec::kAll: return m;
    case CountSpec::kHalf: return std::max<std::size_t>(1, m / 2);
    case CountSpec::kOne: return 1;
  }
  return m;
}

/// (included, corrupted). Only the five evaluation settings can be built.
class SpecificitySetting {
 public:
  static SpecificitySetting all_all() { return {CountSpec::kAll, CountSpec::kAll}; }
  static SpecificitySetting all_half() { return {CountSpec::kAll, CountSpec::kHalf}; }
  static SpecificitySetting all_one() { return {CountSpec::kAll, CountSpec::kOne}; }
  static SpecificitySetting half_half() { return {CountSpec::kHalf, CountSpec::kHalf}; }
  static SpecificitySetting one_one() { return {CountSpec::kOne, CountSpec::kOne}; }

  static std::vector<SpecificitySetting> all() { return {all_all(), all_half(), all_one(), half_half(), one_one()}; }

  /// "(M,M/2)" style names.
  static SpecificitySetting parse(std::string_view name) {
    for (const auto& s : all()) {
      if (s.name() == name) return s;
    }
    throw Error(ErrorCode::kInvalidArgument, "unknown specificity setting: " + std::string(name));
  }

  [[nodiscard]] CountSpec included() const { return included_; }
  [[nodiscard]] CountSpec corrupted() const { return corrupted_; }

  [[nodiscard]] std::string name() const {
    auto part = [](CountSpec c) -> std::string {
      switch (c) {
        case CountSpec::kAll: return "M";
        case CountSpec::kHalf: return "M/2";
        case CountSpec::kOne: return "1";
      }
      return "?";
    };
    return "(" + part(included_) + "," + part(corrupted_) + ")";
  }

  friend bool operator==(const SpecificitySetting&, const SpecificitySetting&) = default;

 private:
  SpecificitySetting(CountSpec inc, CountSpec cor) : included_(inc), corrupted_(cor) {}
  CountSpec included_;
  CountSpec corrupted_;
};

struct SpecificityPair {
  std::string x_w;
  std::string x_l;
  std::vector<std::size_t> included;   // indices into the instruction's constraints, ascending
  std::vector<std::size_t> corrupted;  // subset of `included`, ascending
};

inline SpecificityPair build_specificity_pair(const Instruction& instr, const SpecificitySetting& setting,
                                              std::uint64_t seed) {
  const std::size_t m = instr.constraints.size();
  if (m == 0) throw Error(ErrorCode::kEmptyConstraints, "instruction has no constraints");
  for (std::size_t i = 0; i < m; ++i) {
    if (!instr.constraints[i].corrupted_text) {
      throw Error(ErrorCode::kMissingCorruption, "constraint " + std::to_string(i) + " has no corrupted text");
    }
  }
  const std::size_t n_inc = resolve_count(setting.included(), m);
  const std::size_t n_cor = std::min(n_inc, resolve_count(setting.corrupted(), m));
  Rng rng(seed);
  SpecificityPair p;
  p.included = sample_sorted_indices(m, n_inc, rng);
  for (std::size_t j : sample_sorted_indices(n_inc, n_cor, rng)) p.corrupted.push_back(p.included[j]);
  std::vector<std::string> gold, bad;
  std::size_t next = 0;
  for (std::size_t i : p.included) {
    const auto& c = instr.constraints[i];
    gold.push_back(c.text);
    const bool flip = next < p.corrupted.size() && p.corrupted[next] == i;
    if (flip) ++next;
    bad.push_back(flip ? *c.corrupted_text : c.text);
  }
  p.x_w = render_instruction(instr.main_goal, gold);
  p.x_l = render_instruction(instr.main_goal, bad);
  return p;
}

// --- ranking --------------------------------------------------------------------

struct RankingRecord {
  std::string example_id;
  double logps_w = 0.0;
  double logps_l = 0.0;
  bool correct = false;
};

struct RankingResult {
  double accuracy = 0.0;
  std::vector<RankingRecord> records;
};

/// Scores a response given a rendered instruction string.
using InstructionScorer = std::function<SequenceScore(const std::string& instruction, const std::string& response)>;

inline RankingResult ranking_accuracy(const InstructionScorer& scorer, const std::vector<TrainingExample>& data,
                                      const SpecificitySetting& setting, std::uint64_t seed) {
  RankingResult r;
  std::size_t right = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    const auto pair = build_specificity_pair(ex.instruction, setting, derive_seed(seed, i));
    RankingRecord rec;
    rec.example_id = ex.id;
    rec.logps_w = scorer(pair.x_w, ex.y).sum_logp;
    rec.logps_l = scorer(pair.x_l, ex.y).sum_logp;
    rec.correct = rec.logps_w > rec.logps_l;
    right += rec.correct ? 1 : 0;
    r.records.push_back(std::move(rec));
  }
  r.accuracy = data.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(data.size());
  return r;
}

struct RankingRow {
  std::string setting;
  double accuracy = 0.0;
  std::size_t n = 0;
};

/// All five settings, in table order.
inline std::vector<RankingRow> ranking_table(const InstructionScorer& scorer, const std::vector<TrainingExample>& data,
                                             std::uint64_t seed) {
  std::vector<RankingRow> rows;
  for (const auto& s : SpecificitySetting::all()) {
    rows.push_back({s.name(), ranking_accuracy(scorer, data, s, seed).accuracy, data.size()});
  }
  return rows;
}

/// Scorer backed by the tiny model: word-tokenizes both strings with `vocab`.
inline InstructionScorer tiny_lm_scorer(const ModelParams& m, const Vocab& vocab) {
  return [&m, &vocab](const std::string& instruction, const std::string& response) {
    return seq_logprob(m, vocab.encode(instruction), vocab.encode(response));
  };
}

// --- LLM judge ------------------------------------------------------------------

inline constexpr std::string_view kJudgeTemplate =
    "You will be given a text and its corresponding instruction, which contains the text's main goal and a "
    "constraint. Determine whether the text satisfies the constraint (not the main goal). You should return your "
    "answer (Yes/No/Partially) along with your reasoning and a quote in the text that supports your reasoning (the "
    "quote should not contain any double quotation marks). Your answer should contain 3 fields: \"answer\", "
    "\"reasoning\", and \"quote\". DO NOT output anything else other than the response, which starts with \"<<\" "
    "and ending with \">>\".\n\n"
    "# Example 1: The text satisfies the constraint.\n"
    "- Main goal: Write a first-person narrative describing a serene morning in a remote village.\n"
    "- Constraint: You must not use the letter 'e'.\n"
    "- Text: Dawn cracks with a yawn. On a hill, a hut sits, tranquil. Bright light climbs, casting gold on grass. "
    "In this calm morning, air is cool, birds sing softly. I stroll down paths, sipping hot cocoa, watching day "
    "start. Such is this dawn's charm, lifting spirits, as world awakens.\n"
    "- Your response: <<\"answer\": \"Yes\", \"reasoning\": \"The text does not contain any 'e', which satisfies "
    "the constraint.\", \"quote\": \"Dawn cracks with a yawn...\">>\n\n"
    "# Example 2: The text does not satisfy the constraint.\n"
    "- Main goal: Compose a narrative that takes place entirely within the confines of a single, small room.\n"
    "- Constraint: The story must not include any direct interaction or communication with other characters, "
    "whether through dialogue, notes, or any form of digital communication.\n"
    "- Text: Sarah sat quietly in the corner of the small, dimly lit library room, surrounded by towering "
    "bookshelves filled with dusty volumes. Her focus was broken by a soft knock on the door. \"Sarah, are you "
    "there?\" her friend Emily's voice called out gently from the other side. Sarah, startled yet relieved to hear "
    "a familiar voice, responded, \"Yes, I'm here, Emily. Just give me a moment, I'll open the door.\" They spent "
    "the next hour talking about the books Sarah had been reading and their plans for the weekend, making the "
    "small room feel a lot less lonely.\n"
    "- Your response: <<\"answer\": \"No\", \"reasoning\": \"The text includes a dialogue between Sarah and "
    "Emily, while the constraint specifies that the story must not include any direct interaction.\", \"quote\": "
    "\"'Sarah, are you there?' her friend Emily's voice called out gently from the other side. Sarah, startled yet "
    "relieved to hear a familiar voice, responded, 'Yes, I'm here, Emily. Just give me a moment, I'll open the "
    "door.'\">>\n\n"
    "# Example 3: The text only satisfies part of the constraint.\n"
    "- Main goal: Write a short story in which the protagonist meets an animal.\n"
    "- Constraint: The walk should take place in a public space in a summer day.\n"
    "- Text: As John strolled through the park one crisp autumn morning, he noticed the usual red and gold leaves "
    "blanketing the path. Today, however, a stray dog, thin and shivering, approached him. He hesitated, then "
    "offered his hand for the dog to sniff. It flinched at first, but soon warmed up to him. As they walked "
    "together, John wondered if he should take it home or find its owner.\n"
    "- Your response: <<\"answer\": \"Partially\", \"reasoning\": \"The text mentions that the character walks "
    "in a park, which satisifies the constraint that the setting is a public place. However, the walk takes place "
    "in an autumn morning, which violates the constraint that the walk takes place in a summer day\", \"quote\": "
    "\"As John strolled through the park one crisp autumn morning, he noticed the usual red and gold leaves "
    "blanketing the path...\">>\n\n"
    "# Instruction\n"
    "## Main Goal\n"
    "{goal}\n\n"
    "## Constraint\n"
    "{constraint}\n\n"
    "# Text\n"
    "{text}\n\n"
    "DO NOT output anything else other than the response, which starts with \"<<\" and ending with \">>\".\n\n"
    "# Your response\n";

inline std::string render_judge_prompt(std::string_view goal, std::string_view constraint, std::string_view text) {
  return eval_detail::fill_slots(kJudgeTemplate, {{"{goal}", goal}, {"{constraint}", constraint}, {"{text}", text}});
}

enum class Verdict { kYes, kNo, kPartially };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kYes: return "yes";
    case Verdict::kNo: return "no";
    case Verdict::kPartially: return "partially";
  }
  return "?";
}

inline std::optional<Verdict> parse_verdict(std::string_view s) {
  const auto t = ascii_lower(detail::trim(s));
  if (t == "yes") return Verdict::kYes;
  if (t == "no") return Verdict::kNo;
  if (t == "partially") return Verdict::kPartially;
  return std::nullopt;
}

struct JudgeVerdict {
  Verdict answer = Verdict::kNo;
  std::string reasoning;
  std::string quote;
};

namespace eval_detail {

/// Value of `key` inside a "<<...>>" body, quoted with ' or ". The value
/// runs to the first matching quote followed by a comma or the end of the
/// body, so apostrophes inside double-quoted values are harmless.
inline std::optional<std::string> delimited_field(std::string_view body, std::string_view key) {
  for (char kq : {'"', '\''}) {
    const std::string needle = std::string(1, kq) + std::string(key) + std::string(1, kq);
    std::size_t at = body.find(needle);
    while (at != std::string_view::npos) {
      std::size_t p = at + needle.size();
      while (p < body.size() && std::isspace(static_cast<unsigned char>(body[p]))) ++p;
      if (p < body.size() && body[p] == ':') {
        ++p;
        while (p < body.size() && std::isspace(static_cast<unsigned char>(body[p]))) ++p;
        if (p < body.size() && (body[p] == '"' || body[p] == '\'')) {
          const char vq = body[p];
          const std::size_t start = p + 1;
          for (std::size_t e = start; e < body.size(); ++e) {
            if (body[e] != vq) continue;
            std::size_t r = e + 1;
            while (r < body.size() && std::isspace(static_cast<unsigned char>(body[r]))) ++r;
            if (r == body.size() || body[r] == ',' || body[r] == '}') return std::string(body.substr(start, e - start));
          }
        }
      }
      at = body.find(needle, at + 1);
    }
  }
  return std::nullopt;
}

}  // namespace eval_detail

/// Extracts the "<<...>>" object; tolerant of single quotes and prose
/// around the delimiters.
inline JudgeVerdict parse_judge_response(std::string_view resp) {
  const auto open = resp.find("<<");
  const auto close = open == std::string_view::npos ? open : resp.rfind(">>");
  if (open == std::string_view::npos || close == std::string_view::npos || close < open + 2) {
    throw Error(ErrorCode::kMalformedVerdict, "no <<...>> object in judge response");
  }
  const std::string_view body = resp.substr(open + 2, close - open - 2);
  std::optional<std::string> answer, reasoning, quote;
  const auto j = nlohmann::json::parse("{" + std::string(body) + "}", nullptr, false);
  if (j.is_object()) {
    auto get = [&](const char* k) -> std::optional<std::string> {
      if (j.contains(k) && j[k].is_string()) return j[k].get<std::string>();
      return std::nullopt;
    };
    answer = get("answer");
    reasoning = get("reasoning");
    quote = get("quote");
  } else {
    answer = eval_detail::delimited_field(body, "answer");
    reasoning = eval_detail::delimited_field(body, "reasoning");
    quote = eval_detail::delimited_field(body, "quote");
  }
  if (!answer || !reasoning || !quote) throw Error(ErrorCode::kMalformedVerdict, "judge response lacks a field");
  const auto v = parse_verdict(*answer);
  if (!v) throw Error(ErrorCode::kMalformedVerdict, "unknown answer: " + *answer);
  return {*v, std::move(*reasoning), std::move(*quote)};
}

struct JudgeItem {
  std::string unit_id;
  std::string goal;
  std::string constraint;
  std::string text;
};

enum class JudgeStatus { kOk, kRefusal, kMalformed, kError };

inline std::string to_string(JudgeStatus s) {
  switch (s) {
    case JudgeStatus::kOk: return "ok";
    case JudgeStatus::kRefusal: return "refusal";
    case JudgeStatus::kMalformed: return "malformed";
    case JudgeStatus::kError: return "error";
  }
  return "?";
}

struct JudgeOutcome {
  std::string unit_id;
  JudgeStatus status = JudgeStatus::kError;
  std::optional<JudgeVerdict> verdict;
  std::string message;
};

/// Refusals and unparseable replies are recorded per item, not thrown.
inline std::vector<JudgeOutcome> run_judge(Gateway& gw, const std::string& model, const std::vector<JudgeItem>& items,
                                           std::size_t max_in_flight = 4, int max_tokens = 1024) {
  std::vector<LlmRequest> reqs;
  for (const auto& it : items) {
    LlmRequest r;
    r.model = model;
    r.prompt = render_judge_prompt(it.goal, it.constraint, it.text);
    r.max_tokens = max_tokens;
    reqs.push_back(std::move(r));
  }
  const auto replies = gw.batch_complete(reqs, max_in_flight);
  std::vector<JudgeOutcome> out(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& o = out[i];
    o.unit_id = items[i].unit_id;
    if (!replies[i].ok()) {
      o.status = replies[i].error == ErrorCode::kRefusal ? JudgeStatus::kRefusal : JudgeStatus::kError;
      o.message = replies[i].message;
      continue;
    }
    try {
      o.verdict = parse_judge_response(replies[i].response->text);
      o.status = JudgeStatus::kOk;
    } catch (const Error& e) {
      o.status = JudgeStatus::kMalformed;
      o.message = e.what();
    }
  }
  return out;
}

// --- agreement ------------------------------------------------------------------

struct AgreementMatrix {
  std::size_t n = 0;
  double agree = 0.0;
  double partial_vs_no = 0.0;
  double sat_vs_partial = 0.0;
  double sat_vs_no = 0.0;
};

inline AgreementMatrix agreement_matrix(const std::vector<Verdict>& a, const std::vector<Verdict>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kLengthMismatch, "label lists differ in length");
  if (a.empty()) throw Error(ErrorCode::kInvalidArgument, "agreement over zero items");
  AgreementMatrix m;
  m.n = a.size();
  auto is = [](Verdict x, Verdict y, Verdict p, Verdict q) { return (x == p && y == q) || (x == q && y == p); };
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) {
      m.agree += 1;
    } else if (is(a[i], b[i], Verdict::kPartially, Verdict::kNo)) {
      m.partial_vs_no += 1;
    } else if (is(a[i], b[i], Verdict::kYes, Verdict::kPartially)) {
      m.sat_vs_partial += 1;
    } else {
      m.sat_vs_no += 1;
    }
  }
  const auto n = static_cast<double>(m.n);
  m.agree /= n;
  m.partial_vs_no /= n;
  m.sat_vs_partial /= n;
  m.sat_vs_no /= n;
  return m;
}

inline AgreementMatrix agreement_matrix(const std::vector<JudgeVerdict>& judge, const std::vector<Verdict>& human) {
  std::vector<Verdict> j;
  j.reserve(judge.size());
  for (const auto& v : judge) j.push_back(v.answer);
  return agreement_matrix(j, human);
}

struct SatisfactionFractions {
  double satisfied = 0.0;
  double partial = 0.0;
  double not_satisfied = 0.0;
};

struct SatisfactionTally {
  std::vector<SatisfactionFractions> per_annotator;
  SatisfactionFractions mean;
};

/// labels[a][c]: annotator a's verdict on constraint c.
inline SatisfactionTally satisfaction_tally(const std::vector<std::vector<Verdict>>& labels) {
  if (labels.empty() || labels.front().empty()) throw Error(ErrorCode::kInvalidArgument, "no labels to tally");
  SatisfactionTally t;
  for (const auto& row : labels) {
    if (row.size() != labels.front().size()) {
      throw Error(ErrorCode::kLengthMismatch, "annotators labeled different numbers of constraints");
    }
    SatisfactionFractions f;
    for (Verdict v : row) {
      (v == Verdict::kYes ? f.satisfied : v == Verdict::kPartially ? f.partial : f.not_satisfied) += 1;
    }
    const auto n = static_cast<double>(row.size());
    f.satisfied /= n;
    f.partial /= n;
    f.not_satisfied /= n;
    t.per_annotator.push_back(f);
  }
  const auto k = static_cast<double>(t.per_annotator.size());
  for (const auto& f : t.per_annotator) {
    t.mean.satisfied += f.satisfied / k;
    t.mean.partial += f.partial / k;
    t.mean.not_satisfied += f.not_satisfied / k;
  }
  return t;
}

/// Units x annotators; nullopt marks a missing label.
template <typename Label>
using LabelMatrix = std::vector<std::vector<std::optional<Label>>>;

/// Nominal Krippendorff's alpha from the coincidence matrix. Units with
/// fewer than two labels are not pairable and are ignored. When every
/// pairable value falls in one category there is no expected disagreement
/// and the result is 1.
template <typename Label>
double krippendorff_alpha(const LabelMatrix<Label>& units) {
  std::map<Label, std::size_t> cat;
  for (const auto& u : units) {
    for (const auto& v : u) {
      if (v) cat.try_emplace(*v, cat.size());
    }
  }
  const std::size_t k = cat.size();
  std::vector<double> o(k * k, 0.0);
  std::vector<std::size_t> counts(k);
  for (const auto& u : units) {
    std::fill(counts.begin(), counts.end(), 0);
    std::size_t m = 0;
    for (const auto& v : u) {
      if (v) {
        ++counts[cat.at(*v)];
        ++m;
      }
    }
    if (m < 2) continue;
    const double w = 1.0 / static_cast<double>(m - 1);
    for (std::size_t c = 0; c < k; ++c) {
      if (!counts[c]) continue;
      for (std::size_t d = 0; d < k; ++d) {
        const double pairs = c == d ? static_cast<double>(counts[c] * (counts[c] - 1))
                                    : static_cast<double>(counts[c] * counts[d]);
        o[c * k + d] += pairs * w;
      }
    }
  }
  std::vector<double> nc(k, 0.0);
  double n = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < k; ++d) nc[c] += o[c * k + d];
    n += nc[c];
  }
  if (n == 0.0) throw Error(ErrorCode::kNoPairableValues, "no unit has two or more labels");
  double observed = 0.0, expected = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t d = 0; d < k; ++d) {
      if (c == d) continue;
      observed += o[c * k + d];
      expected += nc[c] * nc[d];
    }
  }
  if (expected == 0.0) return 1.0;
  return 1.0 - (n - 1.0) * observed / expected;
}

struct Annotation {
  std::string unit_id;
  std::string annotator_id;
  std::string label;
};

inline std::vector<Annotation> read_annotations_jsonl(std::istream& in) {
  std::vector<Annotation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("unit_id").get<std::string>(), j.at("annotator_id").get<std::string>(),
                     j.at("label").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, "annotation line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

struct AnnotationTable {
  std::vector<std::string> units;       // sorted
  std::vector<std::string> annotators;  // sorted
  LabelMatrix<std::string> labels;      // [unit][annotator]
};

inline AnnotationTable tabulate(const std::vector<Annotation>& rows) {
  std::set<std::string> us, as;
  for (const auto& r : rows) {
    us.insert(r.unit_id);
    as.insert(r.annotator_id);
  }
  AnnotationTable t{{us.begin(), us.end()}, {as.begin(), as.end()}, {}};
  t.labels.assign(t.units.size(), std::vector<std::optional<std::string>>(t.annotators.size()));
  auto pos = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), s) - v.begin());
  };
  for (const auto& r : rows) {
    auto& cell = t.labels[pos(t.units, r.unit_id)][pos(t.annotators, r.annotator_id)];
    if (cell && *cell != r.label) {
      throw Error(ErrorCode::kInvalidArgument, "conflicting labels for " + r.unit_id + "/" + r.annotator_id);
    }
    cell = r.label;
  }
  return t;
}

/// Most frequent label of a unit; nullopt on ties or when empty.
inline std::optional<std::string> majority_label(const std::vector<std::optional<std::string>>& unit) {
  std::map<std::string, std::size_t> c;
  for (const auto& v : unit) {
    if (v) ++c[*v];
  }
  std::optional<std::string> best;
  std::size_t best_n = 0;
  bool tie = false;
  for (const auto& [label, n] : c) {
    if (n > best_n) {
      best = label;
      best_n = n;
      tie = false;
    } else if (n == best_n) {
      tie = true;
    }
  }
  return tie ? std::nullopt : best;
}

// --- preference prompt ----------------------------------------------------------

inline constexpr std::string_view kPreferenceTemplate =
    "You are an expert instruction rater. You will be given a text and two instructions, one of which is used to "
    "generate the text. Read through the text carefully, then determine which of the two instructions was used to "
    "generate the text. Answer only with \"1\" if the first instruction is correct, or \"2\" if the second "
    "instruction is correct. DO NOT give any reasoning.\n\n"
    "### Text:\n"
    "{text}\n\n"
    "### First Instruction:\n"
    "{ins1}\n\n"
    "### Second Instruction:\n"
    "{ins2}\n\n"
    "Which instruction is correct? Answer only with \"1\" if the first instruction is correct, or \"2\" if the "
    "second instruction is correct. DO NOT give any reasoning.\n\n"
    "Your response:\n";

inline std::string render_preference_prompt(std::string_view text, std::string_view ins1, std::string_view ins2) {
  return eval_detail::fill_slots(kPreferenceTemplate, {{"{text}", text}, {"{ins1}", ins1}, {"{ins2}", ins2}});
}

/// Log-probability (or logit) of `token` as the next output after `prompt`.
using TokenScorer = std::function<double(const std::string& prompt, const std::string& token)>;

struct PreferenceRecord {
  std::string example_id;
  bool correct_first = false;
  double score_1 = 0.0;
  double score_2 = 0.0;
  bool chose_first = false;
  bool correct = false;
};

struct PreferenceResult {
  double preference_accuracy = 0.0;
  double first_position_rate = 0.0;
  std::vector<PreferenceRecord> records;
};

/// Exactly ceil(n/2) examples put the gold instruction first; which ones is
/// a seeded shuffle. "1" wins only on a strictly higher score.
inline PreferenceResult preference_prompt_eval(const TokenScorer& scorer, const std::vector<TrainingExample>& data,
                                               std::uint64_t seed) {
  std::vector<char> first(data.size(), 0);
  for (std::size_t i = 0; i < (data.size() + 1) / 2; ++i) first[i] = 1;
  Rng rng(seed);
  stable_shuffle(first, rng);
  PreferenceResult r;
  std::size_t right = 0, chose_first = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    PreferenceRecord rec;
    rec.example_id = ex.id;
    rec.correct_first = first[i] != 0;
    const auto prompt = rec.correct_first ? render_preference_prompt(ex.y, ex.x_w, ex.x_l)
                                          : render_preference_prompt(ex.y, ex.x_l, ex.x_w);
    rec.score_1 = scorer(prompt, "1");
    rec.score_2 = scorer(prompt, "2");
    rec.chose_first = rec.score_1 > rec.score_2;
    rec.correct = rec.chose_first == rec.correct_first;
    right += rec.correct ? 1 : 0;
    chose_first += rec.chose_first ? 1 : 0;
    r.records.push_back(std::move(rec));
  }
  if (!data.empty()) {
    const auto n = static_cast<double>(data.size());
    r.preference_accuracy = static_cast<double>(right) / n;
    r.first_position_rate = static_cast<double>(chose_first) / n;
  }
  return r;
}

}  // namespace suri
