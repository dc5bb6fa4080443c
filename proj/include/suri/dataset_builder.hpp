#pragma once

// Builds (x_w, x_l, y) triplets from long human-written texts: prompt
// rendering, response parsing, constraint labeling and selection, splitting,
// chat rendering and JSONL (de)serialization.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "suri/error.hpp"
#include "suri/llm_gateway.hpp"
#include "suri/rng.hpp"
#include "suri/textkit.hpp"

namespace suri {

enum class ConstraintType { kSemantic, kStylistic, kMixed };
enum class ConstraintScope { kBroad, kSpecific };
enum class Source { kChapterBreak, kBooks3, kRedPajama, kSynthetic };

inline std::string to_string(ConstraintType t) {
  switch (t) {
    case ConstraintType::kSemantic: return "semantic";
    case ConstraintType::kStylistic: return "stylistic";
    case ConstraintType::kMixed: return "mixed";
  }
  return "?";
}

inline std::string to_string(ConstraintScope s) { return s == ConstraintScope::kBroad ? "broad" : "specific"; }

inline std::string to_string(Source s) {
  switch (s) {
    case Source::kChapterBreak: return "chapterbreak";
    case Source::kBooks3: return "books3";
    case Source::kRedPajama: return "redpajama";
    case Source::kSynthetic: return "synthetic";
  }
  return "?";
}

inline std::optional<ConstraintType> parse_constraint_type(std::string_view s) {
  if (s == "semantic") return ConstraintType::kSemantic;
  if (s == "stylistic") return ConstraintType::kStylistic;
  if (s == "mixed") return ConstraintType::kMixed;
  return std::nullopt;
}

inline std::optional<ConstraintScope> parse_constraint_scope(std::string_view s) {
  if (s == "broad") return ConstraintScope::kBroad;
  if (s == "specific") return ConstraintScope::kSpecific;
  return std::nullopt;
}

inline Source parse_source(std::string_view s) {
  if (s == "chapterbreak") return Source::kChapterBreak;
  if (s == "books3") return Source::kBooks3;
  if (s == "redpajama") return Source::kRedPajama;
  if (s == "synthetic") return Source::kSynthetic;
  throw Error(ErrorCode::kParse, "unknown source: " + std::string(s));
}

struct Constraint {
  std::string text;
  std::optional<std::string> corrupted_text;
  std::optional<ConstraintType> ctype;
  std::optional<ConstraintScope> scope;

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

struct Instruction {
  std::string main_goal;
  std::vector<Constraint> constraints;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

inline constexpr std::size_t kMinResponseWords = 2048;
inline constexpr std::size_t kMaxResponseWords = 5024;

struct TrainingExample {
  std::string id;
  std::string x_w;
  std::string x_l;
  std::string y;
  Source source = Source::kRedPajama;
  Instruction instruction;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto nl = s.find('\n', start);
    if (nl == std::string_view::npos) nl = s.size();
    std::string line(s.substr(start, nl - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
    start = nl + 1;
  }
  return out;
}

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
}

/// Removes a single layer of markdown emphasis wrapping the whole string.
inline std::string strip_emphasis(std::string s) {
  for (std::string_view mark : {"**", "__", "*", "_"}) {
    if (s.size() >= 2 * mark.size() && s.starts_with(mark) && s.ends_with(mark)) {
      s = trim(s.substr(mark.size(), s.size() - 2 * mark.size()));
      break;
    }
  }
  return s;
}

/// If `line` is a section header named `name` (case-insensitive, optionally
/// decorated with '#', '*', '_' and a trailing ':'), returns any inline text
/// that follows the header.
inline std::optional<std::string> match_header(std::string_view line, std::string_view name) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == '#' || line[i] == '*' || line[i] == '_' || line[i] == ' ' || line[i] == '\t')) ++i;
  if (line.size() - i < name.size()) return std::nullopt;
  for (std::size_t k = 0; k < name.size(); ++k) {
    if (std::tolower(static_cast<unsigned char>(line[i + k])) != std::tolower(static_cast<unsigned char>(name[k]))) {
      return std::nullopt;
    }
  }
  i += name.size();
  // The name must end at a word boundary.
  if (i < line.size() && std::isalnum(static_cast<unsigned char>(line[i]))) return std::nullopt;
  bool saw_colon = false;
  while (i < line.size() && (line[i] == '*' || line[i] == '_' || line[i] == ':' || line[i] == ' ' || line[i] == '#' ||
                             line[i] == '\t')) {
    saw_colon = saw_colon || line[i] == ':';
    ++i;
  }
  std::string rest = trim(line.substr(i));
  // "Constraints are listed below" is prose, not a header.
  if (!saw_colon && !rest.empty()) return std::nullopt;
  return strip_emphasis(rest);
}

/// Strips a list marker ("-", "*", "•", "1.", "1)") and returns the item.
inline std::optional<std::string> match_bullet(std::string_view raw) {
  std::string line = trim(raw);
  std::string_view v = line;
  if (v.starts_with("- ") || v.starts_with("* ") || v.starts_with("+ ")) {
    v.remove_prefix(2);
  } else if (v.starts_with("\xe2\x80\xa2")) {  // bullet
    v.remove_prefix(3);
  } else {
    std::size_t d = 0;
    while (d < v.size() && std::isdigit(static_cast<unsigned char>(v[d]))) ++d;
    if (d == 0 || d + 1 >= v.size() || (v[d] != '.' && v[d] != ')') || v[d + 1] != ' ') return std::nullopt;
    v.remove_prefix(d + 2);
  }
  std::string item = strip_emphasis(trim(v));
  if (item.empty()) return std::nullopt;
  return item;
}

inline std::size_t word_count(std::string_view text) { return tokenize(text, Scheme::kWordWhitespace).size(); }

}  // namespace detail

/// Canonical wire form of an instruction:
///   "{main_goal}\n\nConstraints:\n- c1\n- c2"
inline std::string render_instruction(std::string_view main_goal, const std::vector<std::string>& constraints) {
  std::string s(main_goal);
  s += "\n\nConstraints:";
  for (const auto& c : constraints) {
    s += "\n- ";
    s += c;
  }
  return s;
}

/// x_w: gold constraint texts.
inline std::string render_gold(const Instruction& instr) {
  std::vector<std::string> cs;
  for (const auto& c : instr.constraints) cs.push_back(c.text);
  return render_instruction(instr.main_goal, cs);
}

/// x_l: corrupted text where present, gold text otherwise.
inline std::string render_corrupted(const Instruction& instr) {
  std::vector<std::string> cs;
  for (const auto& c : instr.constraints) cs.push_back(c.corrupted_text.value_or(c.text));
  return render_instruction(instr.main_goal, cs);
}

/// The answer format the backtranslation prompt asks for.
inline std::string render_backtranslation_response(const Instruction& instr) {
  std::string s = "Main Instruction: " + instr.main_goal + "\nConstraints:";
  for (const auto& c : instr.constraints) s += "\n- " + c.text;
  return s;
}

/// The answer format the corruption prompt asks for.
inline std::string render_corruption_response(const Instruction& instr) {
  std::string s = "Main Instruction: " + instr.main_goal + "\nConstraints:";
  for (const auto& c : instr.constraints) s += "\n- " + c.text + " \xe2\x86\x92 " + c.corrupted_text.value_or("");
  return s;
}

// ---------------------------------------------------------------------------
// Prompt templates. Placeholders: {text}, {instructions}, {constraint}.

inline constexpr std::string_view kBacktranslationTemplate =
    "Assume the author of the provided text followed a detailed set of instructions to produce their work. "
    "Your task is to infer what those original instructions may have been by composing your own set of "
    "instructions that could recreate key aspects of the given text.\n\n"
    "Your response must include:\n"
    "1. An overarching instruction under the \"Main Instruction\" section that summarizes the goal of the "
    "instructions.\n"
    "2. One bulleted list of specific constraints under the \"Constraints\" section that reflect the order of "
    "happenings/ideas in the original text. Constraints should focus on either stylistic elements (how something "
    "is communicated through tone, language, sentence structure), semantic elements (what topics, meanings, and "
    "concepts are included), or a combination of both. You should include specific elements from the text, but "
    "avoid using direct quotes. Aim for a fair balance of semantic, stylistic and mixed constraints.\n"
    "    - Examples of stylistic constraints are \"incorporate humor when discussing serious topics\" or \"use "
    "short, choppy sentences for emphasis.\"\n"
    "    - Examples of semantic constraints are \"describe a supportive mother and absent father\" or \"mention "
    "an impressionist painting with a leopard.\"\n"
    "    - Mixed constraints blend stylistic and semantic elements, like \"discuss impressionist art with an "
    "enthusiastic tone.\"\n\n"
    "### Document:\n"
    "{text}\n\n"
    "### Your response:\n";

inline constexpr std::string_view kCorruptionTemplate =
    "You are given an instruction text that includes a main instruction and a list of constraints. Your task is "
    "to make minimal edits to violate each constraint. Your resulting constraints should be coherent with one "
    "another and also with the main instruction.\n\n"
    "[Examples]\n"
    "Main Instruction: Write a story on the life and death of Bob, who is a run-of-the-mill blue-collar worker in "
    "Texas, USA.\n"
    "Constraints:\n"
    "- Use a first-person perspective that centers on the protagonist's perspective. \xe2\x86\x92 Use a third-person "
    "perspective that ensures a broad and neutral view of the narrative.\n"
    "- Include cliffhangers at the end of each chapter to encourage readers to continue reading. \xe2\x86\x92 Do not "
    "include cliffhangers at the end of each chapter to encourage smooth readings.\n\n"
    "[Provided Instruction]\n"
    "{instructions}\n\n"
    "When modifying the constraints, keep the following in mind:\n"
    "1. Ensure that your resulting constraints are coherent with one another and also with the main instruction. "
    "However, the original and modified constraints should be mutually exclusive and difficult to achieve "
    "simultaneously.\n"
    "2. Modify every constraint, but leave the main instruction unchanged.\n"
    "3. Your response should contain the original main instruction, followed by each original constraint and "
    "your minimally modified version. Format each constraint as: Original constraint \xe2\x86\x92 Your modified "
    "constraint.\n\n"
    "[Your response]\n";

// The first definition sentence below repeats "Stylistic constraints" where
// "Semantic constraints" is meant; kept as published.
inline constexpr std::string_view kTypeTemplate =
    "You are a helpful assistant. You are given a constraint that you need to determine if it is a stylistic, "
    "semantic, or mixed constraint. Stylistic constraint emphasizes stylistic elements (how something is "
    "communicated through tone, language, sentence structure). Stylistic constraints focus on semantic elements "
    "(what topics, meanings, and concepts are included). Mixed constraints include both stylistic and semantic "
    "elements.\n\n"
    "### Examples:\n"
    "Constraint: Incorporate humor when discussing the morbid, gut-wrenching scene of the protagonist's death. "
    "Use short, choppy sentences to create a sense of urgency and panic.\n"
    "Your response: Stylistic\n\n"
    "Constraint: The story must end with the protagonist's death in a car accident.\n"
    "Your response: Semantic\n\n"
    "Constraint: Using a first-person perspective, write a story on the life and death of Bob, a blue-collar "
    "worker in Texas, USA.\n"
    "Your response: Mixed\n\n"
    "Constraint: Include cliffhangers at the end of each chapter to encourage readers to continue reading.\n"
    "Your response: Stylistic\n\n"
    "### Constraints:\n"
    "Constraint: {constraint}\n\n"
    "### Your response:";

inline constexpr std::string_view kScopeTemplate =
    "You are a helpful assistant. You are given a constraint that you need to determine if it is a specific or "
    "broad constraint. Specific constraints focus on an element that can be found in a specific part of the "
    "text. Broad constraints focus on an element that can be found throughout the text.\n\n"
    "### Examples:\n"
    "Constraint: Throughout the narrative, use a first-person perspective that centers on the protagonist's "
    "perspective.\n"
    "Your response: Broad\n\n"
    "Constraint: Include cliffhangers at the end of the first chapter to encourage readers to continue reading.\n"
    "Your response: Specific\n\n"
    "Constraint: Introduce a new character in the middle of the story to add depth to the narrative.\n"
    "Your response: Specific\n\n"
    "Constraint: Include cliffhangers at the end of each chapter to encourage readers to continue reading.\n"
    "Your response: Broad\n\n"
    "### Constraints:\n"
    "Constraint: {constraint}\n\n"
    "### Your response:";

inline std::string fill_template(std::string_view tmpl, std::string_view placeholder, std::string_view value) {
  std::string s(tmpl);
  const auto pos = s.find(placeholder);
  if (pos != std::string::npos) s.replace(pos, placeholder.size(), value);
  return s;
}

inline std::string render_backtranslation_prompt(std::string_view y) {
  if (y.empty()) throw Error(ErrorCode::kInvalidArgument, "empty response text");
  return fill_template(kBacktranslationTemplate, "{text}", y);
}

inline std::string render_corruption_prompt(const Instruction& instr) {
  if (instr.constraints.empty()) throw Error(ErrorCode::kEmptyConstraints, "instruction has no constraints");
  return fill_template(kCorruptionTemplate, "{instructions}", render_gold(instr));
}

// ---------------------------------------------------------------------------

/// Response length policy: reject under kMinResponseWords, cut texts over
/// kMaxResponseWords at the last sentence end within the limit.
inline std::optional<std::string> truncate_response(std::string_view text) {
  struct Span {
    std::size_t begin, end;
  };
  std::vector<Span> words;
  {
    std::size_t pos = 0;
    std::optional<std::size_t> start;
    while (pos < text.size()) {
      const std::size_t at = pos;
      const char32_t c = utf8::next(text, pos);
      if (utf8::is_space(c)) {
        if (start) words.push_back({*start, at});
        start.reset();
      } else if (!start) {
        start = at;
      }
    }
    if (start) words.push_back({*start, text.size()});
  }
  if (words.size() < kMinResponseWords) return std::nullopt;
  if (words.size() <= kMaxResponseWords) return std::string(text);

  auto ends_sentence = [&](const Span& w) {
    std::string_view s = text.substr(w.begin, w.end - w.begin);
    // Allow closing quotes/brackets after the terminal mark.
    for (;;) {
      if (s.ends_with("\"") || s.ends_with("'") || s.ends_with(")") || s.ends_with("]")) {
        s.remove_suffix(1);
      } else if (s.ends_with("\xe2\x80\x9d") || s.ends_with("\xe2\x80\x99")) {  // ” ’
        s.remove_suffix(3);
      } else {
        break;
      }
    }
    return !s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?');
  };
  std::size_t keep = kMaxResponseWords;  // hard cut when no boundary exists
  for (std::size_t i = kMaxResponseWords; i-- > 0;) {
    if (ends_sentence(words[i])) {
      keep = i + 1;
      break;
    }
  }
  if (keep < kMinResponseWords) return std::nullopt;
  return std::string(text.substr(0, words[keep - 1].end));
}

/// Accepts the requested "Main Instruction / Constraints" layout and the
/// canonical wire form (goal paragraph, then a "Constraints:" header).
inline Instruction parse_backtranslation(std::string_view response) {
  const auto lines = detail::split_lines(response);
  enum class State { kPreamble, kGoal, kConstraints } state = State::kPreamble;
  bool saw_main = false, saw_constraints = false;
  std::vector<std::string> preamble, goal;
  Instruction instr;
  for (const auto& line : lines) {
    if (auto inline_goal = detail::match_header(line, "main instruction")) {
      saw_main = true;
      state = State::kGoal;
      goal.clear();
      if (!inline_goal->empty()) goal.push_back(*inline_goal);
      continue;
    }
    if (auto inline_c = detail::match_header(line, "constraints")) {
      saw_constraints = true;
      state = State::kConstraints;
      if (!inline_c->empty()) {
        if (auto b = detail::match_bullet(*inline_c)) instr.constraints.push_back({*b, {}, {}, {}});
      }
      continue;
    }
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    switch (state) {
      case State::kPreamble: preamble.push_back(detail::strip_emphasis(t)); break;
      case State::kGoal: goal.push_back(detail::strip_emphasis(t)); break;
      case State::kConstraints:
        if (auto b = detail::match_bullet(t)) instr.constraints.push_back({*b, {}, {}, {}});
        break;
    }
  }
  if (!saw_constraints) throw Error(ErrorCode::kMissingSection, "no Constraints section");
  const auto& g = saw_main ? goal : preamble;
  for (const auto& part : g) {
    if (!instr.main_goal.empty()) instr.main_goal += ' ';
    instr.main_goal += part;
  }
  if (instr.main_goal.empty()) throw Error(ErrorCode::kMissingSection, "no Main Instruction section");
  if (instr.constraints.empty()) throw Error(ErrorCode::kEmptyConstraints, "Constraints section has no items");
  return instr;
}

/// Pairs "original → modified" lines with `instr.constraints` in order.
inline Instruction parse_corruption(std::string_view response, const Instruction& instr) {
  std::vector<std::string> modified;
  for (const auto& raw : detail::split_lines(response)) {
    std::string line = detail::trim(raw);
    if (line.empty() || detail::match_header(line, "main instruction")) continue;
    std::size_t arrow = line.find("\xe2\x86\x92");
    std::size_t arrow_len = 3;
    if (arrow == std::string::npos) {
      arrow = line.find("->");
      arrow_len = 2;
    }
    if (arrow == std::string::npos) continue;
    std::string left = detail::trim(std::string_view(line).substr(0, arrow));
    if (auto b = detail::match_bullet(left)) left = *b;
    std::string right = detail::strip_emphasis(detail::trim(std::string_view(line).substr(arrow + arrow_len)));
    left = detail::strip_emphasis(left);
    if (left.empty() || right.empty()) throw Error(ErrorCode::kMalformedLine, "empty side in: " + line);
    if (left == right) throw Error(ErrorCode::kMalformedLine, "corruption identical to original: " + line);
    modified.push_back(std::move(right));
  }
  if (modified.size() != instr.constraints.size()) {
    throw Error(ErrorCode::kCountMismatch, "expected " + std::to_string(instr.constraints.size()) +
                                               " corrupted constraints, got " + std::to_string(modified.size()));
  }
  Instruction out = instr;
  for (std::size_t i = 0; i < modified.size(); ++i) {
    if (modified[i] == out.constraints[i].text) {
      throw Error(ErrorCode::kMalformedLine, "corruption identical to original: " + modified[i]);
    }
    out.constraints[i].corrupted_text = modified[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labeling

enum class LabelKind { kType, kScope };

inline std::string render_label_prompt(const Constraint& c, LabelKind kind) {
  return fill_template(kind == LabelKind::kType ? kTypeTemplate : kScopeTemplate, "{constraint}", c.text);
}

/// First word of a label answer, lowercased, markdown and punctuation removed.
inline std::string first_label_word(std::string_view answer) {
  std::size_t i = 0;
  while (i < answer.size() && !std::isalpha(static_cast<unsigned char>(answer[i]))) ++i;
  std::string w;
  while (i < answer.size() && std::isalpha(static_cast<unsigned char>(answer[i]))) {
    w += static_cast<char>(std::tolower(static_cast<unsigned char>(answer[i])));
    ++i;
  }
  return w;
}

inline Constraint apply_label(Constraint c, LabelKind kind, std::string_view answer) {
  const std::string w = first_label_word(answer);
  if (kind == LabelKind::kType) {
    auto t = parse_constraint_type(w);
    if (!t) throw Error(ErrorCode::kUnparseableLabel, "not a constraint type: " + std::string(answer));
    c.ctype = t;
  } else {
    auto s = parse_constraint_scope(w);
    if (!s) throw Error(ErrorCode::kUnparseableLabel, "not a constraint scope: " + std::string(answer));
    c.scope = s;
  }
  return c;
}

/// Greedy (temperature 0) labeling call.
inline Constraint classify_constraint(const Constraint& c, LabelKind kind, Gateway& llm, const std::string& model,
                                      int max_tokens = 16) {
  LlmRequest req{model, render_label_prompt(c, kind), 0.0, 1.0, max_tokens};
  return apply_label(c, kind, llm.complete(req).text);
}

struct DiversityReport {
  std::map<std::string, double> mean_fraction;
  std::size_t instructions_counted = 0;
  std::size_t unlabeled_constraints = 0;
};

/// Per-instruction label fractions averaged over instructions. Unlabeled
/// constraints are left out of the denominators and counted separately;
/// instructions with no labeled constraint are skipped.
inline DiversityReport diversity_report(const std::vector<Instruction>& instructions, LabelKind kind) {
  DiversityReport r;
  std::map<std::string, double> sums;
  for (const auto& instr : instructions) {
    std::map<std::string, double> counts;
    double labeled = 0;
    for (const auto& c : instr.constraints) {
      std::optional<std::string> label;
      if (kind == LabelKind::kType && c.ctype) label = to_string(*c.ctype);
      if (kind == LabelKind::kScope && c.scope) label = to_string(*c.scope);
      if (!label) {
        ++r.unlabeled_constraints;
        continue;
      }
      counts[*label] += 1;
      labeled += 1;
    }
    if (labeled == 0) continue;
    ++r.instructions_counted;
    for (const auto& [k, v] : counts) sums[k] += v / labeled;
  }
  for (const auto& [k, v] : sums) r.mean_fraction[k] = v / static_cast<double>(r.instructions_counted);
  return r;
}

// ---------------------------------------------------------------------------
// Selection, splitting, rendering

enum class SelectionMode { kSingle, kVarying };

inline Instruction select_constraints(const Instruction& instr, SelectionMode mode, std::uint64_t seed) {
  const std::size_t m = instr.constraints.size();
  if (m == 0) throw Error(ErrorCode::kEmptyConstraints, "instruction has no constraints");
  Rng rng(seed);
  Instruction out{instr.main_goal, {}};
  if (mode == SelectionMode::kSingle) {
    out.constraints.push_back(instr.constraints[uniform_below(rng, m)]);
    return out;
  }
  const std::size_t k = 1 + uniform_below(rng, m);
  for (std::size_t i : sample_sorted_indices(m, k, rng)) out.constraints.push_back(instr.constraints[i]);
  return out;
}

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

/// 50/25/25 by largest remainder; equal remainders favor the earlier split.
inline SplitSizes split_sizes(std::size_t n) {
  const std::size_t parts[3] = {2, 1, 1};  // quarters
  std::size_t size[3];
  std::size_t rem[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    size[i] = n * parts[i] / 4;
    rem[i] = n * parts[i] % 4;
    assigned += size[i];
  }
  int order[3] = {0, 1, 2};
  std::stable_sort(order, order + 3, [&](int a, int b) { return rem[a] > rem[b]; });
  for (int j = 0; assigned < n; ++j, ++assigned) ++size[order[j]];
  return {size[0], size[1], size[2]};
}

template <typename T>
struct Split {
  std::vector<T> train, val, test;
};

template <typename T>
Split<T> split_dataset(std::vector<T> items, std::uint64_t seed) {
  Rng rng(seed);
  stable_shuffle(items, rng);
  const auto s = split_sizes(items.size());
  Split<T> out;
  auto it = std::make_move_iterator(items.begin());
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(s.train));
  it += static_cast<std::ptrdiff_t>(s.train);
  out.val.assign(it, it + static_cast<std::ptrdiff_t>(s.val));
  it += static_cast<std::ptrdiff_t>(s.val);
  out.test.assign(it, std::make_move_iterator(items.end()));
  return out;
}

inline std::string render_chat(std::string_view instruction, std::optional<std::string_view> response) {
  std::string s = "<|user|>\n";
  s += instruction;
  s += "</s>\n\n<|assistant|>\n";
  if (response) {
    s += *response;
    s += "</s>";
  }
  return s;
}

/// Assembles an example, rendering x_w and x_l from `instr`.
inline TrainingExample make_example(std::string id, Source source, Instruction instr, std::string y) {
  if (instr.constraints.empty()) throw Error(ErrorCode::kEmptyConstraints, "example " + id + " has no constraints");
  for (const auto& c : instr.constraints) {
    if (c.text.empty()) throw Error(ErrorCode::kInvalidArgument, "example " + id + " has an empty constraint");
    if (c.corrupted_text && *c.corrupted_text == c.text) {
      throw Error(ErrorCode::kMalformedLine, "example " + id + " has an unchanged corruption");
    }
  }
  if (source != Source::kSynthetic) {
    const auto words = detail::word_count(y);
    if (words < kMinResponseWords || words > kMaxResponseWords) {
      throw Error(ErrorCode::kInvalidArgument,
                  "example " + id + " response has " + std::to_string(words) + " words, outside [2048, 5024]");
    }
  }
  TrainingExample ex;
  ex.id = std::move(id);
  ex.source = source;
  ex.x_w = render_gold(instr);
  ex.x_l = render_corrupted(instr);
  if (ex.x_w == ex.x_l) throw Error(ErrorCode::kInvalidArgument, "example " + ex.id + " has x_w == x_l");
  ex.y = std::move(y);
  ex.instruction = std::move(instr);
  return ex;
}

// ---------------------------------------------------------------------------
// JSONL

inline nlohmann::json to_json(const TrainingExample& ex) {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : ex.instruction.constraints) {
    cs.push_back({{"text", c.text},
                  {"corrupted", c.corrupted_text ? nlohmann::json(*c.corrupted_text) : nlohmann::json(nullptr)},
                  {"ctype", c.ctype ? nlohmann::json(to_string(*c.ctype)) : nlohmann::json(nullptr)},
                  {"scope", c.scope ? nlohmann::json(to_string(*c.scope)) : nlohmann::json(nullptr)}});
  }
  return {{"id", ex.id},     {"source", to_string(ex.source)}, {"main_goal", ex.instruction.main_goal},
          {"constraints", cs}, {"y", ex.y},                    {"x_w", ex.x_w},
          {"x_l", ex.x_l}};
}

inline TrainingExample example_from_json(const nlohmann::json& j) {
  try {
    TrainingExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.source = parse_source(j.at("source").get<std::string>());
    ex.instruction.main_goal = j.at("main_goal").get<std::string>();
    for (const auto& c : j.at("constraints")) {
      Constraint k;
      k.text = c.at("text").get<std::string>();
      auto opt_str = [&](const char* key) -> std::optional<std::string> {
        if (!c.contains(key) || c[key].is_null()) return std::nullopt;
        return c[key].get<std::string>();
      };
      k.corrupted_text = opt_str("corrupted");
      if (auto t = opt_str("ctype")) {
        k.ctype = parse_constraint_type(*t);
        if (!k.ctype) throw Error(ErrorCode::kParse, "unknown ctype " + *t);
      }
      if (auto s = opt_str("scope")) {
        k.scope = parse_constraint_scope(*s);
        if (!k.scope) throw Error(ErrorCode::kParse, "unknown scope " + *s);
      }
      ex.instruction.constraints.push_back(std::move(k));
    }
    ex.y = j.at("y").get<std::string>();
    ex.x_w = j.at("x_w").get<std::string>();
    ex.x_l = j.at("x_l").get<std::string>();
    return ex;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, e.what());
  }
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<TrainingExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& ex : examples) out << to_json(ex).dump() << '\n';
}

inline std::vector<TrainingExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  std::vector<TrainingExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

struct BuildOptions {
  std::string backtranslation_model = "gpt-4-0125-preview";
  std::string corruption_model = "gpt-4-0125-preview";
  std::string label_model = "mistral-7b-instruct-v0.2";
  int max_tokens = 4096;
  bool label_constraints = false;
  std::size_t max_in_flight = 4;
};

struct SourceDocument {
  std::string id;
  std::string text;
  Source source = Source::kRedPajama;
};

struct SkippedDocument {
  std::string id;
  std::string reason;
};

struct BuildResult {
  std::vector<TrainingExample> examples;  // sorted by id
  std::vector<SkippedDocument> skipped;   // sorted by id
};

inline LlmRequest backtranslation_request(const BuildOptions& o, std::string_view y) {
  return {o.backtranslation_model, render_backtranslation_prompt(y), 0.6, 0.9, o.max_tokens};
}

inline LlmRequest corruption_request(const BuildOptions& o, const Instruction& instr) {
  return {o.corruption_model, render_corruption_prompt(instr), 0.0, 0.0, o.max_tokens};
}

/// Length filter, backtranslation, corruption and optional labeling for every
/// document. Per-document failures land in `skipped`; the run continues.
inline BuildResult build_examples(const std::vector<SourceDocument>& docs, Gateway& llm, const BuildOptions& opts) {
  BuildResult result;
  struct Pending {
    const SourceDocument* doc;
    std::string y;
    Instruction instr;
  };
  std::vector<Pending> pending;
  for (const auto& d : docs) {
    std::optional<std::string> y = d.source == Source::kSynthetic ? std::optional<std::string>(d.text)
                                                                  : truncate_response(d.text);
    if (!y) {
      result.skipped.push_back({d.id, "response outside length range"});
      continue;
    }
    pending.push_back({&d, std::move(*y), {}});
  }

  std::vector<LlmRequest> reqs;
  for (const auto& p : pending) reqs.push_back(backtranslation_request(opts, p.y));
  auto bt = llm.batch_complete(reqs, opts.max_in_flight);
  std::vector<Pending> parsed;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (!bt[i].ok()) {
      result.skipped.push_back({pending[i].doc->id, "backtranslation: " + bt[i].message});
      continue;
    }
    try {
      pending[i].instr = parse_backtranslation(bt[i].response->text);
      parsed.push_back(std::move(pending[i]));
    } catch (const Error& e) {
      result.skipped.push_back({pending[i].doc->id, std::string("backtranslation: ") + e.what()});
    }
  }

  reqs.clear();
  for (const auto& p : parsed) reqs.push_back(corruption_request(opts, p.instr));
  auto cr = llm.batch_complete(reqs, opts.max_in_flight);
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    auto& p = parsed[i];
    try {
      if (!cr[i].ok()) throw Error(cr[i].error.value_or(ErrorCode::kTransport), cr[i].message);
      Instruction instr = parse_corruption(cr[i].response->text, p.instr);
      if (opts.label_constraints) {
        for (auto& c : instr.constraints) {
          c = classify_constraint(c, LabelKind::kType, llm, opts.label_model);
          c = classify_constraint(c, LabelKind::kScope, llm, opts.label_model);
        }
      }
      result.examples.push_back(make_example(p.doc->id, p.doc->source, std::move(instr), std::move(p.y)));
    } catch (const Error& e) {
      result.skipped.push_back({p.doc->id, std::string("corruption: ") + e.what()});
    }
  }
  auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  std::sort(result.examples.begin(), result.examples.end(), by_id);
  std::sort(result.skipped.begin(), result.skipped.end(), by_id);
  return result;
}

/// Re-renders an example keeping only a selected subset of its constraints.
inline TrainingExample with_selected_constraints(const TrainingExample& ex, SelectionMode mode, std::uint64_t seed) {
  TrainingExample out = ex;
  out.instruction = select_constraints(ex.instruction, mode, seed);
  out.x_w = render_gold(out.instruction);
  out.x_l = render_corrupted(out.instruction);
  return out;
}

struct ReviewItem {
  std::string example_id;
  std::size_t constraint_index = 0;
  std::string original;
  std::string corrupted;
};

/// Uniform sample (without replacement) of corrupted constraints for manual
/// faithfulness review.
inline std::vector<ReviewItem> sample_for_review(const std::vector<TrainingExample>& examples, std::size_t n,
                                                 std::uint64_t seed) {
  std::vector<ReviewItem> pool;
  for (const auto& ex : examples) {
    for (std::size_t i = 0; i < ex.instruction.constraints.size(); ++i) {
      const auto& c = ex.instruction.constraints[i];
      if (c.corrupted_text) pool.push_back({ex.id, i, c.text, *c.corrupted_text});
    }
  }
  Rng rng(seed);
  std::vector<ReviewItem> out;
  for (std::size_t i : sample_sorted_indices(pool.size(), std::min(n, pool.size()), rng)) out.push_back(pool[i]);
  return out;
}

}  // namespace suri
