// suri: command-line front end for the corpus filter, dataset builder,
// trainer, gradient check, evaluation metrics and reports.
//
// Exit codes: 0 success, 1 operational error, 2 validation or gradcheck
// failure.

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "suri/corpus_filter.hpp"
#include "suri/dataset_builder.hpp"
#include "suri/eval_harness.hpp"
#include "suri/iorpo_core.hpp"
#include "suri/llm_gateway.hpp"
#include "suri/tiny_lm.hpp"
#include "suri/toy_task.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace suri;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOperational = 1;
constexpr int kExitValidation = 2;

// --- config file ----------------------------------------------------------------

/// JSON config: nested objects name subcommands, leaves name options.
///   {"train": {"lambda": 0.4, "epochs": 2}, "eval": {"ranking": {"seed": 3}}}
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError("config is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, v] : obj.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(v, p, out);
        continue;
      }
      if (v.is_null()) continue;
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (v.is_array()) {
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(v));
      }
      out.push_back(std::move(item));
    }
  }
};

// --- small I/O helpers ----------------------------------------------------------

void require_exists(const std::string& path, const char* what) {
  if (path.empty()) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " is required");
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, std::string(what) + " not found: " + path);
}

std::uint64_t require_seed(const std::optional<std::uint64_t>& seed) {
  if (!seed) throw Error(ErrorCode::kInvalidArgument, "--seed is required for this command");
  return *seed;
}

fs::path prepare_out(const std::string& dir) {
  if (dir.empty()) throw Error(ErrorCode::kInvalidArgument, "--out is required");
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const std::string& path) {
  require_exists(path, "JSON file");
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
}

/// Parses every non-blank line of a JSONL file.
std::vector<json> read_jsonl_objects(const std::string& path) {
  require_exists(path, "JSONL file");
  std::istringstream in(read_file(path));
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(2) << '\n'; }

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

/// A directory of text files (one document each, sorted by name), a JSONL
/// file of {"id", "text", "source_domain"?, "source"?}, or a single file.
std::vector<CorpusDocument> read_corpus(const std::string& path) {
  require_exists(path, "corpus");
  std::vector<CorpusDocument> docs;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) docs.push_back({f.filename().string(), read_file(f), std::nullopt});
    return docs;
  }
  if (fs::path(path).extension() == ".jsonl") {
    for (const auto& j : read_jsonl_objects(path)) {
      CorpusDocument d;
      try {
        d.id = j.at("id").get<std::string>();
        d.text = j.at("text").get<std::string>();
        if (j.contains("source_domain")) d.source_domain = j["source_domain"].get<std::string>();
        if (j.contains("source")) d.source = j["source"].get<std::string>();
      } catch (const json::exception& e) {
        throw Error(ErrorCode::kParse, path + ": " + e.what());
      }
      docs.push_back(std::move(d));
    }
    return docs;
  }
  docs.push_back({fs::path(path).filename().string(), read_file(path), std::nullopt});
  return docs;
}

struct Generation {
  std::string example_id;
  std::string text;
};

std::vector<Generation> read_generations(const std::string& path) {
  std::vector<Generation> out;
  for (const auto& j : read_jsonl_objects(path)) {
    try {
      out.push_back({j.at("example_id").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, path + ": " + e.what());
    }
  }
  return out;
}

// --- provider options -----------------------------------------------------------

struct ProviderArgs {
  std::string kind = "mock";
  std::string mock_file;
  std::string base_url;
  std::string api_key_env;
  std::string cache_dir;
  std::size_t max_in_flight = 4;

  void add_to(CLI::App* app) {
    app->add_option("--provider", kind, "mock, openai or anthropic")
        ->check(CLI::IsMember({"mock", "openai", "anthropic"}))
        ->capture_default_str();
    app->add_option("--mock-file", mock_file, "canned responses for the mock provider (JSON)");
    app->add_option("--base-url", base_url, "API base URL");
    app->add_option("--api-key-env", api_key_env, "environment variable holding the API key");
    app->add_option("--cache-dir", cache_dir, "response cache directory");
    app->add_option("--max-in-flight", max_in_flight, "concurrent requests")->capture_default_str();
  }

  [[nodiscard]] std::unique_ptr<Gateway> gateway() const {
    std::shared_ptr<Provider> p;
    if (kind == "mock") {
      require_exists(mock_file, "--mock-file");
      p = MockProvider::from_file(mock_file);
    } else {
      HttpProvider::Config c;
      c.style = HttpProvider::parse_style(kind);
      const bool openai = c.style == HttpProvider::Style::kOpenAI;
      c.base_url = !base_url.empty() ? base_url : openai ? "https://api.openai.com" : "https://api.anthropic.com";
      c.api_key_env = !api_key_env.empty() ? api_key_env : openai ? "OPENAI_API_KEY" : "ANTHROPIC_API_KEY";
      p = std::make_shared<HttpProvider>(c);
    }
    Gateway::Options o;
    if (!cache_dir.empty()) o.cache_dir = fs::path(cache_dir);
    return std::make_unique<Gateway>(p, o);
  }
};

// --- filter ---------------------------------------------------------------------

struct FilterArgs {
  std::string corpus, out, lists, thresholds;
  unsigned threads = 1;
};

int cmd_filter(const FilterArgs& a) {
  const auto docs = read_corpus(a.corpus);
  BlocklistBundle lists;
  if (!a.lists.empty()) {
    require_exists(a.lists, "--lists");
    lists = BlocklistBundle::load_dir(a.lists);
  }
  FilterConfig cfg;
  if (!a.thresholds.empty()) cfg.update_from_json(read_json_file(a.thresholds));
  const auto verdicts = filter_corpus(docs, lists, cfg, a.threads);
  const auto out = prepare_out(a.out);

  auto accepted = open_out(out / "accepted.jsonl");
  auto decisions = open_out(out / "decisions.csv");
  decisions << "id,kept,quality_pass,topical_keep,failed_rules,word_count,unigram_entropy,frac_no_alpha,"
               "curly_bracket_ratio,lorem_ipsum_ratio,javascript_line_hits";
  for (std::size_t n = kDupeNgramMin; n <= kDupeNgramMax; ++n) decisions << ",dupe_" << n << "gram";
  for (std::size_t n = kTopNgramMin; n <= kTopNgramMax; ++n) decisions << ",top_" << n << "gram";
  decisions << ",blocklist_word_hits,ut1_category_hit,news_domain_hit,religious_word_frac\n";

  std::size_t kept = 0, quality_fail = 0, topical_drop = 0;
  std::map<std::string, std::size_t> rule_failures;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& d = docs[i];
    const auto& v = verdicts[i];
    const auto& s = v.decision.signals;
    if (v.kept()) {
      ++kept;
      json j = {{"id", d.id}, {"text", d.text}, {"source", d.source}};
      if (d.source_domain) j["source_domain"] = *d.source_domain;
      accepted << j.dump() << '\n';
    }
    if (!v.decision.accepted) ++quality_fail;
    if (v.decision.accepted && !v.topical_keep) ++topical_drop;
    for (const auto& r : v.decision.failed_rules) ++rule_failures[r];
    decisions << csv(d.id) << ',' << v.kept() << ',' << v.decision.accepted << ',' << v.topical_keep << ','
              << csv(join(v.decision.failed_rules, ";")) << ',' << s.word_count << ',' << num(s.unigram_entropy)
              << ',' << num(s.frac_no_alpha) << ',' << num(s.curly_bracket_ratio) << ','
              << num(s.lorem_ipsum_ratio) << ',' << s.javascript_line_hits;
    for (std::size_t n = kDupeNgramMin; n <= kDupeNgramMax; ++n) {
      auto it = s.dupe_ngram_fracs.find(n);
      decisions << ',' << (it == s.dupe_ngram_fracs.end() ? "" : num(it->second));
    }
    for (std::size_t n = kTopNgramMin; n <= kTopNgramMax; ++n) {
      auto it = s.top_ngram_fracs.find(n);
      decisions << ',' << (it == s.top_ngram_fracs.end() ? "" : num(it->second));
    }
    decisions << ',' << s.blocklist_word_hits << ',' << s.ut1_category_hit << ',' << s.news_domain_hit << ','
              << num(s.religious_word_frac) << '\n';
  }
  json summary = {{"documents", docs.size()},
                  {"accepted", kept},
                  {"rejected", docs.size() - kept},
                  {"failed_quality", quality_fail},
                  {"topical_dropped", topical_drop},
                  {"rule_failures", rule_failures}};
  write_json(out / "summary.json", summary);
  std::cout << "documents " << docs.size() << ", accepted " << kept << ", rejected " << docs.size() - kept << '\n';
  return kExitOk;
}

// --- build ----------------------------------------------------------------------

struct BuildArgs {
  std::string docs, out, source = "redpajama";
  std::optional<std::uint64_t> seed;
  std::size_t synthetic = 0;
  BuildOptions opts;
  ProviderArgs provider;
};

void write_split(const fs::path& out, std::vector<TrainingExample> examples, std::uint64_t seed) {
  write_jsonl(out / "dataset.jsonl", examples);
  const auto split = split_dataset(std::move(examples), seed);
  write_jsonl(out / "train.jsonl", split.train);
  write_jsonl(out / "val.jsonl", split.val);
  write_jsonl(out / "test.jsonl", split.test);
}

int cmd_build(const BuildArgs& a) {
  const auto seed = require_seed(a.seed);
  if (a.synthetic > 0) {
    const auto out = prepare_out(a.out);
    auto examples = toy::make_dataset(a.synthetic, seed);
    const auto sizes = split_sizes(examples.size());
    write_split(out, std::move(examples), seed);
    write_json(out / "summary.json", {{"examples", a.synthetic},
                                      {"skipped", 0},
                                      {"train", sizes.train},
                                      {"val", sizes.val},
                                      {"test", sizes.test}});
    std::cout << "synthetic examples " << a.synthetic << '\n';
    return kExitOk;
  }
  const Source source = parse_source(a.source);
  std::vector<SourceDocument> docs;
  for (auto& d : read_corpus(a.docs)) {
    Source s = source;
    if (d.source != "redpajama") s = parse_source(d.source);
    docs.push_back({d.id, std::move(d.text), s});
  }
  auto gw = a.provider.gateway();
  BuildOptions opts = a.opts;
  opts.max_in_flight = a.provider.max_in_flight;
  const auto out = prepare_out(a.out);
  auto result = build_examples(docs, *gw, opts);
  auto skipped = open_out(out / "skipped.csv");
  skipped << "id,reason\n";
  for (const auto& s : result.skipped) {
    skipped << csv(s.id) << ',' << csv(s.reason) << '\n';
    std::cerr << "skipped " << s.id << ": " << s.reason << '\n';
  }
  const auto sizes = split_sizes(result.examples.size());
  const std::size_t n = result.examples.size();
  write_split(out, std::move(result.examples), seed);
  write_json(out / "summary.json", {{"examples", n},
                                    {"skipped", result.skipped.size()},
                                    {"train", sizes.train},
                                    {"val", sizes.val},
                                    {"test", sizes.test}});
  std::cout << "examples " << n << ", skipped " << result.skipped.size() << '\n';
  return kExitOk;
}

// --- train ----------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, init, objective = "iorpo", optimizer = "sgd", norm = "mean";
  std::optional<std::uint64_t> seed;
  double lambda = 0.4, learning_rate = 5e-5, pretrain_lr = 0.5;
  int epochs = 2, log_every = 10, pretrain_epochs = 0;
  std::size_t context_window = 8, embed_dim = 16, hidden_dim = 32, max_vocab = 5000;
};

int cmd_train(const TrainArgs& a) {
  const auto seed = require_seed(a.seed);
  require_exists(a.data, "--data");
  const auto examples = read_jsonl(a.data);
  if (examples.empty()) throw Error(ErrorCode::kInvalidArgument, "training set is empty");

  ModelParams init;
  Vocab vocab;
  if (!a.init.empty()) {
    require_exists(a.init, "--init");
    auto ck = load_checkpoint(a.init);
    if (!ck.vocab) throw Error(ErrorCode::kInvalidArgument, "checkpoint has no vocabulary");
    init = std::move(ck.params);
    vocab = std::move(*ck.vocab);
  } else {
    std::vector<std::string> texts;
    for (const auto& ex : examples) {
      texts.push_back(ex.x_w);
      texts.push_back(ex.x_l);
      texts.push_back(ex.y);
    }
    vocab = Vocab::build(texts, a.max_vocab);
    // Answer tokens for the preference probe.
    vocab.add("1");
    vocab.add("2");
    init = init_params({vocab.size(), a.context_window, a.embed_dim, a.hidden_dim}, derive_seed(seed, 0));
  }
  std::vector<EncodedTriplet> data;
  for (const auto& ex : examples) data.push_back(encode_example(vocab, ex));
  if (a.pretrain_epochs > 0) {
    std::vector<TokenIds> text;
    for (const auto& ex : data) {
      text.push_back(ex.x_w);
      text.push_back(ex.y);
    }
    train_lm(init, text, a.pretrain_lr, a.pretrain_epochs, derive_seed(seed, 1));
  }

  TrainerConfig cfg;
  cfg.lambda = a.lambda;
  cfg.learning_rate = a.learning_rate;
  cfg.epochs = a.epochs;
  cfg.seed = seed;
  cfg.log_every = a.log_every;
  cfg.optimizer = a.optimizer == "adam" ? Optimizer::kAdam : Optimizer::kSgd;
  cfg.norm = a.norm == "sequence" ? ProbNorm::kSequence : ProbNorm::kMeanToken;
  const auto obj = a.objective == "sft" ? Objective::kSft : Objective::kIorpo;
  const auto result = train(data, init, cfg, obj);

  const auto out = prepare_out(a.out);
  save_checkpoint(out / "model.ckpt", result.params, &vocab);
  {
    auto f = open_out(out / "curve.csv");
    write_curve_csv(f, result.curve);
  }
  open_out(out / "curve.svg") << plot::curve_svg(result.curve);
  const auto& first = result.curve.front();
  const auto& last = result.curve.back();
  double drift = 0.0;
  for (const auto& p : result.curve) {
    drift = std::max({drift, std::abs(p.logps_xw - first.logps_xw), std::abs(p.logps_xl - first.logps_xl)});
  }
  write_json(out / "train_summary.json",
             {{"objective", a.objective},
              {"examples", data.size()},
              {"vocab_size", vocab.size()},
              {"parameters", result.params.theta.size()},
              {"steps", last.step},
              {"initial_total", first.total},
              {"final_total", last.total},
              {"initial_gap", first.logps_y_xw - first.logps_y_xl},
              {"final_gap", last.logps_y_xw - last.logps_y_xl},
              {"max_instruction_drift", drift}});
  std::cout << "steps " << last.step << ", loss " << num(first.total) << " -> " << num(last.total) << '\n';
  return kExitOk;
}

// --- gradcheck ------------------------------------------------------------------

struct GradcheckArgs {
  std::string out;
  std::uint64_t seed = 0;
  int instances = 20;
  double tolerance = 1e-6;
  bool inject_sign_flip = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.instances <= 0) throw Error(ErrorCode::kInvalidArgument, "--instances must be positive");
  const ModelDims dims{7, 3, 4, 5};
  struct Suite {
    std::string name;
    std::map<std::string, double> worst;  // block -> max relative error
  };
  std::vector<Suite> suites{{"tiny_lm_logprob", {}}, {"iorpo", {}}, {"iorpo_sequence_norm", {}}, {"sft", {}}};
  Rng rng(a.seed);
  auto ids = [&](std::size_t len) {
    TokenIds t(len);
    for (auto& x : t) x = static_cast<TokenId>(uniform_below(rng, dims.vocab_size));
    return t;
  };
  auto record = [](Suite& s, const GradCheckReport& r) {
    for (const auto& b : r.blocks) s.worst[b.name] = std::max(s.worst[b.name], b.rel_error);
  };
  for (int i = 0; i < a.instances; ++i) {
    ModelParams m = zero_params(dims);
    for (auto& x : m.theta) x = uniform_range(rng, -0.8, 0.8);
    EncodedTriplet ex;
    ex.x_w = ids(1 + uniform_below(rng, 4));
    ex.x_l = ex.x_w;
    ex.x_l[uniform_below(rng, ex.x_l.size())] = static_cast<TokenId>(uniform_below(rng, dims.vocab_size));
    ex.y = ids(1 + uniform_below(rng, 5));
    const double lambda = uniform_range(rng, 0.1, 2.0);

    const auto lp = seq_logprob_grad(m, ex.x_w, ex.y);
    record(suites[0], gradcheck(m, lp.grad, [&](const ModelParams& p) { return seq_logprob(p, ex.x_w, ex.y).sum_logp; }));

    auto g = iorpo_grad(m, ex, lambda).grad;
    if (a.inject_sign_flip) {
      // Negates the odds-ratio part of the gradient.
      const auto sft = sft_loss_grad(m, ex).grad;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] = 2.0 * sft[k] - g[k];
    }
    record(suites[1], gradcheck(m, g, [&](const ModelParams& p) { return iorpo_loss(p, ex, lambda).total; }));

    const auto gs = iorpo_grad(m, ex, lambda, ProbNorm::kSequence).grad;
    record(suites[2], gradcheck(m, gs, [&](const ModelParams& p) {
             return iorpo_loss(p, ex, lambda, ProbNorm::kSequence).total;
           }));

    const auto sg = sft_loss_grad(m, ex).grad;
    record(suites[3], gradcheck(m, sg, [&](const ModelParams& p) { return sft_loss_grad(p, ex).loss; }));
  }

  bool pass = true;
  std::ostringstream table;
  table << "suite,block,max_rel_error,pass\n";
  for (const auto& s : suites) {
    for (const auto& [block, err] : s.worst) {
      const bool ok = err < a.tolerance;
      pass = pass && ok;
      table << s.name << ',' << block << ',' << num(err) << ',' << (ok ? "true" : "false") << '\n';
    }
  }
  std::cout << table.str();
  std::cout << "gradcheck " << (pass ? "PASS" : "FAIL") << " (" << a.instances << " instances, tolerance "
            << a.tolerance << ")\n";
  if (!a.out.empty()) open_out(prepare_out(a.out) / "gradcheck.csv") << table.str();
  return pass ? kExitOk : kExitValidation;
}

// --- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string out, generations, data, checkpoint, scorer = "checkpoint", marker, setting, items, model = "gpt-4o",
                                                  annotations, judge, scheme = "word";
  std::optional<std::uint64_t> seed;
  std::size_t n = 5, min_count = kRepetitionMinCount, boundary = 2048;
  ProviderArgs provider;
};

int eval_length(const EvalArgs& a) {
  const auto gens = read_generations(a.generations);
  const Scheme scheme = a.scheme == "byte" ? Scheme::kByte : Scheme::kWordWhitespace;
  std::vector<std::string> texts;
  for (const auto& g : gens) texts.push_back(g.text);
  const auto s = length_stats(texts, scheme);
  const auto out = prepare_out(a.out);
  auto f = open_out(out / "length.csv");
  f << "example_id,tokens\n";
  for (const auto& g : gens) f << csv(g.example_id) << ',' << tokenize(g.text, scheme).size() << '\n';
  write_json(out / "length.json",
             {{"count", s.count}, {"mean", s.mean}, {"median", s.median}, {"p10", s.p10}, {"p90", s.p90}});
  std::cout << "mean " << num(s.mean) << ", median " << num(s.median) << '\n';
  return kExitOk;
}

int eval_repetition(const EvalArgs& a) {
  const auto gens = read_generations(a.generations);
  if (gens.empty()) throw Error(ErrorCode::kInvalidArgument, "no generations");
  const auto out = prepare_out(a.out);
  auto f = open_out(out / "repetition.csv");
  f << "example_id,tokens,flagged,repeated_ngrams,top_ngram,top_count,rate_before,rate_after\n";
  std::vector<TokenSeq> seqs;
  double before = 0, after = 0;
  for (const auto& g : gens) {
    auto seq = tokenize(g.text, Scheme::kWordWhitespace);
    const auto reps = detect_repetitions(seq, a.n, a.min_count);
    const auto rate = segmented_repetition_rate(seq, a.n, a.boundary, a.min_count);
    before += rate.before;
    after += rate.after;
    f << csv(g.example_id) << ',' << seq.size() << ',' << (reps.empty() ? "false" : "true") << ',' << reps.size()
      << ',' << (reps.empty() ? "" : csv(join(reps[0].ngram, " "))) << ',' << (reps.empty() ? 0 : reps[0].count)
      << ',' << num(rate.before) << ',' << num(rate.after) << '\n';
    seqs.push_back(std::move(seq));
  }
  const auto k = static_cast<double>(gens.size());
  const double flag = repetition_flag_rate(seqs, a.n, a.min_count);
  write_json(out / "repetition.json", {{"texts", gens.size()},
                                       {"n", a.n},
                                       {"min_count", a.min_count},
                                       {"boundary", a.boundary},
                                       {"flag_rate", flag},
                                       {"mean_rate_before", before / k},
                                       {"mean_rate_after", after / k}});
  std::cout << "flag rate " << num(flag) << '\n';
  return kExitOk;
}

struct LoadedModel {
  ModelParams params;
  Vocab vocab;
};

LoadedModel load_model(const std::string& path) {
  require_exists(path, "--checkpoint");
  auto ck = load_checkpoint(path);
  if (!ck.vocab) throw Error(ErrorCode::kInvalidArgument, "checkpoint has no vocabulary");
  return {std::move(ck.params), std::move(*ck.vocab)};
}

int eval_ranking(const EvalArgs& a) {
  const auto seed = require_seed(a.seed);
  require_exists(a.data, "--data");
  const auto data = read_jsonl(a.data);
  std::optional<LoadedModel> model;
  InstructionScorer scorer;
  if (a.scorer == "checkpoint") {
    model = load_model(a.checkpoint);
    scorer = tiny_lm_scorer(model->params, model->vocab);
  } else {
    // Fixture scorer: every occurrence of the marker costs one nat.
    if (a.marker.empty()) throw Error(ErrorCode::kInvalidArgument, "--marker is required for the marker scorer");
    scorer = [marker = a.marker](const std::string& x, const std::string& y) {
      std::size_t hits = 0;
      for (auto p = x.find(marker); p != std::string::npos; p = x.find(marker, p + marker.size())) ++hits;
      return SequenceScore{-static_cast<double>(hits) - 1.0, std::max<std::size_t>(1, y.size())};
    };
  }
  std::vector<SpecificitySetting> settings = SpecificitySetting::all();
  if (!a.setting.empty()) settings = {SpecificitySetting::parse(a.setting)};
  const auto out = prepare_out(a.out);
  auto table = open_out(out / "ranking.csv");
  auto records = open_out(out / "ranking_records.csv");
  table << "setting,accuracy,n\n";
  records << "setting,example_id,logps_w,logps_l,correct\n";
  json summary = json::object();
  for (const auto& s : settings) {
    const auto r = ranking_accuracy(scorer, data, s, seed);
    table << csv(s.name()) << ',' << num(r.accuracy) << ',' << data.size() << '\n';
    for (const auto& rec : r.records) {
      records << csv(s.name()) << ',' << csv(rec.example_id) << ',' << num(rec.logps_w) << ',' << num(rec.logps_l) << ','
              << (rec.correct ? "true" : "false") << '\n';
    }
    summary[s.name()] = r.accuracy;
    std::cout << s.name() << ' ' << num(r.accuracy) << '\n';
  }
  write_json(out / "ranking.json", summary);
  return kExitOk;
}

int eval_judge(const EvalArgs& a) {
  std::vector<JudgeItem> items;
  for (const auto& j : read_jsonl_objects(a.items)) {
    try {
      items.push_back({j.at("unit_id").get<std::string>(), j.at("goal").get<std::string>(),
                       j.at("constraint").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, a.items + ": " + e.what());
    }
  }
  auto gw = a.provider.gateway();
  const auto outcomes = run_judge(*gw, a.model, items, a.provider.max_in_flight);
  const auto out = prepare_out(a.out);
  auto f = open_out(out / "judge.jsonl");
  std::map<std::string, std::size_t> status_counts, answer_counts;
  for (const auto& o : outcomes) {
    json j = {{"unit_id", o.unit_id}, {"status", to_string(o.status)}};
    if (o.verdict) {
      j["answer"] = to_string(o.verdict->answer);
      j["reasoning"] = o.verdict->reasoning;
      j["quote"] = o.verdict->quote;
      ++answer_counts[to_string(o.verdict->answer)];
    }
    if (!o.message.empty()) j["message"] = o.message;
    ++status_counts[to_string(o.status)];
    f << j.dump() << '\n';
  }
  write_json(out / "judge_summary.json",
             {{"items", items.size()}, {"status", status_counts}, {"answers", answer_counts}});
  std::cout << "judged " << items.size() << ", ok " << status_counts["ok"] << ", refusal " << status_counts["refusal"]
            << ", malformed " << status_counts["malformed"] << '\n';
  return kExitOk;
}

int eval_agreement(const EvalArgs& a) {
  require_exists(a.annotations, "--annotations");
  std::istringstream in(read_file(a.annotations));
  const auto table = tabulate(read_annotations_jsonl(in));
  const auto out = prepare_out(a.out);
  json summary = {{"units", table.units.size()}, {"annotators", table.annotators}};
  summary["krippendorff_alpha"] = krippendorff_alpha(table.labels);

  bool verdict_labels = true;
  for (const auto& u : table.labels) {
    for (const auto& v : u) verdict_labels = verdict_labels && (!v || parse_verdict(*v));
  }
  summary["verdict_labels"] = verdict_labels;
  auto f = open_out(out / "agreement.csv");
  f << "comparison,n,agree,partial_vs_no,sat_vs_partial,sat_vs_no\n";
  auto row = [&](const std::string& name, const std::vector<Verdict>& x, const std::vector<Verdict>& y) {
    if (x.empty()) return;
    const auto m = agreement_matrix(x, y);
    f << csv(name) << ',' << m.n << ',' << num(m.agree) << ',' << num(m.partial_vs_no) << ','
      << num(m.sat_vs_partial) << ',' << num(m.sat_vs_no) << '\n';
  };
  if (verdict_labels) {
    const std::size_t k = table.annotators.size();
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t q = p + 1; q < k; ++q) {
        std::vector<Verdict> x, y;
        for (const auto& u : table.labels) {
          if (u[p] && u[q]) {
            x.push_back(*parse_verdict(*u[p]));
            y.push_back(*parse_verdict(*u[q]));
          }
        }
        row(table.annotators[p] + " vs " + table.annotators[q], x, y);
      }
    }
    if (!a.judge.empty()) {
      std::map<std::string, Verdict> judged;
      for (const auto& j : read_jsonl_objects(a.judge)) {
        if (j.value("status", "ok") != "ok" || !j.contains("answer")) continue;
        if (auto v = parse_verdict(j["answer"].get<std::string>())) judged[j.at("unit_id").get<std::string>()] = *v;
      }
      std::vector<Verdict> x, y;
      for (std::size_t u = 0; u < table.units.size(); ++u) {
        auto it = judged.find(table.units[u]);
        const auto maj = majority_label(table.labels[u]);
        if (it == judged.end() || !maj) continue;
        x.push_back(it->second);
        y.push_back(*parse_verdict(*maj));
      }
      row("judge vs human majority", x, y);
      summary["judge_compared_units"] = x.size();
    }
    // Satisfaction over units every annotator labeled.
    std::vector<std::vector<Verdict>> per(table.annotators.size());
    for (const auto& u : table.labels) {
      if (!std::all_of(u.begin(), u.end(), [](const auto& v) { return v.has_value(); })) continue;
      for (std::size_t p = 0; p < u.size(); ++p) per[p].push_back(*parse_verdict(*u[p]));
    }
    if (!per.empty() && !per.front().empty()) {
      const auto t = satisfaction_tally(per);
      json s = json::object();
      for (std::size_t p = 0; p < t.per_annotator.size(); ++p) {
        const auto& fr = t.per_annotator[p];
        s[table.annotators[p]] = {{"satisfied", fr.satisfied}, {"partial", fr.partial}, {"not", fr.not_satisfied}};
      }
      summary["satisfaction"] = {{"per_annotator", s},
                                 {"mean",
                                  {{"satisfied", t.mean.satisfied},
                                   {"partial", t.mean.partial},
                                   {"not", t.mean.not_satisfied}}},
                                 {"units", per.front().size()}};
    }
  }
  write_json(out / "agreement.json", summary);
  std::cout << "krippendorff alpha " << num(summary["krippendorff_alpha"].get<double>()) << '\n';
  return kExitOk;
}

int eval_preference(const EvalArgs& a) {
  const auto seed = require_seed(a.seed);
  require_exists(a.data, "--data");
  const auto data = read_jsonl(a.data);
  const auto model = load_model(a.checkpoint);
  TokenScorer scorer = [&](const std::string& prompt, const std::string& token) {
    const TokenId id = model.vocab.id(token);
    if (id == kUnkId) throw Error(ErrorCode::kInvalidArgument, "answer token not in vocabulary: " + token);
    const auto probs = next_distribution(model.params, model.vocab.encode(prompt));
    return std::log(probs[static_cast<std::size_t>(id)]);
  };
  const auto r = preference_prompt_eval(scorer, data, seed);
  const auto out = prepare_out(a.out);
  auto f = open_out(out / "preference.csv");
  f << "example_id,correct_first,score_1,score_2,chose_first,correct\n";
  for (const auto& rec : r.records) {
    f << csv(rec.example_id) << ',' << rec.correct_first << ',' << num(rec.score_1) << ',' << num(rec.score_2) << ','
      << rec.chose_first << ',' << rec.correct << '\n';
  }
  write_json(out / "preference.json", {{"examples", data.size()},
                                       {"preference_accuracy", r.preference_accuracy},
                                       {"first_position_rate", r.first_position_rate}});
  std::cout << "preference accuracy " << num(r.preference_accuracy) << ", first position rate "
            << num(r.first_position_rate) << '\n';
  return kExitOk;
}

// --- report ---------------------------------------------------------------------

struct ReportArgs {
  std::string curve, data, out;
  std::optional<std::uint64_t> seed;
  std::size_t n = 10;
};

int report_curve(const ReportArgs& a) {
  require_exists(a.curve, "--curve");
  std::istringstream in(read_file(a.curve));
  const auto curve = read_curve_csv(in);
  open_out(prepare_out(a.out) / "curve.svg") << plot::curve_svg(curve);
  std::cout << "points " << curve.size() << '\n';
  return kExitOk;
}

int report_review(const ReportArgs& a) {
  const auto seed = require_seed(a.seed);
  require_exists(a.data, "--data");
  const auto items = sample_for_review(read_jsonl(a.data), a.n, seed);
  auto f = open_out(prepare_out(a.out) / "review_sample.csv");
  f << "example_id,constraint_index,original,corrupted,reviewer_verdict\n";
  for (const auto& it : items) {
    f << csv(it.example_id) << ',' << it.constraint_index << ',' << csv(it.original) << ',' << csv(it.corrupted)
      << ",\n";
  }
  std::cout << "sampled " << items.size() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"suri: instruction-following data, training and evaluation toolkit"};
  app.require_subcommand(1);
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file (command-line flags take precedence)");

  int rc = kExitOk;
  std::function<int()> action;

  FilterArgs fa;
  auto* filter = app.add_subcommand("filter", "apply the quality filters to a corpus");
  filter->add_option("--corpus", fa.corpus, "directory of documents, JSONL file, or single file");
  filter->add_option("--out", fa.out, "output directory");
  filter->add_option("--lists", fa.lists, "directory with blocklists");
  filter->add_option("--thresholds", fa.thresholds, "JSON file of threshold overrides keyed by rule tag");
  filter->add_option("--threads", fa.threads, "worker threads")->capture_default_str();
  filter->callback([&] { action = [&] { return cmd_filter(fa); }; });

  BuildArgs ba;
  auto* build = app.add_subcommand("build", "build the instruction dataset");
  build->add_option("--docs", ba.docs, "documents (directory, JSONL or file)");
  build->add_option("--out", ba.out, "output directory");
  build->add_option("--seed", ba.seed, "split seed");
  build->add_option("--source", ba.source, "default document source")->capture_default_str();
  build->add_option("--synthetic", ba.synthetic, "write N synthetic toy examples instead of calling a provider");
  build->add_option("--backtranslation-model", ba.opts.backtranslation_model)->capture_default_str();
  build->add_option("--corruption-model", ba.opts.corruption_model)->capture_default_str();
  build->add_option("--label-model", ba.opts.label_model)->capture_default_str();
  build->add_option("--max-tokens", ba.opts.max_tokens)->capture_default_str();
  build->add_flag("--label-constraints", ba.opts.label_constraints, "classify constraint type and scope");
  ba.provider.add_to(build);
  build->callback([&] { action = [&] { return cmd_build(ba); }; });

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "train the tiny model");
  trainc->add_option("--data", ta.data, "training JSONL");
  trainc->add_option("--out", ta.out, "output directory");
  trainc->add_option("--init", ta.init, "initial checkpoint");
  trainc->add_option("--seed", ta.seed, "seed");
  trainc->add_option("--objective", ta.objective)->check(CLI::IsMember({"iorpo", "sft"}))->capture_default_str();
  trainc->add_option("--optimizer", ta.optimizer)->check(CLI::IsMember({"sgd", "adam"}))->capture_default_str();
  trainc->add_option("--norm", ta.norm, "probability normalization")
      ->check(CLI::IsMember({"mean", "sequence"}))
      ->capture_default_str();
  trainc->add_option("--lambda", ta.lambda)->capture_default_str();
  trainc->add_option("--learning-rate,--lr", ta.learning_rate)->capture_default_str();
  trainc->add_option("--epochs", ta.epochs)->capture_default_str();
  trainc->add_option("--log-every", ta.log_every)->capture_default_str();
  trainc->add_option("--pretrain-epochs", ta.pretrain_epochs, "unconditional LM epochs before fine-tuning")
      ->capture_default_str();
  trainc->add_option("--pretrain-lr", ta.pretrain_lr)->capture_default_str();
  trainc->add_option("--context-window", ta.context_window)->capture_default_str();
  trainc->add_option("--embed-dim", ta.embed_dim)->capture_default_str();
  trainc->add_option("--hidden-dim", ta.hidden_dim)->capture_default_str();
  trainc->add_option("--max-vocab", ta.max_vocab)->capture_default_str();
  trainc->callback([&] { action = [&] { return cmd_train(ta); }; });

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
  grad->add_option("--out", ga.out, "optional output directory for the CSV report");
  grad->add_option("--seed", ga.seed)->capture_default_str();
  grad->add_option("--instances", ga.instances)->capture_default_str();
  grad->add_option("--tolerance", ga.tolerance)->capture_default_str();
  grad->add_flag("--inject-sign-flip", ga.inject_sign_flip)->group("");
  grad->callback([&] { action = [&] { return cmd_gradcheck(ga); }; });

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluation metrics");
  eval->require_subcommand(1);
  auto with_out = [&](CLI::App* c) { c->add_option("--out", ea.out, "output directory"); };
  auto* len = eval->add_subcommand("length", "token length statistics");
  with_out(len);
  len->add_option("--generations", ea.generations, "JSONL of {example_id, text}");
  len->add_option("--scheme", ea.scheme)->check(CLI::IsMember({"word", "byte"}))->capture_default_str();
  len->callback([&] { action = [&] { return eval_length(ea); }; });
  auto* rep = eval->add_subcommand("repetition", "n-gram repetition metrics");
  with_out(rep);
  rep->add_option("--generations", ea.generations, "JSONL of {example_id, text}");
  rep->add_option("--n", ea.n)->capture_default_str();
  rep->add_option("--min-count", ea.min_count)->capture_default_str();
  rep->add_option("--boundary", ea.boundary)->capture_default_str();
  rep->callback([&] { action = [&] { return eval_repetition(ea); }; });
  auto* rank = eval->add_subcommand("ranking", "ranking accuracy over specificity settings");
  with_out(rank);
  rank->add_option("--data", ea.data, "dataset JSONL");
  rank->add_option("--checkpoint", ea.checkpoint, "model checkpoint");
  rank->add_option("--scorer", ea.scorer)->check(CLI::IsMember({"checkpoint", "marker"}))->capture_default_str();
  rank->add_option("--marker", ea.marker, "substring penalized by the marker scorer");
  rank->add_option("--setting", ea.setting, "single setting such as (1,1); default all five");
  rank->add_option("--seed", ea.seed);
  rank->callback([&] { action = [&] { return eval_ranking(ea); }; });
  auto* judge = eval->add_subcommand("judge", "LLM judge of constraint satisfaction");
  with_out(judge);
  judge->add_option("--items", ea.items, "JSONL of {unit_id, goal, constraint, text}");
  judge->add_option("--model", ea.model)->capture_default_str();
  ea.provider.add_to(judge);
  judge->callback([&] { action = [&] { return eval_judge(ea); }; });
  auto* agree = eval->add_subcommand("agreement", "annotator agreement statistics");
  with_out(agree);
  agree->add_option("--annotations", ea.annotations, "JSONL of {unit_id, annotator_id, label}");
  agree->add_option("--judge", ea.judge, "judge.jsonl to compare against the human majority");
  agree->callback([&] { action = [&] { return eval_agreement(ea); }; });
  auto* pref = eval->add_subcommand("preference", "two-instruction preference prompt probe");
  with_out(pref);
  pref->add_option("--data", ea.data, "dataset JSONL");
  pref->add_option("--checkpoint", ea.checkpoint, "model checkpoint");
  pref->add_option("--seed", ea.seed);
  pref->callback([&] { action = [&] { return eval_preference(ea); }; });

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "reports and review material");
  report->require_subcommand(1);
  auto* rcurve = report->add_subcommand("curve", "SVG plot of a training curve CSV");
  rcurve->add_option("--curve", ra.curve, "curve CSV");
  rcurve->add_option("--out", ra.out, "output directory");
  rcurve->callback([&] { action = [&] { return report_curve(ra); }; });
  auto* review = report->add_subcommand("review-sample", "sample corrupted constraints for manual review");
  review->add_option("--data", ra.data, "dataset JSONL");
  review->add_option("--out", ra.out, "output directory");
  review->add_option("--n", ra.n)->capture_default_str();
  review->add_option("--seed", ra.seed);
  review->callback([&] { action = [&] { return report_review(ra); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    app.exit(e);
    return kExitOperational;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    rc = action ? action() : kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = e.code() == ErrorCode::kInvalidArgument ? kExitValidation : kExitOperational;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    rc = kExitOperational;
  }
  return rc;
}
