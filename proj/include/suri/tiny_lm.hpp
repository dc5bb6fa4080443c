#pragma once

// Fixed-window MLP language model with exact log-probabilities and
// hand-written backpropagation. 64-bit floats throughout.
//
//   window (k ids, left-padded) -> concat embeddings (k*e)
//     -> tanh(x W1 + b1) (h) -> softmax(hid W2 + b2) (V)
//
// Parameters live in one flat vector, in the canonical order
//   E [V x e], W1 [k*e x h], b1 [h], W2 [h x V], b2 [V]
// each row-major.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "suri/error.hpp"
#include "suri/rng.hpp"
#include "suri/textkit.hpp"

namespace suri {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;

/// Word-level vocabulary. Ids 0 and 1 are reserved for padding and unknown.
class Vocab {
 public:
  Vocab() : tokens_{"<pad>", "<unk>"} {
    index_["<pad>"] = kPadId;
    index_["<unk>"] = kUnkId;
  }

  explicit Vocab(const std::vector<std::string>& tokens) : Vocab() {
    for (const auto& t : tokens) add(t);
  }

  /// Most frequent words first (ties lexicographic), up to max_size entries
  /// including the two reserved ones.
  static Vocab build(const std::vector<std::string>& texts, std::size_t max_size, std::size_t min_count = 1) {
    std::map<std::string, std::size_t> counts;
    for (const auto& t : texts) {
      for (const auto& w : tokenize(t, Scheme::kWordWhitespace).tokens) ++counts[w];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab v;
    for (const auto& [w, c] : ranked) {
      if (v.size() >= max_size || c < min_count) break;
      v.add(w);
    }
    return v;
  }

  TokenId add(const std::string& token) {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    index_[token] = id;
    return id;
  }

  [[nodiscard]] TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
  }

  [[nodiscard]] const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] std::size_t size() const { return tokens_.size(); }
  [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

  [[nodiscard]] TokenIds encode(std::string_view text) const {
    TokenIds ids;
    for (const auto& w : tokenize(text, Scheme::kWordWhitespace).tokens) ids.push_back(id(w));
    return ids;
  }

  [[nodiscard]] std::string decode(std::span<const TokenId> ids) const {
    std::string s;
    for (TokenId i : ids) {
      if (i == kPadId) continue;
      if (!s.empty()) s += ' ';
      s += token(i);
    }
    return s;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> index_;
};

struct ModelDims {
  std::size_t vocab_size = 0;
  std::size_t context_window = 8;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct ParamLayout {
  std::size_t embed, w1, b1, w2, b2, total;

  explicit ParamLayout(const ModelDims& d) {
    const std::size_t ke = d.context_window * d.embed_dim;
    embed = 0;
    w1 = embed + d.vocab_size * d.embed_dim;
    b1 = w1 + ke * d.hidden_dim;
    w2 = b1 + d.hidden_dim;
    b2 = w2 + d.hidden_dim * d.vocab_size;
    total = b2 + d.vocab_size;
  }

  struct Block {
    const char* name;
    std::size_t begin, end;
  };

  [[nodiscard]] std::vector<Block> blocks() const {
    return {{"embedding", embed, w1}, {"hidden_w", w1, b1}, {"hidden_b", b1, w2}, {"output_w", w2, b2},
            {"output_b", b2, total}};
  }
};

struct ModelParams {
  ModelDims dims;
  std::vector<double> theta;

  [[nodiscard]] ParamLayout layout() const { return ParamLayout(dims); }
  [[nodiscard]] std::size_t param_count() const { return theta.size(); }
};

inline void validate_dims(const ModelDims& d) {
  if (d.vocab_size < 2 || d.context_window == 0 || d.embed_dim == 0 || d.hidden_dim == 0) {
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must be positive and vocab_size >= 2");
  }
}

inline ModelParams zero_params(const ModelDims& dims) {
  validate_dims(dims);
  return {dims, std::vector<double>(ParamLayout(dims).total, 0.0)};
}

/// Weights uniform in (-0.1, 0.1), biases zero.
inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams m = zero_params(dims);
  const ParamLayout L(dims);
  Rng rng(seed);
  auto fill = [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) m.theta[i] = uniform_range(rng, -0.1, 0.1);
  };
  fill(L.embed, L.w1);
  fill(L.w1, L.b1);
  fill(L.w2, L.b2);
  return m;
}

struct SequenceScore {
  double sum_logp = 0.0;
  std::size_t n_tokens = 0;

  [[nodiscard]] double avg_logp() const { return sum_logp / static_cast<double>(n_tokens); }
};

namespace lm_detail {

/// Activations for one prediction.
struct Step {
  std::vector<TokenId> window;
  std::vector<double> hid;    // tanh output
  std::vector<double> logits;
  std::vector<double> probs;  // softmax
  double log_z = 0.0;         // log-sum-exp of logits
};

inline void check_ids(const ModelDims& d, std::span<const TokenId> ids) {
  for (TokenId t : ids) {
    if (t < 0 || static_cast<std::size_t>(t) >= d.vocab_size) {
      throw Error(ErrorCode::kTokenOutOfRange, "token id " + std::to_string(t) + " outside vocabulary of " +
                                                   std::to_string(d.vocab_size));
    }
  }
}

/// Last k ids of seq[0, pos), left-padded.
inline std::vector<TokenId> window_at(std::span<const TokenId> seq, std::size_t pos, std::size_t k) {
  std::vector<TokenId> w(k, kPadId);
  for (std::size_t s = 0; s < k; ++s) {
    // slot s holds seq[pos - k + s]
    if (pos + s >= k) w[s] = seq[pos + s - k];
  }
  return w;
}

/// Forward pass; fills hid, logits, probs and log_z.
inline void forward(const ModelParams& m, Step& st) {
  const auto& d = m.dims;
  const ParamLayout L(d);
  const double* th = m.theta.data();
  const std::size_t e = d.embed_dim, h = d.hidden_dim, V = d.vocab_size;
  st.hid.assign(th + L.b1, th + L.b1 + h);
  for (std::size_t s = 0; s < d.context_window; ++s) {
    const double* emb = th + L.embed + static_cast<std::size_t>(st.window[s]) * e;
    for (std::size_t j = 0; j < e; ++j) {
      const double x = emb[j];
      if (x == 0.0) continue;
      const double* row = th + L.w1 + (s * e + j) * h;
      for (std::size_t u = 0; u < h; ++u) st.hid[u] += x * row[u];
    }
  }
  for (auto& z : st.hid) z = std::tanh(z);
  st.logits.assign(th + L.b2, th + L.b2 + V);
  for (std::size_t u = 0; u < h; ++u) {
    const double a = st.hid[u];
    const double* row = th + L.w2 + u * V;
    for (std::size_t v = 0; v < V; ++v) st.logits[v] += a * row[v];
  }
  const double mx = *std::max_element(st.logits.begin(), st.logits.end());
  st.probs.resize(V);
  double z = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    st.probs[v] = std::exp(st.logits[v] - mx);
    z += st.probs[v];
  }
  for (auto& p : st.probs) p /= z;
  st.log_z = mx + std::log(z);
}

/// Log-softmax of the target, taken from the logits so tiny probabilities
/// keep full precision.
inline double log_prob_of(const Step& st, TokenId target) {
  return st.logits[static_cast<std::size_t>(target)] - st.log_z;
}

/// Accumulates d log p(target) / d theta into grad, scaled by `scale`.
inline void backward(const ModelParams& m, const Step& st, TokenId target, double scale, std::vector<double>& grad) {
  const auto& d = m.dims;
  const ParamLayout L(d);
  const double* th = m.theta.data();
  const std::size_t e = d.embed_dim, h = d.hidden_dim, V = d.vocab_size;
  std::vector<double> dlogits(V);
  for (std::size_t v = 0; v < V; ++v) dlogits[v] = -st.probs[v] * scale;
  dlogits[static_cast<std::size_t>(target)] += scale;

  std::vector<double> dhid(h, 0.0);
  for (std::size_t u = 0; u < h; ++u) {
    const double a = st.hid[u];
    const double* row = th + L.w2 + u * V;
    double* grow = grad.data() + L.w2 + u * V;
    double acc = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      grow[v] += a * dlogits[v];
      acc += row[v] * dlogits[v];
    }
    dhid[u] = acc;
  }
  for (std::size_t v = 0; v < V; ++v) grad[L.b2 + v] += dlogits[v];

  std::vector<double> dz(h);
  for (std::size_t u = 0; u < h; ++u) dz[u] = dhid[u] * (1.0 - st.hid[u] * st.hid[u]);
  for (std::size_t u = 0; u < h; ++u) grad[L.b1 + u] += dz[u];

  for (std::size_t s = 0; s < d.context_window; ++s) {
    const std::size_t tok = static_cast<std::size_t>(st.window[s]);
    const double* emb = th + L.embed + tok * e;
    double* gemb = grad.data() + L.embed + tok * e;
    for (std::size_t j = 0; j < e; ++j) {
      const double* row = th + L.w1 + (s * e + j) * h;
      double* grow = grad.data() + L.w1 + (s * e + j) * h;
      const double x = emb[j];
      double acc = 0.0;
      for (std::size_t u = 0; u < h; ++u) {
        grow[u] += x * dz[u];
        acc += row[u] * dz[u];
      }
      gemb[j] += acc;
    }
  }
}

inline TokenIds concat(std::span<const TokenId> a, std::span<const TokenId> b) {
  TokenIds s(a.begin(), a.end());
  s.insert(s.end(), b.begin(), b.end());
  return s;
}

}  // namespace lm_detail

/// Next-token distribution after the given prefix.
inline std::vector<double> next_distribution(const ModelParams& m, std::span<const TokenId> prefix) {
  lm_detail::check_ids(m.dims, prefix);
  lm_detail::Step st;
  st.window = lm_detail::window_at(prefix, prefix.size(), m.dims.context_window);
  lm_detail::forward(m, st);
  return st.probs;
}

/// Teacher-forced log-probability of `target` following `context`.
inline SequenceScore seq_logprob(const ModelParams& m, std::span<const TokenId> context,
                                 std::span<const TokenId> target) {
  if (target.empty()) throw Error(ErrorCode::kEmptyTarget, "target sequence is empty");
  lm_detail::check_ids(m.dims, context);
  lm_detail::check_ids(m.dims, target);
  const TokenIds seq = lm_detail::concat(context, target);
  SequenceScore sc;
  lm_detail::Step st;
  for (std::size_t t = 0; t < target.size(); ++t) {
    st.window = lm_detail::window_at(seq, context.size() + t, m.dims.context_window);
    lm_detail::forward(m, st);
    sc.sum_logp += lm_detail::log_prob_of(st, target[t]);
  }
  sc.n_tokens = target.size();
  return sc;
}

struct ScoreWithGrad {
  SequenceScore score;
  std::vector<double> grad;  // d sum_logp / d theta
};

inline ScoreWithGrad seq_logprob_grad(const ModelParams& m, std::span<const TokenId> context,
                                      std::span<const TokenId> target) {
  if (target.empty()) throw Error(ErrorCode::kEmptyTarget, "target sequence is empty");
  lm_detail::check_ids(m.dims, context);
  lm_detail::check_ids(m.dims, target);
  const TokenIds seq = lm_detail::concat(context, target);
  ScoreWithGrad out;
  out.grad.assign(m.theta.size(), 0.0);
  lm_detail::Step st;
  for (std::size_t t = 0; t < target.size(); ++t) {
    st.window = lm_detail::window_at(seq, context.size() + t, m.dims.context_window);
    lm_detail::forward(m, st);
    out.score.sum_logp += lm_detail::log_prob_of(st, target[t]);
    lm_detail::backward(m, st, target[t], 1.0, out.grad);
  }
  out.score.n_tokens = target.size();
  return out;
}

struct Decoding {
  bool greedy = true;
  double temperature = 1.0;

  static Decoding Greedy() { return {true, 1.0}; }
  static Decoding Temperature(double t) { return {false, t}; }
};

/// Greedy ties go to the lowest id. Sampling is reproducible for a seed.
inline TokenIds generate(const ModelParams& m, std::span<const TokenId> context, std::size_t max_new,
                         Decoding mode, std::uint64_t seed) {
  if (!mode.greedy && !(mode.temperature > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "sampling temperature must be positive");
  }
  lm_detail::check_ids(m.dims, context);
  TokenIds seq(context.begin(), context.end());
  TokenIds out;
  Rng rng(seed);
  for (std::size_t i = 0; i < max_new; ++i) {
    auto p = next_distribution(m, seq);
    TokenId pick = 0;
    if (mode.greedy) {
      pick = static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
    } else {
      // Reweight by p^(1/T) in log space.
      double mx = -INFINITY;
      for (auto& x : p) {
        x = std::log(x) / mode.temperature;
        mx = std::max(mx, x);
      }
      double z = 0.0;
      for (auto& x : p) {
        x = std::exp(x - mx);
        z += x;
      }
      double u = uniform_unit(rng) * z;
      pick = static_cast<TokenId>(p.size() - 1);
      for (std::size_t v = 0; v < p.size(); ++v) {
        if (u < p[v]) {
          pick = static_cast<TokenId>(v);
          break;
        }
        u -= p[v];
      }
    }
    seq.push_back(pick);
    out.push_back(pick);
  }
  return out;
}

/// Plain maximum-likelihood SGD on unconditioned sequences (mean token NLL
/// per sequence, one sequence per update). Used to give the model a base
/// distribution over text before instruction tuning. Returns the mean loss
/// of the last epoch.
inline double train_lm(ModelParams& m, const std::vector<TokenIds>& sequences, double learning_rate, int epochs,
                       std::uint64_t seed) {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning_rate must be > 0");
  double last = 0.0;
  std::vector<std::size_t> order(sequences.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    stable_shuffle(order, rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      const auto& seq = sequences[idx];
      auto g = seq_logprob_grad(m, {}, seq);
      const double step = learning_rate / static_cast<double>(seq.size());
      for (std::size_t i = 0; i < m.theta.size(); ++i) m.theta[i] += step * g.grad[i];
      total += -g.score.avg_logp();
    }
    last = sequences.empty() ? 0.0 : total / static_cast<double>(sequences.size());
  }
  return last;
}

// ---------------------------------------------------------------------------
// Checkpoint: "SURILM1\n", one JSON header line, then param_count
// little-endian doubles.

inline constexpr std::string_view kCheckpointMagic = "SURILM1\n";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& m, const Vocab* vocab = nullptr) {
  nlohmann::json header = {{"version", kCheckpointVersion},
                           {"vocab_size", m.dims.vocab_size},
                           {"context_window", m.dims.context_window},
                           {"embed_dim", m.dims.embed_dim},
                           {"hidden_dim", m.dims.hidden_dim},
                           {"pad_id", kPadId},
                           {"param_count", m.theta.size()}};
  if (vocab) header["vocab"] = vocab->tokens();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write checkpoint " + path.string());
  out << kCheckpointMagic << header.dump() << '\n';
  for (double x : m.theta) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
  }
  if (!out) throw Error(ErrorCode::kIo, "short write on checkpoint " + path.string());
}

struct Checkpoint {
  ModelParams params;
  std::optional<Vocab> vocab;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read checkpoint " + path.string());
  std::string magic(kCheckpointMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kCheckpointMagic) throw Error(ErrorCode::kParse, path.string() + ": not a checkpoint");
  std::string line;
  std::getline(in, line);
  Checkpoint ck;
  try {
    auto h = nlohmann::json::parse(line);
    if (h.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::kParse, path.string() + ": unsupported checkpoint version");
    }
    ck.params.dims = {h.at("vocab_size").get<std::size_t>(), h.at("context_window").get<std::size_t>(),
                      h.at("embed_dim").get<std::size_t>(), h.at("hidden_dim").get<std::size_t>()};
    validate_dims(ck.params.dims);
    const auto count = h.at("param_count").get<std::size_t>();
    if (count != ParamLayout(ck.params.dims).total) {
      throw Error(ErrorCode::kParse, path.string() + ": param_count does not match dimensions");
    }
    if (h.contains("vocab")) {
      Vocab v;
      const auto toks = h["vocab"].get<std::vector<std::string>>();
      if (toks.size() < 2 || toks[0] != "<pad>" || toks[1] != "<unk>") {
        throw Error(ErrorCode::kParse, path.string() + ": vocabulary lacks reserved tokens");
      }
      for (std::size_t i = 2; i < toks.size(); ++i) v.add(toks[i]);
      if (v.size() != ck.params.dims.vocab_size) {
        throw Error(ErrorCode::kParse, path.string() + ": vocabulary size mismatch");
      }
      ck.vocab = std::move(v);
    }
    ck.params.theta.resize(count);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": bad header: " + e.what());
  }
  for (auto& x : ck.params.theta) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw Error(ErrorCode::kParse, path.string() + ": truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    x = std::bit_cast<double>(bits);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::kParse, path.string() + ": trailing bytes");
  return ck;
}

}  // namespace suri
