#pragma once

// Instruction-contrastive odds-ratio objective.
//
//   total = l_sft + lambda * l_ior
//   l_sft = mean NLL of y given x_w
//   l_ior = softplus(-(log_odds(a_w) - log_odds(a_l)))
//
// where a_* is the length-normalized log-probability of y under x_w / x_l
// (mean token logp; switchable to the plain sum) and
// log_odds(a) = a - log(1 - exp(a)).
//
// Gradient: with delta = sigmoid(-r), r = log_odds_w - log_odds_l,
//   d total = -grad(mean logp_w)
//             - lambda * delta * (grad a_w / (1 - p_w) - grad a_l / (1 - p_l))

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "suri/dataset_builder.hpp"
#include "suri/error.hpp"
#include "suri/rng.hpp"
#include "suri/tiny_lm.hpp"

namespace suri {

struct EncodedTriplet {
  TokenIds x_w;
  TokenIds x_l;
  TokenIds y;
};

inline EncodedTriplet encode_example(const Vocab& vocab, const TrainingExample& ex) {
  return {vocab.encode(ex.x_w), vocab.encode(ex.x_l), vocab.encode(ex.y)};
}

enum class ProbNorm {
  kMeanToken,  // P = exp(mean token logp)
  kSequence,   // P = exp(sum token logp)
};

// --- scalar pieces ----------------------------------------------------------

/// log(1 - exp(a)) for a < 0, switching branch at -ln 2.
inline double log1mexp(double a) {
  if (a > -0.6931471805599453) return std::log(-std::expm1(a));
  return std::log1p(-std::exp(a));
}

inline void check_log_prob(double a) {
  if (a == 0.0) throw Error(ErrorCode::kDegenerateProbability, "sequence probability is exactly 1; odds undefined");
  if (!(a < 0.0)) throw Error(ErrorCode::kDomain, "log-probability must be negative, got " + std::to_string(a));
}

inline double seq_prob(const SequenceScore& s) {
  const double a = s.avg_logp();
  check_log_prob(a);
  return std::exp(a);
}

inline double log_odds(double a) {
  check_log_prob(a);
  return a - log1mexp(a);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// 1 / (1 - exp(a)) without forming 1 - p by subtraction.
inline double inv_one_minus_p(double a) { return -1.0 / std::expm1(a); }

struct LossBreakdown {
  double l_sft = 0.0;
  double avg_logp_w = 0.0;
  double avg_logp_l = 0.0;
  double p_w = 0.0;
  double p_l = 0.0;
  double log_odds_w = 0.0;
  double log_odds_l = 0.0;
  double log_odds_ratio = 0.0;
  double l_ior = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

struct GradientFactors {
  double delta = 0.0;
  double grad_w_scale = 0.0;
  double grad_l_scale = 0.0;
};

inline double prob_input(const SequenceScore& s, ProbNorm norm) {
  return norm == ProbNorm::kMeanToken ? s.avg_logp() : s.sum_logp;
}

/// Loss from the two scores of y (under x_w and under x_l).
inline LossBreakdown loss_from_scores(const SequenceScore& w, const SequenceScore& l, double lambda,
                                      ProbNorm norm = ProbNorm::kMeanToken) {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 0");
  LossBreakdown b;
  b.lambda = lambda;
  b.l_sft = -w.avg_logp();
  b.avg_logp_w = prob_input(w, norm);
  b.avg_logp_l = prob_input(l, norm);
  b.log_odds_w = log_odds(b.avg_logp_w);
  b.log_odds_l = log_odds(b.avg_logp_l);
  b.p_w = std::exp(b.avg_logp_w);
  b.p_l = std::exp(b.avg_logp_l);
  b.log_odds_ratio = b.log_odds_w - b.log_odds_l;
  b.l_ior = softplus(-b.log_odds_ratio);
  b.total = b.l_sft + lambda * b.l_ior;
  return b;
}

inline GradientFactors gradient_factors(const LossBreakdown& b) {
  GradientFactors f;
  f.delta = sigmoid(-b.log_odds_ratio);  // = 1 / (1 + odds_w / odds_l)
  f.grad_w_scale = f.delta * inv_one_minus_p(b.avg_logp_w);
  f.grad_l_scale = f.delta * inv_one_minus_p(b.avg_logp_l);
  return f;
}

// --- model-level loss and gradients -------------------------------------------

inline LossBreakdown iorpo_loss(const ModelParams& m, const EncodedTriplet& ex, double lambda,
                                ProbNorm norm = ProbNorm::kMeanToken) {
  return loss_from_scores(seq_logprob(m, ex.x_w, ex.y), seq_logprob(m, ex.x_l, ex.y), lambda, norm);
}

struct LossGrad {
  LossBreakdown loss;
  GradientFactors factors;
  std::vector<double> grad;
};

inline LossGrad iorpo_grad(const ModelParams& m, const EncodedTriplet& ex, double lambda,
                           ProbNorm norm = ProbNorm::kMeanToken) {
  auto gw = seq_logprob_grad(m, ex.x_w, ex.y);
  auto gl = seq_logprob_grad(m, ex.x_l, ex.y);
  LossGrad out;
  out.loss = loss_from_scores(gw.score, gl.score, lambda, norm);
  out.factors = gradient_factors(out.loss);
  const double inv_n = 1.0 / static_cast<double>(ex.y.size());
  const double a_scale = norm == ProbNorm::kMeanToken ? inv_n : 1.0;
  // Coefficients on grad(sum logp_w) and grad(sum logp_l).
  const double cw = -inv_n - lambda * out.factors.grad_w_scale * a_scale;
  const double cl = lambda * out.factors.grad_l_scale * a_scale;
  out.grad.resize(m.theta.size());
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = cw * gw.grad[i] + cl * gl.grad[i];
  return out;
}

struct SftLossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

inline SftLossGrad sft_loss_grad(const ModelParams& m, const EncodedTriplet& ex) {
  auto g = seq_logprob_grad(m, ex.x_w, ex.y);
  SftLossGrad out;
  out.loss = -g.score.avg_logp();
  const double scale = -1.0 / static_cast<double>(ex.y.size());
  out.grad.resize(g.grad.size());
  for (std::size_t i = 0; i < g.grad.size(); ++i) out.grad[i] = scale * g.grad[i];
  return out;
}

// --- finite-difference check --------------------------------------------------

struct GradCheckBlock {
  std::string name;
  double max_abs_diff = 0.0;
  double scale = 0.0;  // max(|analytic|_inf, |numeric|_inf)
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_error = 0.0;
};

/// Central differences of `loss` around m.theta, compared blockwise with
/// `analytic`: rel = |a - f|_inf / max(|a|_inf, |f|_inf) per parameter block
/// (0 when both vanish), reported as the max over blocks.
inline GradCheckReport gradcheck(const ModelParams& m, const std::vector<double>& analytic,
                                 const std::function<double(const ModelParams&)>& loss, double step = 1e-5) {
  if (analytic.size() != m.theta.size()) throw Error(ErrorCode::kLengthMismatch, "gradient length mismatch");
  ModelParams probe = m;
  std::vector<double> numeric(m.theta.size());
  for (std::size_t i = 0; i < m.theta.size(); ++i) {
    const double x = m.theta[i];
    probe.theta[i] = x + step;
    const double up = loss(probe);
    probe.theta[i] = x - step;
    const double down = loss(probe);
    probe.theta[i] = x;
    numeric[i] = (up - down) / (2.0 * step);
  }
  GradCheckReport r;
  for (const auto& blk : m.layout().blocks()) {
    GradCheckBlock b{blk.name, 0.0, 0.0, 0.0};
    for (std::size_t i = blk.begin; i < blk.end; ++i) {
      b.max_abs_diff = std::max(b.max_abs_diff, std::abs(analytic[i] - numeric[i]));
      b.scale = std::max({b.scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    b.rel_error = b.scale > 0.0 ? b.max_abs_diff / b.scale : 0.0;
    r.max_rel_error = std::max(r.max_rel_error, b.rel_error);
    r.blocks.push_back(b);
  }
  return r;
}

// --- training -----------------------------------------------------------------

enum class Objective { kSft, kIorpo };
enum class Optimizer { kSgd, kAdam };

struct TrainerConfig {
  double lambda = 0.4;
  double learning_rate = 5e-5;
  int epochs = 2;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::kSgd;
  int log_every = 10;
  ProbNorm norm = ProbNorm::kMeanToken;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(lambda >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning_rate must be > 0");
    if (epochs < 0) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 0");
    if (log_every <= 0) throw Error(ErrorCode::kInvalidArgument, "log_every must be positive");
  }
};

/// Dataset means at one step. logps are summed token log-probabilities;
/// logps_xw / logps_xl score the instruction itself with an empty context.
struct TrainingCurvePoint {
  long step = 0;
  double logps_y_xw = 0.0;
  double logps_y_xl = 0.0;
  double logps_xw = 0.0;
  double logps_xl = 0.0;
  double l_sft = 0.0;
  std::optional<double> l_ior;  // absent for SFT runs
  double total = 0.0;
};

inline TrainingCurvePoint evaluate_curve_point(const ModelParams& m, const std::vector<EncodedTriplet>& data,
                                               const TrainerConfig& cfg, Objective obj, long step) {
  TrainingCurvePoint p;
  p.step = step;
  double l_ior = 0.0;
  for (const auto& ex : data) {
    const auto sw = seq_logprob(m, ex.x_w, ex.y);
    const auto sl = seq_logprob(m, ex.x_l, ex.y);
    p.logps_y_xw += sw.sum_logp;
    p.logps_y_xl += sl.sum_logp;
    p.logps_xw += seq_logprob(m, {}, ex.x_w).sum_logp;
    p.logps_xl += seq_logprob(m, {}, ex.x_l).sum_logp;
    p.l_sft += -sw.avg_logp();
    if (obj == Objective::kIorpo) l_ior += loss_from_scores(sw, sl, cfg.lambda, cfg.norm).l_ior;
  }
  const double n = static_cast<double>(data.size());
  p.logps_y_xw /= n;
  p.logps_y_xl /= n;
  p.logps_xw /= n;
  p.logps_xl /= n;
  p.l_sft /= n;
  if (obj == Objective::kIorpo) {
    p.l_ior = l_ior / n;
    p.total = p.l_sft + cfg.lambda * *p.l_ior;
  } else {
    p.total = p.l_sft;
  }
  return p;
}

struct TrainResult {
  ModelParams params;
  std::vector<TrainingCurvePoint> curve;
};

/// One example per update, seeded per-epoch order. Curve points at step 0,
/// every log_every updates, and the final step.
inline TrainResult train(const std::vector<EncodedTriplet>& data, ModelParams init, const TrainerConfig& cfg,
                         Objective obj) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "training set is empty");
  TrainResult r{std::move(init), {}};
  auto& theta = r.params.theta;
  r.curve.push_back(evaluate_curve_point(r.params, data, cfg, obj, 0));

  std::vector<double> m1, m2;
  if (cfg.optimizer == Optimizer::kAdam) {
    m1.assign(theta.size(), 0.0);
    m2.assign(theta.size(), 0.0);
  }
  long step = 0;
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    stable_shuffle(order, rng);
    for (std::size_t idx : order) {
      const auto& ex = data[idx];
      std::vector<double> g = obj == Objective::kIorpo ? iorpo_grad(r.params, ex, cfg.lambda, cfg.norm).grad
                                                       : sft_loss_grad(r.params, ex).grad;
      ++step;
      if (cfg.optimizer == Optimizer::kSgd) {
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= cfg.learning_rate * g[i];
      } else {
        const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < theta.size(); ++i) {
          m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * g[i];
          m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
          theta[i] -= cfg.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg.adam_eps);
        }
      }
      if (step % cfg.log_every == 0) r.curve.push_back(evaluate_curve_point(r.params, data, cfg, obj, step));
    }
  }
  if (r.curve.back().step != step) r.curve.push_back(evaluate_curve_point(r.params, data, cfg, obj, step));
  return r;
}

// --- curve CSV ----------------------------------------------------------------

inline constexpr const char* kCurveHeader = "step,logps_y_xw,logps_y_xl,logps_xw,logps_xl,l_sft,l_ior,total";

inline void write_curve_csv(std::ostream& out, const std::vector<TrainingCurvePoint>& curve) {
  out << kCurveHeader << '\n';
  char buf[64];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return std::string(buf);
  };
  for (const auto& p : curve) {
    out << p.step << ',' << num(p.logps_y_xw) << ',' << num(p.logps_y_xl) << ',' << num(p.logps_xw) << ','
        << num(p.logps_xl) << ',' << num(p.l_sft) << ',' << (p.l_ior ? num(*p.l_ior) : "") << ',' << num(p.total)
        << '\n';
  }
}

inline std::vector<TrainingCurvePoint> read_curve_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw Error(ErrorCode::kParse, "unexpected curve header");
  std::vector<TrainingCurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() == 7 && line.back() == ',') f.emplace_back();
    if (f.size() != 8) throw Error(ErrorCode::kParse, "bad curve row: " + line);
    try {
      TrainingCurvePoint p;
      p.step = std::stol(f[0]);
      p.logps_y_xw = std::stod(f[1]);
      p.logps_y_xl = std::stod(f[2]);
      p.logps_xw = std::stod(f[3]);
      p.logps_xl = std::stod(f[4]);
      p.l_sft = std::stod(f[5]);
      if (!f[6].empty()) p.l_ior = std::stod(f[6]);
      p.total = std::stod(f[7]);
      out.push_back(p);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParse, "bad curve row: " + line);
    }
  }
  return out;
}

}  // namespace suri
