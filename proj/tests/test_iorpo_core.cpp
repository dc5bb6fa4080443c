#include "suri/iorpo_core.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "lm_oracle.hpp"
#include "oracles.hpp"
#include "suri/toy_task.hpp"

using namespace suri;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kDomain;
}

TokenIds random_ids(std::mt19937_64& rng, std::size_t len, std::size_t V) {
  TokenIds t(len);
  for (auto& x : t) x = static_cast<TokenId>(rng() % V);
  return t;
}

ModelParams random_model(std::mt19937_64& rng, const ModelDims& d, double scale = 0.8) {
  auto m = zero_params(d);
  Rng r(rng());
  for (auto& x : m.theta) x = uniform_range(r, -scale, scale);
  return m;
}

EncodedTriplet random_triplet(std::mt19937_64& rng, std::size_t V) {
  EncodedTriplet t;
  t.x_w = random_ids(rng, 1 + rng() % 4, V);
  t.x_l = t.x_w;
  t.x_l[rng() % t.x_l.size()] = static_cast<TokenId>(rng() % V);
  t.y = random_ids(rng, 1 + rng() % 5, V);
  return t;
}

SequenceScore score(double sum, std::size_t n) { return {sum, n}; }

}  // namespace

// --- scalars ------------------------------------------------------------------

TEST(SeqProb, Examples) {
  EXPECT_DOUBLE_EQ(seq_prob(score(std::log(0.5), 1)), 0.5);
  EXPECT_NEAR(seq_prob(score(3 * std::log(0.5), 3)), 0.5, 1e-15);
  EXPECT_EQ(code_of([] { seq_prob(score(0.0, 4)); }), ErrorCode::kDegenerateProbability);
  auto m = zero_params({7, 3, 4, 5});
  EXPECT_NEAR(seq_prob(seq_logprob(m, TokenIds{1}, TokenIds{2, 3})), 1.0 / 7.0, 1e-15);
}

TEST(LogOdds, Examples) {
  EXPECT_EQ(log_odds(std::log(0.5)), 0.0);
  EXPECT_NEAR(log_odds(std::log(0.8)), std::log(4.0), 1e-12);
  EXPECT_EQ(code_of([] { log_odds(0.0); }), ErrorCode::kDegenerateProbability);
  EXPECT_EQ(code_of([] { log_odds(0.1); }), ErrorCode::kDomain);
}

TEST(LogOdds, StableDownToSubnormalRange) {
  for (double a : {-1e-12, -1e-8, -0.01, -0.5, -0.6931471805599453, -0.7, -1.0, -5.0, -40.0, -300.0, -700.0, -745.0}) {
    const double got = log_odds(a);
    ASSERT_TRUE(std::isfinite(got)) << a;
    const long double want = oracle::log_odds_extended(a);
    EXPECT_LE(std::abs(got - want), 1e-9 * std::max(1.0L, std::abs(want))) << a;
  }
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double a = -745.0 * uniform_unit(rng) - 1e-300;
    const double got = log_odds(a);
    ASSERT_TRUE(std::isfinite(got));
    const long double want = oracle::log_odds_extended(a);
    ASSERT_LE(std::abs(got - want), 1e-9 * std::max(1.0L, std::abs(want))) << a;
  }
}

TEST(Scalars, SoftplusAndSigmoid) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_EQ(softplus(-800.0), 0.0);
  EXPECT_EQ(softplus(800.0), 800.0);
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
  EXPECT_NEAR(log1mexp(std::log(0.25)), std::log(0.75), 1e-15);
}

// --- loss algebra -------------------------------------------------------------

TEST(Loss, EqualScoresGiveLn2) {
  auto b = loss_from_scores(score(-6.0, 3), score(-6.0, 3), 0.4);
  EXPECT_EQ(b.log_odds_ratio, 0.0);
  EXPECT_NEAR(b.l_ior, std::log(2.0), 1e-12);
  auto m = zero_params({7, 3, 4, 5});
  auto lb = iorpo_loss(m, {TokenIds{1, 2}, TokenIds{3, 4}, TokenIds{5, 6, 2}}, 0.4);
  EXPECT_EQ(lb.log_odds_ratio, 0.0);
  EXPECT_NEAR(lb.l_ior, std::log(2.0), 1e-12);
  EXPECT_NEAR(lb.l_sft, std::log(7.0), 1e-12);
}

TEST(Loss, LargeRatioDrivesIorToZero) {
  auto b = loss_from_scores(score(-0.001, 1), score(-500.0, 1), 1.0);
  EXPECT_GT(b.log_odds_ratio, 500.0);
  EXPECT_LT(b.l_ior, 1e-200);
}

TEST(Loss, AlgebraPropertyOnRandomScores) {
  std::mt19937_64 rng(2);
  Rng r(3);
  for (int i = 0; i < 20000; ++i) {
    const std::size_t n = 1 + rng() % 50;
    const double sw = -uniform_range(r, 1e-6, 30.0) * n;
    const double sl = -uniform_range(r, 1e-6, 30.0) * n;
    const double lambda = uniform_range(r, 0.0, 3.0);
    auto b = loss_from_scores(score(sw, n), score(sl, n), lambda);
    ASSERT_NEAR(b.total, b.l_sft + lambda * b.l_ior, 1e-12);
    ASSERT_NEAR(b.l_ior, softplus(-b.log_odds_ratio), 1e-12);
    ASSERT_NEAR(b.log_odds_ratio, b.log_odds_w - b.log_odds_l, 1e-12);
    ASSERT_GE(b.l_ior, 0.0);
    ASSERT_GT(b.p_w, 0.0);
    ASSERT_LT(b.p_w, 1.0);
    // Swap antisymmetry.
    auto s = loss_from_scores(score(sl, n), score(sw, n), lambda);
    ASSERT_EQ(s.log_odds_ratio, -b.log_odds_ratio);
    ASSERT_NEAR(s.l_ior, softplus(b.log_odds_ratio), 1e-12);
    // Delta in (0,1), equal to 1/(1 + odds_w/odds_l).
    auto f = gradient_factors(b);
    ASSERT_GE(f.delta, 0.0);
    ASSERT_LE(f.delta, 1.0);
    const double direct = 1.0 / (1.0 + std::exp(b.log_odds_w - b.log_odds_l));
    ASSERT_NEAR(f.delta, direct, 1e-12);
    ASSERT_NEAR(f.grad_w_scale, f.delta / (1.0 - b.p_w), 1e-9 * f.grad_w_scale + 1e-300);
  }
}

TEST(Loss, DeltaMonotoneDecreasingInRatio) {
  double prev = 1.0;
  // Strictly decreasing wherever double can still resolve it.
  for (double r = -30; r <= 50; r += 0.25) {
    LossBreakdown b;
    b.log_odds_ratio = r;
    b.avg_logp_w = b.avg_logp_l = -1.0;
    const double d = gradient_factors(b).delta;
    EXPECT_LT(d, prev);
    prev = d;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(Loss, DirectFormulaFixture) {
  // V=5, three-token y; recompute the objective from raw token probabilities.
  std::mt19937_64 rng(4);
  const ModelDims d{5, 3, 2, 3};
  for (int t = 0; t < 10; ++t) {
    auto m = random_model(rng, d, 1.5);
    EncodedTriplet ex{TokenIds{1, 2}, TokenIds{3, 2}, TokenIds{4, 0, 2}};
    const double lambda = 0.4;
    auto pw = oracle::token_probs(m, {1, 2}, {4, 0, 2});
    auto pl = oracle::token_probs(m, {3, 2}, {4, 0, 2});
    const long double Pw = std::cbrt(pw[0] * pw[1] * pw[2]);
    const long double Pl = std::cbrt(pl[0] * pl[1] * pl[2]);
    const long double odds_w = Pw / (1 - Pw), odds_l = Pl / (1 - Pl);
    const long double l_ior = -std::log(1 / (1 + std::exp(-std::log(odds_w / odds_l))));
    const long double l_sft = -(std::log(pw[0]) + std::log(pw[1]) + std::log(pw[2])) / 3;
    auto b = iorpo_loss(m, ex, lambda);
    EXPECT_NEAR(b.p_w, static_cast<double>(Pw), 1e-12);
    EXPECT_NEAR(b.l_ior, static_cast<double>(l_ior), 1e-12);
    EXPECT_NEAR(b.l_sft, static_cast<double>(l_sft), 1e-12);
    EXPECT_NEAR(b.total, static_cast<double>(l_sft + lambda * l_ior), 1e-12);
  }
}

TEST(Loss, SwappingInstructionsNegatesRatioOnModel) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    auto m = random_model(rng, {7, 3, 4, 5});
    auto ex = random_triplet(rng, 7);
    auto b = iorpo_loss(m, ex, 0.4);
    auto s = iorpo_loss(m, {ex.x_l, ex.x_w, ex.y}, 0.4);
    EXPECT_EQ(s.log_odds_ratio, -b.log_odds_ratio);
    EXPECT_NEAR(s.l_ior, softplus(b.log_odds_ratio), 1e-12);
  }
}

TEST(Loss, NegativeLambdaRejected) {
  EXPECT_EQ(code_of([] { loss_from_scores(score(-1, 1), score(-2, 1), -0.1); }), ErrorCode::kInvalidArgument);
}

// --- gradients ------------------------------------------------------------------

TEST(Gradient, IorpoMatchesFiniteDifferencesOn25Instances) {
  std::mt19937_64 rng(6);
  double worst = 0;
  for (int t = 0; t < 25; ++t) {
    auto m = random_model(rng, {7, 3, 4, 5});
    auto ex = random_triplet(rng, 7);
    const double lambda = 0.1 + (rng() % 20) / 10.0;
    auto g = iorpo_grad(m, ex, lambda);
    EXPECT_NEAR(g.loss.total, iorpo_loss(m, ex, lambda).total, 1e-14);
    auto rep = gradcheck(m, g.grad, [&](const ModelParams& p) { return iorpo_loss(p, ex, lambda).total; });
    worst = std::max(worst, rep.max_rel_error);
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Gradient, SequenceNormalizedVariantMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 10; ++t) {
    auto m = random_model(rng, {7, 3, 4, 5});
    auto ex = random_triplet(rng, 7);
    auto g = iorpo_grad(m, ex, 0.4, ProbNorm::kSequence);
    auto rep = gradcheck(
        m, g.grad, [&](const ModelParams& p) { return iorpo_loss(p, ex, 0.4, ProbNorm::kSequence).total; });
    EXPECT_LT(rep.max_rel_error, 1e-6);
  }
}

TEST(Gradient, SftMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    auto m = random_model(rng, {7, 3, 4, 5});
    auto ex = random_triplet(rng, 7);
    auto g = sft_loss_grad(m, ex);
    auto rep = gradcheck(m, g.grad, [&](const ModelParams& p) { return sft_loss_grad(p, ex).loss; });
    worst = std::max(worst, rep.max_rel_error);
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Gradient, UniformModelSftLossIsLnV) {
  auto m = zero_params({9, 2, 2, 2});
  EXPECT_NEAR(sft_loss_grad(m, {TokenIds{1}, TokenIds{2}, TokenIds{3, 4}}).loss, std::log(9.0), 1e-15);
}

TEST(Gradient, LambdaZeroIsPureSft) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    auto m = random_model(rng, {7, 3, 4, 5});
    auto ex = random_triplet(rng, 7);
    auto a = iorpo_grad(m, ex, 0.0).grad;
    auto b = sft_loss_grad(m, ex).grad;
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Gradient, FactorizationIdentityAtEqualProbabilities) {
  // x_w and x_l differ only outside the window, so p_w == p_l and delta = 1/2.
  std::mt19937_64 rng(10);
  auto m = random_model(rng, {7, 3, 4, 5});
  EncodedTriplet ex{TokenIds{1, 2, 3, 4, 5}, TokenIds{6, 2, 3, 4, 5}, TokenIds{2, 2, 6}};
  const double lambda = 0.7;
  auto g = iorpo_grad(m, ex, lambda);
  EXPECT_EQ(g.loss.p_w, g.loss.p_l);
  EXPECT_EQ(g.factors.delta, 0.5);
  auto gw = seq_logprob_grad(m, ex.x_w, ex.y).grad;
  auto gl = seq_logprob_grad(m, ex.x_l, ex.y).grad;
  auto sft = sft_loss_grad(m, ex).grad;
  const double n = 3.0;
  const double s = 1.0 / (1.0 - g.loss.p_w);
  for (std::size_t i = 0; i < g.grad.size(); ++i) {
    const double ior_part = (g.grad[i] - sft[i]) / lambda;
    const double expected = -0.5 * (gw[i] / n * s - gl[i] / n * s);
    ASSERT_NEAR(ior_part, expected, 1e-12);
  }
}

TEST(Gradient, GradcheckDetectsSignFlip) {
  std::mt19937_64 rng(11);
  auto m = random_model(rng, {7, 3, 4, 5});
  auto ex = random_triplet(rng, 7);
  auto g = iorpo_grad(m, ex, 0.4).grad;
  for (auto& x : g) x = -x;
  auto rep = gradcheck(m, g, [&](const ModelParams& p) { return iorpo_loss(p, ex, 0.4).total; });
  EXPECT_GT(rep.max_rel_error, 1.0);
}

TEST(Gradient, SftStepDescends) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    auto m = random_model(rng, {7, 3, 4, 5});
    auto ex = random_triplet(rng, 7);
    auto g = sft_loss_grad(m, ex);
    auto next = m;
    for (std::size_t i = 0; i < next.theta.size(); ++i) next.theta[i] -= 1e-3 * g.grad[i];
    EXPECT_LT(sft_loss_grad(next, ex).loss, g.loss);
  }
}

// --- training -------------------------------------------------------------------

TEST(Train, ZeroEpochsReturnsInitialParams) {
  std::mt19937_64 rng(13);
  auto m = random_model(rng, {7, 3, 4, 5});
  std::vector<EncodedTriplet> data{random_triplet(rng, 7), random_triplet(rng, 7)};
  TrainerConfig cfg;
  cfg.epochs = 0;
  auto r = train(data, m, cfg, Objective::kIorpo);
  EXPECT_EQ(r.params.theta, m.theta);
  ASSERT_EQ(r.curve.size(), 1u);
  EXPECT_EQ(r.curve[0].step, 0);
}

TEST(Train, ConfigValidation) {
  std::vector<EncodedTriplet> data{{TokenIds{1}, TokenIds{2}, TokenIds{3}}};
  auto m = zero_params({7, 3, 4, 5});
  TrainerConfig cfg;
  cfg.learning_rate = 0;
  EXPECT_EQ(code_of([&] { train(data, m, cfg, Objective::kSft); }), ErrorCode::kInvalidArgument);
  cfg = {};
  cfg.lambda = -1;
  EXPECT_EQ(code_of([&] { train(data, m, cfg, Objective::kSft); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { train({}, m, TrainerConfig{}, Objective::kSft); }), ErrorCode::kInvalidArgument);
}

TEST(Train, CurveStepsAndDeterminism) {
  std::mt19937_64 rng(14);
  auto m = random_model(rng, {7, 3, 4, 5}, 0.1);
  std::vector<EncodedTriplet> data;
  for (int i = 0; i < 13; ++i) data.push_back(random_triplet(rng, 7));
  TrainerConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.log_every = 5;
  auto a = train(data, m, cfg, Objective::kIorpo);
  auto b = train(data, m, cfg, Objective::kIorpo);
  EXPECT_EQ(a.params.theta, b.params.theta);
  std::vector<long> steps;
  for (const auto& p : a.curve) steps.push_back(p.step);
  EXPECT_EQ(steps, (std::vector<long>{0, 5, 10, 15, 20, 25, 26}));
  for (const auto& p : a.curve) {
    ASSERT_TRUE(p.l_ior);
    EXPECT_NEAR(p.total, p.l_sft + 0.4 * *p.l_ior, 1e-12);
  }
  cfg.seed = 1;
  EXPECT_NE(train(data, m, cfg, Objective::kIorpo).params.theta, a.params.theta);
}

TEST(Train, SftLowersLoss) {
  const auto v = toy::vocab();
  std::vector<EncodedTriplet> data;
  for (const auto& ex : toy::make_dataset(60, 5)) data.push_back(encode_example(v, ex));
  auto m = init_params({v.size(), 8, 16, 32}, 1);
  TrainerConfig cfg;
  cfg.learning_rate = 0.2;
  cfg.log_every = 1000;
  auto r = train(data, m, cfg, Objective::kSft);
  EXPECT_LT(r.curve.back().l_sft, r.curve.front().l_sft);
  EXPECT_FALSE(r.curve.back().l_ior);
}

TEST(Train, AdamLowersLoss) {
  const auto v = toy::vocab();
  std::vector<EncodedTriplet> data;
  for (const auto& ex : toy::make_dataset(60, 6)) data.push_back(encode_example(v, ex));
  auto m = init_params({v.size(), 8, 16, 32}, 1);
  TrainerConfig cfg;
  cfg.optimizer = Optimizer::kAdam;
  cfg.learning_rate = 0.01;
  cfg.log_every = 1000;
  auto r = train(data, m, cfg, Objective::kIorpo);
  EXPECT_LT(r.curve.back().total, r.curve.front().total);
}

TEST(Train, IorpoWidensGapOnToyTask) {
  toy::DivergenceSetup s;
  auto r = toy::run_divergence(s);
  EXPECT_GT(r.final_gap, r.initial_gap);
}

TEST(CurveCsv, RoundTrip) {
  std::vector<TrainingCurvePoint> c(2);
  c[0] = {0, -1.5, -1.25, -3.0, -3.5, 0.75, 0.6931471805599453, 1.0272588722239781};
  c[1] = {10, -1.0, -2.0, -3.1, -3.4, 0.5, std::nullopt, 0.5};
  std::stringstream ss;
  write_curve_csv(ss, c);
  EXPECT_TRUE(ss.str().starts_with("step,logps_y_xw,logps_y_xl,logps_xw,logps_xl,l_sft,l_ior,total\n"));
  EXPECT_NE(ss.str().find(",0.5,,0.5\n"), std::string::npos);
  auto back = read_curve_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].l_ior, c[0].l_ior);
  EXPECT_EQ(back[0].total, c[0].total);
  EXPECT_FALSE(back[1].l_ior);
  EXPECT_EQ(back[1].step, 10);
}
