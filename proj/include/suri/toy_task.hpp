#pragma once

// Synthetic instruction/response task small enough to train the tiny model
// in seconds. Each instruction has one goal token and one constraint token
// c_j; the response draws mostly from the two content words owned by c_j.
// The corrupted instruction swaps in a different constraint token, so the
// response is inconsistent with it.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "suri/dataset_builder.hpp"
#include "suri/iorpo_core.hpp"
#include "suri/rng.hpp"
#include "suri/tiny_lm.hpp"

namespace suri::toy {

inline constexpr int kGoals = 2;
inline constexpr int kConstraints = 6;
inline constexpr int kFillers = 2;
inline constexpr std::size_t kResponseLen = 8;
inline constexpr double kOnTopic = 0.85;

inline std::string goal(int i) { return "g" + std::to_string(i); }
inline std::string constraint(int i) { return "c" + std::to_string(i); }
inline std::string content(int i) { return "k" + std::to_string(i); }
inline std::string filler(int i) { return "f" + std::to_string(i); }

/// Fixed id assignment: pad, unk, "Constraints:", "-", goals, constraints,
/// content words, fillers.
inline Vocab vocab() {
  Vocab v;
  v.add("Constraints:");
  v.add("-");
  for (int i = 0; i < kGoals; ++i) v.add(goal(i));
  for (int i = 0; i < kConstraints; ++i) v.add(constraint(i));
  for (int i = 0; i < 2 * kConstraints; ++i) v.add(content(i));
  for (int i = 0; i < kFillers; ++i) v.add(filler(i));
  return v;
}

inline TrainingExample make_example(std::size_t index, std::uint64_t seed) {
  Rng rng(derive_seed(seed, index));
  const int g = static_cast<int>(uniform_below(rng, kGoals));
  const int c = static_cast<int>(uniform_below(rng, kConstraints));
  int bad = static_cast<int>(uniform_below(rng, kConstraints - 1));
  if (bad >= c) ++bad;
  std::string y;
  for (std::size_t t = 0; t < kResponseLen; ++t) {
    if (t) y += ' ';
    if (uniform_unit(rng) < kOnTopic) {
      y += content(2 * c + static_cast<int>(uniform_below(rng, 2)));
    } else {
      y += filler(static_cast<int>(uniform_below(rng, kFillers)));
    }
  }
  Instruction instr{goal(g), {{constraint(c), constraint(bad), std::nullopt, std::nullopt}}};
  char id[32];
  std::snprintf(id, sizeof id, "toy-%06zu", index);
  return suri::make_example(id, Source::kSynthetic, std::move(instr), std::move(y));
}

inline std::vector<TrainingExample> make_dataset(std::size_t n, std::uint64_t seed) {
  std::vector<TrainingExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_example(i, seed));
  return out;
}

struct DivergenceSetup {
  std::size_t train_size = 200;
  std::size_t heldout_size = 200;
  std::uint64_t data_seed = 1;
  std::uint64_t heldout_seed = 2;
  std::uint64_t model_seed = 7;
  // Base model: unconditioned LM fit on the instruction strings and the
  // responses separately, so it knows the text but not their association.
  int base_epochs = 5;
  double base_learning_rate = 0.5;
  TrainerConfig trainer{.lambda = 0.4, .learning_rate = 0.2, .epochs = 2, .seed = 3, .log_every = 20};
};

struct DivergenceResult {
  std::vector<TrainingCurvePoint> curve;
  double initial_gap = 0.0;
  double final_gap = 0.0;
  double max_instruction_drift = 0.0;
  double heldout_accuracy_before = 0.0;
  double heldout_accuracy_after = 0.0;
  ModelParams final_params;
};

/// Fraction of examples with logps(y|x_w) > logps(y|x_l); ties count as wrong.
inline double pairwise_accuracy(const ModelParams& m, const std::vector<EncodedTriplet>& data) {
  std::size_t right = 0;
  for (const auto& ex : data) right += seq_logprob(m, ex.x_w, ex.y).sum_logp > seq_logprob(m, ex.x_l, ex.y).sum_logp;
  return data.empty() ? 0.0 : static_cast<double>(right) / static_cast<double>(data.size());
}

inline ModelParams base_model(const DivergenceSetup& s, const std::vector<EncodedTriplet>& train_set,
                              std::size_t vocab_size) {
  ModelParams m = init_params({vocab_size, 8, 16, 32}, s.model_seed);
  std::vector<TokenIds> text;
  for (const auto& ex : train_set) {
    text.push_back(ex.x_w);
    text.push_back(ex.y);
  }
  train_lm(m, text, s.base_learning_rate, s.base_epochs, derive_seed(s.model_seed, 1));
  return m;
}

inline DivergenceResult run_divergence(const DivergenceSetup& s, Objective obj = Objective::kIorpo) {
  const Vocab v = vocab();
  std::vector<EncodedTriplet> train_set, heldout;
  for (const auto& ex : make_dataset(s.train_size, s.data_seed)) train_set.push_back(encode_example(v, ex));
  for (const auto& ex : make_dataset(s.heldout_size, s.heldout_seed)) heldout.push_back(encode_example(v, ex));
  ModelParams m0 = base_model(s, train_set, v.size());
  auto run = train(train_set, m0, s.trainer, obj);
  DivergenceResult r;
  r.curve = std::move(run.curve);
  r.final_params = std::move(run.params);
  const auto& first = r.curve.front();
  r.initial_gap = first.logps_y_xw - first.logps_y_xl;
  r.final_gap = r.curve.back().logps_y_xw - r.curve.back().logps_y_xl;
  for (const auto& p : r.curve) {
    r.max_instruction_drift = std::max({r.max_instruction_drift, std::abs(p.logps_xw - first.logps_xw),
                                        std::abs(p.logps_xl - first.logps_xl)});
  }
  r.heldout_accuracy_before = pairwise_accuracy(m0, heldout);
  r.heldout_accuracy_after = pairwise_accuracy(r.final_params, heldout);
  return r;
}

}  // namespace suri::toy
