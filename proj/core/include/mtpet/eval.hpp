#pragma once

// Macro precision/recall/F1 with per-class detail and confusion matrix,
// multi-seed averaging, learning curves and claim-strength transition bins.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtpet/exaggeration.hpp"
#include "mtpet/pet.hpp"

namespace mtpet::eval {

// Supports and confusion counts are doubles so seed means stay exact.
struct EvalReport {
  std::vector<std::string> labels;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<double> support;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::vector<std::vector<double>> confusion;  // [gold][predicted]
};

// Classes without predictions (or without gold) get precision (recall) 0,
// and still count in the macro mean. Throws kUsage on length mismatch or a
// label outside the space.
EvalReport macro_prf(std::span<const std::size_t> predictions, std::span<const std::size_t> golds,
                     const std::vector<std::string>& labels);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
// Aligned-column table, one row per class plus the macro row.
std::string to_table(const EvalReport& report);

// Field-wise arithmetic mean. Throws kUsage when empty or label spaces differ.
EvalReport aggregate_seeds(std::span<const EvalReport> reports);

struct CurvePoint {
  std::size_t size = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> f1;  // per seed
  double mean_f1 = 0.0;
};

// (training subset, seed) -> report on the fixed test set.
using TrainEval = std::function<EvalReport(std::span<const pet::Instance>, std::uint64_t)>;

// For each size, a stratified subsample of `train` (seed offset by the size
// index) is trained and evaluated once per seed. Sizes must ascend and fit.
std::vector<CurvePoint> learning_curve(std::span<const pet::Instance> train,
                                       std::span<const std::size_t> sizes,
                                       std::span<const std::uint64_t> seeds,
                                       const TrainEval& train_eval, std::size_t jobs = 1);

std::string curve_csv(std::span<const CurvePoint> curve);  // size,seed,f1
std::string curve_table(std::span<const CurvePoint> curve);

struct TransitionBin {
  std::string key;  // abstract -> press, e.g. "CON->CAU"
  std::size_t count = 0;
  std::size_t wrong = 0;
  double proportion = 0.0;
};

// The 16 keys in (abstract, press) order.
std::vector<std::string> transition_keys();

// Per-bin error proportion of exaggeration predictions; with several
// prediction sets an item counts as wrong only if every set misses it.
// Only non-empty bins are returned. Throws kUsage when a pair lacks a
// strength or a prediction set has the wrong length.
std::vector<TransitionBin> transition_error_bins(
    std::span<const exaggeration::SentencePair> pairs,
    std::span<const std::vector<exaggeration::ExaggerationLabel>> prediction_sets);

nlohmann::json to_json(std::span<const TransitionBin> bins);

}  // namespace mtpet::eval
