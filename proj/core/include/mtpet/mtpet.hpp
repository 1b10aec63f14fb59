#pragma once

// Multi-task PET: each ensemble member is one backbone trained on a main PVP
// and a complementary auxiliary PVP, one task per batch, with per-task loss
// weights. The ensemble then soft-labels main-task unlabeled data and a
// classifier is distilled from it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtpet/backend.hpp"
#include "mtpet/eval.hpp"
#include "mtpet/pet.hpp"
#include "mtpet/pvp.hpp"
#include "mtpet/rng.hpp"

namespace mtpet::multitask {

// min(2, size_main / size_aux). Throws kUsage on a zero size.
double alpha_aux(std::size_t size_main, std::size_t size_aux);

enum class Sampling { kUniform, kProportional };
Sampling parse_sampling(std::string_view name);

// Per-batch choice between the main and auxiliary task.
class TaskSampler {
 public:
  TaskSampler(Sampling sampling, std::size_t size_main, std::size_t size_aux, std::uint64_t seed);
  bool next_is_main();

 private:
  Sampling sampling_;
  double main_share_;
  Rng rng_;
};

struct TaskData {
  pvp::Task task = pvp::Task::kT1;
  std::vector<pet::Instance> data;
};

struct TaskSpec {
  TaskData main;
  std::optional<TaskData> aux;
  std::vector<pvp::PvpTuple> tuples;
  double alpha_main = 1.0;
  // Unset means alpha_aux(|D_m|, |D_a|).
  std::optional<double> alpha_aux;
  std::vector<pet::Instance> unlabeled;
  Sampling sampling = Sampling::kUniform;
  // false drops auxiliary batches from sampling and step accounting.
  bool aux_batches_enabled = true;
};

// Throws kConfig for bad alphas or tuples whose PVPs target the wrong task.
void validate(const TaskSpec& spec);
double effective_alpha_aux(const TaskSpec& spec);

// Trains one member (shared backbone for both PVPs of tuple `tuple_index`)
// for epochs * ceil((|D_m| + |D_a|) / B) steps. Returns the main-PVP model.
pet::PvpModel train_mtpet_member(const TaskSpec& spec, std::size_t tuple_index,
                                 const backend::MaskedLm& base, const pet::TrainingConfig& hp,
                                 backend::Aggregation aggregation, std::uint64_t seed,
                                 pet::TrainingLog* log = nullptr);

struct PipelineConfig {
  pet::TrainingConfig member = pet::TrainingConfig::t2_defaults();
  pet::TrainingConfig distill = pet::TrainingConfig::distill_defaults();
  backend::Aggregation aggregation = backend::Aggregation::kMean;
  bool normalize_weights = false;
  std::size_t jobs = 1;
};

// Scores a distilled classifier on the held-out test set.
using Evaluator = std::function<eval::EvalReport(const backend::MaskedLm&)>;

struct MemberInfo {
  std::size_t pattern_index = 0;
  double weight = 0.0;
};

struct SeedRun {
  std::uint64_t seed = 0;
  eval::EvalReport report;
  std::vector<pet::PvpModel> members;
  std::vector<pet::SoftLabelRecord> soft_labels;
  std::unique_ptr<backend::MaskedLm> classifier;
  std::vector<pet::TrainingLog> member_logs;
};

struct RunResult {
  std::vector<MemberInfo> members;
  std::vector<SeedRun> seeds;
  eval::EvalReport mean;
};

// {members: [{pattern_index, weight}], seeds: [{seed, precision, recall, f1}],
//  mean: {precision, recall, f1, report}}
nlohmann::json run_report(const RunResult& result);

// Per seed: one member per tuple (parallel), ensemble weighted by the
// members' zero-shot accuracy on D_m, soft labels over U, distillation,
// evaluation. Stage failures are rethrown naming the stage and member.
RunResult run_mtpet(const TaskSpec& spec, const backend::MaskedLm& base,
                    const PipelineConfig& config, std::span<const std::uint64_t> seeds,
                    const Evaluator& evaluate);

// Single-task PET over the main PVPs of `spec` (auxiliary data ignored).
RunResult run_pet(const TaskSpec& spec, const backend::MaskedLm& base,
                  const PipelineConfig& config, std::span<const std::uint64_t> seeds,
                  const Evaluator& evaluate);

struct MlmConfig {
  double mask_rate = 0.15;
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  double learning_rate = 5e-5;
  std::size_t warmup_steps = 0;
  double weight_decay = 0.0;
};

// Random-masking MLM pass over `texts` (targets restricted to the model's
// vocabulary). Throws kUsage on an empty corpus.
std::unique_ptr<backend::MaskedLm> mlm_domain_adapt(const backend::MaskedLm& model,
                                                    std::span<const std::string> texts,
                                                    const MlmConfig& config, std::uint64_t seed);

}  // namespace mtpet::multitask
