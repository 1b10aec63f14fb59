#pragma once

// Single-task pattern-exploiting training: per-label cloze scores, their
// softmax, class-weighted supervised training of one model per PVP, ensemble
// soft labels over unlabeled data, and distillation into a classifier.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mtpet/backend.hpp"
#include "mtpet/pvp.hpp"
#include "mtpet/rng.hpp"

namespace mtpet::pet {

struct Instance {
  std::string id;
  pvp::PatternInput input;
  std::optional<std::size_t> label;
};

// Classifier segments for a pattern input: pairs go in as (b, a), i.e.
// (press, abstract); role-bearing single sentences carry the role name as
// the second segment.
struct ClassifierInput {
  std::string first;
  std::optional<std::string> second;
};
ClassifierInput classifier_input(const pvp::PatternInput& input);

class PvpModel {
 public:
  PvpModel(std::unique_ptr<backend::MaskedLm> backend, pvp::Pvp pvp,
           backend::Aggregation aggregation = backend::Aggregation::kMean);
  PvpModel(const PvpModel& other);
  PvpModel& operator=(const PvpModel& other);
  PvpModel(PvpModel&&) noexcept = default;
  PvpModel& operator=(PvpModel&&) noexcept = default;

  backend::MaskedLm& backend() { return *backend_; }
  const backend::MaskedLm& backend() const { return *backend_; }
  std::unique_ptr<backend::MaskedLm> release_backend() { return std::move(backend_); }
  const pvp::Pvp& pvp() const { return pvp_; }
  backend::Aggregation aggregation() const { return aggregation_; }
  std::size_t num_labels() const { return pvp_.verbalizer.size(); }

 private:
  std::unique_ptr<backend::MaskedLm> backend_;
  pvp::Pvp pvp_;
  backend::Aggregation aggregation_;
};

// Aggregated raw score per label (label order of the verbalizer).
std::vector<double> label_score(const PvpModel& model, const pvp::PatternInput& x);
std::map<std::string, double> label_score_map(const PvpModel& model, const pvp::PatternInput& x);

// Softmax over label scores. Throws kUsage on empty input.
std::vector<double> label_distribution(std::span<const double> scores);
std::map<std::string, double> label_distribution(const std::map<std::string, double>& scores);

// First index of the maximum.
std::size_t argmax(std::span<const double> values);

struct TrainingConfig {
  double learning_rate = 3e-5;
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  std::size_t warmup_steps = 50;
  double weight_decay = 1e-3;
  double max_grad_norm = 1.0;
  bool class_weighted = true;
  // Distillation only.
  double temperature = 2.0;

  static TrainingConfig t1_defaults();
  static TrainingConfig t2_defaults();
  static TrainingConfig distill_defaults();

  backend::OptimizerConfig optimizer(std::size_t total_steps) const;
};

// N / (K * n_k) for each label present in `labels` (K = number of present
// labels), 0 for absent labels.
std::vector<double> class_weights(std::span<const std::size_t> labels, std::size_t num_labels);

// epochs * ceil(n / batch)
std::size_t total_steps(std::size_t n, std::size_t batch_size, std::size_t epochs);

// Yields index batches over [0, n), reshuffling at the start of every pass;
// the last batch of a pass may be short.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
  Rng rng_;
};

struct StepRecord {
  bool main_task = true;
  double loss = 0.0;
  std::size_t batch_size = 0;
  std::vector<std::string> ids;
};
using TrainingLog = std::vector<StepRecord>;

// Labels of a labeled set, validated against the label space.
std::vector<std::size_t> gold_labels(std::span<const Instance> data, std::size_t num_labels);

// Cross-entropy cloze examples (one-hot targets) for a PVP.
std::vector<backend::MaskedExample> masked_examples(const pvp::Pvp& pvp,
                                                    std::span<const Instance> data,
                                                    std::span<const std::size_t> indices,
                                                    std::span<const double> weights,
                                                    backend::Aggregation aggregation,
                                                    std::string_view mask);

// Supervised cloze training: epochs * ceil(N/B) cross-entropy steps.
void train_single(PvpModel& model, std::span<const Instance> data, const TrainingConfig& hp,
                  std::uint64_t seed, TrainingLog* log = nullptr);

// Fraction of instances whose argmax label score equals the gold label.
double zero_shot_accuracy(const PvpModel& model, std::span<const Instance> data);

struct EnsembleSpec {
  std::vector<PvpModel> members;
  std::vector<double> weights;
  // Rescale weights to sum 1 before combining; argmax is unaffected.
  bool normalize_weights = false;
};

struct SoftLabelRecord {
  std::string id;
  std::vector<std::string> labels;
  std::vector<double> scores;
  std::vector<std::vector<double>> member_scores;
};

// s(l|x) = sum_i w_i * s_i(l|x) for each unlabeled instance.
std::vector<SoftLabelRecord> soft_label(const EnsembleSpec& ensemble,
                                        std::span<const Instance> unlabeled, std::size_t jobs = 1);

nlohmann::json to_json(const SoftLabelRecord& record);
SoftLabelRecord soft_label_from_json(const nlohmann::json& record,
                                     const std::vector<std::string>& labels);
void write_soft_labels(const std::filesystem::path& path, std::span<const SoftLabelRecord> records);
std::vector<SoftLabelRecord> read_soft_labels(const std::filesystem::path& path,
                                              const std::vector<std::string>& labels);

// softmax(scores / temperature)
std::vector<double> distillation_target(std::span<const double> scores, double temperature);

// Trains a fresh classification head on a copy of `base` against the
// temperature-softened soft labels with a KL loss. `inputs[i]` must carry the
// id of `soft[i]`.
std::unique_ptr<backend::MaskedLm> distill(const backend::MaskedLm& base,
                                           std::span<const Instance> inputs,
                                           std::span<const SoftLabelRecord> soft,
                                           const TrainingConfig& hp, std::uint64_t seed);

// Plain supervised sequence classifier on labeled data (fresh head).
std::unique_ptr<backend::MaskedLm> train_supervised(const backend::MaskedLm& base,
                                                    std::span<const Instance> data,
                                                    std::size_t num_labels,
                                                    const TrainingConfig& hp, std::uint64_t seed);

std::vector<std::size_t> predict(const backend::MaskedLm& classifier,
                                 std::span<const Instance> data);

}  // namespace mtpet::pet
