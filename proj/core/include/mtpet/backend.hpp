#pragma once

// Masked language model abstraction: raw scores for candidate tokens at a
// single mask position, fine-tuning against per-label target distributions,
// and an optional sequence-classification head for the distilled model.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mtpet::backend {

inline constexpr std::string_view kDefaultMaskToken = "[MASK]";
inline constexpr int kCheckpointFormatVersion = 1;

using TokenId = std::size_t;

class Vocabulary {
 public:
  // Throws kVocabulary when the mask token is missing or tokens repeat.
  explicit Vocabulary(std::vector<std::string> tokens,
                      std::string mask_token = std::string(kDefaultMaskToken));

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::string& mask_token() const { return mask_token_; }
  TokenId mask_id() const { return mask_id_; }

  std::optional<TokenId> find(std::string_view token) const;
  // Throws kVocabulary for unknown tokens.
  TokenId id(std::string_view token) const;

  // Stable digest of the ordered token list.
  std::string hash() const;

  // Copy with any missing tokens appended in order.
  Vocabulary extended(const std::vector<std::string>& more) const;

 private:
  std::vector<std::string> tokens_;
  std::string mask_token_;
  TokenId mask_id_ = 0;
  std::unordered_map<std::string, TokenId> index_;
};

// Text with exactly one mask sentinel, optionally split in two segments at a
// character offset.
struct MaskedSequence {
  std::string text;
  std::optional<std::size_t> segment_boundary;

  std::string_view first_segment() const;
  std::string_view second_segment() const;
};

// Throws kMalformedSequence unless `z` has exactly one `mask` and some
// non-whitespace text outside it.
void validate(const MaskedSequence& z, std::string_view mask);

// Word-level tokenizer shared by the backend: whitespace separated, each
// punctuation character its own token, the mask sentinel kept whole.
std::vector<std::string> tokenize(std::string_view text, std::string_view mask);

enum class Mode { kTraining, kInference };

enum class Aggregation { kMean, kMax, kLogSumExp };
Aggregation parse_aggregation(std::string_view name);
std::string_view to_string(Aggregation agg);

struct LossSpec {
  enum class Kind { kCrossEntropy, kKlDivergence };
  Kind kind = Kind::kCrossEntropy;
  // Softening temperature for kKlDivergence; the loss carries a T^2 factor.
  double temperature = 1.0;
  // Task weight (alpha); a zero scale makes the step a no-op.
  double scale = 1.0;
};

// One cloze training instance: the label scores are aggregates of the raw
// mask-position scores of each label's verbalizer tokens.
struct MaskedExample {
  std::string id;
  MaskedSequence sequence;
  std::vector<std::vector<std::string>> label_tokens;
  std::vector<double> target;
  double weight = 1.0;
  Aggregation aggregation = Aggregation::kMean;
};

struct ClassifierExample {
  std::string id;
  std::string first;
  std::optional<std::string> second;
  std::vector<double> target;
  double weight = 1.0;
};

struct OptimizerConfig {
  double learning_rate = 5e-5;
  double weight_decay = 0.0;
  std::size_t warmup_steps = 0;
  // 0 keeps the rate constant after warmup; otherwise linear decay to 0.
  std::size_t total_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; <= 0 disables.
  double max_grad_norm = 1.0;
};

class AdamW {
 public:
  explicit AdamW(OptimizerConfig config) : config_(config) {}

  const OptimizerConfig& config() const { return config_; }
  std::size_t steps_taken() const { return step_; }
  double learning_rate_at(std::size_t step) const;

  void step(std::span<double> params, std::span<const double> grads);
  // Advances the schedule without touching parameters or moments.
  void skip() { ++step_; }

 private:
  OptimizerConfig config_;
  std::size_t step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

class MaskedLm {
 public:
  virtual ~MaskedLm() = default;

  virtual std::unique_ptr<MaskedLm> clone() const = 0;

  virtual const Vocabulary& vocabulary() const = 0;
  virtual const std::string& checkpoint_id() const = 0;
  virtual std::size_t max_length() const = 0;

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  // Raw scores of `candidates` at the mask of a validated sequence.
  virtual std::vector<double> token_scores(const MaskedSequence& z,
                                           std::span<const TokenId> candidates) const = 0;
  // grad += d(sum_i dscores[i] * score_i) / d(params).
  virtual void accumulate_token_gradient(const MaskedSequence& z,
                                         std::span<const TokenId> candidates,
                                         std::span<const double> dscores,
                                         std::span<double> grad) const = 0;

  // 0 when no classification head is attached.
  virtual std::size_t head_labels() const = 0;
  // Replaces any head with a freshly initialised one of `labels` outputs.
  virtual void attach_head(std::size_t labels) = 0;
  virtual std::vector<double> head_logits(std::string_view first,
                                          std::optional<std::string_view> second) const = 0;
  virtual void accumulate_head_gradient(std::string_view first,
                                        std::optional<std::string_view> second,
                                        std::span<const double> dlogits,
                                        std::span<double> grad) const = 0;

  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;

  virtual nlohmann::json describe() const = 0;

 protected:
  MaskedLm() = default;
  MaskedLm(const MaskedLm&) = default;
  MaskedLm& operator=(const MaskedLm&) = default;

 private:
  Mode mode_ = Mode::kInference;
};

// Fixed prior score added when `pattern` occurs in the sequence text.
struct PriorEntry {
  std::string pattern;
  TokenId token = 0;
  double score = 0.0;
};

struct HeadPriorEntry {
  std::string pattern;
  std::size_t label = 0;
  double score = 0.0;
};

struct LinearMlmConfig {
  std::string checkpoint_id = "linear-bow";
  // Hashed bag-of-words context features; 0 leaves only per-token biases.
  std::size_t buckets = 0;
  std::size_t max_length = 512;
};

// Linear masked LM over hashed bag-of-words context features plus a fixed
// prior table:
//   score(w | z) = prior(z, w) + bias[w] + sum_f x_f(z) * W[f, w]
// With a prior table and no buckets it is the table-driven mock used by the
// tests; without a table it is a small model trained from scratch.
class LinearMaskedLm final : public MaskedLm {
 public:
  LinearMaskedLm(Vocabulary vocab, LinearMlmConfig config,
                 std::vector<PriorEntry> prior = {},
                 std::vector<HeadPriorEntry> head_prior = {},
                 std::size_t head_prior_labels = 0);

  // Mock-table JSON:
  //   {"checkpoint_id", "vocabulary": [...], "mask_token", "buckets",
  //    "max_length", "scores": [{"pattern", "token", "score"}],
  //    "head": {"labels", "scores": [{"pattern", "label", "score"}]}}
  // Without "vocabulary" the mask plus every scored token is used.
  static std::unique_ptr<LinearMaskedLm> from_json(const nlohmann::json& table);

  std::unique_ptr<MaskedLm> clone() const override;
  const Vocabulary& vocabulary() const override { return vocab_; }
  const std::string& checkpoint_id() const override { return config_.checkpoint_id; }
  std::size_t max_length() const override { return config_.max_length; }
  const LinearMlmConfig& config() const { return config_; }

  std::vector<double> token_scores(const MaskedSequence& z,
                                   std::span<const TokenId> candidates) const override;
  void accumulate_token_gradient(const MaskedSequence& z, std::span<const TokenId> candidates,
                                 std::span<const double> dscores,
                                 std::span<double> grad) const override;

  std::size_t head_labels() const override { return head_labels_; }
  void attach_head(std::size_t labels) override;
  std::vector<double> head_logits(std::string_view first,
                                  std::optional<std::string_view> second) const override;
  void accumulate_head_gradient(std::string_view first, std::optional<std::string_view> second,
                                std::span<const double> dlogits,
                                std::span<double> grad) const override;

  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }

  nlohmann::json describe() const override;

  // Copy whose vocabulary also contains `tokens`; new tokens get zero weights.
  std::unique_ptr<LinearMaskedLm> with_tokens(const std::vector<std::string>& tokens) const;

 private:
  using Features = std::vector<std::pair<std::size_t, double>>;

  Features mask_features(const MaskedSequence& z) const;
  Features segment_features(std::string_view text) const;
  std::size_t token_block() const { return vocab_.size() * (1 + config_.buckets); }

  Vocabulary vocab_;
  LinearMlmConfig config_;
  std::vector<PriorEntry> prior_;
  std::vector<HeadPriorEntry> head_prior_;
  std::size_t head_prior_labels_ = 0;
  std::size_t head_labels_ = 0;
  // [bias V][W buckets*V][head bias L][head W L*2*buckets]
  std::vector<double> params_;
};

// Truncates token segments to `max_length` by dropping tokens from the end of
// the first segment, never the mask. Throws kUsage if that cannot suffice.
void fit_to_length(std::vector<std::string>& first, std::vector<std::string>& second,
                   std::size_t max_length, std::string_view mask);

// Resolves candidate strings to vocabulary ids. Multi-token candidates are
// scored by their first subtoken; a warning is appended for each.
std::vector<TokenId> resolve_candidates(const Vocabulary& vocab,
                                        const std::vector<std::string>& candidates,
                                        std::vector<std::string>* warnings = nullptr);

// Raw (unnormalised) score per candidate token at the mask.
std::map<std::string, double> score_masked(const MaskedLm& model, const MaskedSequence& z,
                                           const std::vector<std::string>& candidates,
                                           std::vector<std::string>* warnings = nullptr);

// Aggregated raw score per label for grouped verbalizer tokens.
std::vector<double> label_scores(const MaskedLm& model, const MaskedSequence& z,
                                 const std::vector<std::vector<std::string>>& label_tokens,
                                 Aggregation aggregation);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> example_losses;
  std::vector<double> gradient;
};

// Batch loss and its gradient w.r.t. all parameters, without updating.
LossGradient masked_loss_gradient(const MaskedLm& model, std::span<const MaskedExample> batch,
                                  const LossSpec& loss);
LossGradient classifier_loss_gradient(const MaskedLm& model,
                                      std::span<const ClassifierExample> batch,
                                      const LossSpec& loss);

// Returns the pre-update batch loss and applies exactly one optimizer step.
double fine_tune_batch(MaskedLm& model, std::span<const MaskedExample> batch,
                       const LossSpec& loss, AdamW& optimizer);
double fine_tune_classifier_batch(MaskedLm& model, std::span<const ClassifierExample> batch,
                                  const LossSpec& loss, AdamW& optimizer);

// Per-instance loss for raw label scores `scores` against `target`, and its
// derivative w.r.t. the scores.
double instance_loss(std::span<const double> scores, std::span<const double> target,
                     const LossSpec& loss, std::span<double> dscores);

std::vector<double> classify(const MaskedLm& model, std::string_view first,
                             std::optional<std::string_view> second = std::nullopt);
std::vector<std::vector<double>> classify_batch(
    const MaskedLm& model,
    const std::vector<std::pair<std::string, std::optional<std::string>>>& inputs);

// Throws kConfig unless a head with exactly `labels` outputs is attached.
void require_head(const MaskedLm& model, std::size_t labels);

// Directory with metadata.json, model.json and weights.bin.
void save_checkpoint(const MaskedLm& model, const std::filesystem::path& dir);
std::unique_ptr<MaskedLm> load_checkpoint(const std::filesystem::path& dir);

std::unique_ptr<LinearMaskedLm> load_mock_table(const std::filesystem::path& path);

}  // namespace mtpet::backend
