#pragma once

// Shared fixtures for the unit and acceptance tests: temporary directories,
// a marker-keyed synthetic corpus and the oracle mock backend that scores it.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtpet/backend.hpp"
#include "mtpet/exaggeration.hpp"
#include "mtpet/mtpet.hpp"
#include "mtpet/pet.hpp"

namespace mtpet::testing {

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "mtpet");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::filesystem::path fixture_dir();

// Press sentences carry the pair's exaggeration marker and its own strength
// marker; abstract sentences carry their strength marker only.
std::string exaggeration_marker(exaggeration::ExaggerationLabel label);
std::string strength_marker(exaggeration::ClaimStrength strength);
inline constexpr const char* kConclusionMarker = "zqfinal";

// With neutral_text the strength markers are dropped and each consecutive
// label triple shares its filler, so the exaggeration marker is the only
// label signal in the text.
std::vector<exaggeration::SentencePair> synthetic_pairs(std::size_t n, std::uint64_t seed,
                                                        const std::string& id_prefix = "p",
                                                        bool neutral_text = false);
std::vector<exaggeration::StrengthSentence> synthetic_strengths(std::size_t n, std::uint64_t seed,
                                                                const std::string& id_prefix = "s");

// Mock table: +5 for every verbalizer token of the label whose marker occurs
// in the sequence, for all built-in PVPs.
nlohmann::json oracle_table(std::size_t buckets = 0, double score = 5.0);
std::unique_ptr<backend::LinearMaskedLm> oracle_model(std::size_t buckets = 0);

struct PipelineCase {
  multitask::TaskSpec spec;
  std::vector<pet::Instance> test;
  multitask::PipelineConfig config;
  std::unique_ptr<backend::LinearMaskedLm> base;  // oracle_model(256)
};

// 50 neutral-text T1 pairs (9 train, 27 unlabeled, 14 test) plus 20 T2
// auxiliary sentences.
PipelineCase t1_pipeline_case(std::uint64_t seed = 7);

// Two trainable scalars, nonlinear scores:
//   s(good) = t0 * t1, s(bad) = t0^2 - t1, s(meh) = sin(t1)
class TwoParamMock final : public backend::MaskedLm {
 public:
  TwoParamMock() : vocab_({"[MASK]", "good", "bad", "meh"}), params_{0.7, -0.4} {}

  std::unique_ptr<backend::MaskedLm> clone() const override {
    return std::make_unique<TwoParamMock>(*this);
  }
  const backend::Vocabulary& vocabulary() const override { return vocab_; }
  const std::string& checkpoint_id() const override { return id_; }
  std::size_t max_length() const override { return 64; }

  std::vector<double> token_scores(const backend::MaskedSequence&,
                                   std::span<const backend::TokenId> candidates) const override {
    std::vector<double> out;
    for (auto w : candidates) out.push_back(score(w));
    return out;
  }
  void accumulate_token_gradient(const backend::MaskedSequence&,
                                 std::span<const backend::TokenId> candidates,
                                 std::span<const double> dscores,
                                 std::span<double> grad) const override {
    const double t0 = params_[0], t1 = params_[1];
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      switch (candidates[i]) {
        case 1: grad[0] += dscores[i] * t1; grad[1] += dscores[i] * t0; break;
        case 2: grad[0] += dscores[i] * 2 * t0; grad[1] -= dscores[i]; break;
        case 3: grad[1] += dscores[i] * std::cos(t1); break;
        default: break;
      }
    }
  }
  std::size_t head_labels() const override { return 0; }
  void attach_head(std::size_t) override {}
  std::vector<double> head_logits(std::string_view, std::optional<std::string_view>) const override {
    return {};
  }
  void accumulate_head_gradient(std::string_view, std::optional<std::string_view>,
                                std::span<const double>, std::span<double>) const override {}
  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  nlohmann::json describe() const override { return nlohmann::json::object(); }

 private:
  double score(backend::TokenId w) const {
    const double t0 = params_[0], t1 = params_[1];
    switch (w) {
      case 1: return t0 * t1;
      case 2: return t0 * t0 - t1;
      case 3: return std::sin(t1);
      default: return 0.0;
    }
  }

  backend::Vocabulary vocab_;
  std::string id_ = "two-param";
  std::vector<double> params_;
};

multitask::Evaluator macro_f1_evaluator(const std::vector<pet::Instance>& test, pvp::Task task);

}  // namespace mtpet::testing
