#pragma once

// Task semantics for scientific exaggeration detection: the claim-strength
// and exaggeration label spaces, the mapping from the original seven-level
// annotation scheme, conclusion-sentence detection, and the two inference
// routes (T1: classify the pair; T2: classify each side, then compare).

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mtpet/backend.hpp"
#include "mtpet/pet.hpp"
#include "mtpet/pvp.hpp"

namespace mtpet::exaggeration {

enum class ClaimStrength : int {
  kNoRelationship = 0,
  kCorrelational = 1,
  kConditionalCausal = 2,
  kDirectCausal = 3,
};

enum class ExaggerationLabel : int {
  kDownplays = 0,
  kSame = 1,
  kExaggerates = 2,
};

inline constexpr int kNumStrengths = 4;
inline constexpr int kNumExaggerationLabels = 3;

// Seven-level annotation label (0..6) of the original press-release studies.
struct SumnerLabel {
  int value = 0;
};

ClaimStrength strength_from_int(long long value);
ExaggerationLabel exaggeration_from_int(long long value);

// 1->0, 2,3->1, 4,5->2, 6->3; 0 ("no relationship mentioned") has no image.
// Throws kUsage outside 0..6.
std::optional<ClaimStrength> map_sumner_to_li(SumnerLabel label);

// 0 when the press states a weaker claim than the abstract, 1 when equal,
// 2 when stronger.
ExaggerationLabel derive_exaggeration(ClaimStrength press, ClaimStrength abstract);

// Abbreviations used for transition analysis: NA, COR, CON, CAU.
std::string_view abbreviation(ClaimStrength strength);

struct DocumentPair {
  std::string id;
  std::vector<std::string> press_sentences;  // title first, then lead
  std::vector<std::string> abstract_sentences;
  std::optional<std::size_t> press_conclusion;
  std::optional<std::size_t> abstract_conclusion;
  std::optional<ClaimStrength> press_strength;
  std::optional<ClaimStrength> abstract_strength;
  std::optional<ExaggerationLabel> exaggeration;
};

void validate(const DocumentPair& pair);

struct SentencePair {
  std::string id;
  std::string press_sentence;
  std::string abstract_sentence;
  std::optional<ClaimStrength> press_strength;
  std::optional<ClaimStrength> abstract_strength;
  std::optional<ExaggerationLabel> exaggeration;
};

void validate(const SentencePair& pair);

struct StrengthSentence {
  std::string id;
  std::string sentence;
  pvp::Role source = pvp::Role::kAbstract;
  ClaimStrength strength = ClaimStrength::kNoRelationship;
};

struct ConclusionSentence {
  std::string id;
  std::string sentence;
  int is_conclusion = 0;
};

// JSON-lines record formats.
nlohmann::json to_json(const SentencePair& pair);
SentencePair sentence_pair_from_json(const nlohmann::json& record);
nlohmann::json to_json(const StrengthSentence& s);
StrengthSentence strength_sentence_from_json(const nlohmann::json& record);
nlohmann::json to_json(const ConclusionSentence& s);
ConclusionSentence conclusion_sentence_from_json(const nlohmann::json& record);

std::vector<SentencePair> read_sentence_pairs(const std::filesystem::path& path);
void write_sentence_pairs(const std::filesystem::path& path, std::span<const SentencePair> pairs);
std::vector<StrengthSentence> read_strength_sentences(const std::filesystem::path& path);
void write_strength_sentences(const std::filesystem::path& path,
                              std::span<const StrengthSentence> sentences);
std::vector<ConclusionSentence> read_conclusion_sentences(const std::filesystem::path& path);
void write_conclusion_sentences(const std::filesystem::path& path,
                                std::span<const ConclusionSentence> sentences);

// Task instances. T1 puts the abstract sentence in slot {a} and the press
// sentence in {b}; classifiers see (press, abstract).
pet::Instance t1_instance(const SentencePair& pair);
pet::Instance t2_instance(const StrengthSentence& sentence);
pet::Instance t2_instance(std::string id, std::string sentence, pvp::Role role,
                          std::optional<ClaimStrength> strength = std::nullopt);
pet::Instance conclusion_instance(const ConclusionSentence& sentence);
pet::Instance conclusion_instance(std::string id, std::string sentence);

struct ConclusionChoice {
  std::size_t index = 0;
  std::string sentence;
  double score = 0.0;
};

// Sentence with the highest raw label-1 ("conclusion") score; ties go to the
// earliest index.
ConclusionChoice detect_conclusion(std::span<const std::string> sentences,
                                   const pet::PvpModel& model);
// Same, scoring each sentence by the weighted ensemble combination.
ConclusionChoice detect_conclusion(std::span<const std::string> sentences,
                                   const pet::EnsembleSpec& ensemble);

struct T2Prediction {
  ExaggerationLabel label = ExaggerationLabel::kSame;
  ClaimStrength press = ClaimStrength::kNoRelationship;
  ClaimStrength abstract = ClaimStrength::kNoRelationship;
};

// Per-side claim strength from a 4-way classifier, then compared.
T2Prediction predict_t2(const SentencePair& pair, const backend::MaskedLm& strength_model);
// Ordered (press, abstract) pair through a 3-way classifier.
ExaggerationLabel predict_t1(const SentencePair& pair, const backend::MaskedLm& exaggeration_model);
std::vector<ExaggerationLabel> predict_t1(std::span<const SentencePair> pairs,
                                          const backend::MaskedLm& exaggeration_model);

}  // namespace mtpet::exaggeration
