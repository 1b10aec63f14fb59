#pragma once

// Corpus construction: ROUGE alignment of annotated finding paraphrases to
// document sentences, press-release truncation, stratified sampling, the
// abstract-fetch client, gold-set building and unlabeled-pair ingestion.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtpet/exaggeration.hpp"
#include "mtpet/rng.hpp"
#include "mtpet/text.hpp"

namespace mtpet::data {

using exaggeration::ConclusionSentence;
using exaggeration::DocumentPair;
using exaggeration::SentencePair;
using exaggeration::StrengthSentence;
using exaggeration::SumnerLabel;

// ---------------------------------------------------------------------------
// ROUGE

enum class RougeVariant { kRouge1, kRouge2, kRougeL };
RougeVariant parse_rouge_variant(std::string_view name);
std::string_view to_string(RougeVariant v);

struct RougeScore {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
};

// Over lowercased word tokens. Throws kUsage if either side has no tokens.
RougeScore rouge_score(std::string_view candidate, std::string_view reference,
                       RougeVariant variant = RougeVariant::kRougeL);

inline constexpr double kLowConfidenceF1 = 0.3;

struct SentenceMatch {
  std::size_t index = 0;
  double f1 = 0.0;
  bool low_confidence = false;
};

// Best-F1 sentence for a paraphrase; earliest index wins ties. Sentences
// without word tokens score 0.
SentenceMatch match_sentence(std::string_view paraphrase, std::span<const std::string> sentences,
                             RougeVariant variant = RougeVariant::kRougeL,
                             double threshold = kLowConfidenceF1);

// ---------------------------------------------------------------------------
// Press releases

struct PressDocument {
  std::string id;
  std::optional<std::string> title;
  std::optional<std::string> lead;
  std::vector<std::string> body;
};

// [title, lead, body_1..body_3]. Throws kData without a title; a missing
// lead is dropped with a warning appended to `warnings`.
std::vector<std::string> truncate_press(const PressDocument& doc,
                                        std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Sampling

// Per-label quotas proportional to the label distribution (largest
// remainder, ties to the lexicographically smaller label), members drawn by a
// seeded shuffle. Returns ascending indices into `labels`.
std::vector<std::size_t> stratified_indices(std::span<const std::string> labels, std::size_t n,
                                            std::uint64_t seed);

template <typename Record, typename LabelOf>
std::vector<Record> stratified_sample(std::span<const Record> records, std::size_t n,
                                      std::uint64_t seed, LabelOf label_of) {
  std::vector<std::string> labels;
  labels.reserve(records.size());
  for (const auto& r : records) labels.push_back(label_of(r));
  std::vector<Record> out;
  for (auto i : stratified_indices(labels, n, seed)) out.push_back(records[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Abstract fetching

struct HttpResponse {
  int status = 0;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // `target` is the path plus query, appended to the configured base URL.
  virtual HttpResponse get(const std::string& target,
                           const std::multimap<std::string, std::string>& headers) = 0;
};

// cpp-httplib client; one connection per request, so safe to share.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(std::string base_url, std::chrono::seconds timeout = std::chrono::seconds(30));
  HttpResponse get(const std::string& target,
                   const std::multimap<std::string, std::string>& headers) override;

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::seconds timeout_;
};

struct FetchConfig {
  std::string base_url = "https://api.semanticscholar.org/graph/v1";
  std::string api_key;
  int max_tries = 5;
  std::chrono::milliseconds base_delay{1000};
  std::function<void(std::chrono::milliseconds)> sleep;

  // Overrides from EXAG_FETCH_BASE_URL / EXAG_FETCH_API_KEY when set.
  static FetchConfig from_env();
};

bool valid_doi(std::string_view doi);

// GET /paper/{doi}?fields=abstract. 404 and a null abstract give nullopt;
// 429 is retried with doubling delays, kRateLimit after max_tries; other
// statuses are kIo, unparseable bodies kParse.
std::optional<std::string> fetch_abstract(std::string_view doi, Transport& transport,
                                          const FetchConfig& config);

// Concurrent fetch over at most `connections` workers; results by position.
// Per-DOI failures are reported in `errors` (same length) and leave nullopt.
std::vector<std::optional<std::string>> fetch_abstracts(std::span<const std::string> dois,
                                                        Transport& transport,
                                                        const FetchConfig& config,
                                                        std::size_t connections,
                                                        std::vector<std::string>* errors = nullptr);

// ---------------------------------------------------------------------------
// Gold set

// Raw annotation export row: the annotated finding paraphrase and its
// seven-level code on each side.
struct AnnotationRecord {
  std::string id;
  std::string doi;
  std::string press_finding;
  std::string abstract_finding;
  SumnerLabel press_code;
  SumnerLabel abstract_code;
};

AnnotationRecord annotation_from_json(const nlohmann::json& record);
PressDocument press_from_json(const nlohmann::json& record);

struct SkippedRecord {
  std::string id;
  std::string reason;
};

struct LowConfidenceAlignment {
  std::string id;
  std::string side;
  std::string paraphrase;
  std::size_t index = 0;
  std::string sentence;
  double f1 = 0.0;
};

struct GoldConfig {
  std::uint64_t seed = 42;
  std::size_t train_size = 100;
  RougeVariant rouge = RougeVariant::kRougeL;
  double low_confidence_threshold = kLowConfidenceF1;
  SentenceSplitter splitter = split_sentences;
};

struct GoldSet {
  std::vector<DocumentPair> documents;  // sorted by id
  std::vector<SentencePair> pairs;      // sorted by id
  std::vector<SentencePair> train;
  std::vector<SentencePair> test;
  std::vector<ConclusionSentence> conclusions;
  std::vector<StrengthSentence> strength_train;
  std::vector<StrengthSentence> strength_test;
  std::vector<LowConfidenceAlignment> low_confidence;
  std::vector<SkippedRecord> skipped;
  std::vector<std::string> warnings;
  nlohmann::json manifest;
};

// `abstracts` maps DOI to abstract text (absent or null when unavailable).
GoldSet build_gold(std::span<const AnnotationRecord> annotations,
                   const std::map<std::string, std::optional<std::string>>& abstracts,
                   std::span<const PressDocument> press, const GoldConfig& config);

struct GoldInputs {
  std::filesystem::path annotations;
  std::filesystem::path abstracts;
  std::filesystem::path press;
};

// Reads the three JSON-lines inputs, builds, and writes gold_pairs.jsonl,
// train.jsonl, test.jsonl, conclusions.jsonl, strength_train.jsonl,
// strength_test.jsonl, low_confidence.jsonl and manifest.json into `out_dir`.
// Malformed rows are skipped and listed in the manifest.
GoldSet build_gold_files(const GoldInputs& inputs, const std::filesystem::path& out_dir,
                         const GoldConfig& config);

// ---------------------------------------------------------------------------
// Unlabeled pairs

struct UnlabeledPair {
  std::string id;
  std::string doi;
  std::string title;
  std::string lead;
  std::vector<std::string> press_sentences;  // truncated press release
  std::vector<std::string> abstract_sentences;
};

nlohmann::json to_json(const UnlabeledPair& pair);
UnlabeledPair unlabeled_from_json(const nlohmann::json& record);
std::vector<UnlabeledPair> read_unlabeled(const std::filesystem::path& path);

struct IngestResult {
  std::vector<UnlabeledPair> pairs;  // sorted by id
  std::vector<SkippedRecord> skipped;
  std::vector<std::string> warnings;
};

// Raw rows {id, doi, title, lead, body, abstract}; body and abstract may be
// a string (split into sentences) or a list of sentences.
IngestResult ingest_unlabeled(std::span<const nlohmann::json> raw,
                              const SentenceSplitter& splitter = split_sentences);

}  // namespace mtpet::data
