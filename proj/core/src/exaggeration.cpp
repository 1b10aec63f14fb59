#include "mtpet/exaggeration.hpp"

#include "mtpet/error.hpp"
#include "mtpet/io.hpp"
#include "mtpet/text.hpp"

namespace mtpet::exaggeration {

ClaimStrength strength_from_int(long long value) {
  if (value < 0 || value >= kNumStrengths) {
    fail(ErrorKind::kData, "claim strength " + std::to_string(value) + " outside 0..3");
  }
  return static_cast<ClaimStrength>(value);
}

ExaggerationLabel exaggeration_from_int(long long value) {
  if (value < 0 || value >= kNumExaggerationLabels) {
    fail(ErrorKind::kData, "exaggeration label " + std::to_string(value) + " outside 0..2");
  }
  return static_cast<ExaggerationLabel>(value);
}

std::optional<ClaimStrength> map_sumner_to_li(SumnerLabel label) {
  switch (label.value) {
    case 0: return std::nullopt;
    case 1: return ClaimStrength::kNoRelationship;
    case 2:
    case 3: return ClaimStrength::kCorrelational;
    case 4:
    case 5: return ClaimStrength::kConditionalCausal;
    case 6: return ClaimStrength::kDirectCausal;
    default:
      fail(ErrorKind::kUsage, "annotation label " + std::to_string(label.value) + " outside 0..6");
  }
}

ExaggerationLabel derive_exaggeration(ClaimStrength press, ClaimStrength abstract) {
  if (press < abstract) return ExaggerationLabel::kDownplays;
  if (press > abstract) return ExaggerationLabel::kExaggerates;
  return ExaggerationLabel::kSame;
}

std::string_view abbreviation(ClaimStrength strength) {
  switch (strength) {
    case ClaimStrength::kNoRelationship: return "NA";
    case ClaimStrength::kCorrelational: return "COR";
    case ClaimStrength::kConditionalCausal: return "CON";
    case ClaimStrength::kDirectCausal: return "CAU";
  }
  return "NA";
}

void validate(const DocumentPair& pair) {
  if (pair.press_sentences.empty() || pair.abstract_sentences.empty()) {
    fail(ErrorKind::kData, "document pair " + pair.id + " has an empty side");
  }
  if (pair.press_conclusion && *pair.press_conclusion >= pair.press_sentences.size()) {
    fail(ErrorKind::kData, "document pair " + pair.id + ": press conclusion index out of range");
  }
  if (pair.abstract_conclusion && *pair.abstract_conclusion >= pair.abstract_sentences.size()) {
    fail(ErrorKind::kData,
         "document pair " + pair.id + ": abstract conclusion index out of range");
  }
}

void validate(const SentencePair& pair) {
  if (trim(pair.press_sentence).empty() || trim(pair.abstract_sentence).empty()) {
    fail(ErrorKind::kData, "sentence pair " + pair.id + " has an empty sentence");
  }
}

// ---------------------------------------------------------------------------
// Records

namespace {

template <typename T, typename Conv>
std::optional<T> optional_int(const Json& record, const char* field, Conv conv) {
  auto it = record.find(field);
  if (it == record.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) {
    fail(ErrorKind::kData, std::string("field '") + field + "' must be an integer");
  }
  return conv(it->get<long long>());
}

template <typename T>
Json optional_value(const std::optional<T>& value) {
  return value ? Json(static_cast<int>(*value)) : Json(nullptr);
}

}  // namespace

Json to_json(const SentencePair& pair) {
  return Json{{"id", pair.id},
              {"press_sentence", pair.press_sentence},
              {"abstract_sentence", pair.abstract_sentence},
              {"press_strength", optional_value(pair.press_strength)},
              {"abstract_strength", optional_value(pair.abstract_strength)},
              {"exaggeration_label", optional_value(pair.exaggeration)}};
}

SentencePair sentence_pair_from_json(const Json& record) {
  SentencePair p;
  p.id = require_string(record, "id");
  try {
    p.press_sentence = require_string(record, "press_sentence");
    p.abstract_sentence = require_string(record, "abstract_sentence");
    p.press_strength = optional_int<ClaimStrength>(record, "press_strength", strength_from_int);
    p.abstract_strength =
        optional_int<ClaimStrength>(record, "abstract_strength", strength_from_int);
    p.exaggeration =
        optional_int<ExaggerationLabel>(record, "exaggeration_label", exaggeration_from_int);
    validate(p);
  } catch (const Error& e) {
    throw e.with_context("record " + p.id);
  }
  return p;
}

Json to_json(const StrengthSentence& s) {
  return Json{{"id", s.id},
              {"sentence", s.sentence},
              {"source", pvp::to_string(s.source)},
              {"strength", static_cast<int>(s.strength)}};
}

StrengthSentence strength_sentence_from_json(const Json& record) {
  StrengthSentence s;
  s.id = require_string(record, "id");
  try {
    s.sentence = require_string(record, "sentence");
    s.source = pvp::parse_role(require_string(record, "source"));
    s.strength = strength_from_int(require_int(record, "strength"));
    if (trim(s.sentence).empty()) fail(ErrorKind::kData, "empty sentence");
  } catch (const Error& e) {
    throw e.with_context("record " + s.id);
  }
  return s;
}

Json to_json(const ConclusionSentence& s) {
  return Json{{"id", s.id}, {"sentence", s.sentence}, {"is_conclusion", s.is_conclusion}};
}

ConclusionSentence conclusion_sentence_from_json(const Json& record) {
  ConclusionSentence s;
  s.id = require_string(record, "id");
  try {
    s.sentence = require_string(record, "sentence");
    const auto flag = require_int(record, "is_conclusion");
    if (flag != 0 && flag != 1) fail(ErrorKind::kData, "is_conclusion must be 0 or 1");
    s.is_conclusion = static_cast<int>(flag);
    if (trim(s.sentence).empty()) fail(ErrorKind::kData, "empty sentence");
  } catch (const Error& e) {
    throw e.with_context("record " + s.id);
  }
  return s;
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_records(const std::filesystem::path& path, Parse parse) {
  std::vector<T> out;
  for (const auto& j : read_jsonl(path)) out.push_back(parse(j));
  return out;
}

template <typename T>
void write_records(const std::filesystem::path& path, std::span<const T> records) {
  std::vector<Json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.push_back(to_json(r));
  write_jsonl(path, lines);
}

}  // namespace

std::vector<SentencePair> read_sentence_pairs(const std::filesystem::path& path) {
  return read_records<SentencePair>(path, sentence_pair_from_json);
}
void write_sentence_pairs(const std::filesystem::path& path, std::span<const SentencePair> pairs) {
  write_records(path, pairs);
}
std::vector<StrengthSentence> read_strength_sentences(const std::filesystem::path& path) {
  return read_records<StrengthSentence>(path, strength_sentence_from_json);
}
void write_strength_sentences(const std::filesystem::path& path,
                              std::span<const StrengthSentence> sentences) {
  write_records(path, sentences);
}
std::vector<ConclusionSentence> read_conclusion_sentences(const std::filesystem::path& path) {
  return read_records<ConclusionSentence>(path, conclusion_sentence_from_json);
}
void write_conclusion_sentences(const std::filesystem::path& path,
                                std::span<const ConclusionSentence> sentences) {
  write_records(path, sentences);
}

// ---------------------------------------------------------------------------
// Instances

pet::Instance t1_instance(const SentencePair& pair) {
  pet::Instance x;
  x.id = pair.id;
  x.input = {pair.abstract_sentence, pair.press_sentence, std::nullopt};
  if (pair.exaggeration) {
    x.label = static_cast<std::size_t>(*pair.exaggeration);
  } else if (pair.press_strength && pair.abstract_strength) {
    x.label =
        static_cast<std::size_t>(derive_exaggeration(*pair.press_strength, *pair.abstract_strength));
  }
  return x;
}

pet::Instance t2_instance(std::string id, std::string sentence, pvp::Role role,
                          std::optional<ClaimStrength> strength) {
  pet::Instance x;
  x.id = std::move(id);
  x.input = {std::move(sentence), std::nullopt, role};
  if (strength) x.label = static_cast<std::size_t>(*strength);
  return x;
}

pet::Instance t2_instance(const StrengthSentence& s) {
  return t2_instance(s.id, s.sentence, s.source, s.strength);
}

pet::Instance conclusion_instance(std::string id, std::string sentence) {
  pet::Instance x;
  x.id = std::move(id);
  x.input = {std::move(sentence), std::nullopt, std::nullopt};
  return x;
}

pet::Instance conclusion_instance(const ConclusionSentence& s) {
  auto x = conclusion_instance(s.id, s.sentence);
  x.label = static_cast<std::size_t>(s.is_conclusion);
  return x;
}

// ---------------------------------------------------------------------------
// Conclusion detection and prediction

namespace {

template <typename Score>
ConclusionChoice best_sentence(std::span<const std::string> sentences, Score score) {
  if (sentences.empty()) fail(ErrorKind::kUsage, "no sentences to choose a conclusion from");
  ConclusionChoice best;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const double s = score(sentences[i]);
    if (i == 0 || s > best.score) best = {i, sentences[i], s};
  }
  return best;
}

void require_conclusion_task(const pet::PvpModel& model) {
  if (model.pvp().task != pvp::Task::kConclusion) {
    fail(ErrorKind::kConfig, "conclusion detection needs a conclusion-task model");
  }
}

}  // namespace

ConclusionChoice detect_conclusion(std::span<const std::string> sentences,
                                   const pet::PvpModel& model) {
  require_conclusion_task(model);
  return best_sentence(sentences, [&](const std::string& s) {
    return pet::label_score(model, {s, std::nullopt, std::nullopt})[1];
  });
}

ConclusionChoice detect_conclusion(std::span<const std::string> sentences,
                                   const pet::EnsembleSpec& ensemble) {
  if (ensemble.members.empty() || ensemble.weights.size() != ensemble.members.size()) {
    fail(ErrorKind::kConfig, "ensemble needs members and one weight per member");
  }
  for (const auto& m : ensemble.members) require_conclusion_task(m);
  return best_sentence(sentences, [&](const std::string& s) {
    double total = 0.0;
    for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
      total += ensemble.weights[i] *
               pet::label_score(ensemble.members[i], {s, std::nullopt, std::nullopt})[1];
    }
    return total;
  });
}

T2Prediction predict_t2(const SentencePair& pair, const backend::MaskedLm& strength_model) {
  backend::require_head(strength_model, kNumStrengths);
  auto side = [&](const std::string& sentence, pvp::Role role) {
    const auto seg = pet::classifier_input({sentence, std::nullopt, role});
    const auto logits = backend::classify(strength_model, seg.first, std::string_view(*seg.second));
    return static_cast<ClaimStrength>(pet::argmax(logits));
  };
  T2Prediction p;
  p.press = side(pair.press_sentence, pvp::Role::kPress);
  p.abstract = side(pair.abstract_sentence, pvp::Role::kAbstract);
  p.label = derive_exaggeration(p.press, p.abstract);
  return p;
}

ExaggerationLabel predict_t1(const SentencePair& pair, const backend::MaskedLm& exaggeration_model) {
  backend::require_head(exaggeration_model, kNumExaggerationLabels);
  const auto logits =
      backend::classify(exaggeration_model, pair.press_sentence, pair.abstract_sentence);
  return static_cast<ExaggerationLabel>(pet::argmax(logits));
}

std::vector<ExaggerationLabel> predict_t1(std::span<const SentencePair> pairs,
                                          const backend::MaskedLm& exaggeration_model) {
  std::vector<ExaggerationLabel> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(predict_t1(p, exaggeration_model));
  return out;
}

}  // namespace mtpet::exaggeration
