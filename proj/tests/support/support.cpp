#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>

#include "mtpet/error.hpp"
#include "mtpet/eval.hpp"
#include "mtpet/pvp.hpp"
#include "mtpet/rng.hpp"

namespace mtpet::testing {

namespace fs = std::filesystem;
using exaggeration::ClaimStrength;
using exaggeration::ExaggerationLabel;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  path_ = fs::temp_directory_path() /
          (tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

fs::path fixture_dir() { return fs::path(MTPET_FIXTURE_DIR); }

std::string exaggeration_marker(ExaggerationLabel label) {
  switch (label) {
    case ExaggerationLabel::kDownplays: return "zqdown";
    case ExaggerationLabel::kSame: return "zqsame";
    case ExaggerationLabel::kExaggerates: return "zqexag";
  }
  return "";
}

std::string strength_marker(ClaimStrength strength) {
  switch (strength) {
    case ClaimStrength::kNoRelationship: return "zqna";
    case ClaimStrength::kCorrelational: return "zqcor";
    case ClaimStrength::kConditionalCausal: return "zqcon";
    case ClaimStrength::kDirectCausal: return "zqcau";
  }
  return "";
}

namespace {

const std::vector<std::string> kWords = {
    "patients", "coffee",  "risk",   "study",  "sleep",   "memory", "heart",  "daily",
    "adults",   "linked",  "lower",  "higher", "trial",   "cohort", "weight", "exercise",
    "children", "reduced", "levels", "stress", "improve", "diet",   "brain",  "blood"};

std::string filler(Rng& rng, std::size_t words) {
  std::string s;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) s += ' ';
    s += kWords[rng.uniform_index(kWords.size())];
  }
  return s;
}

ClaimStrength random_strength(Rng& rng) {
  return static_cast<ClaimStrength>(rng.uniform_index(exaggeration::kNumStrengths));
}

}  // namespace

std::vector<exaggeration::SentencePair> synthetic_pairs(std::size_t n, std::uint64_t seed,
                                                        const std::string& id_prefix,
                                                        bool neutral_text) {
  Rng rng(seed);
  std::vector<exaggeration::SentencePair> out;
  std::string press_filler, abstract_filler;
  for (std::size_t i = 0; i < n; ++i) {
    // Cycle the label so every split sees all three.
    const auto label = static_cast<ExaggerationLabel>(i % 3);
    ClaimStrength press, abstract;
    do {
      press = random_strength(rng);
      abstract = random_strength(rng);
    } while (exaggeration::derive_exaggeration(press, abstract) != label);
    exaggeration::SentencePair p;
    p.id = id_prefix + std::to_string(i);
    if (!neutral_text || i % 3 == 0) {
      press_filler = filler(rng, 1 + rng.uniform_index(2));
      abstract_filler = filler(rng, 1 + rng.uniform_index(2));
    }
    const auto marker = [&](ClaimStrength s) {
      return neutral_text ? std::string() : strength_marker(s) + " ";
    };
    p.press_sentence =
        "Reports " + exaggeration_marker(label) + " " + marker(press) + press_filler + ".";
    p.abstract_sentence = "We found " + marker(abstract) + abstract_filler + ".";
    p.press_strength = press;
    p.abstract_strength = abstract;
    p.exaggeration = label;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<exaggeration::StrengthSentence> synthetic_strengths(std::size_t n, std::uint64_t seed,
                                                                const std::string& id_prefix) {
  Rng rng(seed);
  std::vector<exaggeration::StrengthSentence> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto strength = static_cast<ClaimStrength>(i % exaggeration::kNumStrengths);
    exaggeration::StrengthSentence s;
    s.id = id_prefix + std::to_string(i);
    s.source = rng.coin() ? pvp::Role::kPress : pvp::Role::kAbstract;
    s.strength = strength;
    s.sentence = "Claim " + strength_marker(strength) + " " + filler(rng, 4 + rng.uniform_index(4)) + ".";
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json oracle_table(std::size_t buckets, double score) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& p : pvp::registry().all()) {
    for (std::size_t l = 0; l < p.verbalizer.size(); ++l) {
      std::string marker;
      switch (p.task) {
        case pvp::Task::kT1: marker = exaggeration_marker(static_cast<ExaggerationLabel>(l)); break;
        case pvp::Task::kT2: marker = strength_marker(static_cast<ClaimStrength>(l)); break;
        case pvp::Task::kConclusion:
          if (l != 1) continue;
          marker = kConclusionMarker;
          break;
      }
      for (const auto& token : p.verbalizer.tokens[l]) {
        nlohmann::json entry = {{"pattern", marker}, {"token", token}, {"score", score}};
        if (std::find(scores.begin(), scores.end(), entry) == scores.end()) scores.push_back(entry);
      }
    }
  }
  // Vocabulary: mask plus every verbalizer token, so the layout is fixed.
  std::vector<std::string> vocab{std::string(backend::kDefaultMaskToken)};
  for (const auto& p : pvp::registry().all()) {
    for (const auto& group : p.verbalizer.tokens) {
      for (const auto& t : group) {
        if (std::find(vocab.begin(), vocab.end(), t) == vocab.end()) vocab.push_back(t);
      }
    }
  }
  return {{"checkpoint_id", "oracle-mock"},
          {"vocabulary", vocab},
          {"buckets", buckets},
          {"scores", scores}};
}

std::unique_ptr<backend::LinearMaskedLm> oracle_model(std::size_t buckets) {
  return backend::LinearMaskedLm::from_json(oracle_table(buckets));
}

PipelineCase t1_pipeline_case(std::uint64_t seed) {
  PipelineCase c;
  const auto pairs = synthetic_pairs(50, seed, "p", true);
  const auto aux = synthetic_strengths(20, seed + 1);
  c.spec.main.task = pvp::Task::kT1;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto x = exaggeration::t1_instance(pairs[i]);
    if (i < 9) {
      c.spec.main.data.push_back(x);
    } else if (i < 36) {
      x.label.reset();
      c.spec.unlabeled.push_back(x);
    } else {
      c.test.push_back(x);
    }
  }
  c.spec.aux = multitask::TaskData{pvp::Task::kT2, {}};
  for (const auto& s : aux) c.spec.aux->data.push_back(exaggeration::t2_instance(s));
  c.spec.tuples = pvp::registry().tuples(pvp::Task::kT1, pvp::Task::kT2);

  c.config.member = pet::TrainingConfig::t1_defaults();
  c.config.member.epochs = 2;
  c.config.distill = pet::TrainingConfig::distill_defaults();
  c.config.distill.learning_rate = 0.05;
  c.config.distill.warmup_steps = 0;
  c.config.distill.epochs = 10;
  c.base = oracle_model(256);
  return c;
}

multitask::Evaluator macro_f1_evaluator(const std::vector<pet::Instance>& test, pvp::Task task) {
  return [test, task](const backend::MaskedLm& classifier) {
    const auto& names = pvp::label_names(task);
    return eval::macro_prf(pet::predict(classifier, test), pet::gold_labels(test, names.size()),
                           names);
  };
}

}  // namespace mtpet::testing
