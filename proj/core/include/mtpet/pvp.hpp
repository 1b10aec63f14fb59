#pragma once

// Pattern-verbalizer pairs: cloze templates, label->token maps, the built-in
// registry for exaggeration detection (T1), claim strength (T2) and
// conclusion detection, and a margin-based verbalizer search.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mtpet/backend.hpp"

namespace mtpet::pvp {

enum class Role { kPress, kAbstract };
std::string_view to_string(Role role);
Role parse_role(std::string_view name);

enum class Task { kT1, kT2, kConclusion };
std::string_view to_string(Task task);
Task parse_task(std::string_view name);

// Ordered label names of a task's label space.
const std::vector<std::string>& label_names(Task task);

// Template syntax: {a}, optional {b}, one "[MASK]" sentinel, an optional
// role-choice group "[press_variant|abstract_variant]", and an optional
// pair separator marking the boundary between two segments.
struct Pattern {
  std::string template_text;
  std::string pair_separator = "||";
  // Inserts the missing space after sentence punctuation and collapses runs
  // of spaces in the template text. Off by default: templates render exactly
  // as written.
  bool normalize_whitespace = false;

  bool uses_b() const;
  bool has_role_choice() const;
};

struct Verbalizer {
  std::vector<std::string> labels;
  std::vector<std::vector<std::string>> tokens;
  // Tokenizers with a leading-space word convention see " token".
  bool leading_space = false;

  std::size_t size() const { return labels.size(); }
  // Tokens as handed to the backend (leading-space convention applied).
  std::vector<std::vector<std::string>> candidate_groups() const;
  // Throws kConfig unless every label has tokens and token sets are disjoint.
  void validate() const;
};

struct Pvp {
  Task task = Task::kT1;
  std::size_t index = 0;
  Pattern pattern;
  Verbalizer verbalizer;
};

// A main-task PVP and its complementary auxiliary PVP with the same index.
struct PvpTuple {
  Pvp main;
  std::optional<Pvp> auxiliary;
};

struct PatternInput {
  std::string a;
  std::optional<std::string> b;
  std::optional<Role> role;
};

backend::MaskedSequence apply_pattern(const Pattern& pattern, const std::string& a,
                                      const std::optional<std::string>& b,
                                      std::optional<Role> role,
                                      std::string_view mask = backend::kDefaultMaskToken);

inline backend::MaskedSequence apply_pattern(const Pattern& pattern, const PatternInput& input,
                                             std::string_view mask = backend::kDefaultMaskToken) {
  return apply_pattern(pattern, input.a, input.b, input.role, mask);
}

class Registry {
 public:
  explicit Registry(std::vector<Pvp> pvps);

  const std::vector<Pvp>& all() const { return pvps_; }
  std::vector<Pvp> for_task(Task task) const;
  const Pvp& get(Task task, std::size_t index) const;

  // Main/auxiliary tuples pairing PVPs of equal index.
  std::vector<PvpTuple> tuples(Task main, std::optional<Task> auxiliary) const;

 private:
  std::vector<Pvp> pvps_;
};

// The built-in PVPs: 2 for T1, 2 for T2, 6 for conclusion detection.
const Registry& registry();

nlohmann::json to_json(const Pvp& pvp);
Pvp pvp_from_json(const nlohmann::json& value);
nlohmann::json registry_to_json(const Registry& registry);
Registry registry_from_json(const nlohmann::json& value);
Registry load_registry(const std::filesystem::path& path);

struct LabeledInput {
  PatternInput input;
  std::size_t label = 0;
};

// For every label, ranks candidate tokens by the mean raw mask score over the
// label's examples minus the mean over the other labels' examples, and
// returns up to k tokens per label. A token goes to at most one label:
// (token, label) margins are taken in descending order (ties: label order,
// then candidate order). Candidates default to the whole vocabulary minus
// the mask.
std::vector<std::vector<std::string>> search_verbalizers(
    const Pattern& pattern, std::span<const LabeledInput> labeled, std::size_t num_labels,
    const backend::MaskedLm& model, std::size_t k,
    const std::optional<std::vector<std::string>>& candidates = std::nullopt);

}  // namespace mtpet::pvp
