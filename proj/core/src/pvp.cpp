#include "mtpet/pvp.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>

#include "mtpet/error.hpp"
#include "mtpet/io.hpp"
#include "mtpet/text.hpp"

namespace mtpet::pvp {

namespace {

const std::regex& role_group_regex() {
  static const std::regex re(R"(\[([^\[\]|]+)\|([^\[\]|]+)\])");
  return re;
}

std::string normalize(std::string text) {
  static const std::regex missing_space(R"(([.!?])([A-Za-z]))");
  static const std::regex runs(R"( {2,})");
  text = std::regex_replace(text, missing_space, "$1 $2");
  return std::regex_replace(text, runs, " ");
}

// Resolves the role group, then substitutes {a}/{b} in one left-to-right
// pass so filler text is never re-scanned.
std::string render_part(std::string part, const std::string& a,
                        const std::optional<std::string>& b, std::optional<Role> role) {
  std::smatch m;
  if (std::regex_search(part, m, role_group_regex())) {
    if (!role) fail(ErrorKind::kRole, "pattern has a role-choice group but no role was given");
    const std::string chosen = *role == Role::kPress ? m[1].str() : m[2].str();
    part = m.prefix().str() + chosen + m.suffix().str();
  }
  std::string out;
  for (std::size_t i = 0; i < part.size();) {
    if (part.compare(i, 3, "{a}") == 0 || part.compare(i, 3, "{b}") == 0) {
      const std::string& filler = part[i + 1] == 'a' ? a : *b;
      out += filler;
      i += 3;
      // A filler that already ends a sentence absorbs the template's period.
      if (!filler.empty() && filler.back() == '.' && i < part.size() && part[i] == '.') ++i;
      continue;
    }
    out.push_back(part[i]);
    ++i;
  }
  return out;
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

}  // namespace

std::string_view to_string(Role role) { return role == Role::kPress ? "press" : "abstract"; }

Role parse_role(std::string_view name) {
  if (name == "press") return Role::kPress;
  if (name == "abstract") return Role::kAbstract;
  fail(ErrorKind::kData, "unknown source role '" + std::string(name) + "'");
}

std::string_view to_string(Task task) {
  switch (task) {
    case Task::kT1: return "t1";
    case Task::kT2: return "t2";
    case Task::kConclusion: return "conclusion";
  }
  return "t1";
}

Task parse_task(std::string_view name) {
  const std::string lower = to_lower(name);
  if (lower == "t1") return Task::kT1;
  if (lower == "t2") return Task::kT2;
  if (lower == "conclusion") return Task::kConclusion;
  fail(ErrorKind::kConfig, "unknown task '" + std::string(name) + "'");
}

const std::vector<std::string>& label_names(Task task) {
  static const std::vector<std::string> t1 = {"downplays", "same", "exaggerates"};
  static const std::vector<std::string> t2 = {"no_relationship", "correlational",
                                              "conditional_causal", "causal"};
  static const std::vector<std::string> conclusion = {"not_conclusion", "conclusion"};
  switch (task) {
    case Task::kT1: return t1;
    case Task::kT2: return t2;
    case Task::kConclusion: return conclusion;
  }
  return t1;
}

bool Pattern::uses_b() const { return template_text.find("{b}") != std::string::npos; }

bool Pattern::has_role_choice() const {
  return std::regex_search(template_text, role_group_regex());
}

std::vector<std::vector<std::string>> Verbalizer::candidate_groups() const {
  if (!leading_space) return tokens;
  auto out = tokens;
  for (auto& group : out) {
    for (auto& t : group) t.insert(t.begin(), ' ');
  }
  return out;
}

void Verbalizer::validate() const {
  if (labels.size() != tokens.size()) {
    fail(ErrorKind::kConfig, "verbalizer label/token count mismatch");
  }
  std::set<std::string> seen;
  for (std::size_t l = 0; l < labels.size(); ++l) {
    if (tokens[l].empty()) {
      fail(ErrorKind::kConfig, "verbalizer has no tokens for label '" + labels[l] + "'");
    }
    for (const auto& t : tokens[l]) {
      if (!seen.insert(t).second) {
        fail(ErrorKind::kConfig, "verbalizer token '" + t + "' used by more than one label");
      }
    }
  }
}

backend::MaskedSequence apply_pattern(const Pattern& pattern, const std::string& a,
                                      const std::optional<std::string>& b,
                                      std::optional<Role> role, std::string_view mask) {
  if (trim(a).empty() || (b && trim(*b).empty())) {
    fail(ErrorKind::kUsage, "pattern inputs must be non-empty sentences");
  }
  if (pattern.uses_b() != b.has_value()) {
    fail(ErrorKind::kArity, pattern.uses_b() ? "pattern needs a second sentence {b}"
                                             : "pattern takes one sentence but two were given");
  }
  if (count_occurrences(pattern.template_text, mask) != 1) {
    fail(ErrorKind::kMalformedSequence, "template must contain exactly one mask sentinel");
  }
  if (a.find(mask) != std::string::npos || (b && b->find(mask) != std::string::npos)) {
    fail(ErrorKind::kMalformedSequence, "input sentence contains the mask sentinel");
  }

  std::string tmpl = pattern.normalize_whitespace ? normalize(pattern.template_text)
                                                  : pattern.template_text;
  backend::MaskedSequence z;
  const auto sep = pattern.pair_separator.empty() ? std::string::npos
                                                  : tmpl.find(pattern.pair_separator);
  if (sep == std::string::npos) {
    z.text = render_part(tmpl, a, b, role);
  } else {
    auto first_t = std::string(trim(std::string_view(tmpl).substr(0, sep)));
    auto second_t =
        std::string(trim(std::string_view(tmpl).substr(sep + pattern.pair_separator.size())));
    std::string first = render_part(first_t, a, b, role);
    std::string second = render_part(second_t, a, b, role);
    z.segment_boundary = first.size();
    z.text = std::move(first) + second;
  }
  backend::validate(z, mask);
  return z;
}

// ---------------------------------------------------------------------------
// Registry

Registry::Registry(std::vector<Pvp> pvps) : pvps_(std::move(pvps)) {
  for (const auto& p : pvps_) {
    p.verbalizer.validate();
    if (p.verbalizer.labels != label_names(p.task)) {
      fail(ErrorKind::kConfig, "PVP " + std::string(to_string(p.task)) + "/" +
                                   std::to_string(p.index) +
                                   " verbalizer labels do not match the task label space");
    }
  }
}

std::vector<Pvp> Registry::for_task(Task task) const {
  std::vector<Pvp> out;
  for (const auto& p : pvps_) {
    if (p.task == task) out.push_back(p);
  }
  std::sort(out.begin(), out.end(), [](const Pvp& x, const Pvp& y) { return x.index < y.index; });
  return out;
}

const Pvp& Registry::get(Task task, std::size_t index) const {
  for (const auto& p : pvps_) {
    if (p.task == task && p.index == index) return p;
  }
  fail(ErrorKind::kConfig, "no PVP " + std::string(to_string(task)) + "/" +
                               std::to_string(index) + " in registry");
}

std::vector<PvpTuple> Registry::tuples(Task main, std::optional<Task> auxiliary) const {
  std::vector<PvpTuple> out;
  for (const auto& m : for_task(main)) {
    PvpTuple t{m, std::nullopt};
    if (auxiliary) t.auxiliary = get(*auxiliary, m.index);
    out.push_back(std::move(t));
  }
  if (out.empty()) {
    fail(ErrorKind::kConfig, "registry has no PVPs for task " + std::string(to_string(main)));
  }
  return out;
}

namespace {

Verbalizer make_verbalizer(Task task, std::vector<std::vector<std::string>> tokens) {
  return Verbalizer{label_names(task), std::move(tokens), false};
}

std::vector<Pvp> builtin_pvps() {
  std::vector<Pvp> out;
  auto add = [&](Task task, std::size_t index, std::string tmpl, Verbalizer v) {
    out.push_back(Pvp{task, index, Pattern{std::move(tmpl), "||", false}, std::move(v)});
  };

  add(Task::kT1, 0,
      "Scientists claim {a}. || Reporters claim {b}.The reporters claims are [MASK]",
      make_verbalizer(Task::kT1, {{"preliminary", "competing", "uncertainties"},
                                  {"following", "explicit"},
                                  {"mistaken", "wrong", "hollow", "naive", "false", "lies"}}));
  add(Task::kT1, 1,
      "Academic literature claims {a}. || Popular media claims {b}. The media claims are [MASK]",
      make_verbalizer(Task::kT1,
                      {{"hypothetical", "theoretical", "conditional"},
                       {"identical"},
                       {"mistaken", "wrong", "premature", "fantasy", "noisy", "artifical"}}));

  const auto t2_verbalizer = make_verbalizer(
      Task::kT2,
      {{"sufficient", "enough", "authentic", "medium"},
       {"inferred", "estimated", "calculated", "borderline", "approximately", "variable",
        "roughly"},
       {"cautious", "premature", "uncertain", "conflicting", "limited"},
       {"touted", "proven", "replicated", "promoted", "distorted"}});
  add(Task::kT2, 0, "[Reporters|Scientists] say {a}. The claim strength is [MASK]",
      t2_verbalizer);
  add(Task::kT2, 1, "[Academic literature|Popular media] says {a}. The claim strength is [MASK]",
      t2_verbalizer);

  const auto conclusion_verbalizer = make_verbalizer(Task::kConclusion, {{"Text"}, {"Conclusion"}});
  const std::vector<std::string> conclusion_templates = {
      "[MASK]: {a}",       "[MASK] - {a}",  "\"[MASK]\" statement: {a}",
      "{a} ([MASK])",      "([MASK]) {a}",  "[Type: [MASK]] {a}",
  };
  for (std::size_t i = 0; i < conclusion_templates.size(); ++i) {
    add(Task::kConclusion, i, conclusion_templates[i], conclusion_verbalizer);
  }
  return out;
}

}  // namespace

const Registry& registry() {
  static const Registry r(builtin_pvps());
  return r;
}

Json to_json(const Pvp& pvp) {
  Json verbalizers = Json::object();
  for (std::size_t l = 0; l < pvp.verbalizer.size(); ++l) {
    verbalizers[pvp.verbalizer.labels[l]] = pvp.verbalizer.tokens[l];
  }
  return Json{{"task", to_string(pvp.task)},
              {"index", pvp.index},
              {"template", pvp.pattern.template_text},
              {"pair_separator", pvp.pattern.pair_separator},
              {"verbalizers", verbalizers}};
}

Pvp pvp_from_json(const Json& value) {
  try {
    Pvp p;
    p.task = parse_task(value.at("task").get<std::string>());
    p.index = value.at("index").get<std::size_t>();
    p.pattern.template_text = value.at("template").get<std::string>();
    p.pattern.pair_separator = value.value("pair_separator", std::string("||"));
    p.pattern.normalize_whitespace = value.value("normalize_whitespace", false);
    p.verbalizer.labels = label_names(p.task);
    p.verbalizer.leading_space = value.value("leading_space", false);
    const auto& verbalizers = value.at("verbalizers");
    for (const auto& label : p.verbalizer.labels) {
      if (!verbalizers.contains(label)) {
        fail(ErrorKind::kConfig, "PVP verbalizers missing label '" + label + "'");
      }
      p.verbalizer.tokens.push_back(verbalizers.at(label).get<std::vector<std::string>>());
    }
    if (verbalizers.size() != p.verbalizer.labels.size()) {
      fail(ErrorKind::kConfig, "PVP verbalizers name labels outside the task label space");
    }
    p.verbalizer.validate();
    return p;
  } catch (const Json::exception& e) {
    fail(ErrorKind::kConfig, std::string("invalid PVP entry: ") + e.what());
  }
}

Json registry_to_json(const Registry& registry) {
  Json out = Json::array();
  for (const auto& p : registry.all()) out.push_back(to_json(p));
  return out;
}

Registry registry_from_json(const Json& value) {
  if (!value.is_array()) fail(ErrorKind::kConfig, "PVP file must hold a JSON array");
  std::vector<Pvp> pvps;
  for (const auto& v : value) pvps.push_back(pvp_from_json(v));
  return Registry(std::move(pvps));
}

Registry load_registry(const std::filesystem::path& path) {
  return registry_from_json(read_json(path));
}

// ---------------------------------------------------------------------------
// Verbalizer search

std::vector<std::vector<std::string>> search_verbalizers(
    const Pattern& pattern, std::span<const LabeledInput> labeled, std::size_t num_labels,
    const backend::MaskedLm& model, std::size_t k,
    const std::optional<std::vector<std::string>>& candidates) {
  if (k < 1) fail(ErrorKind::kUsage, "k must be at least 1");
  if (labeled.empty()) fail(ErrorKind::kUsage, "no labeled examples");

  std::vector<std::size_t> counts(num_labels, 0);
  for (const auto& ex : labeled) {
    if (ex.label >= num_labels) fail(ErrorKind::kData, "example label outside label space");
    ++counts[ex.label];
  }
  for (std::size_t l = 0; l < num_labels; ++l) {
    if (counts[l] == 0) {
      fail(ErrorKind::kCoverage, "label " + std::to_string(l) + " has no examples");
    }
  }

  const auto& vocab = model.vocabulary();
  std::vector<std::string> cands;
  if (candidates) {
    cands = *candidates;
  } else {
    for (const auto& t : vocab.tokens()) {
      if (t != vocab.mask_token()) cands.push_back(t);
    }
  }
  const auto ids = backend::resolve_candidates(vocab, cands);

  // sums[l][t]: total score of token t over label-l examples.
  std::vector<std::vector<double>> sums(num_labels, std::vector<double>(cands.size(), 0.0));
  std::vector<double> totals(cands.size(), 0.0);
  for (const auto& ex : labeled) {
    const auto z = apply_pattern(pattern, ex.input, vocab.mask_token());
    const auto scores = model.token_scores(z, ids);
    for (std::size_t t = 0; t < cands.size(); ++t) {
      sums[ex.label][t] += scores[t];
      totals[t] += scores[t];
    }
  }

  struct Entry {
    double margin;
    std::size_t label;
    std::size_t token;
  };
  std::vector<Entry> entries;
  const double n = static_cast<double>(labeled.size());
  for (std::size_t l = 0; l < num_labels; ++l) {
    const double in_n = static_cast<double>(counts[l]);
    const double out_n = n - in_n;
    for (std::size_t t = 0; t < cands.size(); ++t) {
      const double in_mean = sums[l][t] / in_n;
      const double out_mean = out_n > 0 ? (totals[t] - sums[l][t]) / out_n : 0.0;
      entries.push_back({in_mean - out_mean, l, t});
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) {
    if (x.margin != y.margin) return x.margin > y.margin;
    if (x.label != y.label) return x.label < y.label;
    return x.token < y.token;
  });

  std::vector<std::vector<std::string>> out(num_labels);
  std::vector<bool> taken(cands.size(), false);
  for (const auto& e : entries) {
    if (taken[e.token] || out[e.label].size() >= k) continue;
    taken[e.token] = true;
    out[e.label].push_back(cands[e.token]);
  }
  return out;
}

}  // namespace mtpet::pvp
