#include <doctest.h>

#include <algorithm>
#include <map>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "mtpet/backend.hpp"
#include "mtpet/error.hpp"
#include "mtpet/io.hpp"
#include "mtpet/pvp.hpp"
#include "mtpet/rng.hpp"
#include "support.hpp"

using namespace mtpet;
using namespace mtpet::pvp;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an mtpet::Error");
  return ErrorKind::kUsage;
}

std::size_t count(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string_view::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

std::string random_sentence(Rng& rng) {
  static const std::vector<std::string> words = {
      "Coffee", "cures",  "cancer", "in",    "mice", "daily", "walking", "halves", "risk",
      "of",     "stroke", "Über",   "(n=3)", "50%",  "a|b",   "x-ray",   "says:",  "\"quoted\""};
  std::string s;
  const auto n = 1 + rng.uniform_index(12);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += words[rng.uniform_index(words.size())];
  }
  if (rng.coin()) s += '.';
  return s;
}

}  // namespace

TEST_CASE("T2 pattern 0 resolves the role group") {
  const auto& p = registry().get(Task::kT2, 0);
  const auto press = apply_pattern(p.pattern, "Coffee cures cancer.", std::nullopt, Role::kPress);
  CHECK(press.text == "Reporters say Coffee cures cancer. The claim strength is [MASK]");
  CHECK_FALSE(press.segment_boundary.has_value());
  const auto abstract = apply_pattern(p.pattern, "Coffee cures cancer.", std::nullopt, Role::kAbstract);
  CHECK(abstract.text == "Scientists say Coffee cures cancer. The claim strength is [MASK]");
}

TEST_CASE("T1 pattern 0 renders two segments with printed spacing") {
  const auto& p = registry().get(Task::kT1, 0);
  const auto z = apply_pattern(p.pattern, "X", std::string("Y"), std::nullopt);
  REQUIRE(z.segment_boundary.has_value());
  CHECK(z.first_segment() == "Scientists claim X.");
  CHECK(z.second_segment() == "Reporters claim Y.The reporters claims are [MASK]");
}

TEST_CASE("normalize_whitespace inserts the missing space") {
  auto pattern = registry().get(Task::kT1, 0).pattern;
  pattern.normalize_whitespace = true;
  const auto z = apply_pattern(pattern, "X", std::string("Y"), std::nullopt);
  CHECK(z.second_segment() == "Reporters claim Y. The reporters claims are [MASK]");
}

TEST_CASE("arity and role errors") {
  const auto& t1 = registry().get(Task::kT1, 0);
  CHECK(kind_of([&] { apply_pattern(t1.pattern, "X", std::nullopt, std::nullopt); }) == ErrorKind::kArity);
  const auto& t2 = registry().get(Task::kT2, 0);
  CHECK(kind_of([&] { apply_pattern(t2.pattern, "X", std::nullopt, std::nullopt); }) == ErrorKind::kRole);
  CHECK(kind_of([&] { apply_pattern(t2.pattern, "X", std::string("Y"), Role::kPress); }) == ErrorKind::kArity);
  CHECK(kind_of([&] { apply_pattern(t2.pattern, "", std::nullopt, Role::kPress); }) == ErrorKind::kUsage);
}

TEST_CASE("registry holds the built-in PVPs") {
  const auto& r = registry();
  CHECK(r.for_task(Task::kT1).size() == 2);
  CHECK(r.for_task(Task::kT2).size() == 2);
  CHECK(r.for_task(Task::kConclusion).size() == 6);
  const auto& c = r.get(Task::kConclusion, 3);
  CHECK(c.verbalizer.tokens[1] == std::vector<std::string>{"Conclusion"});
  CHECK(c.verbalizer.tokens[0] == std::vector<std::string>{"Text"});
  const auto& causal = r.get(Task::kT2, 1).verbalizer.tokens[3];
  CHECK(std::find(causal.begin(), causal.end(), "proven") != causal.end());
  CHECK(r.get(Task::kT1, 0).verbalizer.tokens[2].front() == "mistaken");
  CHECK(kind_of([&] { r.get(Task::kT1, 5); }) == ErrorKind::kConfig);
}

TEST_CASE("tuples pair PVPs of equal index") {
  const auto tuples = registry().tuples(Task::kT1, Task::kT2);
  REQUIRE(tuples.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(tuples[i].main.index == i);
    REQUIRE(tuples[i].auxiliary.has_value());
    CHECK(tuples[i].auxiliary->index == i);
    CHECK(tuples[i].auxiliary->task == Task::kT2);
  }
  CHECK(registry().tuples(Task::kConclusion, std::nullopt).size() == 6);
  CHECK(kind_of([] { registry().tuples(Task::kConclusion, Task::kT1); }) == ErrorKind::kConfig);
}

TEST_CASE("property: every registry pattern renders exactly one mask for random fillers") {
  Rng rng(2024);
  const std::regex group(R"(\[([^\[\]|]+)\|([^\[\]|]+)\])");
  std::size_t rendered = 0;
  for (const auto& p : registry().all()) {
    std::smatch m;
    const bool has_group = std::regex_search(p.pattern.template_text, m, group);
    CHECK(has_group == p.pattern.has_role_choice());
    for (int i = 0; i < 1000; ++i) {
      const auto a = random_sentence(rng);
      const std::optional<std::string> b =
          p.pattern.uses_b() ? std::optional<std::string>(random_sentence(rng)) : std::nullopt;
      const Role role = rng.coin() ? Role::kPress : Role::kAbstract;
      const auto z = apply_pattern(p.pattern, a, b,
                                   has_group ? std::optional<Role>(role) : std::nullopt);
      CHECK(count(z.text, "[MASK]") == 1);
      CHECK_NOTHROW(backend::validate(z, "[MASK]"));
      CHECK(backend::tokenize(z.text, "[MASK]").size() > 1);
      CHECK(z.segment_boundary.has_value() == p.pattern.uses_b());
      if (has_group) {
        const std::string chosen = role == Role::kPress ? m[1].str() : m[2].str();
        const std::string other = role == Role::kPress ? m[2].str() : m[1].str();
        CHECK(z.text.find(chosen) != std::string::npos);
        if (other.find(chosen) == std::string::npos && a.find(other) == std::string::npos) {
          CHECK(z.text.find(other) == std::string::npos);
        }
      }
      ++rendered;
    }
  }
  CHECK(rendered == 10 * 1000);
}

TEST_CASE("property: verbalizers of every registry entry are disjoint and complete") {
  for (const auto& p : registry().all()) {
    CHECK_NOTHROW(p.verbalizer.validate());
    CHECK(p.verbalizer.labels == label_names(p.task));
    std::set<std::string> seen;
    for (const auto& group : p.verbalizer.tokens) {
      CHECK_FALSE(group.empty());
      for (const auto& t : group) CHECK(seen.insert(t).second);
    }
  }
  Verbalizer overlapping{{"a", "b"}, {{"x"}, {"x", "y"}}};
  CHECK(kind_of([&] { overlapping.validate(); }) == ErrorKind::kConfig);
}

TEST_CASE("property: apply_pattern is injective in a") {
  Rng rng(77);
  for (const auto& p : registry().all()) {
    std::map<std::string, std::string> seen;  // output -> a
    for (int i = 0; i < 300; ++i) {
      auto a = random_sentence(rng);
      // A trailing period of the filler is absorbed by the template's own.
      if (!a.empty() && a.back() == '.') a.pop_back();
      const auto z = apply_pattern(
          p.pattern, a, p.pattern.uses_b() ? std::optional<std::string>("fixed b") : std::nullopt,
          p.pattern.has_role_choice() ? std::optional<Role>(Role::kAbstract) : std::nullopt);
      auto [it, inserted] = seen.emplace(z.text, a);
      if (!inserted) CHECK(it->second == a);
    }
  }
}

TEST_CASE("registry JSON round trip and user PVP files") {
  mtpet::testing::TempDir dir;
  const auto json = registry_to_json(registry());
  write_json(dir / "pvps.json", json);
  const auto loaded = load_registry(dir / "pvps.json");
  REQUIRE(loaded.all().size() == registry().all().size());
  for (std::size_t i = 0; i < loaded.all().size(); ++i) {
    CHECK(loaded.all()[i].pattern.template_text == registry().all()[i].pattern.template_text);
    CHECK(loaded.all()[i].verbalizer.tokens == registry().all()[i].verbalizer.tokens);
  }
  auto bad = json;
  bad[0]["verbalizers"]["same"] = {"mistaken"};
  CHECK(kind_of([&] { registry_from_json(bad); }) == ErrorKind::kConfig);
  auto missing = json;
  missing[0]["verbalizers"].erase("same");
  CHECK(kind_of([&] { registry_from_json(missing); }) == ErrorKind::kConfig);
}

TEST_CASE("search_verbalizers ranks the separable token first") {
  auto model = backend::LinearMaskedLm::from_json(
      {{"vocabulary", {"[MASK]", "proven", "limited", "roughly", "enough"}},
       {"scores", {{{"pattern", "zqcau"}, {"token", "proven"}, {"score", 5.0}},
                   {{"pattern", "zqcon"}, {"token", "limited"}, {"score", 2.0}}}}});
  const auto& pattern = registry().get(Task::kT2, 0).pattern;
  std::vector<LabeledInput> labeled;
  const char* markers[] = {"zqna", "zqcor", "zqcon", "zqcau"};
  for (std::size_t l = 0; l < 4; ++l) {
    for (int i = 0; i < 2; ++i) {
      labeled.push_back({{std::string("claim ") + markers[l] + " " + std::to_string(i), std::nullopt,
                          Role::kPress},
                         l});
    }
  }
  const auto out = search_verbalizers(pattern, labeled, 4, *model, 1);
  REQUIRE(out.size() == 4);
  CHECK(out[3] == std::vector<std::string>{"proven"});
  CHECK(out[2] == std::vector<std::string>{"limited"});

  CHECK(kind_of([&] { search_verbalizers(pattern, labeled, 4, *model, 0); }) == ErrorKind::kUsage);
  std::vector<LabeledInput> partial(labeled.begin(), labeled.begin() + 4);
  CHECK(kind_of([&] { search_verbalizers(pattern, partial, 4, *model, 1); }) == ErrorKind::kCoverage);
}

TEST_CASE("search_verbalizers tie-break by margin then label order") {
  const auto& pattern = registry().get(Task::kConclusion, 0).pattern;
  auto model = backend::LinearMaskedLm::from_json(
      {{"vocabulary", {"[MASK]", "t", "u"}},
       {"scores", {{{"pattern", "bbb"}, {"token", "t"}, {"score", 1.0}}}}});
  std::vector<LabeledInput> labeled{{{"aaa", std::nullopt, std::nullopt}, 0},
                                    {{"bbb", std::nullopt, std::nullopt}, 1}};
  // "t" has margin -1 for label 0 and +1 for label 1: label 1 takes it.
  auto out = search_verbalizers(pattern, labeled, 2, *model, 1, std::vector<std::string>{"t"});
  CHECK(out[1] == std::vector<std::string>{"t"});
  CHECK(out[0].empty());
  // "u" scores 0 everywhere: equal margins, the first label wins.
  out = search_verbalizers(pattern, labeled, 2, *model, 1, std::vector<std::string>{"u"});
  CHECK(out[0] == std::vector<std::string>{"u"});
  CHECK(out[1].empty());
}

TEST_CASE("search_verbalizers equals an exhaustive margin recomputation") {
  Rng rng(31);
  const std::vector<std::string> cands{"c0", "c1", "c2", "c3"};
  const auto& pattern = registry().get(Task::kConclusion, 0).pattern;
  for (int trial = 0; trial < 25; ++trial) {
    nlohmann::json scores = nlohmann::json::array();
    for (int l = 0; l < 3; ++l) {
      for (const auto& c : cands) {
        scores.push_back({{"pattern", "mk" + std::to_string(l)}, {"token", c},
                          {"score", std::round((rng.uniform01() * 6 - 3) * 8) / 8}});
      }
    }
    auto model = backend::LinearMaskedLm::from_json(
        {{"vocabulary", {"[MASK]", "c0", "c1", "c2", "c3"}}, {"scores", scores}});
    std::vector<LabeledInput> labeled;
    for (std::size_t l = 0; l < 3; ++l) {
      const auto n = 1 + rng.uniform_index(3);
      for (std::size_t i = 0; i < n; ++i) {
        labeled.push_back({{"mk" + std::to_string(l) + " text " + std::to_string(i), std::nullopt,
                            std::nullopt},
                           l});
      }
    }
    // Oracle: mean score per (label, token), margin vs. the other labels'
    // examples, then greedy assignment in (margin desc, label, candidate) order.
    std::vector<std::vector<double>> sum(3, std::vector<double>(4, 0.0));
    std::vector<double> n(3, 0.0);
    for (const auto& x : labeled) {
      const auto z = apply_pattern(pattern, x.input);
      const auto s = backend::score_masked(*model, z, cands);
      for (std::size_t c = 0; c < 4; ++c) sum[x.label][c] += s.at(cands[c]);
      n[x.label] += 1;
    }
    struct Entry { double margin; std::size_t label, cand; };
    std::vector<Entry> entries;
    const double total_n = n[0] + n[1] + n[2];
    for (std::size_t l = 0; l < 3; ++l) {
      for (std::size_t c = 0; c < 4; ++c) {
        double other = 0;
        for (std::size_t o = 0; o < 3; ++o) {
          if (o != l) other += sum[o][c];
        }
        entries.push_back({sum[l][c] / n[l] - other / (total_n - n[l]), l, c});
      }
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.margin != b.margin) return a.margin > b.margin;
      if (a.label != b.label) return a.label < b.label;
      return a.cand < b.cand;
    });
    const std::size_t k = 2;
    std::vector<std::vector<std::string>> expected(3);
    std::set<std::size_t> used;
    for (const auto& e : entries) {
      if (used.count(e.cand) || expected[e.label].size() >= k) continue;
      used.insert(e.cand);
      expected[e.label].push_back(cands[e.cand]);
    }
    const auto got = search_verbalizers(pattern, labeled, 3, *model, k, cands);
    CHECK(got == expected);
    std::set<std::string> all;
    for (const auto& g : got) {
      for (const auto& t : g) CHECK(all.insert(t).second);
    }
  }
}
