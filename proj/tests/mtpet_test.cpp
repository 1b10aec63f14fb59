#include <doctest.h>

#include <cmath>

#include "mtpet/error.hpp"
#include "mtpet/exaggeration.hpp"
#include "mtpet/mtpet.hpp"
#include "mtpet/rng.hpp"
#include "support.hpp"

using namespace mtpet;
using namespace mtpet::multitask;
using mtpet::testing::t1_pipeline_case;

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

std::vector<double> params_of(const backend::MaskedLm& m) {
  return {m.parameters().begin(), m.parameters().end()};
}

}  // namespace

TEST_CASE("alpha_aux is min(2, |D_m|/|D_a|)") {
  CHECK(alpha_aux(100, 200) == doctest::Approx(0.5));
  CHECK(alpha_aux(4500, 100) == doctest::Approx(2.0));
  CHECK(alpha_aux(100, 100) == doctest::Approx(1.0));
  CHECK(kind_of([] { alpha_aux(0, 10); }) == ErrorKind::kUsage);
  CHECK(kind_of([] { alpha_aux(10, 0); }) == ErrorKind::kUsage);
}

TEST_CASE("uniform task sampling picks the main task half the time") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    TaskSampler s(Sampling::kUniform, 10, 1000, seed);
    int main = 0;
    for (int i = 0; i < 10000; ++i) main += s.next_is_main();
    CHECK(std::abs(main / 10000.0 - 0.5) <= 0.02);
  }
  TaskSampler p(Sampling::kProportional, 100, 300, 4);
  int main = 0;
  for (int i = 0; i < 10000; ++i) main += p.next_is_main();
  CHECK(std::abs(main / 10000.0 - 0.25) <= 0.02);
  CHECK(parse_sampling("Proportional") == Sampling::kProportional);
  CHECK(kind_of([] { parse_sampling("round-robin"); }) == ErrorKind::kConfig);
}

TEST_CASE("spec validation") {
  auto c = t1_pipeline_case();
  c.spec.alpha_main = 0.0;
  CHECK(kind_of([&] { validate(c.spec); }) == ErrorKind::kConfig);
  c.spec.alpha_main = 1.0;
  c.spec.alpha_aux = -0.5;
  CHECK(kind_of([&] { validate(c.spec); }) == ErrorKind::kConfig);
  c.spec.alpha_aux.reset();
  CHECK_NOTHROW(validate(c.spec));
  CHECK(effective_alpha_aux(c.spec) == doctest::Approx(0.45));  // 9 / 20
  auto swapped = c.spec;
  swapped.tuples = pvp::registry().tuples(pvp::Task::kT2, pvp::Task::kT1);
  CHECK(kind_of([&] { validate(swapped); }) == ErrorKind::kConfig);
  auto wrong_aux = c.spec;
  wrong_aux.aux->task = pvp::Task::kConclusion;
  CHECK(kind_of([&] { validate(wrong_aux); }) == ErrorKind::kConfig);
}

TEST_CASE("member training: steps, determinism and the task sequence") {
  auto c = t1_pipeline_case();
  auto hp = c.config.member;
  hp.epochs = 3;
  pet::TrainingLog a, b;
  const auto m1 = train_mtpet_member(c.spec, 0, *c.base, hp, backend::Aggregation::kMean, 42, &a);
  const auto m2 = train_mtpet_member(c.spec, 0, *c.base, hp, backend::Aggregation::kMean, 42, &b);
  CHECK(a.size() == pet::total_steps(9 + 20, 4, 3));
  REQUIRE(a.size() == b.size());
  std::size_t main = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].main_task == b[i].main_task);
    CHECK(a[i].ids == b[i].ids);
    main += a[i].main_task;
  }
  CHECK(main > 0);
  CHECK(main < a.size());
  CHECK(params_of(m1.backend()) == params_of(m2.backend()));
  CHECK(kind_of([&] { train_mtpet_member(c.spec, 2, *c.base, hp, backend::Aggregation::kMean, 1); }) ==
        ErrorKind::kUsage);
}

TEST_CASE("alpha_aux = 0 makes auxiliary batches inert") {
  auto c = t1_pipeline_case();
  c.spec.alpha_aux = 0.0;
  auto hp = c.config.member;
  hp.learning_rate = 0.01;
  hp.warmup_steps = 0;
  pet::TrainingLog log;
  const auto with_aux = train_mtpet_member(c.spec, 1, *c.base, hp, backend::Aggregation::kMean, 9, &log);
  // Different auxiliary content of the same size: identical parameters.
  auto other = c.spec;
  for (auto& x : other.aux->data) x.input.a = "Unrelated zqna sentence " + x.id + ".";
  const auto with_other = train_mtpet_member(other, 1, *c.base, hp, backend::Aggregation::kMean, 9);
  CHECK(params_of(with_aux.backend()) == params_of(with_other.backend()));
  bool saw_aux = false;
  for (const auto& s : log) {
    if (!s.main_task) {
      saw_aux = true;
      CHECK(s.loss == 0.0);
    }
  }
  CHECK(saw_aux);
  CHECK(params_of(with_aux.backend()) != params_of(*c.base));
}

TEST_CASE("logged main-batch loss is alpha_m times the plain cross-entropy") {
  auto c = t1_pipeline_case();
  c.spec.alpha_aux = 0.0;  // auxiliary steps are null, so the first main step sees the base model
  c.spec.alpha_main = 1.7;
  auto hp = c.config.member;
  hp.class_weighted = false;
  pet::TrainingLog log;
  train_mtpet_member(c.spec, 0, *c.base, hp, backend::Aggregation::kMean, 3, &log);
  const auto first = std::find_if(log.begin(), log.end(), [](const auto& s) { return s.main_task; });
  REQUIRE(first != log.end());
  pet::PvpModel base(c.base->clone(), c.spec.tuples[0].main);
  double ce = 0.0;
  for (const auto& id : first->ids) {
    const auto& x = *std::find_if(c.spec.main.data.begin(), c.spec.main.data.end(),
                                  [&](const auto& d) { return d.id == id; });
    const auto q = pet::label_distribution(pet::label_score(base, x.input));
    ce += -std::log(q[*x.label]);
  }
  ce /= first->ids.size();
  CHECK(first->loss == doctest::Approx(1.7 * ce).epsilon(1e-5));
}

TEST_CASE("run_mtpet with oracle mocks reaches macro F1 1.0") {
  auto c = t1_pipeline_case();
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto r = run_mtpet(c.spec, *c.base, c.config, seeds,
                           mtpet::testing::macro_f1_evaluator(c.test, pvp::Task::kT1));
  CHECK(r.members.size() == 2);
  for (const auto& m : r.members) CHECK(m.weight == doctest::Approx(1.0));
  REQUIRE(r.seeds.size() == 5);
  for (const auto& s : r.seeds) {
    CHECK(s.report.macro_f1 == doctest::Approx(1.0));
    CHECK(s.members.size() == 2);
    for (const auto& rec : s.soft_labels) CHECK(rec.labels == pvp::label_names(pvp::Task::kT1));
    CHECK(s.soft_labels.size() == c.spec.unlabeled.size());
  }
  CHECK(r.mean.macro_f1 == doctest::Approx(1.0));
  const auto report = run_report(r);
  CHECK(report["members"].size() == 2);
  CHECK(report["seeds"].size() == 5);
  CHECK(report["mean"]["f1"].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("run_pet with oracle mocks reaches macro F1 1.0, one member per pattern") {
  auto c = t1_pipeline_case();
  const std::vector<std::uint64_t> seeds{11};
  const auto r = run_pet(c.spec, *c.base, c.config, seeds,
                         mtpet::testing::macro_f1_evaluator(c.test, pvp::Task::kT1));
  CHECK(r.members.size() == c.spec.tuples.size());
  CHECK(r.mean.macro_f1 == doctest::Approx(1.0));
}

TEST_CASE("run_mtpet without auxiliary batches reproduces run_pet") {
  auto c = t1_pipeline_case();
  const std::vector<std::uint64_t> seeds{5, 6};
  const auto eval = mtpet::testing::macro_f1_evaluator(c.test, pvp::Task::kT1);
  auto spec = c.spec;
  spec.alpha_aux = 0.0;
  spec.aux_batches_enabled = false;
  const auto mt = run_mtpet(spec, *c.base, c.config, seeds, eval);
  const auto st = run_pet(c.spec, *c.base, c.config, seeds, eval);
  REQUIRE(mt.seeds.size() == st.seeds.size());
  for (std::size_t i = 0; i < mt.members.size(); ++i) CHECK(mt.members[i].weight == st.members[i].weight);
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    for (std::size_t m = 0; m < mt.seeds[s].members.size(); ++m) {
      CHECK(params_of(mt.seeds[s].members[m].backend()) == params_of(st.seeds[s].members[m].backend()));
    }
    REQUIRE(mt.seeds[s].soft_labels.size() == st.seeds[s].soft_labels.size());
    for (std::size_t j = 0; j < mt.seeds[s].soft_labels.size(); ++j) {
      CHECK(mt.seeds[s].soft_labels[j].scores == st.seeds[s].soft_labels[j].scores);
    }
    CHECK(params_of(*mt.seeds[s].classifier) == params_of(*st.seeds[s].classifier));
    CHECK(mt.seeds[s].report.macro_f1 == st.seeds[s].report.macro_f1);
  }
}

TEST_CASE("the pipeline is reproducible for a fixed seed") {
  auto c = t1_pipeline_case();
  const std::vector<std::uint64_t> seeds{21};
  const auto eval = mtpet::testing::macro_f1_evaluator(c.test, pvp::Task::kT1);
  auto config = c.config;
  config.jobs = 2;
  const auto a = run_mtpet(c.spec, *c.base, c.config, seeds, eval);
  const auto b = run_mtpet(c.spec, *c.base, config, seeds, eval);
  for (std::size_t j = 0; j < a.seeds[0].soft_labels.size(); ++j) {
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(std::abs(a.seeds[0].soft_labels[j].scores[l] - b.seeds[0].soft_labels[j].scores[l]) <= 1e-6);
    }
  }
  CHECK(params_of(*a.seeds[0].classifier) == params_of(*b.seeds[0].classifier));
}

TEST_CASE("stage failures name the stage") {
  auto c = t1_pipeline_case();
  c.spec.unlabeled[3].input.b.reset();  // T1 needs both sentences
  const std::vector<std::uint64_t> seeds{1};
  try {
    run_mtpet(c.spec, *c.base, c.config, seeds,
              mtpet::testing::macro_f1_evaluator(c.test, pvp::Task::kT1));
    FAIL("expected a staged error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kArity);
    CHECK(std::string(e.what()).find("stage soft-label") != std::string::npos);
  }
  auto empty = t1_pipeline_case();
  empty.spec.unlabeled.clear();
  CHECK(kind_of([&] {
          run_mtpet(empty.spec, *empty.base, empty.config, seeds,
                    mtpet::testing::macro_f1_evaluator(empty.test, pvp::Task::kT1));
        }) == ErrorKind::kUsage);
}

TEST_CASE("in-domain MLM adaptation") {
  auto base = mtpet::testing::oracle_model(16);
  std::vector<std::string> texts;
  for (const auto& p : mtpet::testing::synthetic_pairs(12, 2)) {
    texts.push_back(p.press_sentence + " proven");
    texts.push_back(p.abstract_sentence + " mistaken identical");
  }
  MlmConfig cfg;
  CHECK(cfg.mask_rate == doctest::Approx(0.15));
  cfg.learning_rate = 0.0;
  const auto still = mlm_domain_adapt(*base, texts, cfg, 1);
  const backend::MaskedSequence z{"Reports zqexag [MASK] risk", std::nullopt};
  const std::vector<std::string> c{"mistaken", "identical", "proven"};
  const auto s0 = backend::score_masked(*base, z, c);
  const auto s1 = backend::score_masked(*still, z, c);
  for (const auto& t : c) CHECK(std::abs(s0.at(t) - s1.at(t)) <= 1e-7);

  cfg.learning_rate = 0.01;
  const auto a = mlm_domain_adapt(*base, texts, cfg, 7);
  const auto b = mlm_domain_adapt(*base, texts, cfg, 7);
  CHECK(params_of(*a) == params_of(*b));
  CHECK(params_of(*a) != params_of(*base));
  std::vector<std::string> none;
  CHECK(kind_of([&] { mlm_domain_adapt(*base, none, cfg, 1); }) == ErrorKind::kUsage);
}
