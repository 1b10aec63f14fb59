#include <doctest.h>

#include <algorithm>
#include <set>

#include "mtpet/error.hpp"
#include "mtpet/eval.hpp"
#include "mtpet/exaggeration.hpp"
#include "mtpet/rng.hpp"
#include "support.hpp"

using namespace mtpet;
using namespace mtpet::eval;
using exaggeration::ClaimStrength;
using exaggeration::ExaggerationLabel;

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

const std::vector<std::string> kAbc{"A", "B", "C"};

// Confusion matrix first, then the textbook formulas class by class.
double brute_macro_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold,
                      std::size_t k, double* macro_p = nullptr, double* macro_r = nullptr) {
  std::vector<std::vector<int>> m(k, std::vector<int>(k, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++m[gold[i]][pred[i]];
  double f = 0, pp = 0, rr = 0;
  for (std::size_t c = 0; c < k; ++c) {
    int tp = m[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += m[o][c];
      fn += m[c][o];
    }
    const double p = tp + fp ? double(tp) / (tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / (tp + fn) : 0.0;
    pp += p;
    rr += r;
    f += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  if (macro_p) *macro_p = pp / k;
  if (macro_r) *macro_r = rr / k;
  return f / k;
}

EvalReport random_report(Rng& rng) {
  std::vector<std::size_t> p, g;
  const std::size_t n = 1 + rng.uniform_index(30);
  for (std::size_t i = 0; i < n; ++i) {
    p.push_back(rng.uniform_index(3));
    g.push_back(rng.uniform_index(3));
  }
  return macro_prf(p, g, kAbc);
}

exaggeration::SentencePair strength_pair(int abstract, int press, std::string id) {
  exaggeration::SentencePair p;
  p.id = std::move(id);
  p.press_sentence = "P.";
  p.abstract_sentence = "A.";
  p.press_strength = static_cast<ClaimStrength>(press);
  p.abstract_strength = static_cast<ClaimStrength>(abstract);
  p.exaggeration = exaggeration::derive_exaggeration(*p.press_strength, *p.abstract_strength);
  return p;
}

}  // namespace

TEST_CASE("macro_prf examples") {
  const std::vector<std::size_t> gold{0, 0, 1, 2};
  const std::vector<std::size_t> all_a{0, 0, 0, 0};
  const auto r = macro_prf(all_a, gold, kAbc);
  CHECK(std::abs(r.f1[0] - 2.0 / 3.0) <= 1e-9);
  CHECK(r.f1[1] == 0.0);
  CHECK(r.f1[2] == 0.0);
  CHECK(std::abs(r.macro_f1 - 2.0 / 9.0) <= 1e-9);
  CHECK(r.precision[0] == doctest::Approx(0.5));
  CHECK(r.recall[0] == doctest::Approx(1.0));
  CHECK(r.accuracy == doctest::Approx(0.5));
  CHECK(r.support == std::vector<double>{2, 1, 1});
  CHECK(r.confusion[1][0] == 1.0);

  const auto perfect = macro_prf(gold, gold, kAbc);
  CHECK(perfect.macro_f1 == 1.0);

  const std::vector<std::size_t> short_pred{0};
  CHECK(kind_of([&] { macro_prf(short_pred, gold, kAbc); }) == ErrorKind::kUsage);
  const std::vector<std::size_t> out_of_space{0, 0, 1, 3};
  CHECK(kind_of([&] { macro_prf(out_of_space, gold, kAbc); }) == ErrorKind::kUsage);
}

TEST_CASE("macro_prf matches a brute-force confusion matrix") {
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 2 + rng.uniform_index(3);
    const std::size_t n = 1 + rng.uniform_index(100);
    std::vector<std::size_t> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform_index(k);
      g[i] = rng.uniform_index(k);
    }
    std::vector<std::string> labels;
    for (std::size_t c = 0; c < k; ++c) labels.push_back("l" + std::to_string(c));
    const auto r = macro_prf(p, g, labels);
    double mp = 0, mr = 0;
    const double mf = brute_macro_f1(p, g, k, &mp, &mr);
    CHECK(std::abs(r.macro_f1 - mf) <= 1e-9);
    CHECK(std::abs(r.macro_precision - mp) <= 1e-9);
    CHECK(std::abs(r.macro_recall - mr) <= 1e-9);
    // Row sums equal supports; macro equals the mean of per-class values.
    double mean = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double row = 0;
      for (double v : r.confusion[c]) row += v;
      CHECK(row == r.support[c]);
      mean += r.f1[c] / static_cast<double>(k);
    }
    CHECK(std::abs(mean - r.macro_f1) <= 1e-12);

    // Shuffling the (prediction, gold) pairs changes nothing.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::size_t> p2(n), g2(n);
    for (std::size_t i = 0; i < n; ++i) {
      p2[i] = p[order[i]];
      g2[i] = g[order[i]];
    }
    const auto r2 = macro_prf(p2, g2, labels);
    CHECK(r2.f1 == r.f1);
    CHECK(r2.confusion == r.confusion);
  }
}

TEST_CASE("report serialization") {
  Rng rng(3);
  const auto r = random_report(rng);
  const auto back = report_from_json(to_json(r));
  CHECK(back.labels == r.labels);
  CHECK(back.f1 == r.f1);
  CHECK(back.confusion == r.confusion);
  CHECK(back.macro_f1 == r.macro_f1);
  const auto table = to_table(r);
  CHECK(table.find("macro") != std::string::npos);
  CHECK(table.find("B") != std::string::npos);
}

TEST_CASE("aggregate_seeds") {
  Rng rng(17);
  const auto one = random_report(rng);
  const std::vector<EvalReport> same{one, one, one};
  const auto m = aggregate_seeds(same);
  CHECK(m.macro_f1 == doctest::Approx(one.macro_f1));
  CHECK(m.f1[1] == doctest::Approx(one.f1[1]));

  EvalReport a = one, b = one;
  a.macro_f1 = 40;
  b.macro_f1 = 60;
  const std::vector<EvalReport> ab{a, b};
  CHECK(aggregate_seeds(ab).macro_f1 == doctest::Approx(50));

  std::vector<EvalReport> five;
  for (int i = 0; i < 5; ++i) five.push_back(random_report(rng));
  const auto mean = aggregate_seeds(five);
  double f = 0, p = 0, c01 = 0, s2 = 0;
  for (const auto& r : five) {
    f += r.macro_f1 / 5;
    p += r.precision[2] / 5;
    c01 += r.confusion[0][1] / 5;
    s2 += r.support[2] / 5;
  }
  CHECK(std::abs(mean.macro_f1 - f) <= 1e-12);
  CHECK(std::abs(mean.precision[2] - p) <= 1e-12);
  CHECK(std::abs(mean.confusion[0][1] - c01) <= 1e-12);
  CHECK(std::abs(mean.support[2] - s2) <= 1e-12);

  auto shuffled = five;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[0], shuffled[2]);
  CHECK(std::abs(aggregate_seeds(shuffled).macro_f1 - mean.macro_f1) <= 1e-12);

  std::vector<EvalReport> mixed{one, macro_prf(std::vector<std::size_t>{0}, std::vector<std::size_t>{0},
                                               {"x", "y"})};
  CHECK(kind_of([&] { aggregate_seeds(mixed); }) == ErrorKind::kUsage);
  std::vector<EvalReport> empty;
  CHECK(kind_of([&] { aggregate_seeds(empty); }) == ErrorKind::kUsage);
}

TEST_CASE("learning curve against a closed-form mock") {
  std::vector<pet::Instance> train;
  for (const auto& p : testing::synthetic_pairs(300, 2)) train.push_back(exaggeration::t1_instance(p));
  const std::vector<std::size_t> sizes{10, 50, 100, 200};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  // Accuracy min(1, size/100): that many of 100 test items are right.
  TrainEval mock = [](std::span<const pet::Instance> subset, std::uint64_t) {
    const std::size_t right = std::min<std::size_t>(100, subset.size());
    std::vector<std::size_t> pred(100, 0), gold(100, 0);
    for (std::size_t i = right; i < 100; ++i) pred[i] = 1;
    auto r = macro_prf(pred, gold, {"x", "y"});
    r.macro_f1 = r.accuracy;
    return r;
  };
  const auto curve = learning_curve(train, sizes, seeds, mock, 2);
  REQUIRE(curve.size() == sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    CHECK(curve[i].size == sizes[i]);
    CHECK(curve[i].seeds == seeds);
    CHECK(curve[i].f1.size() == seeds.size());
    CHECK(curve[i].mean_f1 == doctest::Approx(std::min(1.0, sizes[i] / 100.0)));
  }
  const auto csv = curve_csv(curve);
  CHECK(csv.rfind("size,seed,f1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 12);
  CHECK(curve_table(curve).find("200") != std::string::npos);

  const std::vector<std::size_t> too_big{10, 301};
  CHECK(kind_of([&] { learning_curve(train, too_big, seeds, mock); }) == ErrorKind::kUsage);
  const std::vector<std::size_t> descending{50, 10};
  CHECK(kind_of([&] { learning_curve(train, descending, seeds, mock); }) == ErrorKind::kUsage);
}

TEST_CASE("learning curve subsets are stratified and seed dependent") {
  std::vector<pet::Instance> train;
  for (const auto& p : testing::synthetic_pairs(60, 5)) train.push_back(exaggeration::t1_instance(p));
  std::vector<std::vector<std::string>> seen;
  TrainEval record = [&](std::span<const pet::Instance> subset, std::uint64_t) {
    std::vector<int> c(3, 0);
    std::vector<std::string> ids;
    for (const auto& x : subset) {
      ++c[*x.label];
      ids.push_back(x.id);
    }
    CHECK(c[0] == c[1]);
    CHECK(c[1] == c[2]);
    seen.push_back(ids);
    return macro_prf(std::vector<std::size_t>{0}, std::vector<std::size_t>{0}, kAbc);
  };
  const std::vector<std::size_t> sizes{9};
  const std::vector<std::uint64_t> seeds{1, 2};
  learning_curve(train, sizes, seeds, record, 1);
  REQUIRE(seen.size() == 2);
  CHECK(seen[0] != seen[1]);
}

TEST_CASE("learning curve with the oracle pipeline") {
  auto c = testing::t1_pipeline_case();
  const auto evaluator = testing::macro_f1_evaluator(c.test, pvp::Task::kT1);
  TrainEval supervised = [&](std::span<const pet::Instance> subset, std::uint64_t seed) {
    auto hp = c.config.distill;
    hp.epochs = 20;
    const auto model = pet::train_supervised(*c.base, subset, 3, hp, seed);
    return evaluator(*model);
  };
  std::vector<pet::Instance> train = c.spec.main.data;
  for (std::size_t i = 0; i < c.spec.unlabeled.size(); ++i) {
    // Labels restored from the marker the oracle reads.
    auto x = c.spec.unlabeled[i];
    for (std::size_t l = 0; l < 3; ++l) {
      if (x.input.b->find(testing::exaggeration_marker(static_cast<ExaggerationLabel>(l))) != std::string::npos) {
        x.label = l;
      }
    }
    train.push_back(x);
  }
  const std::vector<std::size_t> sizes{9, 27};
  const std::vector<std::uint64_t> seeds{4};
  const auto curve = learning_curve(train, sizes, seeds, supervised);
  CHECK(curve.back().mean_f1 == doctest::Approx(1.0));
}

TEST_CASE("transition bins") {
  const auto keys = transition_keys();
  CHECK(keys.size() == 16);
  CHECK(std::set<std::string>(keys.begin(), keys.end()).size() == 16);
  CHECK(std::find(keys.begin(), keys.end(), "CON->CAU") != keys.end());

  std::vector<exaggeration::SentencePair> pairs;
  for (int i = 0; i < 4; ++i) pairs.push_back(strength_pair(2, 3, "c" + std::to_string(i)));
  pairs.push_back(strength_pair(1, 1, "s"));
  std::vector<ExaggerationLabel> pred;
  for (const auto& p : pairs) pred.push_back(*p.exaggeration);
  const std::vector<std::vector<ExaggerationLabel>> correct{pred};
  for (const auto& b : transition_error_bins(pairs, correct)) CHECK(b.proportion == 0.0);

  auto half = pred;
  half[0] = half[1] = ExaggerationLabel::kSame;
  const std::vector<std::vector<ExaggerationLabel>> one_set{half};
  const auto bins = transition_error_bins(pairs, one_set);
  REQUIRE(bins.size() == 2);
  const auto con = std::find_if(bins.begin(), bins.end(), [](const auto& b) { return b.key == "CON->CAU"; });
  REQUIRE(con != bins.end());
  CHECK(con->count == 4);
  CHECK(con->wrong == 2);
  CHECK(con->proportion == doctest::Approx(0.5));

  // All-models-wrong: the second set gets item 0 right, so only item 1 counts.
  auto other = pred;
  other[1] = ExaggerationLabel::kDownplays;
  const std::vector<std::vector<ExaggerationLabel>> both{half, other};
  const auto all_wrong = transition_error_bins(pairs, both);
  const auto con2 = std::find_if(all_wrong.begin(), all_wrong.end(), [](const auto& b) { return b.key == "CON->CAU"; });
  CHECK(con2->wrong == 1);
  CHECK(con2->proportion == doctest::Approx(0.25));
  CHECK(to_json(std::span<const TransitionBin>(all_wrong)).size() == all_wrong.size());

  auto missing = pairs;
  missing[2].press_strength.reset();
  CHECK(kind_of([&] { transition_error_bins(missing, one_set); }) == ErrorKind::kUsage);
  const std::vector<std::vector<ExaggerationLabel>> short_set{{ExaggerationLabel::kSame}};
  CHECK(kind_of([&] { transition_error_bins(pairs, short_set); }) == ErrorKind::kUsage);
}

TEST_CASE("transition bins: keys are enumerated and counts sum to the data size") {
  Rng rng(77);
  const auto keys = transition_keys();
  const std::set<std::string> key_set(keys.begin(), keys.end());
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<exaggeration::SentencePair> pairs;
    std::vector<ExaggerationLabel> pred;
    const std::size_t n = 1 + rng.uniform_index(40);
    for (std::size_t i = 0; i < n; ++i) {
      pairs.push_back(strength_pair(static_cast<int>(rng.uniform_index(4)),
                                    static_cast<int>(rng.uniform_index(4)), "x" + std::to_string(i)));
      pred.push_back(static_cast<ExaggerationLabel>(rng.uniform_index(3)));
    }
    const std::vector<std::vector<ExaggerationLabel>> sets{pred};
    std::size_t total = 0;
    for (const auto& b : transition_error_bins(pairs, sets)) {
      CHECK(key_set.count(b.key) == 1);
      CHECK(b.count > 0);
      CHECK(b.proportion >= 0.0);
      CHECK(b.proportion <= 1.0);
      total += b.count;
    }
    CHECK(total == n);
  }
}
