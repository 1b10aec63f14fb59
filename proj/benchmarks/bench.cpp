// Hot paths: sentence alignment, metric computation, cloze scoring and one
// training step of the linear backend.

#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "mtpet/backend.hpp"
#include "mtpet/data.hpp"
#include "mtpet/eval.hpp"
#include "mtpet/pet.hpp"
#include "mtpet/pvp.hpp"
#include "mtpet/rng.hpp"

using namespace mtpet;

namespace {

const std::vector<std::string> kWords = {
    "coffee", "intake", "was", "associated", "with", "lower", "risk", "of", "stroke",
    "in",     "adults", "the", "trial",      "found", "a",   "small", "effect", "on", "mice"};

std::string sentence(Rng& rng, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += kWords[rng.uniform_index(kWords.size())];
  }
  return s + ".";
}

void BM_RougeL(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = sentence(rng, n), b = sentence(rng, n);
  for (auto _ : state) benchmark::DoNotOptimize(data::rouge_score(a, b));
}
BENCHMARK(BM_RougeL)->Arg(16)->Arg(64)->Arg(256);

void BM_MatchSentence(benchmark::State& state) {
  Rng rng(2);
  std::vector<std::string> doc;
  for (int i = 0; i < state.range(0); ++i) doc.push_back(sentence(rng, 25));
  const auto query = sentence(rng, 15);
  for (auto _ : state) benchmark::DoNotOptimize(data::match_sentence(query, doc));
}
BENCHMARK(BM_MatchSentence)->Arg(10)->Arg(100);

void BM_MacroPrf(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::size_t> pred(n), gold(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = rng.uniform_index(3);
    gold[i] = rng.uniform_index(3);
  }
  const std::vector<std::string> labels = {"downplays", "same", "exaggerates"};
  for (auto _ : state) benchmark::DoNotOptimize(eval::macro_prf(pred, gold, labels));
}
BENCHMARK(BM_MacroPrf)->Arg(553)->Arg(100000);

backend::LinearMaskedLm small_model(std::size_t buckets) {
  std::vector<std::string> tokens = {"[MASK]"};
  tokens.insert(tokens.end(), kWords.begin(), kWords.end());
  for (const auto& group : pvp::registry().get(pvp::Task::kT1, 0).verbalizer.tokens) {
    tokens.insert(tokens.end(), group.begin(), group.end());
  }
  backend::LinearMlmConfig cfg;
  cfg.buckets = buckets;
  backend::LinearMaskedLm model(backend::Vocabulary(tokens), cfg);
  Rng rng(4);
  for (double& p : model.parameters()) p = rng.uniform01() - 0.5;
  return model;
}

void BM_LabelScore(benchmark::State& state) {
  const auto& pvp = pvp::registry().get(pvp::Task::kT1, 0);
  pet::PvpModel model(small_model(static_cast<std::size_t>(state.range(0))).clone(), pvp);
  Rng rng(5);
  const pvp::PatternInput x{sentence(rng, 20), sentence(rng, 20), std::nullopt};
  for (auto _ : state) benchmark::DoNotOptimize(pet::label_score(model, x));
}
BENCHMARK(BM_LabelScore)->Arg(0)->Arg(256)->Arg(4096);

void BM_FineTuneBatch(benchmark::State& state) {
  const auto& pvp = pvp::registry().get(pvp::Task::kT1, 0);
  auto model = small_model(static_cast<std::size_t>(state.range(0)));
  model.set_mode(backend::Mode::kTraining);
  Rng rng(6);
  std::vector<backend::MaskedExample> batch;
  for (int i = 0; i < 4; ++i) {
    backend::MaskedExample ex;
    ex.id = std::to_string(i);
    ex.sequence = pvp::apply_pattern(pvp.pattern, sentence(rng, 20), sentence(rng, 20), std::nullopt);
    ex.label_tokens = pvp.verbalizer.candidate_groups();
    ex.target.assign(ex.label_tokens.size(), 0.0);
    ex.target[static_cast<std::size_t>(i) % ex.target.size()] = 1.0;
    batch.push_back(ex);
  }
  backend::AdamW opt(backend::OptimizerConfig{});
  for (auto _ : state) {
    benchmark::DoNotOptimize(backend::fine_tune_batch(model, batch, backend::LossSpec{}, opt));
  }
}
BENCHMARK(BM_FineTuneBatch)->Arg(256)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
