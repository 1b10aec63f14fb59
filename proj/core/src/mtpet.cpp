#include "mtpet/mtpet.hpp"

#include <algorithm>
#include <cmath>

#include "mtpet/error.hpp"
#include "mtpet/parallel.hpp"
#include "mtpet/text.hpp"

namespace mtpet::multitask {

double alpha_aux(std::size_t size_main, std::size_t size_aux) {
  if (size_main == 0 || size_aux == 0) {
    fail(ErrorKind::kUsage, "alpha_aux needs non-empty main and auxiliary datasets");
  }
  return std::min(2.0, static_cast<double>(size_main) / static_cast<double>(size_aux));
}

Sampling parse_sampling(std::string_view name) {
  const auto n = to_lower(trim(name));
  if (n == "uniform") return Sampling::kUniform;
  if (n == "proportional") return Sampling::kProportional;
  fail(ErrorKind::kConfig, "unknown task sampling '" + std::string(name) + "' (uniform|proportional)");
}

TaskSampler::TaskSampler(Sampling sampling, std::size_t size_main, std::size_t size_aux,
                         std::uint64_t seed)
    : sampling_(sampling), main_share_(0.5), rng_(seed) {
  if (sampling == Sampling::kProportional) {
    if (size_main + size_aux == 0) fail(ErrorKind::kUsage, "proportional sampling of empty tasks");
    main_share_ = static_cast<double>(size_main) / static_cast<double>(size_main + size_aux);
  }
}

bool TaskSampler::next_is_main() {
  if (sampling_ == Sampling::kUniform) return rng_.coin();
  return rng_.uniform01() < main_share_;
}

void validate(const TaskSpec& spec) {
  if (!(spec.alpha_main > 0.0) || !std::isfinite(spec.alpha_main)) {
    fail(ErrorKind::kConfig, "alpha_main must be > 0");
  }
  if (spec.alpha_aux && (!(*spec.alpha_aux >= 0.0) || !std::isfinite(*spec.alpha_aux))) {
    fail(ErrorKind::kConfig, "alpha_aux must be >= 0");
  }
  if (spec.tuples.empty()) fail(ErrorKind::kConfig, "no PVP tuples");
  for (std::size_t i = 0; i < spec.tuples.size(); ++i) {
    const auto& t = spec.tuples[i];
    if (t.main.task != spec.main.task) {
      fail(ErrorKind::kConfig, "tuple " + std::to_string(i) + ": main PVP targets task " +
                                   std::string(pvp::to_string(t.main.task)) + ", expected " +
                                   std::string(pvp::to_string(spec.main.task)));
    }
    if (spec.aux && spec.aux_batches_enabled) {
      if (!t.auxiliary) {
        fail(ErrorKind::kConfig, "tuple " + std::to_string(i) + " has no auxiliary PVP");
      }
      if (t.auxiliary->task != spec.aux->task) {
        fail(ErrorKind::kConfig, "tuple " + std::to_string(i) + ": auxiliary PVP targets task " +
                                     std::string(pvp::to_string(t.auxiliary->task)) +
                                     ", expected " + std::string(pvp::to_string(spec.aux->task)));
      }
    }
  }
}

double effective_alpha_aux(const TaskSpec& spec) {
  if (spec.alpha_aux) return *spec.alpha_aux;
  if (!spec.aux) return 0.0;
  return alpha_aux(spec.main.data.size(), spec.aux->data.size());
}

pet::PvpModel train_mtpet_member(const TaskSpec& spec, std::size_t tuple_index,
                                 const backend::MaskedLm& base, const pet::TrainingConfig& hp,
                                 backend::Aggregation aggregation, std::uint64_t seed,
                                 pet::TrainingLog* log) {
  validate(spec);
  if (tuple_index >= spec.tuples.size()) {
    fail(ErrorKind::kUsage, "tuple index " + std::to_string(tuple_index) + " out of range");
  }
  const auto& tuple = spec.tuples[tuple_index];
  const auto& dm = spec.main.data;
  if (dm.empty()) fail(ErrorKind::kUsage, "empty main-task dataset");
  const bool use_aux = spec.aux && spec.aux_batches_enabled;
  if (use_aux && spec.aux->data.empty()) fail(ErrorKind::kUsage, "empty auxiliary dataset");

  pet::PvpModel model(base.clone(), tuple.main, aggregation);
  auto& b = model.backend();
  const auto& mask = b.vocabulary().mask_token();

  const auto main_labels = pet::gold_labels(dm, tuple.main.verbalizer.size());
  const auto main_weights = hp.class_weighted
                                ? pet::class_weights(main_labels, tuple.main.verbalizer.size())
                                : std::vector<double>{};
  std::vector<double> aux_weights;
  const std::size_t n_aux = use_aux ? spec.aux->data.size() : 0;
  if (use_aux) {
    const auto k = tuple.auxiliary->verbalizer.size();
    const auto aux_labels = pet::gold_labels(spec.aux->data, k);
    if (hp.class_weighted) aux_weights = pet::class_weights(aux_labels, k);
  }
  const double alpha_m = spec.alpha_main;
  const double alpha_a = use_aux ? effective_alpha_aux(spec) : 0.0;

  const std::size_t steps = pet::total_steps(dm.size() + n_aux, hp.batch_size, hp.epochs);
  backend::AdamW optimizer(hp.optimizer(steps));
  pet::BatchCycler main_batches(dm.size(), hp.batch_size, derive_seed(seed, "main"));
  std::optional<pet::BatchCycler> aux_batches;
  if (use_aux) aux_batches.emplace(n_aux, hp.batch_size, derive_seed(seed, "aux"));
  TaskSampler sampler(spec.sampling, dm.size(), n_aux, derive_seed(seed, "task"));

  b.set_mode(backend::Mode::kTraining);
  for (std::size_t s = 0; s < steps; ++s) {
    const bool main = !use_aux || sampler.next_is_main();
    std::vector<backend::MaskedExample> batch;
    backend::LossSpec loss;
    if (main) {
      const auto idx = main_batches.next();
      batch = pet::masked_examples(tuple.main, dm, idx, main_weights, aggregation, mask);
      loss.scale = alpha_m;
    } else {
      const auto idx = aux_batches->next();
      batch = pet::masked_examples(*tuple.auxiliary, spec.aux->data, idx, aux_weights,
                                   aggregation, mask);
      loss.scale = alpha_a;
    }
    const double value = backend::fine_tune_batch(b, batch, loss, optimizer);
    if (log) {
      pet::StepRecord rec{main, value, batch.size(), {}};
      for (const auto& ex : batch) rec.ids.push_back(ex.id);
      log->push_back(std::move(rec));
    }
  }
  b.set_mode(backend::Mode::kInference);
  return model;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

template <typename Fn>
auto staged(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw e.with_context("stage " + stage);
  }
}

std::string member_stage(const char* stage, std::size_t i, std::uint64_t seed) {
  return std::string(stage) + " (member " + std::to_string(i) + ", seed " + std::to_string(seed) + ")";
}

RunResult run_pipeline(const TaskSpec& spec, const backend::MaskedLm& base,
                       const PipelineConfig& config, std::span<const std::uint64_t> seeds,
                       const Evaluator& evaluate, bool multitask) {
  staged("validate", [&] {
    if (multitask) {
      validate(spec);
    } else {
      TaskSpec single = {spec.main, std::nullopt, {}, spec.alpha_main, std::nullopt, {}, spec.sampling, false};
      for (const auto& t : spec.tuples) single.tuples.push_back({t.main, std::nullopt});
      validate(single);
    }
    if (spec.main.data.empty()) fail(ErrorKind::kUsage, "empty main-task dataset");
    if (spec.unlabeled.empty()) fail(ErrorKind::kUsage, "empty unlabeled set");
    if (seeds.empty()) fail(ErrorKind::kUsage, "no seeds");
    if (!evaluate) fail(ErrorKind::kConfig, "no evaluator");
  });

  RunResult result;
  const std::size_t n = spec.tuples.size();
  std::vector<double> weights(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    weights[i] = staged("zero-shot (member " + std::to_string(i) + ")", [&] {
      pet::PvpModel untrained(base.clone(), spec.tuples[i].main, config.aggregation);
      return pet::zero_shot_accuracy(untrained, spec.main.data);
    });
  }
  // A zero-accuracy ensemble would have no usable weights; fall back to equal.
  if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0.0; })) {
    std::fill(weights.begin(), weights.end(), 1.0);
  }
  for (std::size_t i = 0; i < n; ++i) result.members.push_back({spec.tuples[i].main.index, weights[i]});

  for (std::uint64_t seed : seeds) {
    SeedRun run;
    run.seed = seed;
    std::vector<std::optional<pet::PvpModel>> trained(n);
    run.member_logs.resize(n);
    parallel_for(n, config.jobs, [&](std::size_t i) {
      const auto member_seed = derive_seed(seed, "member:" + std::to_string(i));
      trained[i] = staged(member_stage("train", i, seed), [&] {
        if (multitask) {
          return train_mtpet_member(spec, i, base, config.member, config.aggregation, member_seed,
                                    &run.member_logs[i]);
        }
        pet::PvpModel m(base.clone(), spec.tuples[i].main, config.aggregation);
        pet::train_single(m, spec.main.data, config.member, member_seed, &run.member_logs[i]);
        return m;
      });
    });

    pet::EnsembleSpec ensemble;
    for (auto& m : trained) ensemble.members.push_back(std::move(*m));
    ensemble.weights = weights;
    ensemble.normalize_weights = config.normalize_weights;
    run.soft_labels = staged("soft-label (seed " + std::to_string(seed) + ")", [&] {
      return pet::soft_label(ensemble, spec.unlabeled, config.jobs);
    });
    run.members = std::move(ensemble.members);
    run.classifier = staged("distill (seed " + std::to_string(seed) + ")", [&] {
      return pet::distill(base, spec.unlabeled, run.soft_labels, config.distill, seed);
    });
    run.report = staged("evaluate (seed " + std::to_string(seed) + ")",
                        [&] { return evaluate(*run.classifier); });
    result.seeds.push_back(std::move(run));
  }

  std::vector<eval::EvalReport> reports;
  for (const auto& r : result.seeds) reports.push_back(r.report);
  result.mean = eval::aggregate_seeds(reports);
  return result;
}

}  // namespace

RunResult run_mtpet(const TaskSpec& spec, const backend::MaskedLm& base,
                    const PipelineConfig& config, std::span<const std::uint64_t> seeds,
                    const Evaluator& evaluate) {
  return run_pipeline(spec, base, config, seeds, evaluate, true);
}

RunResult run_pet(const TaskSpec& spec, const backend::MaskedLm& base,
                  const PipelineConfig& config, std::span<const std::uint64_t> seeds,
                  const Evaluator& evaluate) {
  return run_pipeline(spec, base, config, seeds, evaluate, false);
}

nlohmann::json run_report(const RunResult& result) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : result.members) {
    members.push_back({{"pattern_index", m.pattern_index}, {"weight", m.weight}});
  }
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : result.seeds) {
    seeds.push_back({{"seed", s.seed},
                     {"precision", s.report.macro_precision},
                     {"recall", s.report.macro_recall},
                     {"f1", s.report.macro_f1},
                     {"report", eval::to_json(s.report)}});
  }
  return {{"members", members},
          {"seeds", seeds},
          {"mean",
           {{"precision", result.mean.macro_precision},
            {"recall", result.mean.macro_recall},
            {"f1", result.mean.macro_f1},
            {"report", eval::to_json(result.mean)}}}};
}

// ---------------------------------------------------------------------------
// Domain-adaptive MLM

std::unique_ptr<backend::MaskedLm> mlm_domain_adapt(const backend::MaskedLm& model,
                                                    std::span<const std::string> texts,
                                                    const MlmConfig& config, std::uint64_t seed) {
  if (texts.empty()) fail(ErrorKind::kUsage, "empty MLM corpus");
  if (!(config.mask_rate > 0.0 && config.mask_rate <= 1.0)) {
    fail(ErrorKind::kConfig, "MLM mask rate must be in (0, 1]");
  }
  auto adapted = model.clone();
  const auto& vocab = adapted->vocabulary();
  const auto& mask = vocab.mask_token();

  // Every vocabulary token except the mask is a candidate at the mask.
  std::vector<std::vector<std::string>> groups;
  std::vector<std::size_t> group_of(vocab.size(), 0);
  for (backend::TokenId id = 0; id < vocab.size(); ++id) {
    if (id == vocab.mask_id()) continue;
    group_of[id] = groups.size();
    groups.push_back({vocab.token(id)});
  }
  if (groups.empty()) return adapted;

  struct Masked {
    std::string text;
    std::size_t target;
  };
  std::vector<Masked> masked;
  Rng rng(derive_seed(seed, "mlm"));
  for (const auto& text : texts) {
    if (text.find(mask) != std::string::npos) continue;
    const auto tokens = backend::tokenize(text, mask);
    std::vector<std::size_t> eligible;
    for (std::size_t p = 0; p < tokens.size(); ++p) {
      if (vocab.find(tokens[p])) eligible.push_back(p);
    }
    if (eligible.empty()) continue;
    std::vector<std::size_t> chosen;
    for (std::size_t p : eligible) {
      if (rng.uniform01() < config.mask_rate) chosen.push_back(p);
    }
    if (chosen.empty()) chosen.push_back(eligible[rng.uniform_index(eligible.size())]);
    for (std::size_t p : chosen) {
      auto copy = tokens;
      copy[p] = mask;
      masked.push_back({join(copy, " "), group_of[*vocab.find(tokens[p])]});
    }
  }
  if (masked.empty()) return adapted;

  const std::size_t steps = pet::total_steps(masked.size(), config.batch_size, config.epochs);
  backend::OptimizerConfig opt;
  opt.learning_rate = config.learning_rate;
  opt.warmup_steps = config.warmup_steps;
  opt.weight_decay = config.weight_decay;
  opt.total_steps = steps;
  backend::AdamW optimizer(opt);
  pet::BatchCycler batches(masked.size(), config.batch_size, derive_seed(seed, "mlm-batches"));
  const backend::LossSpec loss{};

  adapted->set_mode(backend::Mode::kTraining);
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<backend::MaskedExample> batch;
    for (std::size_t i : batches.next()) {
      backend::MaskedExample ex;
      ex.id = "mlm:" + std::to_string(i);
      ex.sequence.text = masked[i].text;
      ex.label_tokens = groups;
      ex.target.assign(groups.size(), 0.0);
      ex.target[masked[i].target] = 1.0;
      batch.push_back(std::move(ex));
    }
    backend::fine_tune_batch(*adapted, batch, loss, optimizer);
  }
  adapted->set_mode(backend::Mode::kInference);
  return adapted;
}

}  // namespace mtpet::multitask
