#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "config.hpp"
#include "mtpet/backend.hpp"
#include "mtpet/data.hpp"
#include "mtpet/error.hpp"
#include "mtpet/eval.hpp"
#include "mtpet/exaggeration.hpp"
#include "mtpet/io.hpp"
#include "mtpet/mtpet.hpp"
#include "mtpet/pet.hpp"
#include "mtpet/pvp.hpp"
#include "mtpet/text.hpp"

namespace mtpet::cli {

namespace fs = std::filesystem;
namespace ex = mtpet::exaggeration;
using pvp::Task;

namespace {

struct Context {
  RunConfig config;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  std::ostream& out;
  std::ostream& err;
};

// ---------------------------------------------------------------------------
// Config helpers

Task main_task(const RunConfig& c) { return pvp::parse_task(c.require("task")); }

std::vector<std::uint64_t> seeds_of(const Context& ctx) {
  if (!ctx.seeds.empty()) return ctx.seeds;
  auto s = ctx.config.get_seed_list("seeds");
  if (s.empty()) fail(ErrorKind::kConfig, "no seeds configured (config 'seeds' or --seed)");
  return s;
}

fs::path output_dir(const RunConfig& c) {
  return c.has("output_dir") ? c.path("output_dir") : fs::path("out");
}

pet::TrainingConfig member_hp(const RunConfig& c, Task task) {
  auto hp = task == Task::kT1 ? pet::TrainingConfig::t1_defaults()
                              : pet::TrainingConfig::t2_defaults();
  hp.learning_rate = c.get_double("lr", hp.learning_rate);
  hp.batch_size = c.get_size("batch_size", hp.batch_size);
  hp.epochs = c.get_size("epochs", hp.epochs);
  hp.warmup_steps = c.get_size("warmup_steps", hp.warmup_steps);
  hp.weight_decay = c.get_double("weight_decay", hp.weight_decay);
  hp.max_grad_norm = c.get_double("max_grad_norm", hp.max_grad_norm);
  hp.class_weighted = c.get_bool("class_weighted", hp.class_weighted);
  return hp;
}

pet::TrainingConfig distill_hp(const RunConfig& c) {
  auto hp = pet::TrainingConfig::distill_defaults();
  hp.learning_rate = c.get_double("distill_lr", hp.learning_rate);
  hp.batch_size = c.get_size("distill_batch_size", hp.batch_size);
  hp.epochs = c.get_size("distill_epochs", hp.epochs);
  hp.warmup_steps = c.get_size("distill_warmup_steps", hp.warmup_steps);
  hp.weight_decay = c.get_double("distill_weight_decay", hp.weight_decay);
  hp.temperature = c.get_double("temperature", hp.temperature);
  hp.max_grad_norm = c.get_double("max_grad_norm", hp.max_grad_norm);
  hp.class_weighted = c.get_bool("class_weighted", hp.class_weighted);
  return hp;
}

pvp::Registry registry_of(const RunConfig& c) {
  if (c.has("pvp_file")) return pvp::load_registry(c.existing_path("pvp_file"));
  return pvp::registry();
}

std::vector<pvp::PvpTuple> tuples_of(const RunConfig& c, Task main, std::optional<Task> aux) {
  auto all = registry_of(c).tuples(main, aux);
  const auto wanted = c.get_size_list("patterns");
  if (wanted.empty()) return all;
  std::vector<pvp::PvpTuple> out;
  for (auto idx : wanted) {
    auto it = std::find_if(all.begin(), all.end(),
                           [&](const pvp::PvpTuple& t) { return t.main.index == idx; });
    if (it == all.end()) {
      fail(ErrorKind::kConfig, "no pattern " + std::to_string(idx) + " for task " +
                                   std::string(pvp::to_string(main)));
    }
    out.push_back(*it);
  }
  return out;
}

std::vector<std::string> verbalizer_tokens(std::span<const pvp::PvpTuple> tuples) {
  std::vector<std::string> tokens;
  auto add = [&](const pvp::Pvp& p) {
    for (const auto& group : p.verbalizer.candidate_groups()) {
      for (const auto& t : group) tokens.push_back(t);
    }
  };
  for (const auto& t : tuples) {
    add(t.main);
    if (t.auxiliary) add(*t.auxiliary);
  }
  return tokens;
}

// Mock: the prior table (plus any verbalizer tokens it lacks). Real: a
// checkpoint, or a fresh hashed bag-of-words model over the verbalizer tokens.
std::unique_ptr<backend::MaskedLm> base_model(const RunConfig& c,
                                              const std::vector<std::string>& tokens) {
  const auto kind = to_lower(c.get("backend", "real"));
  if (kind == "mock") {
    if (!c.has("mock_table")) fail(ErrorKind::kConfig, "--backend mock needs --mock-table");
    auto table = backend::load_mock_table(c.existing_path("mock_table"));
    return table->with_tokens(tokens);
  }
  if (kind != "real") fail(ErrorKind::kUsage, "unknown backend '" + kind + "' (real|mock)");
  if (c.has("checkpoint")) {
    auto model = backend::load_checkpoint(c.existing_path("checkpoint"));
    if (auto* linear = dynamic_cast<backend::LinearMaskedLm*>(model.get())) {
      return linear->with_tokens(tokens);
    }
    return model;
  }
  backend::LinearMlmConfig cfg;
  cfg.checkpoint_id = "linear-bow";
  cfg.buckets = c.get_size("buckets", 1024);
  cfg.max_length = c.get_size("max_length", 512);
  std::vector<std::string> vocab{std::string(backend::kDefaultMaskToken)};
  return std::make_unique<backend::LinearMaskedLm>(
      backend::Vocabulary(vocab).extended(tokens), cfg);
}

// ---------------------------------------------------------------------------
// Datasets

std::vector<pet::Instance> load_labeled(Task task, const fs::path& path) {
  std::vector<pet::Instance> out;
  switch (task) {
    case Task::kT1:
      for (const auto& p : ex::read_sentence_pairs(path)) {
        auto x = ex::t1_instance(p);
        if (!x.label) fail(ErrorKind::kData, path.string() + ": pair " + p.id + " has no label");
        out.push_back(std::move(x));
      }
      break;
    case Task::kT2:
      for (const auto& s : ex::read_strength_sentences(path)) out.push_back(ex::t2_instance(s));
      break;
    case Task::kConclusion:
      for (const auto& s : ex::read_conclusion_sentences(path)) {
        out.push_back(ex::conclusion_instance(s));
      }
      break;
  }
  return out;
}

// Accepts detect-conclusions selections, unlabeled pairs, or the task's own
// record schema (labels ignored).
std::vector<pet::Instance> load_unlabeled(Task task, const fs::path& path) {
  const auto records = read_jsonl(path);
  std::vector<pet::Instance> out;
  if (records.empty()) return out;
  const auto& first = records.front();

  if (first.contains("side")) {
    std::map<std::string, std::pair<std::string, std::string>> by_pair;  // press, abstract
    std::vector<std::string> order;
    for (const auto& r : records) {
      const auto id = require_string(r, "pair_id");
      const auto side = pvp::parse_role(require_string(r, "side"));
      const auto sentence = require_string(r, "sentence");
      if (task == Task::kT2) {
        out.push_back(ex::t2_instance(id + ":" + std::string(pvp::to_string(side)), sentence, side));
        continue;
      }
      if (task == Task::kConclusion) {
        out.push_back(ex::conclusion_instance(id + ":" + std::string(pvp::to_string(side)), sentence));
        continue;
      }
      if (!by_pair.count(id)) order.push_back(id);
      (side == pvp::Role::kPress ? by_pair[id].first : by_pair[id].second) = sentence;
    }
    for (const auto& id : order) {
      const auto& [press, abstract] = by_pair[id];
      if (press.empty() || abstract.empty()) {
        fail(ErrorKind::kData, path.string() + ": pair " + id + " lacks a press or abstract selection");
      }
      out.push_back({id, {abstract, press, std::nullopt}, std::nullopt});
    }
    return out;
  }
  if (first.contains("press_sentences")) {
    for (const auto& r : records) {
      const auto p = data::unlabeled_from_json(r);
      if (task == Task::kConclusion || task == Task::kT2) {
        for (std::size_t k = 0; k < p.press_sentences.size(); ++k) {
          const auto id = p.id + ":press:" + std::to_string(k);
          out.push_back(task == Task::kT2
                            ? ex::t2_instance(id, p.press_sentences[k], pvp::Role::kPress)
                            : ex::conclusion_instance(id, p.press_sentences[k]));
        }
        for (std::size_t k = 0; k < p.abstract_sentences.size(); ++k) {
          const auto id = p.id + ":abstract:" + std::to_string(k);
          out.push_back(task == Task::kT2
                            ? ex::t2_instance(id, p.abstract_sentences[k], pvp::Role::kAbstract)
                            : ex::conclusion_instance(id, p.abstract_sentences[k]));
        }
      } else {
        fail(ErrorKind::kConfig, path.string() +
                                     ": T1 needs sentence pairs; run detect-conclusions first");
      }
    }
    return out;
  }
  for (const auto& r : records) {
    pet::Instance x;
    switch (task) {
      case Task::kT1: {
        auto p = ex::sentence_pair_from_json(r);
        x = ex::t1_instance(p);
        break;
      }
      case Task::kT2: {
        const auto id = require_string(r, "id");
        x = ex::t2_instance(id, require_string(r, "sentence"),
                            pvp::parse_role(require_string(r, "source")));
        break;
      }
      case Task::kConclusion:
        x = ex::conclusion_instance(require_string(r, "id"), require_string(r, "sentence"));
        break;
    }
    x.label.reset();
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<std::size_t> labels_of(std::span<const pet::Instance> data, std::size_t k) {
  return pet::gold_labels(data, k);
}

std::size_t parse_label(const Json& value, const std::vector<std::string>& names,
                        const std::string& where) {
  if (value.is_number_integer()) {
    const auto v = value.get<long long>();
    if (v < 0 || static_cast<std::size_t>(v) >= names.size()) {
      fail(ErrorKind::kConfig, where + ": label " + std::to_string(v) + " outside the label space");
    }
    return static_cast<std::size_t>(v);
  }
  if (value.is_string()) {
    auto it = std::find(names.begin(), names.end(), value.get<std::string>());
    if (it == names.end()) {
      fail(ErrorKind::kConfig, where + ": unknown label '" + value.get<std::string>() + "'");
    }
    return static_cast<std::size_t>(it - names.begin());
  }
  fail(ErrorKind::kConfig, where + ": label must be an index or a label name");
}

void write_predictions(const fs::path& path, std::span<const pet::Instance> data,
                       std::span<const std::size_t> preds, const std::vector<std::string>& names) {
  std::vector<Json> lines;
  for (std::size_t i = 0; i < data.size(); ++i) {
    lines.push_back({{"id", data[i].id}, {"label", preds[i]}, {"label_name", names[preds[i]]}});
  }
  write_jsonl(path, lines);
}

void save_members(const fs::path& dir, const multitask::RunResult& result,
                  const multitask::SeedRun& run, Task task, backend::Aggregation agg) {
  Json members = Json::array();
  for (std::size_t i = 0; i < run.members.size(); ++i) {
    const auto sub = "member-" + std::to_string(i);
    backend::save_checkpoint(run.members[i].backend(), dir / sub);
    members.push_back({{"pattern_index", result.members[i].pattern_index},
                       {"weight", result.members[i].weight},
                       {"checkpoint", sub}});
  }
  write_json(dir / "members.json",
             {{"task", std::string(pvp::to_string(task))},
              {"aggregation", std::string(backend::to_string(agg))},
              {"members", members}});
}

// ---------------------------------------------------------------------------
// prepare-data

int cmd_prepare_data(Context& ctx) {
  const auto& c = ctx.config;
  data::GoldInputs inputs{c.existing_path("annotations_file"), c.existing_path("abstracts_file"),
                          c.existing_path("press_file")};
  std::optional<fs::path> unlabeled_raw;
  if (c.has("unlabeled_raw_file")) unlabeled_raw = c.existing_path("unlabeled_raw_file");
  data::GoldConfig gc;
  gc.seed = static_cast<std::uint64_t>(c.get_size("split_seed", gc.seed));
  gc.train_size = c.get_size("train_size", gc.train_size);
  gc.rouge = data::parse_rouge_variant(c.get("rouge", "rougeL"));
  gc.low_confidence_threshold = c.get_double("low_confidence_threshold", gc.low_confidence_threshold);
  const auto out = output_dir(c);

  const auto gold = data::build_gold_files(inputs, out, gc);
  for (const auto& w : gold.warnings) ctx.err << "warning: " << w << '\n';
  const auto& m = gold.manifest;
  ctx.out << "pairs: " << m["counts"]["pairs"] << '\n'
          << "labels: " << m["labels"]["all"].dump() << '\n'
          << "train: " << m["counts"]["train"] << "  test: " << m["counts"]["test"] << '\n'
          << "conclusion sentences: " << m["counts"]["conclusion_sentences"] << '\n'
          << "low-confidence alignments: " << m["counts"]["low_confidence"] << '\n'
          << "skipped: " << m["counts"]["skipped"] << '\n';

  if (unlabeled_raw) {
    const auto raw = read_jsonl(*unlabeled_raw);
    const auto ingested = data::ingest_unlabeled(raw);
    for (const auto& w : ingested.warnings) ctx.err << "warning: " << w << '\n';
    std::vector<Json> lines;
    for (const auto& p : ingested.pairs) lines.push_back(data::to_json(p));
    write_jsonl(out / "unlabeled.jsonl", lines);
    Json skipped = Json::array();
    for (const auto& s : ingested.skipped) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
    write_json(out / "unlabeled_manifest.json",
               {{"pairs", ingested.pairs.size()},
                {"skipped", skipped},
                {"source", sha256_file(*unlabeled_raw)},
                {"output", sha256_file(out / "unlabeled.jsonl")}});
    ctx.out << "unlabeled pairs: " << ingested.pairs.size() << " (skipped "
            << ingested.skipped.size() << ")\n";
  }
  ctx.out << "wrote " << (out / "manifest.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainSetup {
  Task task;
  std::vector<pet::Instance> train;
  std::vector<pet::Instance> test;
  std::vector<std::string> label_names;
};

TrainSetup train_setup(const RunConfig& c) {
  TrainSetup s;
  s.task = main_task(c);
  s.label_names = pvp::label_names(s.task);
  s.train = load_labeled(s.task, c.existing_path("train_file"));
  s.test = load_labeled(s.task, c.existing_path("test_file"));
  if (s.train.empty()) fail(ErrorKind::kUsage, "empty training file");
  if (s.test.empty()) fail(ErrorKind::kUsage, "empty test file");
  return s;
}

std::optional<Task> aux_task_of(const RunConfig& c, Task main) {
  if (c.has("aux_task")) {
    if (to_lower(c.get("aux_task", "")) == "none") return std::nullopt;
    return pvp::parse_task(c.get("aux_task", ""));
  }
  if (main == Task::kT1) return Task::kT2;
  if (main == Task::kT2) return Task::kT1;
  return std::nullopt;
}

std::unique_ptr<backend::MaskedLm> maybe_mlm(const RunConfig& c,
                                             std::unique_ptr<backend::MaskedLm> base,
                                             std::uint64_t seed) {
  if (!c.has("mlm_corpus_file")) return base;
  std::vector<std::string> texts;
  std::istringstream in(read_file(c.existing_path("mlm_corpus_file")));
  for (std::string line; std::getline(in, line);) {
    if (!trim(line).empty()) texts.emplace_back(trim(line));
  }
  multitask::MlmConfig mc;
  mc.mask_rate = c.get_double("mlm_mask_rate", mc.mask_rate);
  mc.epochs = c.get_size("mlm_epochs", mc.epochs);
  mc.learning_rate = c.get_double("mlm_lr", mc.learning_rate);
  mc.batch_size = c.get_size("mlm_batch_size", mc.batch_size);
  return multitask::mlm_domain_adapt(*base, texts, mc, derive_seed(seed, "mlm"));
}

// Trains one variant on `train` for every seed; `test` scores the classifier.
struct VariantRun {
  Json report;
  std::vector<double> f1;
};

VariantRun train_variant(Context& ctx, const std::string& mode, Task task,
                         std::span<const pet::Instance> train, std::span<const pet::Instance> test,
                         std::span<const std::uint64_t> seeds, const std::optional<fs::path>& out) {
  const auto& c = ctx.config;
  const auto& names = pvp::label_names(task);
  const auto gold = labels_of(test, names.size());
  auto score = [&](const backend::MaskedLm& classifier) {
    return eval::macro_prf(pet::predict(classifier, test), gold, names);
  };
  VariantRun result;

  if (mode == "supervised") {
    std::vector<std::string> ignored;
    for (const char* key : {"pvp_file", "patterns", "aggregation", "normalize_weights", "aux_task",
                            "aux_file", "alpha_main", "alpha_aux", "sampling", "aux_batches"}) {
      if (c.has(key)) ignored.emplace_back(key);
    }
    if (!ignored.empty()) {
      ctx.err << "warning: mode=supervised ignores PVP settings: " << join(ignored, ", ") << '\n';
    }
    auto base = maybe_mlm(c, base_model(c, {}), seeds.front());
    const auto hp = member_hp(c, task);
    std::vector<eval::EvalReport> reports;
    Json seed_rows = Json::array();
    for (auto seed : seeds) {
      auto classifier = pet::train_supervised(*base, train, names.size(), hp, seed);
      reports.push_back(score(*classifier));
      seed_rows.push_back({{"seed", seed},
                           {"precision", reports.back().macro_precision},
                           {"recall", reports.back().macro_recall},
                           {"f1", reports.back().macro_f1},
                           {"report", eval::to_json(reports.back())}});
      result.f1.push_back(reports.back().macro_f1);
      if (out) {
        const auto dir = *out / ("seed-" + std::to_string(seed));
        backend::save_checkpoint(*classifier, dir / "classifier");
        write_predictions(dir / "predictions.jsonl", test, pet::predict(*classifier, test), names);
      }
    }
    const auto mean = eval::aggregate_seeds(reports);
    result.report = {{"mode", mode},
                     {"task", std::string(pvp::to_string(task))},
                     {"members", Json::array()},
                     {"seeds", seed_rows},
                     {"mean",
                      {{"precision", mean.macro_precision},
                       {"recall", mean.macro_recall},
                       {"f1", mean.macro_f1},
                       {"report", eval::to_json(mean)}}}};
    return result;
  }

  if (mode != "pet" && mode != "mtpet") {
    fail(ErrorKind::kUsage, "invalid train mode '" + mode + "' (supervised|pet|mtpet)");
  }
  const bool multitask = mode == "mtpet";
  multitask::TaskSpec spec;
  spec.main = {task, {train.begin(), train.end()}};
  const auto aux = multitask ? aux_task_of(c, task) : std::nullopt;
  if (multitask && !aux) fail(ErrorKind::kConfig, "mode=mtpet needs an auxiliary task (aux_task)");
  spec.tuples = tuples_of(c, task, aux);
  if (multitask) {
    spec.aux = multitask::TaskData{*aux, load_labeled(*aux, c.existing_path("aux_file"))};
    spec.alpha_main = c.get_double("alpha_main", 1.0);
    if (c.has("alpha_aux") && to_lower(c.get("alpha_aux", "")) != "auto") {
      spec.alpha_aux = c.get_double("alpha_aux", 0.0);
    }
    spec.sampling = multitask::parse_sampling(c.get("sampling", "uniform"));
    spec.aux_batches_enabled = c.get_bool("aux_batches", true);
  }
  spec.unlabeled = load_unlabeled(task, c.existing_path("unlabeled_file"));
  if (spec.unlabeled.empty()) fail(ErrorKind::kUsage, "empty unlabeled file");

  auto base = maybe_mlm(c, base_model(c, verbalizer_tokens(spec.tuples)), seeds.front());
  multitask::PipelineConfig pc;
  pc.member = member_hp(c, task);
  pc.distill = distill_hp(c);
  pc.aggregation = backend::parse_aggregation(c.get("aggregation", "mean"));
  pc.normalize_weights = c.get_bool("normalize_weights", false);
  pc.jobs = ctx.jobs;

  const auto run = multitask ? multitask::run_mtpet(spec, *base, pc, seeds, score)
                             : multitask::run_pet(spec, *base, pc, seeds, score);
  result.report = multitask::run_report(run);
  result.report["mode"] = mode;
  result.report["task"] = std::string(pvp::to_string(task));
  if (multitask) result.report["alpha_aux"] = multitask::effective_alpha_aux(spec);
  for (const auto& s : run.seeds) result.f1.push_back(s.report.macro_f1);
  if (out) {
    for (const auto& s : run.seeds) {
      const auto dir = *out / ("seed-" + std::to_string(s.seed));
      backend::save_checkpoint(*s.classifier, dir / "classifier");
      pet::write_soft_labels(dir / "soft_labels.jsonl", s.soft_labels);
      write_predictions(dir / "predictions.jsonl", test, pet::predict(*s.classifier, test), names);
      save_members(dir, run, s, task, pc.aggregation);
    }
  }
  return result;
}

int cmd_train(Context& ctx, const std::string& mode_flag) {
  const auto& c = ctx.config;
  const auto mode = to_lower(mode_flag.empty() ? c.require("mode") : mode_flag);
  if (mode != "supervised" && mode != "pet" && mode != "mtpet") {
    fail(ErrorKind::kUsage, "invalid train mode '" + mode + "' (supervised|pet|mtpet)");
  }
  const auto setup = train_setup(c);
  const auto seeds = seeds_of(ctx);
  const auto out = output_dir(c);
  const auto run = train_variant(ctx, mode, setup.task, setup.train, setup.test, seeds, out);
  write_json(out / "report.json", run.report);
  std::ostringstream table;
  table << "mode " << mode << ", task " << pvp::to_string(setup.task) << ", " << seeds.size()
        << " seed(s)\n";
  for (const auto& s : run.report["seeds"]) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "seed %llu  P %.4f  R %.4f  F1 %.4f\n",
                  static_cast<unsigned long long>(s["seed"].get<std::uint64_t>()),
                  s["precision"].get<double>(), s["recall"].get<double>(), s["f1"].get<double>());
    table << buf;
  }
  table << eval::to_table(eval::report_from_json(run.report["mean"]["report"]));
  write_file(out / "report.txt", table.str());
  ctx.out << table.str();
  char buf[64];
  std::snprintf(buf, sizeof buf, "macro F1: %.4f\n", run.report["mean"]["f1"].get<double>());
  ctx.out << buf;
  return 0;
}

// ---------------------------------------------------------------------------
// detect-conclusions

pet::EnsembleSpec conclusion_ensemble(const RunConfig& c) {
  pet::EnsembleSpec ens;
  const auto& reg = registry_of(c);
  if (c.has("conclusion_model")) {
    const auto dir = c.existing_path("conclusion_model");
    const auto manifest = read_json(dir / "members.json");
    const auto agg = backend::parse_aggregation(manifest.value("aggregation", std::string("mean")));
    for (const auto& m : manifest.at("members")) {
      const auto idx = m.at("pattern_index").get<std::size_t>();
      ens.members.emplace_back(backend::load_checkpoint(dir / m.at("checkpoint").get<std::string>()),
                               reg.get(Task::kConclusion, idx), agg);
      ens.weights.push_back(m.at("weight").get<double>());
    }
    if (ens.members.empty()) fail(ErrorKind::kConfig, "conclusion model has no members");
    return ens;
  }
  if (to_lower(c.get("backend", "real")) != "mock") {
    fail(ErrorKind::kConfig, "detect-conclusions needs 'conclusion_model' (or --backend mock)");
  }
  auto tuples = tuples_of(c, Task::kConclusion, std::nullopt);
  const auto wanted = c.get_size_list("conclusion_patterns");
  auto base = base_model(c, verbalizer_tokens(tuples));
  for (const auto& t : tuples) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), t.main.index) == wanted.end()) {
      continue;
    }
    ens.members.emplace_back(base->clone(), t.main);
    ens.weights.push_back(1.0);
  }
  if (ens.members.empty()) fail(ErrorKind::kConfig, "no conclusion patterns selected");
  return ens;
}

int cmd_detect_conclusions(Context& ctx) {
  const auto& c = ctx.config;
  const auto pairs = data::read_unlabeled(c.existing_path("unlabeled_pairs_file"));
  if (pairs.empty()) fail(ErrorKind::kUsage, "no unlabeled pairs to select conclusions from");
  const auto ensemble = conclusion_ensemble(c);
  std::vector<Json> lines;
  for (const auto& p : pairs) {
    const auto press = ex::detect_conclusion(p.press_sentences, ensemble);
    const auto abstract = ex::detect_conclusion(p.abstract_sentences, ensemble);
    lines.push_back({{"pair_id", p.id}, {"side", "press"}, {"index", press.index},
                     {"sentence", press.sentence}, {"score", press.score}});
    lines.push_back({{"pair_id", p.id}, {"side", "abstract"}, {"index", abstract.index},
                     {"sentence", abstract.sentence}, {"score", abstract.score}});
  }
  const auto path = c.has("selections_file") ? c.path("selections_file")
                                             : output_dir(c) / "selections.jsonl";
  write_jsonl(path, lines);
  ctx.out << "selected conclusions for " << pairs.size() << " pairs -> " << path.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

std::vector<std::size_t> aligned_predictions(const fs::path& path,
                                             std::span<const pet::Instance> gold,
                                             const std::vector<std::string>& names) {
  std::map<std::string, std::size_t> by_id;
  std::vector<std::string> order;
  std::size_t line = 0;
  for (const auto& r : read_jsonl(path)) {
    ++line;
    const auto where = path.string() + ":" + std::to_string(line);
    if (!r.is_object() || !r.contains("id") || !r["id"].is_string() || !r.contains("label")) {
      fail(ErrorKind::kConfig, where + ": prediction records need 'id' and 'label'");
    }
    const auto id = r["id"].get<std::string>();
    if (!by_id.emplace(id, parse_label(r["label"], names, where)).second) {
      fail(ErrorKind::kConfig, where + ": duplicate prediction id '" + id + "'");
    }
    order.push_back(id);
  }
  std::set<std::string> gold_ids;
  std::vector<std::size_t> out;
  for (const auto& x : gold) {
    gold_ids.insert(x.id);
    auto it = by_id.find(x.id);
    if (it == by_id.end()) {
      fail(ErrorKind::kConfig, "id mismatch: gold id '" + x.id + "' has no prediction in " +
                                   path.string());
    }
    out.push_back(it->second);
  }
  for (const auto& id : order) {
    if (!gold_ids.count(id)) {
      fail(ErrorKind::kConfig, "id mismatch: predicted id '" + id + "' is not in the gold file");
    }
  }
  return out;
}

int cmd_evaluate(Context& ctx, bool transitions_flag) {
  const auto& c = ctx.config;
  const auto task = main_task(c);
  const auto& names = pvp::label_names(task);
  const auto gold_path = c.existing_path("gold_file");
  std::vector<fs::path> prediction_files;
  for (const auto& p : c.get_list("predictions_file")) {
    fs::path path = p;
    if (path.is_relative() && !c.base_dir().empty()) path = c.base_dir() / path;
    if (!fs::exists(path)) {
      fail(ErrorKind::kNotFound, "config key 'predictions_file': path not found: " + path.string());
    }
    prediction_files.push_back(path);
  }
  if (prediction_files.empty()) fail(ErrorKind::kConfig, "missing config key 'predictions_file'");
  const bool transitions = transitions_flag || c.get_bool("transitions", false);

  std::vector<pet::Instance> gold;
  std::vector<ex::SentencePair> pairs;
  try {
    if (task == Task::kT1) {
      pairs = ex::read_sentence_pairs(gold_path);
      for (const auto& p : pairs) {
        auto x = ex::t1_instance(p);
        if (!x.label) fail(ErrorKind::kConfig, "gold pair " + p.id + " has no label");
        gold.push_back(std::move(x));
      }
    } else {
      gold = load_labeled(task, gold_path);
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kData) fail(ErrorKind::kConfig, std::string("gold file schema: ") + e.what());
    throw;
  }
  if (transitions) {
    if (task != Task::kT1) fail(ErrorKind::kConfig, "--transitions needs task = t1");
    for (const auto& p : pairs) {
      if (!p.press_strength || !p.abstract_strength) {
        fail(ErrorKind::kConfig, "--transitions needs press_strength and abstract_strength (pair " +
                                     p.id + ")");
      }
    }
  }

  const auto golds = labels_of(gold, names.size());
  std::vector<std::vector<std::size_t>> sets;
  for (const auto& path : prediction_files) sets.push_back(aligned_predictions(path, gold, names));
  const auto report = eval::macro_prf(sets.front(), golds, names);
  const auto out = output_dir(c);
  write_json(out / "eval_report.json", eval::to_json(report));
  write_file(out / "eval_report.txt", eval::to_table(report));
  ctx.out << eval::to_table(report);
  char buf[64];
  std::snprintf(buf, sizeof buf, "macro F1: %.4f\n", report.macro_f1);
  ctx.out << buf;

  if (transitions) {
    std::vector<std::vector<ex::ExaggerationLabel>> label_sets;
    for (const auto& s : sets) {
      std::vector<ex::ExaggerationLabel> labels;
      for (auto v : s) labels.push_back(static_cast<ex::ExaggerationLabel>(v));
      label_sets.push_back(std::move(labels));
    }
    const auto bins = eval::transition_error_bins(pairs, label_sets);
    write_json(out / "transitions.json", eval::to_json(bins));
    for (const auto& b : bins) {
      std::snprintf(buf, sizeof buf, "%-9s n=%-4zu wrong=%.4f\n", b.key.c_str(), b.count,
                    b.proportion);
      ctx.out << buf;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// learning-curve

int cmd_learning_curve(Context& ctx) {
  const auto& c = ctx.config;
  const auto setup = train_setup(c);
  const auto seeds = seeds_of(ctx);
  const auto sizes = c.get_size_list("curve_sizes");
  if (sizes.empty()) fail(ErrorKind::kConfig, "missing config key 'curve_sizes'");
  const auto mode = to_lower(c.get("curve_mode", "supervised"));
  auto train_eval = [&](std::span<const pet::Instance> subset, std::uint64_t seed) {
    const std::uint64_t one[] = {seed};
    const auto run = train_variant(ctx, mode, setup.task, subset, setup.test, one, std::nullopt);
    return eval::report_from_json(run.report["seeds"][0]["report"]);
  };
  const auto curve = eval::learning_curve(setup.train, sizes, seeds, train_eval, 1);
  const auto out = output_dir(c);
  write_file(out / "curve.csv", eval::curve_csv(curve));
  ctx.out << eval::curve_table(curve);
  ctx.out << "wrote " << (out / "curve.csv").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  std::string backend;
  std::string mock_table;
};

void add_common(CLI::App* sub, Common& common) {
  sub->add_option("--config", common.config, "Run configuration file (key = value)")->required();
  sub->add_option("--set", common.sets, "Override a config key (KEY=VALUE), repeatable");
  sub->add_option("--seed", common.seeds, "Seed, repeatable (overrides config 'seeds')");
  sub->add_option("--jobs", common.jobs, "Worker cap")->check(CLI::PositiveNumber);
  sub->add_option("--backend", common.backend, "Masked LM backend")
      ->check(CLI::IsMember({"real", "mock"}));
  sub->add_option("--mock-table", common.mock_table, "Mock backend score table (JSON)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task pattern-exploiting training for exaggeration detection", "mtpet"};
  app.require_subcommand(1);
  Common common;
  std::string mode;
  bool transitions = false;
  auto* prepare = app.add_subcommand("prepare-data", "Build gold datasets and ingest unlabeled pairs");
  auto* train = app.add_subcommand("train", "Train supervised, PET or MT-PET over all seeds");
  auto* detect = app.add_subcommand("detect-conclusions", "Select conclusion sentences per side");
  auto* evaluate = app.add_subcommand("evaluate", "Score prediction files against gold labels");
  auto* curve = app.add_subcommand("learning-curve", "Macro F1 against training-set size");
  for (auto* sub : {prepare, train, detect, evaluate, curve}) add_common(sub, common);
  train->add_option("--mode", mode, "supervised | pet | mtpet (overrides config 'mode')");
  evaluate->add_flag("--transitions", transitions, "Also bin errors by strength transition");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    Context ctx{RunConfig::load(common.config), common.seeds, common.jobs, out, err};
    for (const auto& s : common.sets) ctx.config.set_override(s);
    if (!common.backend.empty()) ctx.config.set("backend", common.backend);
    if (!common.mock_table.empty()) ctx.config.set("mock_table", fs::absolute(common.mock_table).string());
    if (!ctx.config.has("jobs") || common.jobs != 1) {
      ctx.jobs = common.jobs;
    } else {
      ctx.jobs = std::max<std::size_t>(1, ctx.config.get_size("jobs", 1));
    }
    ctx.config.check_known_keys();
    if (chosen == prepare) return cmd_prepare_data(ctx);
    if (chosen == train) return cmd_train(ctx, mode);
    if (chosen == detect) return cmd_detect_conclusions(ctx);
    if (chosen == evaluate) return cmd_evaluate(ctx, transitions);
    return cmd_learning_curve(ctx);
  } catch (const Error& e) {
    err << "mtpet " << name << ": " << to_string(e.kind()) << " error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "mtpet " << name << ": io error: " << e.what() << '\n';
    return 3;
  }
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace mtpet::cli
