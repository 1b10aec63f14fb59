#include "mtpet/pet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtpet/error.hpp"
#include "mtpet/io.hpp"
#include "mtpet/parallel.hpp"

namespace mtpet::pet {

ClassifierInput classifier_input(const pvp::PatternInput& input) {
  if (input.b) return {*input.b, input.a};
  if (input.role) return {input.a, std::string(pvp::to_string(*input.role))};
  return {input.a, std::nullopt};
}

PvpModel::PvpModel(std::unique_ptr<backend::MaskedLm> backend, pvp::Pvp pvp,
                   backend::Aggregation aggregation)
    : backend_(std::move(backend)), pvp_(std::move(pvp)), aggregation_(aggregation) {
  if (!backend_) fail(ErrorKind::kConfig, "PvpModel needs a backend");
  pvp_.verbalizer.validate();
}

PvpModel::PvpModel(const PvpModel& other)
    : backend_(other.backend_->clone()), pvp_(other.pvp_), aggregation_(other.aggregation_) {}

PvpModel& PvpModel::operator=(const PvpModel& other) {
  if (this != &other) {
    backend_ = other.backend_->clone();
    pvp_ = other.pvp_;
    aggregation_ = other.aggregation_;
  }
  return *this;
}

std::vector<double> label_score(const PvpModel& model, const pvp::PatternInput& x) {
  const auto& b = model.backend();
  const auto z = pvp::apply_pattern(model.pvp().pattern, x, b.vocabulary().mask_token());
  return backend::label_scores(b, z, model.pvp().verbalizer.candidate_groups(),
                               model.aggregation());
}

std::map<std::string, double> label_score_map(const PvpModel& model, const pvp::PatternInput& x) {
  const auto scores = label_score(model, x);
  std::map<std::string, double> out;
  for (std::size_t l = 0; l < scores.size(); ++l) out[model.pvp().verbalizer.labels[l]] = scores[l];
  return out;
}

std::vector<double> label_distribution(std::span<const double> scores) {
  if (scores.empty()) fail(ErrorKind::kUsage, "cannot normalise an empty score set");
  for (double s : scores) {
    if (!std::isfinite(s)) fail(ErrorKind::kNumerical, "non-finite label score");
  }
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - m);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

std::map<std::string, double> label_distribution(const std::map<std::string, double>& scores) {
  std::vector<double> values;
  for (const auto& [label, s] : scores) values.push_back(s);
  const auto probs = label_distribution(values);
  std::map<std::string, double> out;
  std::size_t i = 0;
  for (const auto& [label, s] : scores) out[label] = probs[i++];
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) fail(ErrorKind::kUsage, "argmax of empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

TrainingConfig TrainingConfig::t1_defaults() {
  TrainingConfig c;
  c.learning_rate = 5.598e-5;
  return c;
}

TrainingConfig TrainingConfig::t2_defaults() { return TrainingConfig{}; }

TrainingConfig TrainingConfig::distill_defaults() {
  TrainingConfig c;
  c.learning_rate = 1e-5;
  c.epochs = 3;
  c.batch_size = 4;
  c.warmup_steps = 200;
  c.weight_decay = 1e-2;
  c.temperature = 2.0;
  return c;
}

backend::OptimizerConfig TrainingConfig::optimizer(std::size_t steps) const {
  backend::OptimizerConfig c;
  c.learning_rate = learning_rate;
  c.weight_decay = weight_decay;
  c.warmup_steps = warmup_steps;
  c.total_steps = steps;
  c.max_grad_norm = max_grad_norm;
  return c;
}

std::vector<double> class_weights(std::span<const std::size_t> labels, std::size_t num_labels) {
  std::vector<std::size_t> counts(num_labels, 0);
  for (std::size_t l : labels) {
    if (l >= num_labels) fail(ErrorKind::kData, "label outside label space");
    ++counts[l];
  }
  const auto present = static_cast<double>(
      std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
  std::vector<double> out(num_labels, 0.0);
  const auto n = static_cast<double>(labels.size());
  for (std::size_t l = 0; l < num_labels; ++l) {
    if (counts[l] > 0) out[l] = n / (present * static_cast<double>(counts[l]));
  }
  return out;
}

std::size_t total_steps(std::size_t n, std::size_t batch_size, std::size_t epochs) {
  if (batch_size == 0) fail(ErrorKind::kConfig, "batch size must be positive");
  return epochs * ((n + batch_size - 1) / batch_size);
}

BatchCycler::BatchCycler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), order_(n), cursor_(n), rng_(seed) {
  if (n == 0) fail(ErrorKind::kUsage, "cannot batch an empty dataset");
  if (batch_size == 0) fail(ErrorKind::kConfig, "batch size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

std::vector<std::size_t> BatchCycler::next() {
  if (cursor_ >= order_.size()) {
    rng_.shuffle(std::span<std::size_t>(order_));
    cursor_ = 0;
  }
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return out;
}

std::vector<std::size_t> gold_labels(std::span<const Instance> data, std::size_t num_labels) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (const auto& x : data) {
    if (!x.label) fail(ErrorKind::kData, "instance " + x.id + " has no label");
    if (*x.label >= num_labels) {
      fail(ErrorKind::kData, "instance " + x.id + " has label " + std::to_string(*x.label) +
                                 " outside the label space of size " +
                                 std::to_string(num_labels));
    }
    out.push_back(*x.label);
  }
  return out;
}

std::vector<backend::MaskedExample> masked_examples(const pvp::Pvp& pvp,
                                                    std::span<const Instance> data,
                                                    std::span<const std::size_t> indices,
                                                    std::span<const double> weights,
                                                    backend::Aggregation aggregation,
                                                    std::string_view mask) {
  const auto groups = pvp.verbalizer.candidate_groups();
  std::vector<backend::MaskedExample> batch;
  batch.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto& x = data[i];
    backend::MaskedExample ex;
    ex.id = x.id;
    ex.sequence = pvp::apply_pattern(pvp.pattern, x.input, mask);
    ex.label_tokens = groups;
    ex.target.assign(groups.size(), 0.0);
    ex.target.at(*x.label) = 1.0;
    ex.weight = weights.empty() ? 1.0 : weights[*x.label];
    ex.aggregation = aggregation;
    batch.push_back(std::move(ex));
  }
  return batch;
}

void train_single(PvpModel& model, std::span<const Instance> data, const TrainingConfig& hp,
                  std::uint64_t seed, TrainingLog* log) {
  if (data.empty()) fail(ErrorKind::kUsage, "no training data");
  const std::size_t k = model.num_labels();
  const auto labels = gold_labels(data, k);
  const auto weights = hp.class_weighted ? class_weights(labels, k) : std::vector<double>{};
  const std::size_t steps = total_steps(data.size(), hp.batch_size, hp.epochs);

  auto& b = model.backend();
  b.set_mode(backend::Mode::kTraining);
  backend::AdamW optimizer(hp.optimizer(steps));
  BatchCycler cycler(data.size(), hp.batch_size, derive_seed(seed, "main"));
  const backend::LossSpec loss{backend::LossSpec::Kind::kCrossEntropy, 1.0, 1.0};
  for (std::size_t s = 0; s < steps; ++s) {
    const auto idx = cycler.next();
    const auto batch = masked_examples(model.pvp(), data, idx, weights, model.aggregation(),
                                       b.vocabulary().mask_token());
    const double value = backend::fine_tune_batch(b, batch, loss, optimizer);
    if (log) {
      StepRecord rec{true, value, batch.size(), {}};
      for (const auto& ex : batch) rec.ids.push_back(ex.id);
      log->push_back(std::move(rec));
    }
  }
  b.set_mode(backend::Mode::kInference);
}

double zero_shot_accuracy(const PvpModel& model, std::span<const Instance> data) {
  if (data.empty()) fail(ErrorKind::kUsage, "no evaluation data");
  const auto labels = gold_labels(data, model.num_labels());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (argmax(label_score(model, data[i].input)) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<SoftLabelRecord> soft_label(const EnsembleSpec& ensemble,
                                        std::span<const Instance> unlabeled, std::size_t jobs) {
  if (ensemble.members.empty()) fail(ErrorKind::kConfig, "ensemble has no members");
  if (ensemble.weights.size() != ensemble.members.size()) {
    fail(ErrorKind::kConfig, "ensemble needs one weight per member");
  }
  if (unlabeled.empty()) fail(ErrorKind::kUsage, "no unlabeled instances");
  double total = 0.0;
  for (double w : ensemble.weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::kConfig, "ensemble weights must be >= 0");
    total += w;
  }
  if (total == 0.0) fail(ErrorKind::kConfig, "ensemble weights are all zero");
  std::vector<double> weights = ensemble.weights;
  if (ensemble.normalize_weights) {
    for (double& w : weights) w /= total;
  }
  const auto& labels = ensemble.members.front().pvp().verbalizer.labels;
  for (const auto& m : ensemble.members) {
    if (m.pvp().verbalizer.labels != labels) {
      fail(ErrorKind::kConfig, "ensemble members disagree on the label space");
    }
  }

  std::vector<SoftLabelRecord> out(unlabeled.size());
  parallel_for(unlabeled.size(), jobs, [&](std::size_t j) {
    SoftLabelRecord rec;
    rec.id = unlabeled[j].id;
    rec.labels = labels;
    rec.scores.assign(labels.size(), 0.0);
    for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
      auto s = label_score(ensemble.members[i], unlabeled[j].input);
      for (std::size_t l = 0; l < labels.size(); ++l) rec.scores[l] += weights[i] * s[l];
      rec.member_scores.push_back(std::move(s));
    }
    out[j] = std::move(rec);
  });
  return out;
}

Json to_json(const SoftLabelRecord& record) {
  auto as_object = [&](const std::vector<double>& values) {
    Json obj = Json::object();
    for (std::size_t l = 0; l < record.labels.size(); ++l) obj[record.labels[l]] = values[l];
    return obj;
  };
  Json members = Json::array();
  for (const auto& m : record.member_scores) members.push_back(as_object(m));
  return Json{{"id", record.id}, {"scores", as_object(record.scores)}, {"member_scores", members}};
}

SoftLabelRecord soft_label_from_json(const Json& record, const std::vector<std::string>& labels) {
  auto read_scores = [&](const Json& obj) {
    if (!obj.is_object() || obj.size() != labels.size()) {
      fail(ErrorKind::kData, "soft label scores do not match the label space");
    }
    std::vector<double> out;
    for (const auto& l : labels) {
      if (!obj.contains(l) || !obj.at(l).is_number()) {
        fail(ErrorKind::kData, "soft label record missing score for '" + l + "'");
      }
      out.push_back(obj.at(l).get<double>());
    }
    return out;
  };
  SoftLabelRecord rec;
  rec.id = require_string(record, "id");
  rec.labels = labels;
  if (!record.contains("scores")) fail(ErrorKind::kData, "soft label record without scores");
  rec.scores = read_scores(record.at("scores"));
  for (const auto& m : record.value("member_scores", Json::array())) {
    rec.member_scores.push_back(read_scores(m));
  }
  return rec;
}

void write_soft_labels(const std::filesystem::path& path, std::span<const SoftLabelRecord> records) {
  std::vector<Json> lines;
  lines.reserve(records.size());
  for (const auto& r : records) lines.push_back(to_json(r));
  write_jsonl(path, lines);
}

std::vector<SoftLabelRecord> read_soft_labels(const std::filesystem::path& path,
                                              const std::vector<std::string>& labels) {
  std::vector<SoftLabelRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(soft_label_from_json(j, labels));
  return out;
}

std::vector<double> distillation_target(std::span<const double> scores, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::kUsage, "temperature must be positive");
  std::vector<double> scaled(scores.begin(), scores.end());
  for (double& s : scaled) {
    if (!std::isfinite(s)) fail(ErrorKind::kData, "non-finite soft label score");
    s /= temperature;
  }
  return label_distribution(scaled);
}

namespace {

std::unique_ptr<backend::MaskedLm> train_head(const backend::MaskedLm& base,
                                              std::vector<backend::ClassifierExample> examples,
                                              std::size_t num_labels, const TrainingConfig& hp,
                                              const backend::LossSpec& loss, std::uint64_t seed) {
  if (examples.empty()) fail(ErrorKind::kUsage, "no classifier training data");
  if (hp.class_weighted) {
    std::vector<std::size_t> argmaxes;
    for (const auto& ex : examples) argmaxes.push_back(argmax(ex.target));
    const auto w = class_weights(argmaxes, num_labels);
    for (std::size_t i = 0; i < examples.size(); ++i) examples[i].weight = w[argmaxes[i]];
  }
  auto student = base.clone();
  student->attach_head(num_labels);
  student->set_mode(backend::Mode::kTraining);
  const std::size_t steps = total_steps(examples.size(), hp.batch_size, hp.epochs);
  backend::AdamW optimizer(hp.optimizer(steps));
  BatchCycler cycler(examples.size(), hp.batch_size, derive_seed(seed, "distill"));
  std::vector<backend::ClassifierExample> batch;
  for (std::size_t s = 0; s < steps; ++s) {
    batch.clear();
    for (std::size_t i : cycler.next()) batch.push_back(examples[i]);
    backend::fine_tune_classifier_batch(*student, batch, loss, optimizer);
  }
  student->set_mode(backend::Mode::kInference);
  return student;
}

}  // namespace

std::unique_ptr<backend::MaskedLm> distill(const backend::MaskedLm& base,
                                           std::span<const Instance> inputs,
                                           std::span<const SoftLabelRecord> soft,
                                           const TrainingConfig& hp, std::uint64_t seed) {
  if (soft.empty()) fail(ErrorKind::kUsage, "no soft-labelled data to distil");
  if (!(hp.temperature > 0.0)) fail(ErrorKind::kUsage, "temperature must be positive");
  if (inputs.size() != soft.size()) {
    fail(ErrorKind::kData, "soft labels and inputs differ in length");
  }
  const std::size_t num_labels = soft.front().scores.size();
  std::vector<backend::ClassifierExample> examples;
  examples.reserve(soft.size());
  for (std::size_t i = 0; i < soft.size(); ++i) {
    if (inputs[i].id != soft[i].id) {
      fail(ErrorKind::kData, "soft label id " + soft[i].id + " does not match input " +
                                 inputs[i].id);
    }
    if (soft[i].scores.size() != num_labels) {
      fail(ErrorKind::kData, "soft label " + soft[i].id + " has the wrong label count");
    }
    const auto seg = classifier_input(inputs[i].input);
    examples.push_back({soft[i].id, seg.first, seg.second,
                        distillation_target(soft[i].scores, hp.temperature), 1.0});
  }
  const backend::LossSpec loss{backend::LossSpec::Kind::kKlDivergence, hp.temperature, 1.0};
  return train_head(base, std::move(examples), num_labels, hp, loss, seed);
}

std::unique_ptr<backend::MaskedLm> train_supervised(const backend::MaskedLm& base,
                                                    std::span<const Instance> data,
                                                    std::size_t num_labels,
                                                    const TrainingConfig& hp, std::uint64_t seed) {
  const auto labels = gold_labels(data, num_labels);
  std::vector<backend::ClassifierExample> examples;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto seg = classifier_input(data[i].input);
    std::vector<double> target(num_labels, 0.0);
    target[labels[i]] = 1.0;
    examples.push_back({data[i].id, seg.first, seg.second, std::move(target), 1.0});
  }
  const backend::LossSpec loss{backend::LossSpec::Kind::kCrossEntropy, 1.0, 1.0};
  return train_head(base, std::move(examples), num_labels, hp, loss, seed);
}

std::vector<std::size_t> predict(const backend::MaskedLm& classifier,
                                 std::span<const Instance> data) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (const auto& x : data) {
    const auto seg = classifier_input(x.input);
    std::optional<std::string_view> second;
    if (seg.second) second = *seg.second;
    out.push_back(argmax(backend::classify(classifier, seg.first, second)));
  }
  return out;
}

}  // namespace mtpet::pet
