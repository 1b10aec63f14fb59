#include "mtpet/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mtpet/data.hpp"
#include "mtpet/error.hpp"
#include "mtpet/parallel.hpp"

namespace mtpet::eval {

EvalReport macro_prf(std::span<const std::size_t> predictions, std::span<const std::size_t> golds,
                     const std::vector<std::string>& labels) {
  if (predictions.size() != golds.size()) {
    fail(ErrorKind::kUsage, "predictions (" + std::to_string(predictions.size()) +
                                ") and golds (" + std::to_string(golds.size()) +
                                ") differ in length");
  }
  const std::size_t k = labels.size();
  if (k == 0) fail(ErrorKind::kUsage, "empty label space");
  EvalReport r;
  r.labels = labels;
  r.confusion.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] >= k || predictions[i] >= k) {
      fail(ErrorKind::kUsage, "label index outside the " + std::to_string(k) + "-label space");
    }
    r.confusion[golds[i]][predictions[i]] += 1.0;
  }
  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  r.f1.assign(k, 0.0);
  r.support.assign(k, 0.0);
  double correct = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double predicted = 0.0;
    for (std::size_t g = 0; g < k; ++g) predicted += r.confusion[g][c];
    for (std::size_t p = 0; p < k; ++p) r.support[c] += r.confusion[c][p];
    const double tp = r.confusion[c][c];
    correct += tp;
    if (predicted > 0) r.precision[c] = tp / predicted;
    if (r.support[c] > 0) r.recall[c] = tp / r.support[c];
    if (r.precision[c] + r.recall[c] > 0) {
      r.f1[c] = 2 * r.precision[c] * r.recall[c] / (r.precision[c] + r.recall[c]);
    }
    r.macro_precision += r.precision[c];
    r.macro_recall += r.recall[c];
    r.macro_f1 += r.f1[c];
  }
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  r.accuracy = golds.empty() ? 0.0 : correct / static_cast<double>(golds.size());
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    per_class.push_back({{"label", r.labels[c]},
                         {"precision", r.precision[c]},
                         {"recall", r.recall[c]},
                         {"f1", r.f1[c]},
                         {"support", r.support[c]}});
  }
  return {{"labels", r.labels},
          {"per_class", per_class},
          {"macro", {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}}},
          {"accuracy", r.accuracy},
          {"confusion", r.confusion}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& c : j.at("per_class")) {
      r.precision.push_back(c.at("precision").get<double>());
      r.recall.push_back(c.at("recall").get<double>());
      r.f1.push_back(c.at("f1").get<double>());
      r.support.push_back(c.at("support").get<double>());
    }
    r.macro_precision = j.at("macro").at("precision").get<double>();
    r.macro_recall = j.at("macro").at("recall").get<double>();
    r.macro_f1 = j.at("macro").at("f1").get<double>();
    r.accuracy = j.value("accuracy", 0.0);
    r.confusion = j.at("confusion").get<std::vector<std::vector<double>>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("malformed evaluation report: ") + e.what());
  }
}

namespace {

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    width.resize(std::max(width.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      // first column left-aligned, numbers right-aligned
      const auto pad = std::string(width[i] - row[i].size(), ' ');
      if (i) out << "  ";
      out << (i == 0 ? row[i] + pad : pad + row[i]);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string to_table(const EvalReport& r) {
  std::vector<std::vector<std::string>> rows{{"label", "precision", "recall", "f1", "support"}};
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    rows.push_back({r.labels[c], fmt(r.precision[c]), fmt(r.recall[c]), fmt(r.f1[c]),
                    fmt(r.support[c], 1)});
  }
  double total = 0.0;
  for (double s : r.support) total += s;
  rows.push_back({"macro", fmt(r.macro_precision), fmt(r.macro_recall), fmt(r.macro_f1),
                  fmt(total, 1)});
  return render_table(rows);
}

EvalReport aggregate_seeds(std::span<const EvalReport> reports) {
  if (reports.empty()) fail(ErrorKind::kUsage, "no reports to aggregate");
  const auto& labels = reports.front().labels;
  for (const auto& r : reports) {
    if (r.labels != labels) fail(ErrorKind::kUsage, "reports have different label spaces");
  }
  const std::size_t k = labels.size();
  EvalReport m;
  m.labels = labels;
  m.precision.assign(k, 0.0);
  m.recall.assign(k, 0.0);
  m.f1.assign(k, 0.0);
  m.support.assign(k, 0.0);
  m.confusion.assign(k, std::vector<double>(k, 0.0));
  for (const auto& r : reports) {
    for (std::size_t c = 0; c < k; ++c) {
      m.precision[c] += r.precision[c];
      m.recall[c] += r.recall[c];
      m.f1[c] += r.f1[c];
      m.support[c] += r.support[c];
      for (std::size_t p = 0; p < k; ++p) m.confusion[c][p] += r.confusion[c][p];
    }
    m.macro_precision += r.macro_precision;
    m.macro_recall += r.macro_recall;
    m.macro_f1 += r.macro_f1;
    m.accuracy += r.accuracy;
  }
  const double n = static_cast<double>(reports.size());
  for (std::size_t c = 0; c < k; ++c) {
    m.precision[c] /= n;
    m.recall[c] /= n;
    m.f1[c] /= n;
    m.support[c] /= n;
    for (auto& v : m.confusion[c]) v /= n;
  }
  m.macro_precision /= n;
  m.macro_recall /= n;
  m.macro_f1 /= n;
  m.accuracy /= n;
  return m;
}

std::vector<CurvePoint> learning_curve(std::span<const pet::Instance> train,
                                       std::span<const std::size_t> sizes,
                                       std::span<const std::uint64_t> seeds,
                                       const TrainEval& train_eval, std::size_t jobs) {
  if (seeds.empty()) fail(ErrorKind::kUsage, "learning curve needs at least one seed");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] > train.size()) {
      fail(ErrorKind::kUsage, "curve size " + std::to_string(sizes[i]) + " exceeds the " +
                                  std::to_string(train.size()) + " available instances");
    }
    if (i && sizes[i] <= sizes[i - 1]) fail(ErrorKind::kUsage, "curve sizes must ascend");
  }
  auto label_of = [](const pet::Instance& x) {
    if (!x.label) fail(ErrorKind::kData, "unlabeled instance " + x.id + " in curve data");
    return std::to_string(*x.label);
  };

  std::vector<CurvePoint> curve(sizes.size());
  const std::size_t cells = sizes.size() * seeds.size();
  std::vector<double> f1(cells, 0.0);
  parallel_for(cells, jobs, [&](std::size_t cell) {
    const std::size_t si = cell / seeds.size();
    const std::uint64_t seed = seeds[cell % seeds.size()];
    const auto subset = data::stratified_sample(train, sizes[si], seed + si, label_of);
    f1[cell] = train_eval(subset, seed).macro_f1;
  });
  for (std::size_t si = 0; si < sizes.size(); ++si) {
    auto& p = curve[si];
    p.size = sizes[si];
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      p.seeds.push_back(seeds[k]);
      p.f1.push_back(f1[si * seeds.size() + k]);
      p.mean_f1 += p.f1.back();
    }
    p.mean_f1 /= static_cast<double>(seeds.size());
  }
  return curve;
}

std::string curve_csv(std::span<const CurvePoint> curve) {
  std::ostringstream out;
  out << "size,seed,f1\n";
  char buf[64];
  for (const auto& p : curve) {
    for (std::size_t k = 0; k < p.seeds.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.10g", p.f1[k]);
      out << p.size << ',' << p.seeds[k] << ',' << buf << '\n';
    }
  }
  return out.str();
}

std::string curve_table(std::span<const CurvePoint> curve) {
  std::vector<std::vector<std::string>> rows{{"size", "seeds", "mean_f1"}};
  for (const auto& p : curve) {
    rows.push_back({std::to_string(p.size), std::to_string(p.seeds.size()), fmt(p.mean_f1)});
  }
  return render_table(rows);
}

std::vector<std::string> transition_keys() {
  std::vector<std::string> keys;
  for (int a = 0; a < exaggeration::kNumStrengths; ++a) {
    for (int p = 0; p < exaggeration::kNumStrengths; ++p) {
      keys.push_back(std::string(exaggeration::abbreviation(static_cast<exaggeration::ClaimStrength>(a))) +
                     "->" +
                     std::string(exaggeration::abbreviation(static_cast<exaggeration::ClaimStrength>(p))));
    }
  }
  return keys;
}

std::vector<TransitionBin> transition_error_bins(
    std::span<const exaggeration::SentencePair> pairs,
    std::span<const std::vector<exaggeration::ExaggerationLabel>> prediction_sets) {
  using exaggeration::kNumStrengths;
  if (prediction_sets.empty()) fail(ErrorKind::kUsage, "no prediction sets");
  for (const auto& set : prediction_sets) {
    if (set.size() != pairs.size()) {
      fail(ErrorKind::kUsage, "prediction set length differs from the number of pairs");
    }
  }
  const auto keys = transition_keys();
  std::vector<TransitionBin> bins(keys.size());
  for (std::size_t b = 0; b < keys.size(); ++b) bins[b].key = keys[b];

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    if (!p.press_strength || !p.abstract_strength) {
      fail(ErrorKind::kUsage, "pair " + p.id + " lacks gold claim strengths");
    }
    const auto gold = exaggeration::derive_exaggeration(*p.press_strength, *p.abstract_strength);
    auto& bin = bins[static_cast<std::size_t>(*p.abstract_strength) * kNumStrengths +
                     static_cast<std::size_t>(*p.press_strength)];
    ++bin.count;
    const bool all_wrong = std::all_of(prediction_sets.begin(), prediction_sets.end(),
                                       [&](const auto& set) { return set[i] != gold; });
    if (all_wrong) ++bin.wrong;
  }
  std::vector<TransitionBin> out;
  for (auto& b : bins) {
    if (b.count == 0) continue;
    b.proportion = static_cast<double>(b.wrong) / static_cast<double>(b.count);
    out.push_back(b);
  }
  return out;
}

nlohmann::json to_json(std::span<const TransitionBin> bins) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : bins) {
    out.push_back({{"key", b.key}, {"count", b.count}, {"wrong", b.wrong}, {"proportion", b.proportion}});
  }
  return out;
}

}  // namespace mtpet::eval
