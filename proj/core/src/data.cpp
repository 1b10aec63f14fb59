#include "mtpet/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <regex>
#include <set>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "mtpet/error.hpp"
#include "mtpet/io.hpp"
#include "mtpet/parallel.hpp"

namespace mtpet::data {

using namespace exaggeration;

// ---------------------------------------------------------------------------
// ROUGE

RougeVariant parse_rouge_variant(std::string_view name) {
  const auto n = to_lower(trim(name));
  if (n == "rouge1") return RougeVariant::kRouge1;
  if (n == "rouge2") return RougeVariant::kRouge2;
  if (n == "rougel") return RougeVariant::kRougeL;
  fail(ErrorKind::kConfig, "unknown ROUGE variant '" + std::string(name) + "' (rouge1|rouge2|rougeL)");
}

std::string_view to_string(RougeVariant v) {
  switch (v) {
    case RougeVariant::kRouge1: return "rouge1";
    case RougeVariant::kRouge2: return "rouge2";
    case RougeVariant::kRougeL: return "rougeL";
  }
  return "rougeL";
}

namespace {

RougeScore from_overlap(double overlap, double candidate_len, double reference_len) {
  RougeScore s;
  if (candidate_len > 0) s.precision = overlap / candidate_len;
  if (reference_len > 0) s.recall = overlap / reference_len;
  if (s.precision + s.recall > 0) s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::map<std::string, std::size_t> ngram_counts(const std::vector<std::string>& tokens,
                                                std::size_t n) {
  std::map<std::string, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t k = 1; k < n; ++k) key += ' ' + tokens[i + k];
    ++counts[key];
  }
  return counts;
}

RougeScore rouge_tokens(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                        RougeVariant variant) {
  if (variant == RougeVariant::kRougeL) {
    const double lcs = static_cast<double>(lcs_length(cand, ref));
    return from_overlap(lcs, static_cast<double>(cand.size()), static_cast<double>(ref.size()));
  }
  const std::size_t n = variant == RougeVariant::kRouge1 ? 1 : 2;
  const auto c = ngram_counts(cand, n);
  const auto r = ngram_counts(ref, n);
  std::size_t overlap = 0, c_total = 0, r_total = 0;
  for (const auto& [g, k] : c) {
    c_total += k;
    auto it = r.find(g);
    if (it != r.end()) overlap += std::min(k, it->second);
  }
  for (const auto& [g, k] : r) r_total += k;
  return from_overlap(static_cast<double>(overlap), static_cast<double>(c_total),
                      static_cast<double>(r_total));
}

}  // namespace

RougeScore rouge_score(std::string_view candidate, std::string_view reference,
                       RougeVariant variant) {
  const auto c = word_tokens(candidate);
  const auto r = word_tokens(reference);
  if (c.empty() || r.empty()) fail(ErrorKind::kUsage, "ROUGE needs word tokens on both sides");
  return rouge_tokens(c, r, variant);
}

SentenceMatch match_sentence(std::string_view paraphrase, std::span<const std::string> sentences,
                             RougeVariant variant, double threshold) {
  if (sentences.empty()) fail(ErrorKind::kUsage, "no sentences to match against");
  const auto ref = word_tokens(paraphrase);
  if (ref.empty()) fail(ErrorKind::kUsage, "paraphrase has no word tokens");
  SentenceMatch best;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto cand = word_tokens(sentences[i]);
    const double f1 = cand.empty() ? 0.0 : rouge_tokens(cand, ref, variant).f1;
    if (i == 0 || f1 > best.f1) {
      best.index = i;
      best.f1 = f1;
    }
  }
  best.low_confidence = best.f1 < threshold;
  return best;
}

// ---------------------------------------------------------------------------
// Press releases

std::vector<std::string> truncate_press(const PressDocument& doc,
                                        std::vector<std::string>* warnings) {
  if (!doc.title || trim(*doc.title).empty()) {
    fail(ErrorKind::kData, "press release " + doc.id + " has no title");
  }
  std::vector<std::string> out{std::string(trim(*doc.title))};
  if (doc.lead && !trim(*doc.lead).empty()) {
    out.emplace_back(trim(*doc.lead));
  } else if (warnings) {
    warnings->push_back("press release " + doc.id + " has no lead sentence");
  }
  std::size_t taken = 0;
  for (const auto& s : doc.body) {
    if (taken == 3) break;
    if (trim(s).empty()) continue;
    out.emplace_back(trim(s));
    ++taken;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<std::size_t> stratified_indices(std::span<const std::string> labels, std::size_t n,
                                            std::uint64_t seed) {
  if (n > labels.size()) {
    fail(ErrorKind::kUsage, "cannot sample " + std::to_string(n) + " of " +
                                std::to_string(labels.size()) + " records");
  }
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);

  struct Quota {
    const std::string* label;
    std::size_t count;
    // Remainder numerator: n * c_k mod N, compared exactly.
    std::size_t remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  const std::size_t total = labels.size();
  for (const auto& [label, idx] : by_label) {
    const std::size_t num = n * idx.size();
    quotas.push_back({&label, num / total, num % total});
    assigned += num / total;
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quotas[a].remainder > quotas[b].remainder;
  });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++quotas[order[k]].count;

  Rng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(n);
  for (const auto& q : quotas) {
    auto idx = by_label[*q.label];
    rng.shuffle(std::span<std::size_t>(idx));
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(q.count));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Abstract fetching

HttpTransport::HttpTransport(std::string base_url, std::chrono::seconds timeout)
    : timeout_(timeout) {
  const auto scheme = base_url.find("://");
  const auto path_start = base_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) {
    origin_ = base_url;
  } else {
    origin_ = base_url.substr(0, path_start);
    prefix_ = base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
}

HttpResponse HttpTransport::get(const std::string& target,
                                const std::multimap<std::string, std::string>& headers) {
  httplib::Client client(origin_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  httplib::Headers h(headers.begin(), headers.end());
  auto res = client.Get(prefix_ + target, h);
  if (!res) {
    fail(ErrorKind::kIo, "request to " + origin_ + " failed: " + httplib::to_string(res.error()));
  }
  return {res->status, res->body};
}

FetchConfig FetchConfig::from_env() {
  FetchConfig c;
  if (const char* v = std::getenv("EXAG_FETCH_BASE_URL"); v && *v) c.base_url = v;
  if (const char* v = std::getenv("EXAG_FETCH_API_KEY"); v && *v) c.api_key = v;
  return c;
}

bool valid_doi(std::string_view doi) {
  static const std::regex re(R"(^10\.\d{4,9}/\S+$)");
  return std::regex_match(doi.begin(), doi.end(), re);
}

std::optional<std::string> fetch_abstract(std::string_view doi, Transport& transport,
                                          const FetchConfig& config) {
  if (!valid_doi(doi)) fail(ErrorKind::kUsage, "invalid DOI '" + std::string(doi) + "'");
  std::multimap<std::string, std::string> headers;
  if (!config.api_key.empty()) headers.emplace("x-api-key", config.api_key);
  const std::string target = "/paper/" + std::string(doi) + "?fields=abstract";

  auto delay = config.base_delay;
  for (int attempt = 1;; ++attempt) {
    const auto res = transport.get(target, headers);
    if (res.status == 404) return std::nullopt;
    if (res.status == 429) {
      if (attempt >= config.max_tries) {
        fail(ErrorKind::kRateLimit, "rate limited fetching " + std::string(doi) + " after " +
                                        std::to_string(attempt) + " tries");
      }
      if (config.sleep) {
        config.sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
      delay *= 2;
      continue;
    }
    if (res.status != 200) {
      fail(ErrorKind::kIo,
           "fetching " + std::string(doi) + ": HTTP status " + std::to_string(res.status));
    }
    Json body;
    try {
      body = Json::parse(res.body);
    } catch (const Json::parse_error& e) {
      fail(ErrorKind::kParse, "abstract response for " + std::string(doi) + ": " + e.what());
    }
    if (!body.is_object() || !body.contains("abstract")) {
      fail(ErrorKind::kParse, "abstract response for " + std::string(doi) + " lacks 'abstract'");
    }
    const auto& a = body["abstract"];
    if (a.is_null()) return std::nullopt;
    if (!a.is_string()) {
      fail(ErrorKind::kParse, "abstract for " + std::string(doi) + " is not a string");
    }
    return a.get<std::string>();
  }
}

std::vector<std::optional<std::string>> fetch_abstracts(std::span<const std::string> dois,
                                                        Transport& transport,
                                                        const FetchConfig& config,
                                                        std::size_t connections,
                                                        std::vector<std::string>* errors) {
  std::vector<std::optional<std::string>> out(dois.size());
  std::vector<std::string> errs(dois.size());
  parallel_for(dois.size(), connections, [&](std::size_t i) {
    try {
      out[i] = fetch_abstract(dois[i], transport, config);
    } catch (const Error& e) {
      errs[i] = e.what();
    }
  });
  if (errors) *errors = std::move(errs);
  return out;
}

// ---------------------------------------------------------------------------
// Gold set

namespace {

std::vector<std::string> sentences_field(const Json& record, const char* field,
                                         const SentenceSplitter& splitter) {
  auto it = record.find(field);
  if (it == record.end() || it->is_null()) return {};
  if (it->is_string()) return splitter(it->get<std::string>());
  if (!it->is_array()) {
    fail(ErrorKind::kData, std::string("field '") + field + "' must be a string or a list");
  }
  std::vector<std::string> out;
  for (const auto& s : *it) {
    if (!s.is_string()) fail(ErrorKind::kData, std::string("field '") + field + "' holds a non-string");
    if (!trim(s.get_ref<const std::string&>()).empty()) out.emplace_back(trim(s.get<std::string>()));
  }
  return out;
}

std::optional<std::string> optional_string(const Json& record, const char* field) {
  auto it = record.find(field);
  if (it == record.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) fail(ErrorKind::kData, std::string("field '") + field + "' must be a string");
  return it->get<std::string>();
}

std::string label_name(ExaggerationLabel l) {
  return std::string(pvp::label_names(pvp::Task::kT1)[static_cast<std::size_t>(l)]);
}

Json label_counts(std::span<const SentencePair> pairs) {
  Json counts = Json::object();
  for (const auto& name : pvp::label_names(pvp::Task::kT1)) counts[std::string(name)] = 0;
  for (const auto& p : pairs) counts[label_name(*p.exaggeration)] = counts[label_name(*p.exaggeration)].get<int>() + 1;
  return counts;
}

Json to_json(const LowConfidenceAlignment& a) {
  return Json{{"id", a.id},         {"side", a.side},         {"paraphrase", a.paraphrase},
              {"index", a.index},   {"sentence", a.sentence}, {"f1", a.f1}};
}

}  // namespace

AnnotationRecord annotation_from_json(const Json& record) {
  AnnotationRecord a;
  a.id = require_string(record, "id");
  try {
    a.doi = require_string(record, "doi");
    a.press_finding = require_string(record, "press_finding");
    a.abstract_finding = require_string(record, "abstract_finding");
    a.press_code.value = static_cast<int>(require_int(record, "press_code"));
    a.abstract_code.value = static_cast<int>(require_int(record, "abstract_code"));
    for (int code : {a.press_code.value, a.abstract_code.value}) {
      if (code < 0 || code > 6) fail(ErrorKind::kData, "annotation code outside 0..6");
    }
  } catch (const Error& e) {
    throw e.with_context("annotation " + a.id);
  }
  return a;
}

PressDocument press_from_json(const Json& record) {
  PressDocument d;
  d.id = require_string(record, "id");
  try {
    d.title = optional_string(record, "title");
    d.lead = optional_string(record, "lead");
    d.body = sentences_field(record, "body", split_sentences);
  } catch (const Error& e) {
    throw e.with_context("press release " + d.id);
  }
  return d;
}

GoldSet build_gold(std::span<const AnnotationRecord> annotations,
                   const std::map<std::string, std::optional<std::string>>& abstracts,
                   std::span<const PressDocument> press, const GoldConfig& config) {
  GoldSet gold;
  std::map<std::string, const PressDocument*> press_by_id;
  for (const auto& p : press) press_by_id.emplace(p.id, &p);

  std::vector<const AnnotationRecord*> rows;
  for (const auto& a : annotations) rows.push_back(&a);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto* x, const auto* y) { return x->id < y->id; });

  std::set<std::string> seen;
  for (const auto* a : rows) {
    auto skip = [&](std::string reason) { gold.skipped.push_back({a->id, std::move(reason)}); };
    if (!seen.insert(a->id).second) {
      skip("duplicate id");
      continue;
    }
    const auto press_strength = map_sumner_to_li(a->press_code);
    const auto abstract_strength = map_sumner_to_li(a->abstract_code);
    if (!press_strength || !abstract_strength) {
      skip("no relationship mentioned (code 0)");
      continue;
    }
    auto pit = press_by_id.find(a->id);
    if (pit == press_by_id.end()) {
      skip("no press release");
      continue;
    }
    auto ait = abstracts.find(a->doi);
    if (ait == abstracts.end() || !ait->second || trim(*ait->second).empty()) {
      skip("no abstract for DOI " + a->doi);
      continue;
    }
    std::vector<std::string> press_sentences;
    try {
      press_sentences = truncate_press(*pit->second, &gold.warnings);
    } catch (const Error& e) {
      skip(e.what());
      continue;
    }
    const auto abstract_sentences = config.splitter(*ait->second);
    if (abstract_sentences.empty()) {
      skip("abstract has no sentences");
      continue;
    }
    SentenceMatch pm, am;
    try {
      pm = match_sentence(a->press_finding, press_sentences, config.rouge,
                          config.low_confidence_threshold);
      am = match_sentence(a->abstract_finding, abstract_sentences, config.rouge,
                          config.low_confidence_threshold);
    } catch (const Error& e) {
      skip(e.what());
      continue;
    }
    if (pm.low_confidence) {
      gold.low_confidence.push_back(
          {a->id, "press", a->press_finding, pm.index, press_sentences[pm.index], pm.f1});
    }
    if (am.low_confidence) {
      gold.low_confidence.push_back(
          {a->id, "abstract", a->abstract_finding, am.index, abstract_sentences[am.index], am.f1});
    }

    DocumentPair doc;
    doc.id = a->id;
    doc.press_sentences = press_sentences;
    doc.abstract_sentences = abstract_sentences;
    doc.press_conclusion = pm.index;
    doc.abstract_conclusion = am.index;
    doc.press_strength = press_strength;
    doc.abstract_strength = abstract_strength;
    doc.exaggeration = derive_exaggeration(*press_strength, *abstract_strength);
    gold.documents.push_back(doc);

    SentencePair pair;
    pair.id = a->id;
    pair.press_sentence = press_sentences[pm.index];
    pair.abstract_sentence = abstract_sentences[am.index];
    pair.press_strength = press_strength;
    pair.abstract_strength = abstract_strength;
    pair.exaggeration = doc.exaggeration;
    gold.pairs.push_back(std::move(pair));
  }

  const std::size_t train_n = std::min(config.train_size, gold.pairs.size());
  const auto train_idx = data::stratified_sample<std::size_t>(
      [&] {
        std::vector<std::size_t> all(gold.pairs.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
      }(),
      train_n, config.seed,
      [&](std::size_t i) { return label_name(*gold.pairs[i].exaggeration); });
  std::vector<bool> in_train(gold.pairs.size(), false);
  for (auto i : train_idx) in_train[i] = true;

  for (std::size_t i = 0; i < gold.pairs.size(); ++i) {
    const auto& p = gold.pairs[i];
    auto& split = in_train[i] ? gold.train : gold.test;
    auto& strengths = in_train[i] ? gold.strength_train : gold.strength_test;
    split.push_back(p);
    strengths.push_back({p.id + ":press", p.press_sentence, pvp::Role::kPress, *p.press_strength});
    strengths.push_back(
        {p.id + ":abstract", p.abstract_sentence, pvp::Role::kAbstract, *p.abstract_strength});
    if (!in_train[i]) continue;
    const auto& d = gold.documents[i];
    for (std::size_t k = 0; k < d.press_sentences.size(); ++k) {
      gold.conclusions.push_back({d.id + ":press:" + std::to_string(k), d.press_sentences[k],
                                  k == *d.press_conclusion ? 1 : 0});
    }
    for (std::size_t k = 0; k < d.abstract_sentences.size(); ++k) {
      gold.conclusions.push_back({d.id + ":abstract:" + std::to_string(k),
                                  d.abstract_sentences[k], k == *d.abstract_conclusion ? 1 : 0});
    }
  }

  Json skipped = Json::array();
  for (const auto& s : gold.skipped) skipped.push_back({{"id", s.id}, {"reason", s.reason}});
  std::size_t positive = 0;
  for (const auto& c : gold.conclusions) positive += static_cast<std::size_t>(c.is_conclusion);
  gold.manifest = Json{
      {"seed", config.seed},
      {"train_size", config.train_size},
      {"rouge", std::string(to_string(config.rouge))},
      {"low_confidence_threshold", config.low_confidence_threshold},
      {"counts",
       {{"pairs", gold.pairs.size()},
        {"train", gold.train.size()},
        {"test", gold.test.size()},
        {"conclusion_sentences", gold.conclusions.size()},
        {"conclusion_positive", positive},
        {"strength_train", gold.strength_train.size()},
        {"strength_test", gold.strength_test.size()},
        {"low_confidence", gold.low_confidence.size()},
        {"skipped", gold.skipped.size()}}},
      {"labels",
       {{"all", label_counts(gold.pairs)},
        {"train", label_counts(gold.train)},
        {"test", label_counts(gold.test)}}},
      {"skipped", skipped}};
  return gold;
}

GoldSet build_gold_files(const GoldInputs& inputs, const std::filesystem::path& out_dir,
                         const GoldConfig& config) {
  std::vector<SkippedRecord> malformed;
  std::vector<AnnotationRecord> annotations;
  for (const auto& j : read_jsonl(inputs.annotations)) {
    try {
      annotations.push_back(annotation_from_json(j));
    } catch (const Error& e) {
      malformed.push_back({j.is_object() && j.contains("id") ? j["id"].dump() : "?", e.what()});
    }
  }
  std::map<std::string, std::optional<std::string>> abstracts;
  for (const auto& j : read_jsonl(inputs.abstracts)) {
    try {
      abstracts[require_string(j, "doi")] = optional_string(j, "abstract");
    } catch (const Error& e) {
      malformed.push_back({"abstracts", e.what()});
    }
  }
  std::vector<PressDocument> press;
  for (const auto& j : read_jsonl(inputs.press)) {
    try {
      auto d = press_from_json(j);
      d.body = sentences_field(j, "body", config.splitter);
      press.push_back(std::move(d));
    } catch (const Error& e) {
      malformed.push_back({"press", e.what()});
    }
  }

  auto gold = build_gold(annotations, abstracts, press, config);
  for (auto& m : malformed) {
    gold.manifest["skipped"].push_back({{"id", m.id}, {"reason", m.reason}});
    gold.skipped.push_back(std::move(m));
  }
  gold.manifest["counts"]["skipped"] = gold.skipped.size();
  gold.manifest["sources"] = {{"annotations", sha256_file(inputs.annotations)},
                              {"abstracts", sha256_file(inputs.abstracts)},
                              {"press", sha256_file(inputs.press)}};

  write_sentence_pairs(out_dir / "gold_pairs.jsonl", gold.pairs);
  write_sentence_pairs(out_dir / "train.jsonl", gold.train);
  write_sentence_pairs(out_dir / "test.jsonl", gold.test);
  write_conclusion_sentences(out_dir / "conclusions.jsonl", gold.conclusions);
  write_strength_sentences(out_dir / "strength_train.jsonl", gold.strength_train);
  write_strength_sentences(out_dir / "strength_test.jsonl", gold.strength_test);
  std::vector<Json> low;
  for (const auto& a : gold.low_confidence) low.push_back(to_json(a));
  write_jsonl(out_dir / "low_confidence.jsonl", low);

  auto manifest = gold.manifest;
  manifest["outputs"] = Json::object();
  for (const char* name : {"gold_pairs.jsonl", "train.jsonl", "test.jsonl", "conclusions.jsonl",
                           "strength_train.jsonl", "strength_test.jsonl", "low_confidence.jsonl"}) {
    manifest["outputs"][name] = sha256_file(out_dir / name);
  }
  write_json(out_dir / "manifest.json", manifest);
  gold.manifest = std::move(manifest);
  return gold;
}

// ---------------------------------------------------------------------------
// Unlabeled pairs

Json to_json(const UnlabeledPair& p) {
  return Json{{"id", p.id},
              {"doi", p.doi},
              {"title", p.title},
              {"lead", p.lead},
              {"press_sentences", p.press_sentences},
              {"abstract_sentences", p.abstract_sentences}};
}

UnlabeledPair unlabeled_from_json(const Json& record) {
  UnlabeledPair p;
  p.id = require_string(record, "id");
  try {
    p.doi = require_string(record, "doi");
    p.title = optional_string(record, "title").value_or("");
    p.lead = optional_string(record, "lead").value_or("");
    p.press_sentences = sentences_field(record, "press_sentences", split_sentences);
    p.abstract_sentences = sentences_field(record, "abstract_sentences", split_sentences);
    if (trim(p.doi).empty()) fail(ErrorKind::kData, "empty DOI");
    if (p.press_sentences.empty() || p.abstract_sentences.empty()) {
      fail(ErrorKind::kData, "needs at least one sentence on each side");
    }
  } catch (const Error& e) {
    throw e.with_context("unlabeled pair " + p.id);
  }
  return p;
}

std::vector<UnlabeledPair> read_unlabeled(const std::filesystem::path& path) {
  std::vector<UnlabeledPair> out;
  for (const auto& j : read_jsonl(path)) out.push_back(unlabeled_from_json(j));
  return out;
}

IngestResult ingest_unlabeled(std::span<const Json> raw, const SentenceSplitter& splitter) {
  IngestResult result;
  std::set<std::string> seen;
  for (const auto& j : raw) {
    std::string id = j.is_object() && j.contains("id") && j["id"].is_string()
                         ? j["id"].get<std::string>()
                         : "?";
    try {
      PressDocument doc;
      doc.id = require_string(j, "id");
      doc.title = optional_string(j, "title");
      doc.lead = optional_string(j, "lead");
      doc.body = sentences_field(j, "body", splitter);
      UnlabeledPair p;
      p.id = doc.id;
      p.doi = std::string(trim(require_string(j, "doi")));
      if (p.doi.empty()) fail(ErrorKind::kData, "empty DOI");
      if (!seen.insert(p.id).second) fail(ErrorKind::kData, "duplicate id");
      p.title = doc.title.value_or("");
      p.lead = doc.lead.value_or("");
      p.press_sentences = truncate_press(doc, &result.warnings);
      p.abstract_sentences = sentences_field(j, "abstract", splitter);
      if (p.abstract_sentences.empty()) fail(ErrorKind::kData, "abstract has no sentences");
      result.pairs.push_back(std::move(p));
    } catch (const Error& e) {
      result.skipped.push_back({id, e.what()});
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  return result;
}

}  // namespace mtpet::data
