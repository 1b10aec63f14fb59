#include "mtpet/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "mtpet/error.hpp"
#include "mtpet/io.hpp"
#include "mtpet/text.hpp"

namespace mtpet::backend {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::string mask_token)
    : tokens_(std::move(tokens)), mask_token_(std::move(mask_token)) {
  for (TokenId i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      fail(ErrorKind::kVocabulary, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
  auto it = index_.find(mask_token_);
  if (it == index_.end()) {
    fail(ErrorKind::kVocabulary, "mask token '" + mask_token_ + "' not in vocabulary");
  }
  mask_id_ = it->second;
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto found = find(token);
  if (!found) fail(ErrorKind::kVocabulary, "unknown token '" + std::string(token) + "'");
  return *found;
}

std::string Vocabulary::hash() const {
  std::string joined = mask_token_;
  for (const auto& t : tokens_) {
    joined.push_back('\n');
    joined += t;
  }
  return hex64(fnv1a64(joined));
}

Vocabulary Vocabulary::extended(const std::vector<std::string>& more) const {
  std::vector<std::string> tokens = tokens_;
  std::unordered_map<std::string, TokenId> seen = index_;
  for (const auto& t : more) {
    if (seen.emplace(t, tokens.size()).second) tokens.push_back(t);
  }
  return Vocabulary(std::move(tokens), mask_token_);
}

// ---------------------------------------------------------------------------
// Sequences and tokenization

std::string_view MaskedSequence::first_segment() const {
  std::string_view all(text);
  return segment_boundary ? all.substr(0, std::min(*segment_boundary, all.size())) : all;
}

std::string_view MaskedSequence::second_segment() const {
  std::string_view all(text);
  if (!segment_boundary) return {};
  return all.substr(std::min(*segment_boundary, all.size()));
}

void validate(const MaskedSequence& z, std::string_view mask) {
  std::size_t count = 0;
  std::size_t first = std::string::npos;
  for (std::size_t pos = z.text.find(mask); pos != std::string::npos;
       pos = z.text.find(mask, pos + mask.size())) {
    if (count == 0) first = pos;
    ++count;
  }
  if (count != 1) {
    fail(ErrorKind::kMalformedSequence,
         "expected exactly one mask sentinel, found " + std::to_string(count) + " in \"" +
             z.text + "\"");
  }
  std::string rest = z.text.substr(0, first) + z.text.substr(first + mask.size());
  if (trim(rest).empty()) fail(ErrorKind::kMalformedSequence, "sequence is only a mask");
  if (z.segment_boundary && *z.segment_boundary > z.text.size()) {
    fail(ErrorKind::kMalformedSequence, "segment boundary beyond end of text");
  }
}

std::vector<std::string> tokenize(std::string_view text, std::string_view mask) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (std::size_t i = 0; i < text.size();) {
    if (!mask.empty() && text.compare(i, mask.size(), mask) == 0) {
      flush();
      out.emplace_back(mask);
      i += mask.size();
      continue;
    }
    auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return out;
}

void fit_to_length(std::vector<std::string>& first, std::vector<std::string>& second,
                   std::size_t max_length, std::string_view mask) {
  while (first.size() + second.size() > max_length) {
    auto it = std::find_if(first.rbegin(), first.rend(),
                           [&](const std::string& t) { return t != mask; });
    if (it == first.rend()) {
      fail(ErrorKind::kUsage, "input exceeds maximum length " + std::to_string(max_length) +
                                  " and cannot be truncated without cutting the mask");
    }
    first.erase(std::next(it).base());
  }
}

Aggregation parse_aggregation(std::string_view name) {
  if (name == "mean") return Aggregation::kMean;
  if (name == "max") return Aggregation::kMax;
  if (name == "logsumexp") return Aggregation::kLogSumExp;
  fail(ErrorKind::kConfig, "unknown aggregation '" + std::string(name) + "'");
}

std::string_view to_string(Aggregation agg) {
  switch (agg) {
    case Aggregation::kMean: return "mean";
    case Aggregation::kMax: return "max";
    case Aggregation::kLogSumExp: return "logsumexp";
  }
  return "mean";
}

// ---------------------------------------------------------------------------
// AdamW

double AdamW::learning_rate_at(std::size_t step) const {
  const auto& c = config_;
  if (c.warmup_steps > 0 && step < c.warmup_steps) {
    return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  if (c.total_steps == 0) return c.learning_rate;
  if (step >= c.total_steps) return 0.0;
  const double remaining = static_cast<double>(c.total_steps - step);
  const double span = static_cast<double>(std::max<std::size_t>(1, c.total_steps - c.warmup_steps));
  return c.learning_rate * std::min(1.0, remaining / span);
}

void AdamW::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) {
    fail(ErrorKind::kUsage, "parameter/gradient size mismatch");
  }
  if (m_.size() != params.size()) {
    m_.resize(params.size(), 0.0);
    v_.resize(params.size(), 0.0);
  }
  const double lr = learning_rate_at(step_);
  ++step_;

  double clip = 1.0;
  if (config_.max_grad_norm > 0) {
    double sq = 0.0;
    for (double g : grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config_.max_grad_norm) clip = config_.max_grad_norm / (norm + 1e-12);
  }
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * clip;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr * config_.weight_decay * params[i];
    params[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
  }
}

// ---------------------------------------------------------------------------
// LinearMaskedLm

LinearMaskedLm::LinearMaskedLm(Vocabulary vocab, LinearMlmConfig config,
                               std::vector<PriorEntry> prior,
                               std::vector<HeadPriorEntry> head_prior,
                               std::size_t head_prior_labels)
    : vocab_(std::move(vocab)),
      config_(std::move(config)),
      prior_(std::move(prior)),
      head_prior_(std::move(head_prior)),
      head_prior_labels_(head_prior_labels) {
  if (config_.max_length == 0) fail(ErrorKind::kConfig, "max_length must be positive");
  for (const auto& p : prior_) {
    if (p.token >= vocab_.size()) fail(ErrorKind::kVocabulary, "prior token out of range");
  }
  for (const auto& p : head_prior_) {
    if (p.label >= head_prior_labels_) fail(ErrorKind::kConfig, "head prior label out of range");
  }
  params_.assign(token_block(), 0.0);
  if (head_prior_labels_ > 0) attach_head(head_prior_labels_);
}

std::unique_ptr<LinearMaskedLm> LinearMaskedLm::from_json(const Json& table) {
  const std::string mask = table.value("mask_token", std::string(kDefaultMaskToken));
  std::vector<std::string> tokens;
  if (table.contains("vocabulary")) {
    tokens = table.at("vocabulary").get<std::vector<std::string>>();
  } else {
    tokens.push_back(mask);
    for (const auto& s : table.value("scores", Json::array())) {
      auto t = s.at("token").get<std::string>();
      if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(t);
    }
  }
  Vocabulary vocab(std::move(tokens), mask);

  LinearMlmConfig config;
  config.checkpoint_id = table.value("checkpoint_id", std::string("mock"));
  config.buckets = table.value("buckets", std::size_t{0});
  config.max_length = table.value("max_length", std::size_t{512});

  std::vector<PriorEntry> prior;
  for (const auto& s : table.value("scores", Json::array())) {
    prior.push_back({s.at("pattern").get<std::string>(), vocab.id(s.at("token").get<std::string>()),
                     s.at("score").get<double>()});
  }
  std::vector<HeadPriorEntry> head_prior;
  std::size_t head_labels = 0;
  if (table.contains("head")) {
    const auto& head = table.at("head");
    head_labels = head.at("labels").get<std::size_t>();
    for (const auto& s : head.value("scores", Json::array())) {
      head_prior.push_back({s.at("pattern").get<std::string>(), s.at("label").get<std::size_t>(),
                            s.at("score").get<double>()});
    }
  }
  auto model = std::make_unique<LinearMaskedLm>(std::move(vocab), std::move(config),
                                                std::move(prior), std::move(head_prior),
                                                head_labels);
  if (table.contains("weights")) {
    auto w = table.at("weights").get<std::vector<double>>();
    if (w.size() != model->params_.size()) {
      fail(ErrorKind::kCheckpoint, "weights size " + std::to_string(w.size()) +
                                       " does not match model (" +
                                       std::to_string(model->params_.size()) + ")");
    }
    model->params_ = std::move(w);
  }
  return model;
}

std::unique_ptr<MaskedLm> LinearMaskedLm::clone() const {
  return std::make_unique<LinearMaskedLm>(*this);
}

LinearMaskedLm::Features LinearMaskedLm::mask_features(const MaskedSequence& z) const {
  const auto& mask = vocab_.mask_token();
  auto first = tokenize(z.first_segment(), mask);
  auto second = tokenize(z.second_segment(), mask);
  fit_to_length(first, second, config_.max_length, mask);
  Features out;
  if (config_.buckets == 0) return out;
  std::map<std::size_t, double> counts;
  std::size_t n = 0;
  for (const auto* seg : {&first, &second}) {
    for (const auto& t : *seg) {
      if (t == mask) continue;
      counts[fnv1a64(to_lower(t)) % config_.buckets] += 1.0;
      ++n;
    }
  }
  if (n == 0) return out;
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (const auto& [bucket, count] : counts) out.emplace_back(bucket, count * norm);
  return out;
}

LinearMaskedLm::Features LinearMaskedLm::segment_features(std::string_view text) const {
  Features out;
  if (config_.buckets == 0) return out;
  std::map<std::size_t, double> counts;
  std::size_t n = 0;
  for (const auto& t : tokenize(text, vocab_.mask_token())) {
    counts[fnv1a64(to_lower(t)) % config_.buckets] += 1.0;
    ++n;
  }
  if (n == 0) return out;
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (const auto& [bucket, count] : counts) out.emplace_back(bucket, count * norm);
  return out;
}

std::vector<double> LinearMaskedLm::token_scores(const MaskedSequence& z,
                                                 std::span<const TokenId> candidates) const {
  const auto features = mask_features(z);
  const std::size_t v = vocab_.size();
  std::vector<double> out(candidates.size(), 0.0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenId w = candidates[i];
    if (w >= v) fail(ErrorKind::kVocabulary, "token id out of range");
    double s = params_[w];
    for (const auto& [f, x] : features) s += x * params_[v + f * v + w];
    for (const auto& p : prior_) {
      if (p.token == w && z.text.find(p.pattern) != std::string::npos) s += p.score;
    }
    out[i] = s;
  }
  return out;
}

void LinearMaskedLm::accumulate_token_gradient(const MaskedSequence& z,
                                               std::span<const TokenId> candidates,
                                               std::span<const double> dscores,
                                               std::span<double> grad) const {
  const auto features = mask_features(z);
  const std::size_t v = vocab_.size();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TokenId w = candidates[i];
    grad[w] += dscores[i];
    for (const auto& [f, x] : features) grad[v + f * v + w] += x * dscores[i];
  }
}

void LinearMaskedLm::attach_head(std::size_t labels) {
  if (labels == 0) fail(ErrorKind::kConfig, "classification head needs at least one label");
  head_labels_ = labels;
  params_.resize(token_block());
  params_.resize(token_block() + labels * (1 + 2 * config_.buckets), 0.0);
}

std::vector<double> LinearMaskedLm::head_logits(std::string_view first,
                                                std::optional<std::string_view> second) const {
  if (head_labels_ == 0) fail(ErrorKind::kConfig, "no classification head attached");
  const std::size_t base = token_block();
  const std::size_t b = config_.buckets;
  const auto f1 = segment_features(first);
  const auto f2 = second ? segment_features(*second) : Features{};
  std::string joined(first);
  if (second) {
    joined.push_back('\n');
    joined.append(*second);
  }
  std::vector<double> out(head_labels_, 0.0);
  for (std::size_t l = 0; l < head_labels_; ++l) {
    double s = params_[base + l];
    const std::size_t row = base + head_labels_ + l * 2 * b;
    for (const auto& [f, x] : f1) s += x * params_[row + f];
    for (const auto& [f, x] : f2) s += x * params_[row + b + f];
    if (head_prior_labels_ == head_labels_) {
      for (const auto& p : head_prior_) {
        if (p.label == l && joined.find(p.pattern) != std::string::npos) s += p.score;
      }
    }
    out[l] = s;
  }
  return out;
}

void LinearMaskedLm::accumulate_head_gradient(std::string_view first,
                                              std::optional<std::string_view> second,
                                              std::span<const double> dlogits,
                                              std::span<double> grad) const {
  const std::size_t base = token_block();
  const std::size_t b = config_.buckets;
  const auto f1 = segment_features(first);
  const auto f2 = second ? segment_features(*second) : Features{};
  for (std::size_t l = 0; l < head_labels_; ++l) {
    grad[base + l] += dlogits[l];
    const std::size_t row = base + head_labels_ + l * 2 * b;
    for (const auto& [f, x] : f1) grad[row + f] += x * dlogits[l];
    for (const auto& [f, x] : f2) grad[row + b + f] += x * dlogits[l];
  }
}

Json LinearMaskedLm::describe() const {
  Json scores = Json::array();
  for (const auto& p : prior_) {
    scores.push_back({{"pattern", p.pattern}, {"token", vocab_.token(p.token)}, {"score", p.score}});
  }
  Json desc = {
      {"model_type", "linear-bow"},
      {"checkpoint_id", config_.checkpoint_id},
      {"vocabulary", vocab_.tokens()},
      {"mask_token", vocab_.mask_token()},
      {"buckets", config_.buckets},
      {"max_length", config_.max_length},
      {"scores", scores},
      {"head_labels", head_labels_},
  };
  if (head_prior_labels_ > 0) {
    Json hs = Json::array();
    for (const auto& p : head_prior_) {
      hs.push_back({{"pattern", p.pattern}, {"label", p.label}, {"score", p.score}});
    }
    desc["head"] = {{"labels", head_prior_labels_}, {"scores", hs}};
  }
  return desc;
}

std::unique_ptr<LinearMaskedLm> LinearMaskedLm::with_tokens(
    const std::vector<std::string>& tokens) const {
  Vocabulary vocab = vocab_.extended(tokens);
  auto out = std::make_unique<LinearMaskedLm>(vocab, config_, prior_, head_prior_,
                                              head_prior_labels_);
  if (head_labels_ > 0) out->attach_head(head_labels_);
  out->set_mode(mode());
  // Remap the token-indexed weights into the wider layout.
  const std::size_t v_old = vocab_.size();
  const std::size_t v_new = vocab.size();
  for (std::size_t w = 0; w < v_old; ++w) {
    out->params_[w] = params_[w];
    for (std::size_t f = 0; f < config_.buckets; ++f) {
      out->params_[v_new + f * v_new + w] = params_[v_old + f * v_old + w];
    }
  }
  std::copy(params_.begin() + static_cast<std::ptrdiff_t>(token_block()), params_.end(),
            out->params_.begin() + static_cast<std::ptrdiff_t>(out->token_block()));
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

std::vector<TokenId> resolve_candidates(const Vocabulary& vocab,
                                        const std::vector<std::string>& candidates,
                                        std::vector<std::string>* warnings) {
  std::vector<TokenId> ids;
  ids.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (auto direct = vocab.find(c)) {
      ids.push_back(*direct);
      continue;
    }
    auto pieces = tokenize(c, vocab.mask_token());
    if (pieces.empty()) fail(ErrorKind::kVocabulary, "empty candidate token");
    if (pieces.size() > 1 && warnings) {
      warnings->push_back("candidate '" + c + "' has " + std::to_string(pieces.size()) +
                          " subtokens; scoring by first subtoken '" + pieces.front() + "'");
    }
    ids.push_back(vocab.id(pieces.front()));
  }
  return ids;
}

std::map<std::string, double> score_masked(const MaskedLm& model, const MaskedSequence& z,
                                           const std::vector<std::string>& candidates,
                                           std::vector<std::string>* warnings) {
  validate(z, model.vocabulary().mask_token());
  const auto ids = resolve_candidates(model.vocabulary(), candidates, warnings);
  const auto scores = model.token_scores(z, ids);
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) out[candidates[i]] = scores[i];
  return out;
}

namespace {

struct GroupedScores {
  std::vector<TokenId> ids;
  std::vector<std::size_t> group_start;  // size labels + 1
  std::vector<double> token_scores;
  std::vector<double> label_scores;
};

GroupedScores grouped_scores(const MaskedLm& model, const MaskedSequence& z,
                             const std::vector<std::vector<std::string>>& label_tokens,
                             Aggregation aggregation) {
  validate(z, model.vocabulary().mask_token());
  GroupedScores g;
  g.group_start.push_back(0);
  for (const auto& group : label_tokens) {
    if (group.empty()) fail(ErrorKind::kVocabulary, "label with no verbalizer tokens");
    auto ids = resolve_candidates(model.vocabulary(), group);
    g.ids.insert(g.ids.end(), ids.begin(), ids.end());
    g.group_start.push_back(g.ids.size());
  }
  g.token_scores = model.token_scores(z, g.ids);
  g.label_scores.resize(label_tokens.size());
  for (std::size_t l = 0; l < label_tokens.size(); ++l) {
    auto begin = g.token_scores.begin() + static_cast<std::ptrdiff_t>(g.group_start[l]);
    auto end = g.token_scores.begin() + static_cast<std::ptrdiff_t>(g.group_start[l + 1]);
    const double n = static_cast<double>(end - begin);
    switch (aggregation) {
      case Aggregation::kMean:
        g.label_scores[l] = std::accumulate(begin, end, 0.0) / n;
        break;
      case Aggregation::kMax:
        g.label_scores[l] = *std::max_element(begin, end);
        break;
      case Aggregation::kLogSumExp: {
        const double m = *std::max_element(begin, end);
        double s = 0.0;
        for (auto it = begin; it != end; ++it) s += std::exp(*it - m);
        g.label_scores[l] = m + std::log(s);
        break;
      }
    }
  }
  return g;
}

// Chain rule from label-score derivatives to token-score derivatives.
std::vector<double> token_derivatives(const GroupedScores& g, std::span<const double> dlabel,
                                      Aggregation aggregation) {
  std::vector<double> dtoken(g.ids.size(), 0.0);
  for (std::size_t l = 0; l + 1 < g.group_start.size(); ++l) {
    const std::size_t begin = g.group_start[l];
    const std::size_t end = g.group_start[l + 1];
    switch (aggregation) {
      case Aggregation::kMean:
        for (std::size_t i = begin; i < end; ++i) {
          dtoken[i] = dlabel[l] / static_cast<double>(end - begin);
        }
        break;
      case Aggregation::kMax: {
        std::size_t best = begin;
        for (std::size_t i = begin; i < end; ++i) {
          if (g.token_scores[i] > g.token_scores[best]) best = i;
        }
        dtoken[best] = dlabel[l];
        break;
      }
      case Aggregation::kLogSumExp:
        for (std::size_t i = begin; i < end; ++i) {
          dtoken[i] = dlabel[l] * std::exp(g.token_scores[i] - g.label_scores[l]);
        }
        break;
    }
  }
  return dtoken;
}

void check_target(std::span<const double> target, std::size_t labels, const std::string& id) {
  if (target.size() != labels) {
    fail(ErrorKind::kUsage, "instance " + id + ": target has " + std::to_string(target.size()) +
                                " entries for " + std::to_string(labels) + " labels");
  }
  double sum = 0.0;
  for (double p : target) {
    if (!std::isfinite(p) || p < 0.0) {
      fail(ErrorKind::kData, "instance " + id + ": invalid target probability");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    fail(ErrorKind::kUsage, "instance " + id + ": target distribution sums to " +
                                std::to_string(sum));
  }
}

std::vector<double> log_softmax(std::span<const double> x) {
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  const double lse = m + std::log(s);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
  return out;
}

}  // namespace

std::vector<double> label_scores(const MaskedLm& model, const MaskedSequence& z,
                                 const std::vector<std::vector<std::string>>& label_tokens,
                                 Aggregation aggregation) {
  return grouped_scores(model, z, label_tokens, aggregation).label_scores;
}

double instance_loss(std::span<const double> scores, std::span<const double> target,
                     const LossSpec& loss, std::span<double> dscores) {
  const std::size_t k = scores.size();
  if (loss.kind == LossSpec::Kind::kCrossEntropy) {
    const auto logq = log_softmax(scores);
    double value = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (target[i] > 0.0) value -= target[i] * logq[i];
      dscores[i] = std::exp(logq[i]) - target[i];
    }
    return value;
  }
  const double t = loss.temperature;
  if (!(t > 0.0)) fail(ErrorKind::kUsage, "temperature must be positive");
  std::vector<double> scaled(k);
  for (std::size_t i = 0; i < k; ++i) scaled[i] = scores[i] / t;
  const auto logq = log_softmax(scaled);
  double value = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (target[i] > 0.0) value += target[i] * (std::log(target[i]) - logq[i]);
    dscores[i] = t * (std::exp(logq[i]) - target[i]);
  }
  return t * t * value;
}

LossGradient masked_loss_gradient(const MaskedLm& model, std::span<const MaskedExample> batch,
                                  const LossSpec& loss) {
  if (batch.empty()) fail(ErrorKind::kUsage, "empty batch");
  LossGradient out;
  out.gradient.assign(model.parameters().size(), 0.0);
  const double n = static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    check_target(ex.target, ex.label_tokens.size(), ex.id);
    const auto g = grouped_scores(model, ex.sequence, ex.label_tokens, ex.aggregation);
    std::vector<double> dlabel(g.label_scores.size());
    const double l = instance_loss(g.label_scores, ex.target, loss, dlabel);
    if (!std::isfinite(l)) {
      fail(ErrorKind::kNumerical, "non-finite loss for instance " + ex.id);
    }
    out.example_losses.push_back(l);
    const double coeff = loss.scale * ex.weight / n;
    out.loss += coeff * l;
    if (coeff == 0.0) continue;
    for (double& d : dlabel) d *= coeff;
    const auto dtoken = token_derivatives(g, dlabel, ex.aggregation);
    model.accumulate_token_gradient(ex.sequence, g.ids, dtoken, out.gradient);
  }
  return out;
}

LossGradient classifier_loss_gradient(const MaskedLm& model,
                                      std::span<const ClassifierExample> batch,
                                      const LossSpec& loss) {
  if (batch.empty()) fail(ErrorKind::kUsage, "empty batch");
  LossGradient out;
  out.gradient.assign(model.parameters().size(), 0.0);
  const double n = static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    check_target(ex.target, model.head_labels(), ex.id);
    std::optional<std::string_view> second;
    if (ex.second) second = *ex.second;
    const auto logits = classify(model, ex.first, second);
    std::vector<double> dlogits(logits.size());
    const double l = instance_loss(logits, ex.target, loss, dlogits);
    if (!std::isfinite(l)) {
      fail(ErrorKind::kNumerical, "non-finite loss for instance " + ex.id);
    }
    out.example_losses.push_back(l);
    const double coeff = loss.scale * ex.weight / n;
    out.loss += coeff * l;
    if (coeff == 0.0) continue;
    for (double& d : dlogits) d *= coeff;
    model.accumulate_head_gradient(ex.first, second, dlogits, out.gradient);
  }
  return out;
}

namespace {

void require_training(const MaskedLm& model) {
  if (model.mode() != Mode::kTraining) {
    fail(ErrorKind::kUsage, "model must be in training mode to fine-tune");
  }
}

double apply_step(MaskedLm& model, const LossGradient& lg, const LossSpec& loss,
                  AdamW& optimizer) {
  if (!std::isfinite(lg.loss)) fail(ErrorKind::kNumerical, "non-finite batch loss");
  if (loss.scale == 0.0) {
    optimizer.skip();
  } else {
    optimizer.step(model.parameters(), lg.gradient);
  }
  return lg.loss;
}

}  // namespace

double fine_tune_batch(MaskedLm& model, std::span<const MaskedExample> batch,
                       const LossSpec& loss, AdamW& optimizer) {
  require_training(model);
  return apply_step(model, masked_loss_gradient(model, batch, loss), loss, optimizer);
}

double fine_tune_classifier_batch(MaskedLm& model, std::span<const ClassifierExample> batch,
                                  const LossSpec& loss, AdamW& optimizer) {
  require_training(model);
  return apply_step(model, classifier_loss_gradient(model, batch, loss), loss, optimizer);
}

std::vector<double> classify(const MaskedLm& model, std::string_view first,
                             std::optional<std::string_view> second) {
  if (model.head_labels() == 0) fail(ErrorKind::kConfig, "no classification head attached");
  if (trim(first).empty()) fail(ErrorKind::kUsage, "empty first segment");
  return model.head_logits(first, second);
}

std::vector<std::vector<double>> classify_batch(
    const MaskedLm& model,
    const std::vector<std::pair<std::string, std::optional<std::string>>>& inputs) {
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const auto& [first, second] : inputs) {
    std::optional<std::string_view> s;
    if (second) s = *second;
    out.push_back(classify(model, first, s));
  }
  return out;
}

void require_head(const MaskedLm& model, std::size_t labels) {
  if (model.head_labels() != labels) {
    fail(ErrorKind::kConfig, "classification head has " + std::to_string(model.head_labels()) +
                                 " labels, expected " + std::to_string(labels));
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const MaskedLm& model, const fs::path& dir) {
  fs::create_directories(dir);
  Json meta = {
      {"checkpoint_id", model.checkpoint_id()},
      {"vocabulary_hash", model.vocabulary().hash()},
      {"head_label_count", model.head_labels()},
      {"format_version", kCheckpointFormatVersion},
  };
  write_json(dir / "metadata.json", meta);
  write_json(dir / "model.json", model.describe());

  const auto params = model.parameters();
  std::string blob;
  const std::uint64_t count = params.size();
  blob.append(reinterpret_cast<const char*>(&count), sizeof(count));
  blob.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(double));
  write_file(dir / "weights.bin", blob);
}

std::unique_ptr<MaskedLm> load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "metadata.json")) {
    fail(ErrorKind::kNotFound, "no checkpoint at " + dir.string());
  }
  Json meta;
  Json desc;
  try {
    meta = read_json(dir / "metadata.json");
    desc = read_json(dir / "model.json");
  } catch (const Error& e) {
    fail(ErrorKind::kCheckpoint, std::string("corrupt checkpoint: ") + e.what());
  }
  const int version = meta.value("format_version", -1);
  if (version != kCheckpointFormatVersion) {
    fail(ErrorKind::kCheckpoint, "checkpoint format version " + std::to_string(version) +
                                     " unsupported (expected " +
                                     std::to_string(kCheckpointFormatVersion) + ")");
  }
  if (desc.value("model_type", std::string()) != "linear-bow") {
    fail(ErrorKind::kCheckpoint, "unknown model type in checkpoint");
  }

  std::unique_ptr<LinearMaskedLm> model;
  try {
    Json table = desc;
    table.erase("weights");
    model = LinearMaskedLm::from_json(table);
  } catch (const Json::exception& e) {
    fail(ErrorKind::kCheckpoint, std::string("corrupt checkpoint description: ") + e.what());
  }
  if (model->vocabulary().hash() != meta.value("vocabulary_hash", std::string())) {
    fail(ErrorKind::kCheckpoint, "vocabulary hash mismatch (format version " +
                                     std::to_string(version) + ")");
  }
  const std::size_t head = desc.value("head_labels", std::size_t{0});
  if (head != meta.value("head_label_count", std::size_t{0})) {
    fail(ErrorKind::kCheckpoint, "head label count mismatch between metadata and model");
  }
  if (head > 0) model->attach_head(head);

  const std::string blob = read_file(dir / "weights.bin");
  std::uint64_t count = 0;
  if (blob.size() < sizeof(count)) fail(ErrorKind::kCheckpoint, "truncated weights blob");
  std::memcpy(&count, blob.data(), sizeof(count));
  auto params = model->parameters();
  if (count != params.size() || blob.size() != sizeof(count) + count * sizeof(double)) {
    fail(ErrorKind::kCheckpoint, "weights blob size mismatch (format version " +
                                     std::to_string(version) + ")");
  }
  std::memcpy(params.data(), blob.data() + sizeof(count), count * sizeof(double));
  return model;
}

std::unique_ptr<LinearMaskedLm> load_mock_table(const fs::path& path) {
  const Json table = read_json(path);
  try {
    return LinearMaskedLm::from_json(table);
  } catch (const Json::exception& e) {
    fail(ErrorKind::kConfig, "invalid mock table " + path.string() + ": " + e.what());
  }
}

}  // namespace mtpet::backend
