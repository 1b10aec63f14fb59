#include "config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>

#include "mtpet/error.hpp"
#include "mtpet/io.hpp"
#include "mtpet/text.hpp"

namespace mtpet::cli {

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k{
        // run
        "task", "aux_task", "mode", "output_dir", "seeds", "jobs",
        // backend
        "backend", "mock_table", "checkpoint", "buckets", "max_length",
        // patterns
        "pvp_file", "patterns", "aggregation", "normalize_weights",
        // datasets
        "train_file", "test_file", "aux_file", "unlabeled_file",
        // member training
        "lr", "batch_size", "epochs", "warmup_steps", "weight_decay", "max_grad_norm",
        "class_weighted", "alpha_main", "alpha_aux", "sampling", "aux_batches",
        // distillation
        "distill_lr", "distill_batch_size", "distill_epochs", "distill_warmup_steps",
        "distill_weight_decay", "temperature",
        // in-domain MLM
        "mlm_corpus_file", "mlm_mask_rate", "mlm_epochs", "mlm_lr", "mlm_batch_size",
        // prepare-data
        "annotations_file", "abstracts_file", "press_file", "unlabeled_raw_file", "split_seed",
        "train_size", "rouge", "low_confidence_threshold",
        // detect-conclusions
        "unlabeled_pairs_file", "conclusion_model", "conclusion_patterns", "selections_file",
        // evaluate
        "predictions_file", "gold_file", "transitions",
        // learning-curve
        "curve_sizes", "curve_mode"};
    std::sort(k.begin(), k.end());
    return k;
  }();
  return keys;
}

RunConfig RunConfig::parse(std::string_view text, const std::string& origin) {
  RunConfig c;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::kConfig, origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) fail(ErrorKind::kConfig, origin + ":" + std::to_string(line_no) + ": empty key");
    c.values_[key] = std::string(trim(line.substr(eq + 1)));
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  auto c = parse(read_file(path), path.string());
  c.base_dir_ = path.parent_path();
  return c;
}

void RunConfig::set_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || trim(assignment.substr(0, eq)).empty()) {
    fail(ErrorKind::kUsage, "--set expects KEY=VALUE, got '" + std::string(assignment) + "'");
  }
  values_[std::string(trim(assignment.substr(0, eq)))] = std::string(trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

bool RunConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
  return has(key) ? values_.at(key) : fallback;
}

std::string RunConfig::require(const std::string& key) const {
  if (!has(key)) fail(ErrorKind::kConfig, "missing config key '" + key + "'");
  return values_.at(key);
}

long long RunConfig::get_int(const std::string& key, long long fallback) const {
  if (!has(key)) return fallback;
  const auto& v = values_.at(key);
  char* end = nullptr;
  errno = 0;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (errno || end == v.c_str() || *end) {
    fail(ErrorKind::kConfig, "config key '" + key + "' must be an integer, got '" + v + "'");
  }
  return x;
}

std::size_t RunConfig::get_size(const std::string& key, std::size_t fallback) const {
  const long long x = get_int(key, static_cast<long long>(fallback));
  if (x < 0) fail(ErrorKind::kConfig, "config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(x);
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const auto& v = values_.at(key);
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (errno || end == v.c_str() || *end) {
    fail(ErrorKind::kConfig, "config key '" + key + "' must be a number, got '" + v + "'");
  }
  return x;
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const auto v = to_lower(values_.at(key));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorKind::kConfig, "config key '" + key + "' must be true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  if (!has(key)) return out;
  const auto& v = values_.at(key);
  std::size_t pos = 0;
  while (pos <= v.size()) {
    auto end = v.find(',', pos);
    if (end == std::string::npos) end = v.size();
    auto item = trim(std::string_view(v).substr(pos, end - pos));
    if (!item.empty()) out.emplace_back(item);
    pos = end + 1;
  }
  return out;
}

std::vector<std::size_t> RunConfig::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : get_list(key)) {
    RunConfig one;
    one.values_[key] = item;
    out.push_back(one.get_size(key, 0));
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::get_seed_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (auto v : get_size_list(key)) out.push_back(static_cast<std::uint64_t>(v));
  return out;
}

std::filesystem::path RunConfig::path(const std::string& key) const {
  std::filesystem::path p = require(key);
  if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
  return p;
}

std::optional<std::filesystem::path> RunConfig::optional_path(const std::string& key) const {
  if (!has(key)) return std::nullopt;
  return path(key);
}

std::filesystem::path RunConfig::existing_path(const std::string& key) const {
  auto p = path(key);
  if (!std::filesystem::exists(p)) {
    fail(ErrorKind::kNotFound, "config key '" + key + "': path not found: " + p.string());
  }
  return p;
}

void RunConfig::check_known_keys() const {
  const auto& known = known_keys();
  for (const auto& [key, value] : values_) {
    if (!std::binary_search(known.begin(), known.end(), key)) {
      fail(ErrorKind::kConfig, "unknown config key '" + key + "'");
    }
  }
}

}  // namespace mtpet::cli
