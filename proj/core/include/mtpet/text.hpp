#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace mtpet {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);

std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t value);

// Lowercased runs of alphanumeric characters (bytes >= 0x80 count as word
// characters so UTF-8 words stay whole).
std::vector<std::string> word_tokens(std::string_view text);

// Splits a document into sentences.
using SentenceSplitter = std::function<std::vector<std::string>(std::string_view)>;

// Default splitter: breaks after '.', '!' or '?' when followed by whitespace.
std::vector<std::string> split_sentences(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace mtpet
