#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtpet {

using Json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);
// Writes bytes verbatim (no newline translation). Creates parent directories.
void write_file(const std::filesystem::path& path, const std::string& bytes);

// One JSON value per non-blank line. Parse failures name the file and line.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<Json>& records);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& value);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

// Typed field access with data errors naming the field.
std::string require_string(const Json& record, const char* field);
long long require_int(const Json& record, const char* field);

}  // namespace mtpet
