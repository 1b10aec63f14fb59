#include "mtpet/io.hpp"

#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "mtpet/error.hpp"

namespace mtpet {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kNotFound, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<Json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      fail(ErrorKind::kParse,
           path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string to_jsonl(const std::vector<Json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<Json>& records) {
  write_file(path, to_jsonl(records));
}

Json read_json(const fs::path& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const Json& value) {
  write_file(path, value.dump(2) + "\n");
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::kIo, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string require_string(const Json& record, const char* field) {
  auto it = record.find(field);
  if (it == record.end() || !it->is_string()) {
    fail(ErrorKind::kData, std::string("missing or non-string field '") + field + "'");
  }
  return it->get<std::string>();
}

long long require_int(const Json& record, const char* field) {
  auto it = record.find(field);
  if (it == record.end() || !it->is_number_integer()) {
    fail(ErrorKind::kData, std::string("missing or non-integer field '") + field + "'");
  }
  return it->get<long long>();
}

}  // namespace mtpet
