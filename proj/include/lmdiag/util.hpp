#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmdiag/errors.hpp"

namespace lmdiag::util {

// 64-bit FNV-1a over raw bytes; used for provenance hashes and substream keys.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  auto p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

// Shortest round-trip decimal form, identical digits on every run.
std::string fmt_double(double v);

std::string slurp(const std::filesystem::path& p);
void spit(const std::filesystem::path& p, const std::string& content);

// RFC-4180 field quoting: fields holding comma, quote, CR or LF are wrapped in
// double quotes with embedded quotes doubled. Rows end in "\r\n".
class csv_writer {
public:
  csv_writer& comment(const std::string& line);  // leading "# ..." provenance line
  csv_writer& row(const std::vector<std::string>& fields);
  const std::string& str() const { return out_; }

private:
  std::string out_;
};

std::string csv_field(double v);
std::string csv_field(std::optional<double> v);  // empty field when absent

// Collects files for a report bundle and commits them atomically: everything
// is written under a temporary sibling of `dir`, then renamed into place.
// Nothing appears at `dir` unless every file was written.
class bundle_writer {
public:
  void add(const std::string& relative_path, const std::string& content);
  void commit(const std::filesystem::path& dir);
  const std::map<std::string, std::string>& files() const { return files_; }

private:
  std::map<std::string, std::string> files_;
};

}  // namespace lmdiag::util
