#include "lmdiag/util.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace lmdiag {

const char* errc_name(errc c) {
  switch (c) {
    case errc::malformed_record: return "MalformedRecord";
    case errc::dangling_reference: return "DanglingReference";
    case errc::schema_mismatch: return "SchemaMismatch";
    case errc::empty_side: return "EmptySide";
    case errc::insufficient_tier: return "InsufficientTier";
    case errc::mixed_horizon: return "MixedHorizon";
    case errc::horizon_too_short: return "HorizonTooShort";
    case errc::undefined_feature: return "UndefinedFeature";
    case errc::no_successes: return "NoSuccesses";
    case errc::no_failures: return "NoFailures";
    case errc::degenerate_denominator: return "DegenerateDenominator";
    case errc::degenerate_labels: return "DegenerateLabels";
    case errc::degenerate_direction: return "DegenerateDirection";
    case errc::degenerate_matrix: return "DegenerateMatrix";
    case errc::empty_stratum: return "EmptyStratum";
    case errc::zero_variance: return "ZeroVariance";
    case errc::missing_tokenizer_map: return "MissingTokenizerMap";
    case errc::unknown_variant: return "UnknownVariant";
    case errc::invalid_spec: return "InvalidSpec";
    case errc::invalid_config: return "InvalidConfig";
    case errc::io_error: return "IoError";
  }
  return "UnknownError";
}

}  // namespace lmdiag

namespace lmdiag::util {

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string fmt_double(double v) {
  // nlohmann emits the shortest decimal string that round-trips the double,
  // which keeps report bytes stable across reruns.
  return nlohmann::json(v).dump();
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw error(errc::io_error, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw error(errc::io_error, "cannot write " + p.string());
  out << content;
  if (!out) throw error(errc::io_error, "short write to " + p.string());
}

static std::string quote_csv(const std::string& f) {
  bool needs = f.find_first_of(",\"\r\n") != std::string::npos;
  if (!needs) return f;
  std::string out = "\"";
  for (char c : f) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

csv_writer& csv_writer::comment(const std::string& line) {
  out_ += "# " + line + "\r\n";
  return *this;
}

csv_writer& csv_writer::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ += ',';
    out_ += quote_csv(fields[i]);
  }
  out_ += "\r\n";
  return *this;
}

std::string csv_field(double v) {
  return std::isfinite(v) ? fmt_double(v) : std::string();
}

std::string csv_field(std::optional<double> v) {
  return v && std::isfinite(*v) ? fmt_double(*v) : std::string();
}

void bundle_writer::add(const std::string& relative_path, const std::string& content) {
  files_[relative_path] = content;
}

void bundle_writer::commit(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir) || !fs::is_empty(dir))
      throw error(errc::io_error, "output directory exists and is not empty: " + dir.string());
    fs::remove(dir);
  }
  fs::create_directories(parent);
  std::string tag = hex64(fnv1a(dir.string(), fnv1a(std::to_string(
      std::random_device{}()))));
  fs::path tmp = parent / (".tmp-" + dir.filename().string() + "-" + tag.substr(0, 8));
  fs::create_directories(tmp);
  try {
    for (const auto& [rel, content] : files_) {
      fs::path target = tmp / rel;
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      spit(target, content);
    }
    fs::rename(tmp, dir);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

}  // namespace lmdiag::util
