#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace ecgxai::io {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Raised for missing input files and directories.
class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite values.
std::string fmt(double v);

std::string read_text(const fs::path& path);
/// Creates parent directories as needed.
void write_text(const fs::path& path, std::string_view text);

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

void write_f32(const fs::path& path, std::span<const double> values);
std::vector<double> read_f32(const fs::path& path);
void write_f64(const fs::path& path, std::span<const double> values);
std::vector<double> read_f64(const fs::path& path);
void write_u8(const fs::path& path, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_u8(const fs::path& path);

/// Accumulates rows and writes a comma-separated file with a header line.
class Csv {
 public:
  explicit Csv(std::vector<std::string> header);
  Csv& row(const std::vector<std::string>& cells);
  std::string str() const { return text_; }
  void save(const fs::path& path) const { write_text(path, text_); }

 private:
  std::size_t width_;
  std::string text_;
};

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace ecgxai::io
