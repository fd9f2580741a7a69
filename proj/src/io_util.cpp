#include "ecgxai/io_util.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ecgxai::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

namespace {

template <class T>
void write_raw(const fs::path& path, const std::vector<T>& v) {
  write_text(path, std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T)));
}

template <class T>
std::vector<T> read_raw(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() % sizeof(T) != 0)
    throw std::invalid_argument("'" + path.string() + "' has a size that is not a multiple of " +
                                std::to_string(sizeof(T)));
  std::vector<T> v(bytes.size() / sizeof(T));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

}  // namespace

void write_f32(const fs::path& path, std::span<const double> values) {
  write_raw(path, std::vector<float>(values.begin(), values.end()));
}

std::vector<double> read_f32(const fs::path& path) {
  auto f = read_raw<float>(path);
  return {f.begin(), f.end()};
}

void write_f64(const fs::path& path, std::span<const double> values) {
  write_raw(path, std::vector<double>(values.begin(), values.end()));
}

std::vector<double> read_f64(const fs::path& path) { return read_raw<double>(path); }

void write_u8(const fs::path& path, std::span<const std::uint8_t> values) {
  write_raw(path, std::vector<std::uint8_t>(values.begin(), values.end()));
}

std::vector<std::uint8_t> read_u8(const fs::path& path) { return read_raw<std::uint8_t>(path); }

Csv::Csv(std::vector<std::string> header) : width_(header.size()) { text_ = join(header, ",") + "\n"; }

Csv& Csv::row(const std::vector<std::string>& cells) {
  if (cells.size() != width_)
    throw std::logic_error("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                           std::to_string(width_));
  text_ += join(cells, ",");
  text_ += "\n";
  return *this;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace ecgxai::io
