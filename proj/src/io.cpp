#include "gazekit/io.hpp"

#include <unistd.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gazekit::io {
namespace {

constexpr std::size_t kDensityHeader = 13;
constexpr std::size_t kFeatureHeader = 16;

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return v;
}

void check_magic(std::span<const std::uint8_t> bytes, const char* magic, std::size_t header) {
  if (bytes.size() < header || std::memcmp(bytes.data(), magic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, std::string("expected ") + magic + " header");
  }
}

std::size_t checked_count(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::size_t element, std::size_t header,
                          std::size_t available) {
  if (a == 0 || b == 0 || c == 0) throw Error(ErrorCode::BadDimensions, "zero dimension");
  const std::uint64_t limit = (std::uint64_t{1} << 48);
  if (a > limit / b || a * b > limit / c) throw Error(ErrorCode::BadDimensions, "dimension product overflows");
  const std::uint64_t count = a * b * c;
  if (count > (available - header) / element || header + count * element != available) {
    throw Error(ErrorCode::BadDimensions, "payload size does not match dimensions");
  }
  return static_cast<std::size_t>(count);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(
        trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

// Calls fn(line_number, fields) for every non-empty data line after the
// header, which must equal `header` exactly.
template <typename Fn>
void for_each_csv_row(std::string_view text, std::string_view header, Fn&& fn) {
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF && static_cast<unsigned char>(text[1]) == 0xBB &&
      static_cast<unsigned char>(text[2]) == 0xBF) {
    text.remove_prefix(3);
  }
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    line = trim(line);
    if (line.empty()) continue;
    if (!saw_header) {
      if (line != header) {
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(line_no) + ": expected header '" + std::string(header) + "'");
      }
      saw_header = true;
      continue;
    }
    fn(line_no, split_fields(line));
  }
  if (!saw_header) throw Error(ErrorCode::ParseError, "line 1: missing header '" + std::string(header) + "'");
}

}  // namespace

DensityGrid read_density(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, "FDF1", kDensityHeader);
  const std::uint32_t height = get_u32(bytes, 4);
  const std::uint32_t width = get_u32(bytes, 8);
  const std::uint8_t flag = bytes[12];
  if (flag > 1) throw Error(ErrorCode::BadValue, "unknown domain flag " + std::to_string(flag));
  const std::size_t count = checked_count(height, width, 1, 8, kDensityHeader, bytes.size());
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(get_u64(bytes, kDensityHeader + 8 * i));
  const Shape shape{height, width};

  if (static_cast<DensityDomain>(flag) == DensityDomain::Linear) {
    double sum = 0.0;
    for (double v : values) {
      if (!std::isfinite(v) || v < 0.0) throw Error(ErrorCode::BadValue, "linear density entries must be >= 0");
      sum += v;
    }
    if (!(std::abs(sum - 1.0) <= 1e-6)) {
      throw Error(ErrorCode::NotNormalized, "linear density sums to " + std::to_string(sum));
    }
    return normalize(shape, values);
  }
  for (double v : values) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw Error(ErrorCode::BadValue, "log density entries must be finite or -inf");
    }
  }
  const double total = logsumexp(values);
  if (!(std::abs(total) <= 1e-6)) throw Error(ErrorCode::NotNormalized, "log density sums to " + std::to_string(total));
  if (std::abs(total) <= 1e-9) return DensityGrid::from_log(shape, std::move(values));
  return DensityGrid::from_unnormalized_log(shape, std::move(values));
}

Bytes write_density(const DensityGrid& density, DensityDomain domain) {
  Bytes out;
  out.reserve(kDensityHeader + 8 * density.size());
  out.insert(out.end(), {'F', 'D', 'F', '1'});
  put_u32(out, static_cast<std::uint32_t>(density.height()));
  put_u32(out, static_cast<std::uint32_t>(density.width()));
  out.push_back(static_cast<std::uint8_t>(domain));
  for (double v : density.log_p()) {
    put_u64(out, std::bit_cast<std::uint64_t>(domain == DensityDomain::Log ? v : std::exp(v)));
  }
  return out;
}

FeatureVolume read_features(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, "FFV1", kFeatureHeader);
  const std::uint32_t channels = get_u32(bytes, 4);
  const std::uint32_t height = get_u32(bytes, 8);
  const std::uint32_t width = get_u32(bytes, 12);
  const std::size_t count = checked_count(channels, height, width, 4, kFeatureHeader, bytes.size());
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, kFeatureHeader + 4 * i)));
  }
  return FeatureVolume(channels, Shape{height, width}, std::move(values));
}

Bytes write_features(const FeatureVolume& features) {
  Bytes out;
  out.reserve(kFeatureHeader + 4 * features.values().size());
  out.insert(out.end(), {'F', 'F', 'V', '1'});
  put_u32(out, static_cast<std::uint32_t>(features.channels()));
  put_u32(out, static_cast<std::uint32_t>(features.shape().height));
  put_u32(out, static_cast<std::uint32_t>(features.shape().width));
  for (double v : features.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

FixationSet read_fixations(std::string_view text) {
  FixationSet out;
  for_each_csv_row(text, "image_id,subject_id,x,y", [&](std::size_t line_no, const auto& fields) {
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() != 4) throw Error(ErrorCode::ParseError, where + "expected 4 fields");
    Fixation f{std::string(fields[0]), std::string(fields[1]), 0.0, 0.0};
    if (f.image_id.empty()) throw Error(ErrorCode::ParseError, where + "empty image_id");
    if (!parse_number(fields[2], f.x) || !parse_number(fields[3], f.y) || !std::isfinite(f.x) || !std::isfinite(f.y)) {
      throw Error(ErrorCode::ParseError, where + "coordinates must be finite numbers");
    }
    out.push_back(std::move(f));
  });
  return out;
}

std::string write_fixations(const FixationSet& fixations) {
  std::ostringstream os;
  os.precision(17);
  os << "image_id,subject_id,x,y\n";
  for (const auto& f : fixations) os << f.image_id << ',' << f.subject_id << ',' << f.x << ',' << f.y << '\n';
  return os.str();
}

std::map<std::string, Shape> read_image_registry(std::string_view text) {
  std::map<std::string, Shape> out;
  for_each_csv_row(text, "image_id,height,width", [&](std::size_t line_no, const auto& fields) {
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() != 3) throw Error(ErrorCode::ParseError, where + "expected 3 fields");
    Shape shape;
    if (!parse_number(fields[1], shape.height) || !parse_number(fields[2], shape.width) || shape.size() == 0) {
      throw Error(ErrorCode::ParseError, where + "dimensions must be positive integers");
    }
    if (!out.emplace(std::string(fields[0]), shape).second) {
      throw Error(ErrorCode::ParseError, where + "duplicate image '" + std::string(fields[0]) + "'");
    }
  });
  return out;
}

std::string write_image_registry(const std::map<std::string, Shape>& images) {
  std::string out = "image_id,height,width\n";
  for (const auto& [id, shape] : images) {
    out += id + "," + std::to_string(shape.height) + "," + std::to_string(shape.width) + "\n";
  }
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  Bytes out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::Io, "failed reading '" + path.string() + "'");
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  const Bytes bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw Error(ErrorCode::Io, "failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::Io, "cannot rename into '" + path.string() + "'");
  }
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace gazekit::io
