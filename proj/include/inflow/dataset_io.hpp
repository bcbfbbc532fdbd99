#pragma once

// Dataset containers: IDX (big-endian magic + dimensions + unsigned-byte
// payload) for images, and a plain CSV layout for real-valued vectors.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "inflow/data.hpp"
#include "inflow/io.hpp"

namespace inflow {

class IdxError : public ParseError {
 public:
  enum class Kind { bad_magic, truncated_header, length_mismatch, dimension_overflow };

  IdxError(Kind kind, const std::string& what) : ParseError(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Decodes an unsigned-byte IDX file. The first dimension counts samples:
/// 1 dim -> [n, 1], 2 dims -> [n, d], 3 dims -> [n, 1, H, W], 4 dims -> [n, C, H, W].
/// Bytes are scaled by 1/255.
inline DataBatch parse_idx(std::string_view bytes) {
  using Kind = IdxError::Kind;
  if (bytes.size() < 4) throw IdxError(Kind::truncated_header, "IDX file shorter than its magic number");
  const auto b = [&](std::size_t i) { return static_cast<unsigned char>(bytes[i]); };
  if (b(0) != 0 || b(1) != 0 || b(2) != 0x08 || b(3) < 1 || b(3) > 4) {
    std::ostringstream os;
    os << "bad IDX magic 0x" << std::hex << (b(0) << 24 | b(1) << 16 | b(2) << 8 | b(3))
       << " (expected 0x000008NN, unsigned bytes, 1..4 dims)";
    throw IdxError(Kind::bad_magic, os.str());
  }
  const std::size_t ndims = b(3);
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw IdxError(Kind::truncated_header, "IDX header needs " + std::to_string(header) + " bytes, file has " +
                                               std::to_string(bytes.size()));
  }
  Shape dims;
  std::size_t total = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::size_t o = 4 + 4 * d;
    const std::uint32_t v = (static_cast<std::uint32_t>(b(o)) << 24) | (static_cast<std::uint32_t>(b(o + 1)) << 16) |
                            (static_cast<std::uint32_t>(b(o + 2)) << 8) | b(o + 3);
    if (v != 0 && total > std::numeric_limits<std::size_t>::max() / v) {
      throw IdxError(Kind::dimension_overflow, "IDX dimensions overflow the addressable size");
    }
    total *= v;
    dims.push_back(v);
  }
  const std::size_t payload = bytes.size() - header;
  if (payload != total) {
    throw IdxError(Kind::length_mismatch, "IDX payload length mismatch: expected " + std::to_string(total) +
                                              " bytes, found " + std::to_string(payload));
  }
  Shape shape;
  switch (ndims) {
    case 1: shape = {dims[0], 1}; break;
    case 2: shape = dims; break;
    case 3: shape = {dims[0], 1, dims[1], dims[2]}; break;
    default: shape = dims; break;
  }
  std::vector<float> values(total);
  for (std::size_t i = 0; i < total; ++i) values[i] = static_cast<float>(b(header + i)) / 255.0f;
  return DataBatch(shape, std::move(values));
}

inline DataBatch load_idx(const std::filesystem::path& path) { return parse_idx(read_file(path)); }

/// Encodes a batch as IDX, quantizing each value to round(255 * clamp(v, 0, 1)).
/// 1-channel images are written with 3 dimensions, other shapes verbatim.
inline std::string encode_idx(const DataBatch& batch) {
  Shape dims = batch.shape();
  if (dims.size() == 4 && dims[1] == 1) dims = {dims[0], dims[2], dims[3]};
  if (dims.empty() || dims.size() > 4) throw ContractError("IDX supports 1 to 4 dimensions");
  std::string out;
  out.push_back(0);
  out.push_back(0);
  out.push_back(0x08);
  out.push_back(static_cast<char>(dims.size()));
  for (std::size_t d : dims) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw ContractError("IDX dimension too large");
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((d >> s) & 0xFF));
  }
  for (float v : batch.data()) {
    const double q = std::round(255.0 * std::clamp(static_cast<double>(v), 0.0, 1.0));
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

/// CSV container: an optional "# shape=AxBxC" line, then one sample per line.
inline std::string encode_csv_batch(const DataBatch& batch) {
  std::ostringstream os;
  os << "# shape=" << shape_string(sample_shape(batch)) << '\n';
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    auto row = batch.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << format_exact(row[j]);
    os << '\n';
  }
  return os.str();
}

inline DataBatch parse_csv_batch(std::string_view text) {
  Shape sample;
  std::vector<float> values;
  std::size_t rows = 0, width = 0;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view key = "# shape=";
      if (line.starts_with(key)) {
        sample.clear();
        std::string_view s = line.substr(key.size());
        while (!s.empty()) {
          const auto x = s.find('x');
          std::size_t v = 0;
          const auto piece = s.substr(0, x);
          auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), v);
          if (ec != std::errc() || ptr != piece.data() + piece.size() || v == 0) {
            throw ParseError("bad shape line in dataset CSV: " + std::string(line));
          }
          sample.push_back(v);
          s = x == std::string_view::npos ? std::string_view{} : s.substr(x + 1);
        }
      }
      continue;
    }
    std::size_t count = 0;
    while (true) {
      const auto comma = line.find(',');
      std::string_view cell = line.substr(0, comma);
      while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
      while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
      float v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw ParseError("dataset CSV line " + std::to_string(line_no) + ": bad number '" + std::string(cell) + "'");
      }
      values.push_back(v);
      ++count;
      if (comma == std::string_view::npos) break;
      line = line.substr(comma + 1);
    }
    if (rows == 0) width = count;
    if (count != width) throw ParseError("dataset CSV line " + std::to_string(line_no) + " has a different width");
    ++rows;
  }
  if (rows == 0) throw ParseError("dataset CSV holds no samples");
  if (sample.empty()) sample = {width};
  if (shape_size(sample) != width) throw ParseError("dataset CSV rows do not match the declared shape");
  return DataBatch(batch_shape(rows, sample), std::move(values));
}

/// Loads by extension: .idx / .ubyte as IDX, anything else as CSV.
inline DataBatch load_dataset(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  const std::string bytes = read_file(path);
  if (ext == ".idx" || ext == ".ubyte" || path.string().ends_with("-ubyte")) return parse_idx(bytes);
  return parse_csv_batch(bytes);
}

}  // namespace inflow
