#pragma once

// Binary model container:
//   "INFL" | u32 version | u32 field count | fields | u32 tensor count | tensors
// A field is a u32 byte length followed by a "key=value" UTF-8 string. A tensor
// is a u32 element count followed by little-endian IEEE float32 values, in
// parameter declaration order.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "inflow/error.hpp"
#include "inflow/flow.hpp"

namespace inflow {

inline constexpr std::uint32_t checkpoint_version = 1;

/// Training provenance stored next to the parameters.
struct CheckpointMeta {
  std::uint64_t epochs = 0;
  std::uint64_t steps_per_epoch = 0;
  std::uint64_t train_seed = 0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

template <std::floating_point T>
struct LoadedModel {
  FlowModel<T> model;
  CheckpointMeta meta;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::string join_shape(const std::vector<std::size_t>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s.push_back(sep);
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<std::size_t> split_sizes(std::string_view s, char sep) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = s.find(sep, start);
    const auto piece = s.substr(start, end == std::string_view::npos ? s.size() - start : end - start);
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), v);
    if (ec != std::errc() || ptr != piece.data() + piece.size()) {
      throw CheckpointError(CheckpointError::Kind::malformed, "bad size list '" + std::string(s) + "'");
    }
    out.push_back(v);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            std::string("checkpoint truncated while reading ") + what + " (need " + std::to_string(n) +
                                " bytes at offset " + std::to_string(pos_) + ", have " +
                                std::to_string(bytes_.size() - pos_) + ")");
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::string hex_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, ptr);
}

inline double parse_hex_double(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw CheckpointError(CheckpointError::Kind::malformed, "bad float field '" + std::string(s) + "'");
  }
  return v;
}

inline std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw CheckpointError(CheckpointError::Kind::malformed, "bad integer field '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace detail

template <std::floating_point T>
std::string encode_checkpoint(const FlowModel<T>& model, const CheckpointMeta& meta = {}) {
  const FlowConfig& cfg = model.config();
  const std::vector<std::pair<std::string, std::string>> fields = {
      {"blocks", std::to_string(cfg.blocks)},
      {"shape", detail::join_shape(cfg.input_shape, 'x')},
      {"layout", "CHW"},
      {"split", std::to_string(split_point(cfg.input_shape))},
      {"subnet", to_string(cfg.subnet.kind)},
      {"hidden", detail::join_shape(cfg.subnet.hidden, ',')},
      {"kernel", std::to_string(cfg.subnet.kernel)},
      {"shared", cfg.shared ? "1" : "0"},
      {"seed", std::to_string(cfg.seed)},
      {"final_bias", detail::hex_double(cfg.final_bias)},
      {"epochs", std::to_string(meta.epochs)},
      {"steps_per_epoch", std::to_string(meta.steps_per_epoch)},
      {"train_seed", std::to_string(meta.train_seed)},
  };
  std::string out = "INFL";
  detail::put_u32(out, checkpoint_version);
  detail::put_u32(out, static_cast<std::uint32_t>(fields.size()));
  for (const auto& [k, v] : fields) {
    const std::string f = k + "=" + v;
    detail::put_u32(out, static_cast<std::uint32_t>(f.size()));
    out += f;
  }
  const auto params = model.parameters();
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p->size()));
    for (T v : p->data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

template <std::floating_point T = float>
LoadedModel<T> decode_checkpoint(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  detail::ByteReader in(bytes);
  if (bytes.size() < 4 || bytes.substr(0, 4) != "INFL") throw CheckpointError(Kind::bad_magic, "not an INFL checkpoint");
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != checkpoint_version) {
    throw CheckpointError(Kind::version_mismatch, "checkpoint version " + std::to_string(version) +
                                                      ", expected " + std::to_string(checkpoint_version));
  }
  const std::uint32_t n_fields = in.u32("field count");
  std::map<std::string, std::string, std::less<>> fields;
  for (std::uint32_t i = 0; i < n_fields; ++i) {
    const std::uint32_t len = in.u32("field length");
    const auto f = in.take(len, "header field");
    const auto eq = f.find('=');
    if (eq == std::string_view::npos) throw CheckpointError(Kind::malformed, "header field without '='");
    fields.emplace(std::string(f.substr(0, eq)), std::string(f.substr(eq + 1)));
  }
  auto field = [&](std::string_view key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw CheckpointError(Kind::malformed, "missing header field '" + std::string(key) + "'");
    return it->second;
  };
  if (field("layout") != "CHW") throw CheckpointError(Kind::malformed, "unsupported layout " + field("layout"));

  FlowConfig cfg;
  cfg.blocks = detail::parse_u64(field("blocks"));
  cfg.input_shape = detail::split_sizes(field("shape"), 'x');
  const std::string& kind = field("subnet");
  if (kind != "dense" && kind != "conv") throw CheckpointError(Kind::malformed, "unknown subnet kind " + kind);
  cfg.subnet.kind = kind == "dense" ? SubnetKind::dense : SubnetKind::conv;
  cfg.subnet.hidden = detail::split_sizes(field("hidden"), ',');
  cfg.subnet.kernel = detail::parse_u64(field("kernel"));
  cfg.shared = field("shared") == "1";
  cfg.seed = detail::parse_u64(field("seed"));
  cfg.final_bias = detail::parse_hex_double(field("final_bias"));
  CheckpointMeta meta{detail::parse_u64(field("epochs")), detail::parse_u64(field("steps_per_epoch")),
                      detail::parse_u64(field("train_seed"))};

  // Bound the header before allocating anything from it.
  std::size_t widest = 0;
  for (std::size_t h : cfg.input_shape) widest = std::max(widest, h);
  for (std::size_t h : cfg.subnet.hidden) widest = std::max(widest, h);
  if (cfg.input_shape.size() > 3 || widest > (std::size_t{1} << 20) ||
      shape_size(cfg.input_shape) > (std::size_t{1} << 26) || cfg.blocks > 4096 || cfg.subnet.hidden.size() > 64 || cfg.subnet.kernel > 64) {
    throw CheckpointError(Kind::malformed, "model header exceeds size limits");
  }
  std::optional<FlowModel<T>> model;
  try {
    model.emplace(cfg);
    if (detail::parse_u64(field("split")) != split_point(cfg.input_shape)) {
      throw CheckpointError(Kind::malformed, "stored split does not match the input shape");
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(Kind::malformed, std::string("invalid model header: ") + e.what());
  }
  auto params = model->parameters();
  const std::uint32_t n_tensors = in.u32("tensor count");
  if (n_tensors != params.size()) {
    throw CheckpointError(Kind::malformed, "checkpoint holds " + std::to_string(n_tensors) + " tensors, model needs " +
                                               std::to_string(params.size()));
  }
  for (auto* p : params) {
    const std::uint32_t count = in.u32("tensor size");
    if (count != p->size()) throw CheckpointError(Kind::malformed, "tensor size does not match the model layout");
    auto raw = in.take(std::size_t{count} * 4, "tensor data");
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[4 * i + b])) << (8 * b);
      (*p)[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
  }
  if (!in.done()) throw CheckpointError(Kind::malformed, "trailing bytes after the last tensor");
  return {std::move(*model), meta};
}

template <std::floating_point T>
void save_checkpoint(const FlowModel<T>& model, const std::filesystem::path& path, const CheckpointMeta& meta = {}) {
  const std::string bytes = encode_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + path.string());
}

template <std::floating_point T = float>
LoadedModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint<T>(bytes);
}

}  // namespace inflow
