#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "inflow/error.hpp"

namespace inflow {

/// Shortest decimal text that parses back to exactly `v`.
template <typename T>
std::string format_exact(T v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Collects output files and publishes them together: everything is written
/// to temporaries first and renamed into place by commit(). Temporaries left
/// by an abandoned set are removed on destruction.
class OutputSet {
 public:
  OutputSet() = default;
  OutputSet(const OutputSet&) = delete;
  OutputSet& operator=(const OutputSet&) = delete;

  ~OutputSet() {
    std::error_code ec;
    for (const auto& [tmp, final_path] : staged_) std::filesystem::remove(tmp, ec);
  }

  void add(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) {
      std::error_code ec;
      std::filesystem::create_directories(path.parent_path(), ec);
    }
    auto tmp = path;
    tmp += ".tmp";
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw IoError("write failed for " + tmp.string());
    staged_.emplace_back(tmp, path);
  }

  void commit() {
    for (const auto& [tmp, final_path] : staged_) {
      std::error_code ec;
      std::filesystem::rename(tmp, final_path, ec);
      if (ec) throw IoError("cannot rename " + tmp.string() + " to " + final_path.string() + ": " + ec.message());
    }
    staged_.clear();
  }

 private:
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> staged_;
};

inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  OutputSet out;
  out.add(path, bytes);
  out.commit();
}

}  // namespace inflow
