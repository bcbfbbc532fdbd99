#pragma once

// Flat "key = value" run configuration with '#' comments. Unknown keys are
// rejected; every key has a default.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "inflow/attention.hpp"
#include "inflow/data.hpp"
#include "inflow/flow.hpp"
#include "inflow/io.hpp"
#include "inflow/train.hpp"

namespace inflow {

enum class DatasetKind { none, gaussian_mixture, uniform_box, noise, constant, file };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::none;
  std::string name;
  std::size_t n = 1000;
  Shape shape{2};
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> centers{{0.1, 0.1}, {0.2, 0.1}};
  double stddev = 0.02;
  double lo = 0.0;
  double hi = 1.0;
  std::filesystem::path path;
  bool gray_to_rgb = false;
  std::optional<CorruptionKind> corruption;
  int severity = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = ".";

  FlowConfig model;
  TrainConfig training;
  std::size_t reference_size = 250;

  GateConfig attention;
  std::size_t test_batch = 50;

  double threshold_alpha = 0.05;
  double threshold_sigma = 1.0;

  DatasetSpec train_data;
  DatasetSpec test_data;
  DatasetSpec gen_data;

  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> reference;
  std::optional<std::filesystem::path> gen_out;

  std::vector<std::filesystem::path> eval_in;
  std::vector<std::pair<std::string, std::filesystem::path>> eval_test;
  std::size_t eval_bins = 50;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(sep, start);
    auto piece = trim(s.substr(start, end == std::string_view::npos ? s.size() - start : end - start));
    if (!piece.empty()) out.push_back(std::move(piece));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T v{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

inline Shape parse_shape(const std::string& key, const std::string& value) {
  Shape s;
  for (const auto& piece : split_list(value, 'x')) {
    const auto v = parse_number<std::size_t>(key, piece);
    if (v == 0) throw ConfigError("config key '" + key + "': dimensions must be positive");
    s.push_back(v);
  }
  if (s.empty()) throw ConfigError("config key '" + key + "': empty shape");
  return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  for (const auto& piece : split_list(value, ',')) out.push_back(parse_number<std::size_t>(key, piece));
  return out;
}

inline void apply_dataset_key(DatasetSpec& d, const std::string& field, const std::string& key, const std::string& value) {
  if (field == "kind") {
    static const std::map<std::string, DatasetKind> kinds = {
        {"none", DatasetKind::none},           {"gaussian_mixture", DatasetKind::gaussian_mixture},
        {"uniform_box", DatasetKind::uniform_box}, {"noise", DatasetKind::noise},
        {"constant", DatasetKind::constant},   {"file", DatasetKind::file}};
    auto it = kinds.find(value);
    if (it == kinds.end()) throw ConfigError("config key '" + key + "': unknown dataset kind '" + value + "'");
    d.kind = it->second;
  } else if (field == "name") {
    d.name = value;
  } else if (field == "n") {
    d.n = parse_number<std::size_t>(key, value);
    if (d.n == 0) throw ConfigError("config key '" + key + "': sample count must be at least 1");
  } else if (field == "shape") {
    d.shape = parse_shape(key, value);
  } else if (field == "seed") {
    d.seed = parse_number<std::uint64_t>(key, value);
  } else if (field == "centers") {
    d.centers.clear();
    for (const auto& c : split_list(value, ';')) {
      std::vector<double> center;
      for (const auto& x : split_list(c, ',')) center.push_back(parse_number<double>(key, x));
      d.centers.push_back(std::move(center));
    }
  } else if (field == "std") {
    d.stddev = parse_number<double>(key, value);
  } else if (field == "lo") {
    d.lo = parse_number<double>(key, value);
  } else if (field == "hi") {
    d.hi = parse_number<double>(key, value);
  } else if (field == "path") {
    d.path = value;
  } else if (field == "gray_to_rgb") {
    d.gray_to_rgb = parse_bool(key, value);
  } else if (field == "corruption") {
    if (value == "none") {
      d.corruption.reset();
    } else {
      try {
        d.corruption = parse_corruption(value);
      } catch (const ContractError& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
    }
  } else if (field == "severity") {
    d.severity = parse_number<int>(key, value);
    if (d.severity < 1 || d.severity > 5) throw ConfigError("config key '" + key + "': severity must be in 1..5");
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace detail

inline RunConfig default_run_config() {
  RunConfig c;
  c.model.subnet.hidden = {64, 64};
  c.attention.encoder.seed = 17;
  c.train_data.name = "train";
  c.train_data.kind = DatasetKind::gaussian_mixture;
  c.train_data.n = 5000;
  c.test_data.name = "test";
  c.gen_data.name = "data";
  return c;
}

/// Parses a config file body on top of the defaults.
inline RunConfig parse_config(std::string_view text) {
  using namespace detail;
  RunConfig c = default_run_config();
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");

    auto num = [&]<typename T>(T& dst) { dst = parse_number<T>(key, value); };

    if (key == "seed") num(c.seed);
    else if (key == "out") c.out = value;
    else if (key == "model.blocks") num(c.model.blocks);
    else if (key == "model.subnet") {
      if (value == "dense") c.model.subnet.kind = SubnetKind::dense;
      else if (value == "conv") c.model.subnet.kind = SubnetKind::conv;
      else throw ConfigError("config key 'model.subnet': expected dense or conv, got '" + value + "'");
    }
    else if (key == "model.hidden") c.model.subnet.hidden = parse_sizes(key, value);
    else if (key == "model.kernel") num(c.model.subnet.kernel);
    else if (key == "model.shared") c.model.shared = parse_bool(key, value);
    else if (key == "model.final_bias") num(c.model.final_bias);
    else if (key == "train.epochs") num(c.training.epochs);
    else if (key == "train.steps") num(c.training.steps_per_epoch);
    else if (key == "train.batch") num(c.training.batch_size);
    else if (key == "train.lr") num(c.training.adam.lr);
    else if (key == "train.beta1") num(c.training.adam.beta1);
    else if (key == "train.beta2") num(c.training.adam.beta2);
    else if (key == "train.eps") num(c.training.adam.eps);
    else if (key == "train.decay") num(c.training.adam.decay);
    else if (key == "train.reference_size") num(c.reference_size);
    else if (key == "attention.encoder") {
      if (value == "random_projection") c.attention.encoder.kind = EncoderKind::random_projection;
      else if (value == "random_conv") c.attention.encoder.kind = EncoderKind::random_conv;
      else throw ConfigError("config key 'attention.encoder': expected random_projection or random_conv");
    }
    else if (key == "attention.encoder_seed") num(c.attention.encoder.seed);
    else if (key == "attention.dim") num(c.attention.encoder.dim);
    else if (key == "attention.channels") c.attention.encoder.channels = parse_sizes(key, value);
    else if (key == "attention.bandwidth") {
      if (value == "median") c.attention.bandwidth.reset();
      else c.attention.bandwidth = parse_number<double>(key, value);
    }
    else if (key == "attention.permutations") num(c.attention.permutations);
    else if (key == "attention.alpha") num(c.attention.alpha);
    else if (key == "attention.batch") num(c.test_batch);
    else if (key == "threshold.alpha") num(c.threshold_alpha);
    else if (key == "threshold.sigma") num(c.threshold_sigma);
    else if (key == "detect.checkpoint") c.checkpoint = value;
    else if (key == "detect.reference") c.reference = value;
    else if (key == "gendata.out") c.gen_out = value;
    else if (key == "eval.in") {
      for (const auto& p : split_list(value, ',')) c.eval_in.emplace_back(p);
    }
    else if (key == "eval.test") {
      for (const auto& item : split_list(value, ',')) {
        const auto colon = item.find('=');
        if (colon == std::string::npos) throw ConfigError("config key 'eval.test': expected name=path entries");
        c.eval_test.emplace_back(trim(std::string_view(item).substr(0, colon)), trim(std::string_view(item).substr(colon + 1)));
      }
    }
    else if (key == "eval.bins") num(c.eval_bins);
    else if (key.starts_with("data.")) {
      const auto dot = key.find('.', 5);
      if (dot == std::string::npos) throw ConfigError("unknown config key '" + key + "'");
      const std::string section = key.substr(5, dot - 5), field = key.substr(dot + 1);
      DatasetSpec* d = section == "train" ? &c.train_data
                       : section == "test" ? &c.test_data
                       : section == "gen"  ? &c.gen_data
                                           : nullptr;
      if (!d) throw ConfigError("unknown config key '" + key + "'");
      apply_dataset_key(*d, field, key, value);
    }
    else throw ConfigError("unknown config key '" + key + "'");
  }

  if (c.model.blocks < 1) throw ConfigError("model.blocks must be at least 1");
  if (c.training.batch_size < 1) throw ConfigError("train.batch must be at least 1");
  if (!(c.attention.alpha > 0 && c.attention.alpha < 1)) throw ConfigError("attention.alpha must lie in (0, 1)");
  if (!(c.threshold_alpha > 0 && c.threshold_alpha < 1)) throw ConfigError("threshold.alpha must lie in (0, 1)");
  if (!(c.threshold_sigma > 0)) throw ConfigError("threshold.sigma must be positive");
  if (c.attention.permutations < 1) throw ConfigError("attention.permutations must be at least 1");
  if (c.attention.bandwidth && !(*c.attention.bandwidth > 0)) throw ConfigError("attention.bandwidth must be positive");
  if (c.test_batch < 2) throw ConfigError("attention.batch must be at least 2 (the MMD statistic needs two test samples)");
  if (c.reference_size < 2) throw ConfigError("train.reference_size must be at least 2");
  if (c.eval_bins < 1) throw ConfigError("eval.bins must be at least 1");
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(read_file(path));
}

}  // namespace inflow
