#pragma once

// The train / detect / eval / gendata commands. Each command stages all of
// its output files and publishes them only after it has fully succeeded.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "inflow/attention.hpp"
#include "inflow/checkpoint.hpp"
#include "inflow/config.hpp"
#include "inflow/dataset_io.hpp"
#include "inflow/histogram.hpp"
#include "inflow/metrics.hpp"
#include "inflow/threshold.hpp"
#include "inflow/train.hpp"

namespace inflow {

namespace seeds {
inline constexpr std::uint64_t model = 1;
inline constexpr std::uint64_t training = 2;
inline constexpr std::uint64_t reference = 3;
inline constexpr std::uint64_t gate = 4;
}  // namespace seeds

/// Materializes a dataset description.
inline DataBatch make_dataset(const DatasetSpec& spec) {
  DataBatch batch;
  switch (spec.kind) {
    case DatasetKind::none:
      throw ConfigError("dataset '" + spec.name + "' is not configured (set data." + spec.name + ".kind)");
    case DatasetKind::gaussian_mixture: batch = gen_gaussian_mixture(spec.n, spec.centers, spec.stddev, spec.seed); break;
    case DatasetKind::uniform_box:
      if (spec.shape.size() != 1) throw ConfigError("uniform_box datasets need a vector shape");
      batch = gen_uniform_box(spec.n, spec.shape[0], spec.lo, spec.hi, spec.seed);
      break;
    case DatasetKind::noise: batch = gen_noise(spec.n, spec.shape, spec.seed); break;
    case DatasetKind::constant: batch = gen_constant(spec.n, spec.shape, spec.seed); break;
    case DatasetKind::file:
      if (spec.path.empty()) throw ConfigError("dataset '" + spec.name + "' has kind file but no path");
      if (!std::filesystem::exists(spec.path)) throw ConfigError("dataset file not found: " + spec.path.string());
      batch = load_dataset(spec.path);
      break;
  }
  if (spec.gray_to_rgb) batch = gray_to_rgb(batch);
  if (spec.corruption) batch = corrupt(std::move(batch), *spec.corruption, spec.severity, derive_seed(spec.seed, 99));
  return batch;
}

inline std::string loss_csv(const std::vector<double>& losses) {
  std::ostringstream os;
  os << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << format_exact(losses[i]) << '\n';
  return os.str();
}

struct TrainSummary {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::filesystem::path checkpoint;
  std::filesystem::path reference;
};

/// Trains a flow on data.train and writes model.infl, loss.csv and reference.csv.
inline TrainSummary cmd_train(const RunConfig& cfg) {
  const DataBatch data = make_dataset(cfg.train_data);
  FlowConfig model_cfg = cfg.model;
  model_cfg.input_shape = sample_shape(data);
  model_cfg.seed = derive_seed(cfg.seed, seeds::model);
  FlowModel<float> model(model_cfg);

  TrainConfig tc = cfg.training;
  tc.seed = derive_seed(cfg.seed, seeds::training);
  const TrainResult result = train(model, data, tc);

  Rng rng = make_rng(cfg.seed, seeds::reference);
  auto idx = sample_without_replacement(data.rows(), std::min(cfg.reference_size, data.rows()), rng);
  std::sort(idx.begin(), idx.end());
  if (idx.size() < 2) throw ConfigError("the training set must hold at least 2 samples for the reference subset");
  const DataBatch reference = gather_rows(data, idx);

  TrainSummary summary;
  summary.checkpoint = cfg.out / "model.infl";
  summary.reference = cfg.out / "reference.csv";
  OutputSet out;
  out.add(summary.checkpoint, encode_checkpoint(model, {tc.epochs, tc.steps_per_epoch, tc.seed}));
  out.add(cfg.out / "loss.csv", loss_csv(result.losses));
  out.add(summary.reference, encode_csv_batch(reference));
  out.commit();
  if (!result.losses.empty()) {
    summary.initial_loss = result.losses.front();
    summary.final_loss = result.losses.back();
  }
  return summary;
}

struct BatchVerdict {
  std::size_t begin = 0;
  std::size_t end = 0;
  AttentionVerdict verdict;
};

struct DetectionReport {
  std::vector<double> logliks;
  std::vector<Gate> gates;
  std::vector<OodLabel> labels;
  std::vector<BatchVerdict> batches;
  double threshold = 0.0;

  double ood_fraction() const {
    if (labels.empty()) return 0.0;
    return static_cast<double>(std::count(labels.begin(), labels.end(), OodLabel::out)) / static_cast<double>(labels.size());
  }
};

/// Consecutive chunks of `batch` samples; a trailing chunk of one sample is
/// merged into its predecessor so every chunk supports the MMD statistic.
inline std::vector<std::pair<std::size_t, std::size_t>> test_chunks(std::size_t n, std::size_t batch) {
  if (n < 2) throw ConfigError("detection needs at least 2 test samples: the attention gate compares batches of size >= 2");
  if (batch < 2) throw ConfigError("attention.batch must be at least 2");
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t b = 0; b < n; b += batch) chunks.emplace_back(b, std::min(n, b + batch));
  if (chunks.size() > 1 && chunks.back().second - chunks.back().first < 2) {
    chunks[chunks.size() - 2].second = n;
    chunks.pop_back();
  }
  return chunks;
}

/// Gates each test chunk against the reference subset, then scores it with
/// the gate value the test produced.
template <std::floating_point T>
DetectionReport detect(const FlowModel<T>& model, const Tensor<T>& reference, const Tensor<T>& test,
                       const GateConfig& gate, std::size_t test_batch, double threshold_alpha, double sigma = 1.0) {
  DetectionReport report;
  report.threshold = likelihood_threshold(threshold_alpha, model.dim(), sigma);
  std::size_t k = 0;
  for (auto [b, e] : test_chunks(test.rows(), test_batch)) {
    const Tensor<T> chunk = slice_rows(test, b, e);
    GateConfig g = gate;
    g.seed = derive_seed(gate.seed, k++);
    const AttentionVerdict verdict = attention_gate(reference, chunk, g);
    const auto ll = model.log_likelihood(chunk, verdict.c);
    for (double v : ll) {
      report.logliks.push_back(v);
      report.gates.push_back(verdict.c);
      report.labels.push_back(classify(v, report.threshold));
    }
    report.batches.push_back({b, e, verdict});
  }
  return report;
}

inline std::string scores_csv(const DetectionReport& r) {
  std::ostringstream os;
  os << "index,batch,loglik,c,label\n";
  std::size_t batch = 0;
  for (std::size_t i = 0; i < r.logliks.size(); ++i) {
    while (i >= r.batches[batch].end) ++batch;
    os << i << ',' << batch << ',' << format_exact(r.logliks[i]) << ',' << to_int(r.gates[i]) << ','
       << to_string(r.labels[i]) << '\n';
  }
  return os.str();
}

inline std::string batches_csv(const DetectionReport& r) {
  std::ostringstream os;
  os << "batch,begin,end,mmd,p_value,bandwidth,c\n";
  for (std::size_t k = 0; k < r.batches.size(); ++k) {
    const auto& b = r.batches[k];
    os << k << ',' << b.begin << ',' << b.end << ',' << format_exact(b.verdict.mmd_observed) << ','
       << format_exact(b.verdict.p_value) << ',' << format_exact(b.verdict.bandwidth) << ',' << to_int(b.verdict.c) << '\n';
  }
  return os.str();
}

inline std::string summary_line(const std::string& name, const DetectionReport& r) {
  double mean_p = 0.0;
  std::size_t closed = 0;
  for (const auto& b : r.batches) {
    mean_p += b.verdict.p_value / static_cast<double>(r.batches.size());
    closed += b.verdict.c == Gate::closed ? 1 : 0;
  }
  std::ostringstream os;
  os << "dataset=" << name << " samples=" << r.logliks.size() << " batches=" << r.batches.size()
     << " mean_p_value=" << format_exact(mean_p) << " c=" << (closed == 0 ? "1" : closed == r.batches.size() ? "0" : "mixed")
     << " gate_closed_batches=" << closed << " threshold=" << format_exact(r.threshold)
     << " ood_percent=" << format_exact(100.0 * r.ood_fraction()) << '\n';
  return os.str();
}

struct DetectSummary {
  DetectionReport report;
  std::filesystem::path scores;
  std::string summary;
};

/// Scores data.test with a trained checkpoint; writes scores_<name>.csv,
/// batches_<name>.csv and summary_<name>.txt.
inline DetectSummary cmd_detect(const RunConfig& cfg) {
  const auto ckpt_path = cfg.checkpoint.value_or(cfg.out / "model.infl");
  const auto ref_path = cfg.reference.value_or(cfg.out / "reference.csv");
  if (!std::filesystem::exists(ckpt_path)) throw ConfigError("checkpoint not found: " + ckpt_path.string());
  if (!std::filesystem::exists(ref_path)) throw ConfigError("reference subset not found: " + ref_path.string());
  const auto loaded = load_checkpoint<float>(ckpt_path);
  const DataBatch reference = load_dataset(ref_path);
  const DataBatch test = make_dataset(cfg.test_data);
  if (test.row_size() != loaded.model.dim()) {
    throw ConfigError("test samples have shape " + shape_string(sample_shape(test)) + ", model expects " +
                      shape_string(loaded.model.config().input_shape));
  }
  GateConfig gate = cfg.attention;
  gate.seed = derive_seed(cfg.seed, seeds::gate);

  DetectSummary s;
  s.report = detect(loaded.model, reference, test, gate, cfg.test_batch, cfg.threshold_alpha, cfg.threshold_sigma);
  const std::string name = cfg.test_data.name.empty() ? "test" : cfg.test_data.name;
  s.scores = cfg.out / ("scores_" + name + ".csv");
  s.summary = summary_line(name, s.report);
  OutputSet out;
  out.add(s.scores, scores_csv(s.report));
  out.add(cfg.out / ("batches_" + name + ".csv"), batches_csv(s.report));
  out.add(cfg.out / ("summary_" + name + ".txt"), s.summary);
  out.commit();
  return s;
}

/// Reads the "loglik" column of a score CSV.
inline std::vector<double> load_scores(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("score file not found: " + path.string());
  std::istringstream in(read_file(path));
  std::string header;
  if (!std::getline(in, header)) throw ConfigError("score file is empty: " + path.string());
  const auto cols = detail::split_list(header, ',');
  const auto it = std::find(cols.begin(), cols.end(), "loglik");
  if (it == cols.end()) throw ConfigError("score file has no 'loglik' column: " + path.string());
  const auto col = static_cast<std::size_t>(it - cols.begin());
  std::vector<double> scores;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_list(line, ',');
    if (cells.size() <= col) throw ParseError("short row in score file " + path.string());
    scores.push_back(detail::parse_number<double>("loglik", cells[col]));
  }
  if (scores.empty()) throw ConfigError("score file holds no scores: " + path.string());
  return scores;
}

struct EvalRow {
  std::string name;
  MetricsReport metrics;
};

inline std::string metrics_table(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os << "dataset,aucroc,fpr95,aucpr,n_in,n_test\n";
  for (const auto& r : rows) {
    os << r.name << ',' << format_exact(r.metrics.aucroc) << ',' << format_exact(r.metrics.fpr95) << ','
       << format_exact(r.metrics.aucpr) << ',' << r.metrics.positives << ',' << r.metrics.negatives << '\n';
  }
  return os.str();
}

/// One metrics row per test score file, plus a histogram of all series.
inline std::vector<EvalRow> cmd_eval(const RunConfig& cfg) {
  if (cfg.eval_in.empty()) throw ConfigError("eval needs at least one in-distribution score file (eval.in)");
  if (cfg.eval_test.empty()) throw ConfigError("eval needs at least one test score file (eval.test = name=path)");
  std::vector<double> in_scores;
  for (const auto& p : cfg.eval_in) {
    auto s = load_scores(p);
    in_scores.insert(in_scores.end(), s.begin(), s.end());
  }
  std::vector<EvalRow> rows;
  ScoreSeries series{{"in", in_scores}};
  for (const auto& [name, path] : cfg.eval_test) {
    auto scores = load_scores(path);
    rows.push_back({name, evaluate(in_scores, scores)});
    series.emplace_back(name, std::move(scores));
  }
  const Histogram h = make_histogram(series, cfg.eval_bins);
  OutputSet out;
  out.add(cfg.out / "metrics.csv", metrics_table(rows));
  out.add(cfg.out / "hist.csv", histogram_csv(h));
  out.add(cfg.out / "hist.svg", histogram_svg(h));
  out.commit();
  return rows;
}

/// Writes data.gen: IDX for images (values quantized to 1/255), CSV otherwise.
inline std::filesystem::path cmd_gendata(const RunConfig& cfg) {
  DataBatch batch = make_dataset(cfg.gen_data);
  const bool image = sample_shape(batch).size() == 3;
  const std::string name = cfg.gen_data.name.empty() ? "data" : cfg.gen_data.name;
  const auto path = cfg.gen_out.value_or(cfg.out / (name + (image ? ".idx" : ".csv")));
  write_file_atomic(path, image ? encode_idx(batch) : encode_csv_batch(batch));
  return path;
}

}  // namespace inflow
