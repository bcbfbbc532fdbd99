#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "inflow/io.hpp"

namespace inflow {

/// Named score series, kept in caller order.
using ScoreSeries = std::vector<std::pair<std::string, std::vector<double>>>;

struct Histogram {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t bins = 1;
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> counts;  // [series][bin]

  double edge(std::size_t b) const { return lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins); }
};

/// Shared-range binning: [min, max] over every series, right edge inclusive.
inline Histogram make_histogram(const ScoreSeries& series, std::size_t bins) {
  if (bins < 1) throw ContractError("histogram needs at least one bin");
  Histogram h;
  h.bins = bins;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [name, values] : series)
    for (double v : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(lo <= hi)) lo = 0.0, hi = 1.0;
  if (lo == hi) hi = lo + 1.0;
  h.lo = lo;
  h.hi = hi;
  for (const auto& [name, values] : series) {
    h.names.push_back(name);
    std::vector<std::size_t> c(bins, 0);
    for (double v : values) {
      auto b = static_cast<std::size_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
      c[std::min(b, bins - 1)] += 1;
    }
    h.counts.push_back(std::move(c));
  }
  return h;
}

inline std::string histogram_csv(const Histogram& h) {
  std::ostringstream os;
  os << "series,bin_left,bin_right,count\n";
  for (std::size_t s = 0; s < h.names.size(); ++s)
    for (std::size_t b = 0; b < h.bins; ++b)
      os << h.names[s] << ',' << format_exact(h.edge(b)) << ',' << format_exact(h.edge(b + 1)) << ','
         << h.counts[s][b] << '\n';
  return os.str();
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

/// Standalone SVG 1.1 overlay of translucent bars, one colour per series.
inline std::string histogram_svg(const Histogram& h, const std::string& title = "log-likelihood histogram") {
  static constexpr const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const double width = 640, height = 400, left = 60, right = 20, top = 40, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  std::size_t peak = 1;
  for (const auto& c : h.counts)
    for (std::size_t v : c) peak = std::max(peak, v);
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << xml_escape(title) << "</text>\n";
  const double bar_w = plot_w / static_cast<double>(h.bins);
  for (std::size_t s = 0; s < h.names.size(); ++s) {
    const char* colour = palette[s % std::size(palette)];
    for (std::size_t b = 0; b < h.bins; ++b) {
      if (h.counts[s][b] == 0) continue;
      const double bh = plot_h * static_cast<double>(h.counts[s][b]) / static_cast<double>(peak);
      os << "<rect x=\"" << left + bar_w * static_cast<double>(b) << "\" y=\"" << top + plot_h - bh << "\" width=\""
         << bar_w << "\" height=\"" << bh << "\" fill=\"" << colour << "\" fill-opacity=\"0.5\"/>\n";
    }
    os << "<rect x=\"" << left + plot_w - 150 << "\" y=\"" << top + 16 * static_cast<double>(s) << "\" width=\"10\" height=\"10\" fill=\""
       << colour << "\"/><text x=\"" << left + plot_w - 135 << "\" y=\"" << top + 16 * static_cast<double>(s) + 9
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(h.names[s]) << "</text>\n";
  }
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << left << "\" y=\"" << height - 20 << "\" font-family=\"sans-serif\" font-size=\"11\">"
     << format_exact(h.lo) << "</text>\n"
     << "<text x=\"" << left + plot_w << "\" y=\"" << height - 20
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << format_exact(h.hi) << "</text>\n"
     << "<text x=\"" << left - 6 << "\" y=\"" << top + 10 << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
     << peak << "</text>\n"
     << "</svg>\n";
  return os.str();
}

/// Writes <base>.csv and <base>.svg.
inline void emit_histogram(const ScoreSeries& series, std::size_t bins, const std::filesystem::path& base) {
  const Histogram h = make_histogram(series, bins);
  OutputSet out;
  auto csv = base, svg = base;
  csv += ".csv";
  svg += ".svg";
  out.add(csv, histogram_csv(h));
  out.add(svg, histogram_svg(h));
  out.commit();
}

}  // namespace inflow
