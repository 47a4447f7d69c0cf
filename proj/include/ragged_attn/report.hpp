// SPDX-License-Identifier: Apache-2.0
#pragma once

// CSV and SVG renderings of benchmark records.
//
// CSV columns, in order:
//   backend, batch_size, prune_ratio, tokens_per_image, total_tokens,
//   mean_ms, p50_ms, min_ms, stddev_ms, images_per_s, op_counter,
//   overhead_pct, include_pack
// Numbers carry 6 significant digits. Absent values are empty cells.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ragged_attn/bench.hpp"

namespace ragged_attn {

inline constexpr std::array<std::string_view, 13> kCsvColumns = {
    "backend",   "batch_size", "prune_ratio",  "tokens_per_image", "total_tokens",
    "mean_ms",   "p50_ms",     "min_ms",       "stddev_ms",        "images_per_s",
    "op_counter", "overhead_pct", "include_pack"};

/// Malformed CSV input; carries the 1-based line and column of the problem.
class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, std::size_t column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ": " + what),
        line_(line), column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

namespace report_detail {

inline std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  for (auto& s : cells) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  }
  return cells;
}

inline double parse_double(const std::string& s, std::size_t line, std::size_t col) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CsvError(line, col, "expected a number, got '" + s + "'");
  }
}

inline std::uint64_t parse_uint(const std::string& s, std::size_t line, std::size_t col) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    // Accept integral values written in floating form, e.g. "788" or "7.88e+02".
    double v = parse_double(s, line, col);
    if (v < 0 || std::floor(v) != v) {
      throw CsvError(line, col, "expected a non-negative integer, got '" + s + "'");
    }
    return static_cast<std::uint64_t>(v);
  }
  return std::stoull(s);
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace report_detail

inline std::string emit_csv(const std::vector<TimingRecord>& records) {
  using report_detail::num;
  using report_detail::opt;
  std::ostringstream os;
  for (std::size_t i = 0; i < kCsvColumns.size(); ++i) {
    os << (i ? "," : "") << kCsvColumns[i];
  }
  os << '\n';
  for (const auto& r : records) {
    const bool m = !r.skipped;
    os << r.backend << ',' << r.batch_size << ',' << num(r.prune_ratio) << ','
       << (m ? num(r.tokens_per_image) : "") << ',' << (m ? std::to_string(r.total_tokens) : "")
       << ',' << (m ? num(r.mean_ms) : "") << ',' << (m ? num(r.p50_ms) : "") << ','
       << (m ? num(r.min_ms) : "") << ',' << (m ? num(r.stddev_ms) : "") << ','
       << opt(r.images_per_s) << ',' << (r.op_counter ? std::to_string(*r.op_counter) : "")
       << ',' << opt(r.overhead_pct) << ',' << (r.include_pack ? 1 : 0) << '\n';
  }
  return os.str();
}

/// Parses CSV by header name. `backend` and `mean_ms` are required; any
/// subset of the other known columns may be present, in any order. A row
/// with an empty mean_ms is read back as a skipped record.
inline std::vector<TimingRecord> parse_csv(std::string_view text) {
  using namespace report_detail;
  std::vector<TimingRecord> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  std::map<std::string, std::size_t> col;

  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!line.empty() && line[0] == '#') continue;
    auto cells = split_line(line);
    if (header.empty()) {
      header = cells;
      for (std::size_t c = 0; c < header.size(); ++c) {
        const auto& name = header[c];
        if (std::find(kCsvColumns.begin(), kCsvColumns.end(), name) == kCsvColumns.end()) {
          throw CsvError(lineno, c + 1, "unknown column '" + name + "'");
        }
        if (!col.emplace(name, c).second) {
          throw CsvError(lineno, c + 1, "duplicate column '" + name + "'");
        }
      }
      for (std::string_view required : {"backend", "mean_ms"}) {
        if (!col.count(std::string(required))) {
          throw CsvError(lineno, 1, "missing required column '" + std::string(required) + "'");
        }
      }
      continue;
    }
    if (cells.size() != header.size()) {
      throw CsvError(lineno, std::min(cells.size(), header.size()) + 1,
                     "expected " + std::to_string(header.size()) + " cells, got " +
                         std::to_string(cells.size()));
    }
    TimingRecord r;
    auto cell = [&](const char* name) -> const std::string* {
      auto it = col.find(name);
      return it == col.end() ? nullptr : &cells[it->second];
    };
    auto colno = [&](const char* name) { return col.at(name) + 1; };
    auto real = [&](const char* name) -> std::optional<double> {
      const std::string* s = cell(name);
      if (!s || s->empty()) return std::nullopt;
      return parse_double(*s, lineno, colno(name));
    };
    auto integer = [&](const char* name) -> std::optional<std::uint64_t> {
      const std::string* s = cell(name);
      if (!s || s->empty()) return std::nullopt;
      return parse_uint(*s, lineno, colno(name));
    };

    r.backend = *cell("backend");
    if (r.backend.empty()) throw CsvError(lineno, colno("backend"), "empty backend");
    r.batch_size = static_cast<std::size_t>(integer("batch_size").value_or(0));
    r.prune_ratio = real("prune_ratio").value_or(0.0);
    r.tokens_per_image = real("tokens_per_image").value_or(0.0);
    r.total_tokens = static_cast<std::size_t>(integer("total_tokens").value_or(0));
    if (auto mean = real("mean_ms")) {
      if (!(*mean > 0)) {
        throw CsvError(lineno, colno("mean_ms"), "mean_ms must be positive");
      }
      r.mean_ms = *mean;
      r.p50_ms = real("p50_ms").value_or(r.mean_ms);
      r.min_ms = real("min_ms").value_or(r.mean_ms);
      r.stddev_ms = real("stddev_ms").value_or(0.0);
    } else {
      r.skipped = true;
    }
    r.images_per_s = real("images_per_s");
    r.op_counter = integer("op_counter");
    r.overhead_pct = real("overhead_pct");
    if (auto p = integer("include_pack")) {
      if (*p > 1) throw CsvError(lineno, colno("include_pack"), "include_pack must be 0 or 1");
      r.include_pack = *p == 1;
    }
    out.push_back(std::move(r));
  }
  if (header.empty()) throw CsvError(1, 1, "empty CSV: no header row");
  return out;
}

/// Self-contained SVG: mean latency vs batch size, one line series per
/// (backend, prune ratio).
inline std::string emit_svg(const std::vector<TimingRecord>& records,
                            std::string_view title = "Latency vs batch size") {
  using report_detail::num;
  using report_detail::xml_escape;
  std::map<std::pair<std::string, double>, std::vector<std::pair<double, double>>> series;
  double xmax = 0, ymax = 0;
  for (const auto& r : records) {
    if (r.skipped) continue;
    series[{r.backend, r.prune_ratio}].emplace_back(static_cast<double>(r.batch_size), r.mean_ms);
    xmax = std::max(xmax, static_cast<double>(r.batch_size));
    ymax = std::max(ymax, r.mean_ms);
  }
  if (xmax <= 0) xmax = 1;
  if (ymax <= 0) ymax = 1;

  constexpr double W = 720, Hgt = 440, L = 70, R = 220, T = 40, Bm = 50;
  const double pw = W - L - R, ph = Hgt - T - Bm;
  auto px = [&](double x) { return L + pw * x / xmax; };
  auto py = [&](double y) { return T + ph * (1.0 - y / ymax); };
  static constexpr std::array<const char*, 8> palette = {
      "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << Hgt
     << "\" viewBox=\"0 0 " << W << ' ' << Hgt << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << xml_escape(title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = ymax * t / 4.0, x = xmax * t / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << num(y)
       << "</text>\n";
    os << "<text x=\"" << px(x) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">"
       << num(x) << "</text>\n";
  }
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << Hgt - 12
     << "\" text-anchor=\"middle\">batch size</text>\n";
  os << "<text x=\"16\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << T + ph / 2 << ")\">mean latency (ms)</text>\n";

  std::size_t idx = 0;
  for (auto& [key, pts] : series) {
    std::sort(pts.begin(), pts.end());
    const char* color = palette[idx % palette.size()];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      os << (i ? " " : "") << num(px(pts[i].first)) << ',' << num(py(pts[i].second));
    }
    os << "\"/>\n";
    for (const auto& [x, y] : pts) {
      os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"3\" fill=\""
         << color << "\"/>\n";
    }
    const double ly = T + 14.0 + 18.0 * static_cast<double>(idx);
    os << "<line x1=\"" << L + pw + 14 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + pw + 34
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << L + pw + 40 << "\" y=\"" << ly << "\">" << xml_escape(key.first)
       << " @ " << num(key.second * 100.0) << "%</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

/// Fixed-width summary table for terminals.
inline std::string format_summary(const std::vector<TimingRecord>& records) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %5s %6s %8s %10s %10s %10s %12s %9s\n", "backend", "BS",
                "prune", "tok/img", "mean_ms", "p50_ms", "min_ms", "op_counter", "overhead");
  os << buf;
  for (const auto& r : records) {
    if (r.skipped) {
      std::snprintf(buf, sizeof buf, "%-14s %5zu %5.0f%% %8s (skipped)\n", r.backend.c_str(),
                    r.batch_size, r.prune_ratio * 100.0, "");
      os << buf;
      continue;
    }
    std::string ops = r.op_counter ? std::to_string(*r.op_counter) : "";
    std::string ovh = r.overhead_pct ? report_detail::num(*r.overhead_pct) + "%" : "";
    std::snprintf(buf, sizeof buf, "%-14s %5zu %5.0f%% %8.1f %10.4f %10.4f %10.4f %12s %9s\n",
                  r.backend.c_str(), r.batch_size, r.prune_ratio * 100.0, r.tokens_per_image,
                  r.mean_ms, r.p50_ms, r.min_ms, ops.c_str(), ovh.c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace ragged_attn
