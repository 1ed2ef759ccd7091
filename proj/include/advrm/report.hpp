#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrm/errors.hpp"
#include "advrm/io.hpp"

namespace advrm {

// ---------------------------------------------------------------------------
// Tiny CSV reader for report rendering (header row + string cells).
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw StateError("csv column not found: " + name);
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  CsvTable t;
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw StateError("empty csv: " + path.string());
  t.header = split_csv_line(lines[0]);
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (!lines[i].empty()) t.rows.push_back(split_csv_line(lines[i]));
  return t;
}

// ---------------------------------------------------------------------------
// Hand-rolled SVG charts: fixed 640x400 canvas, shared axis logic.
// ---------------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> pts;
};

namespace detail {

constexpr double kW = 640.0, kH = 400.0;
constexpr double kL = 62.0, kR = 16.0, kT = 34.0, kB = 44.0;

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  return palette[i % 6];
}

inline std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

struct AxisRange {
  double lo = 0.0, hi = 1.0;
  double map(double v, double px_lo, double px_hi) const {
    const double t = (v - lo) / (hi - lo);
    return px_lo + t * (px_hi - px_lo);
  }
};

inline AxisRange axis_range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
  if (lo == hi) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.06 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace detail

// Renders a line or scatter chart of the given series. Deterministic output.
inline std::string svg_chart(const std::vector<Series>& series, const std::string& title,
                             const std::string& x_label, const std::string& y_label, bool lines) {
  using namespace detail;
  double xlo = 0.0, xhi = 1.0, ylo = 0.0, yhi = 1.0;
  bool first = true;
  for (const Series& s : series)
    for (const auto& [x, y] : s.pts) {
      if (first) {
        xlo = xhi = x;
        ylo = yhi = y;
        first = false;
      }
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  const AxisRange xr = axis_range(xlo, xhi), yr = axis_range(ylo, yhi);
  const auto px = [&](double x) { return xr.map(x, kL, kW - kR); };
  const auto py = [&](double y) { return yr.map(y, kH - kB, kT); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                    "viewBox=\"0 0 640 400\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" + title + "</text>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    const double gy = py(fy);
    svg += "<line x1=\"" + fmt_tick(kL) + "\" y1=\"" + fmt_tick(gy) + "\" x2=\"" + fmt_tick(kW - kR) +
           "\" y2=\"" + fmt_tick(gy) + "\" stroke=\"#dddddd\"/>\n";
    svg += "<text x=\"" + fmt_tick(kL - 6) + "\" y=\"" + fmt_tick(gy + 4) +
           "\" text-anchor=\"end\">" + fmt_tick(fy) + "</text>\n";
    const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double gx = px(fx);
    svg += "<text x=\"" + fmt_tick(gx) + "\" y=\"" + fmt_tick(kH - kB + 18) +
           "\" text-anchor=\"middle\">" + fmt_tick(fx) + "</text>\n";
  }
  svg += "<line x1=\"" + fmt_tick(kL) + "\" y1=\"" + fmt_tick(kT) + "\" x2=\"" + fmt_tick(kL) +
         "\" y2=\"" + fmt_tick(kH - kB) + "\" stroke=\"#333333\"/>\n";
  svg += "<line x1=\"" + fmt_tick(kL) + "\" y1=\"" + fmt_tick(kH - kB) + "\" x2=\"" +
         fmt_tick(kW - kR) + "\" y2=\"" + fmt_tick(kH - kB) + "\" stroke=\"#333333\"/>\n";
  svg += "<text x=\"320\" y=\"" + fmt_tick(kH - 8) + "\" text-anchor=\"middle\">" + x_label +
         "</text>\n";
  svg += "<text x=\"16\" y=\"200\" text-anchor=\"middle\" transform=\"rotate(-90 16 200)\">" +
         y_label + "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = detail::series_color(si);
    const Series& s = series[si];
    if (lines && s.pts.size() > 1) {
      std::string poly = "<polyline fill=\"none\" stroke=\"";
      poly += color;
      poly += "\" stroke-width=\"1.5\" points=\"";
      for (const auto& [x, y] : s.pts) poly += fmt_tick(px(x)) + "," + fmt_tick(py(y)) + " ";
      poly += "\"/>\n";
      svg += poly;
    } else {
      for (const auto& [x, y] : s.pts)
        svg += "<circle cx=\"" + fmt_tick(px(x)) + "\" cy=\"" + fmt_tick(py(y)) +
               "\" r=\"2.4\" fill=\"" + color + "\" fill-opacity=\"0.6\"/>\n";
    }
    const double lx = kL + 10.0, ly = kT + 14.0 * static_cast<double>(si) + 8.0;
    svg += "<rect x=\"" + fmt_tick(lx) + "\" y=\"" + fmt_tick(ly - 8) +
           "\" width=\"10\" height=\"10\" fill=\"" + std::string(color) + "\"/>\n";
    svg += "<text x=\"" + fmt_tick(lx + 14) + "\" y=\"" + fmt_tick(ly + 1) + "\">" + s.label +
           "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// Report rendering: one markdown index plus SVG figures derived from the CSV
// artifacts present under a run (or reproduce) directory. Missing inputs are
// flagged in the report instead of failing the render.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string md_table(const CsvTable& t) {
  std::string md = "|";
  for (const std::string& h : t.header) md += " " + h + " |";
  md += "\n|";
  for (std::size_t i = 0; i < t.header.size(); ++i) md += " --- |";
  md += "\n";
  for (const std::vector<std::string>& row : t.rows) {
    md += "|";
    for (const std::string& c : row) md += " " + c + " |";
    md += "\n";
  }
  return md;
}

inline std::string round3(const std::string& cell) {
  if (cell.find_first_of(".eE") == std::string::npos) return cell;
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) return cell;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
  } catch (...) {
    return cell;
  }
}

inline CsvTable rounded(CsvTable t) {
  for (auto& row : t.rows)
    for (auto& cell : row) cell = round3(cell);
  return t;
}

}  // namespace detail

inline void render_report(const std::filesystem::path& dir) {
  const std::filesystem::path out = dir / "report";
  std::filesystem::create_directories(out);
  std::string md = "# Run report\n\nSource directory: `" + dir.generic_string() + "`\n";

  const auto missing = [&](const std::filesystem::path& p) {
    md += "\nMISSING: `" + p.lexically_relative(dir).generic_string() + "`\n";
  };
  const auto table_section = [&](const std::string& heading, const std::filesystem::path& csv) {
    md += "\n## " + heading + "\n\n";
    if (!std::filesystem::exists(csv)) {
      missing(csv);
      return false;
    }
    md += detail::md_table(detail::rounded(read_csv(csv)));
    return true;
  };
  const auto figure = [&](const std::string& name, const std::string& svg) {
    write_file(out / (name + ".svg"), svg);
    md += "\n![" + name + "](" + name + ".svg)\n";
  };

  const bool is_aggregate = std::filesystem::exists(dir / "aggregate");
  const std::filesystem::path eval_dir = is_aggregate ? dir / "aggregate" : dir / "eval";

  // Attack success rates per method (strict + standard).
  table_section("Attack success by method",
                eval_dir / (is_aggregate ? "summary_mean.csv" : "summary.csv"));

  // Multi-round robustness.
  {
    const std::filesystem::path csv = eval_dir / (is_aggregate ? "rounds_mean.csv" : "rounds.csv");
    if (table_section("Strict success by training round", csv)) {
      const CsvTable t = read_csv(csv);
      const int rc = t.col("round");
      const int pc = t.col(is_aggregate ? "strict_mean" : "strict_pct");
      Series s{"strict %", {}};
      for (const auto& row : t.rows) s.pts.push_back({std::stod(row[rc]), std::stod(row[pc])});
      figure("rounds", svg_chart({s}, "Strict attack success vs round", "round", "strict %", true));
    }
  }

  // Uncertainty vs gold scatter and correlations (per-run only).
  if (!is_aggregate) {
    md += "\n## Uncertainty vs gold score\n\n";
    const std::filesystem::path corr = eval_dir / "correlations.csv";
    if (std::filesystem::exists(corr))
      md += detail::md_table(detail::rounded(read_csv(corr)));
    else
      missing(corr);
    const auto scatter = [&](const char* file, const char* name, const char* title) {
      const std::filesystem::path csv = eval_dir / file;
      if (!std::filesystem::exists(csv)) {
        missing(csv);
        return;
      }
      const CsvTable t = read_csv(csv);
      const int uc = t.col("u"), gc = t.col("gold");
      Series s{"samples", {}};
      for (const auto& row : t.rows) s.pts.push_back({std::stod(row[uc]), std::stod(row[gc])});
      figure(name, svg_chart({s}, title, "ensemble disagreement", "gold score", false));
    };
    scatter("fig1_sft.csv", "scatter_sft", "Reference responses only");
    scatter("fig1_adv.csv", "scatter_adv", "References + adversarial responses");
  } else {
    table_section("Uncertainty-gold correlations per seed", eval_dir / "correlations_all.csv");
  }

  // Pair-budget sweep.
  table_section("Adversarial pair budget sweep",
                eval_dir / (is_aggregate ? "budget_mean.csv" : "budget_sweep.csv"));

  // Mechanism ablations.
  table_section("Attack mechanism ablations",
                eval_dir / (is_aggregate ? "ablations_mean.csv" : "ablations.csv"));

  // Downstream policy optimization.
  table_section("Downstream policy optimization",
                eval_dir / (is_aggregate ? "downstream_all.csv" : "downstream.csv"));
  if (!is_aggregate) {
    std::vector<Series> curves;
    static const char* kMethods[] = {"baseline", "ens_mean", "ens_std", "rrm", "advrm"};
    for (const char* method : kMethods) {
      const std::filesystem::path trace = dir / "policy" / (std::string(method) + "_trace.csv");
      if (!std::filesystem::exists(trace)) continue;
      const CsvTable t = read_csv(trace);
      const int sc = t.col("step"), gc = t.col("mean_gold_reward");
      Series s{method, {}};
      for (const auto& row : t.rows) s.pts.push_back({std::stod(row[sc]), std::stod(row[gc])});
      curves.push_back(std::move(s));
    }
    if (!curves.empty())
      figure("gold_curves",
             svg_chart(curves, "Gold score during policy optimization", "step", "gold score", true));

    // Per-round attack dynamics: proxy and probe RM scores over attack steps.
    md += "\n## Attack optimization dynamics\n";
    std::vector<Series> r1s, r2s;
    for (int r = 0; r < 16; ++r) {
      const std::filesystem::path trace =
          dir / ("round" + std::to_string(r)) / "attack_trace_p0.csv";
      if (!std::filesystem::exists(trace)) break;
      const CsvTable t = read_csv(trace);
      const int sc = t.col("step"), c1 = t.col("mean_r1"), c2 = t.col("mean_r2");
      Series s1{"round " + std::to_string(r) + " target", {}};
      Series s2{"round " + std::to_string(r) + " probe", {}};
      for (const auto& row : t.rows) {
        s1.pts.push_back({std::stod(row[sc]), std::stod(row[c1])});
        s2.pts.push_back({std::stod(row[sc]), std::stod(row[c2])});
      }
      r1s.push_back(std::move(s1));
      r2s.push_back(std::move(s2));
    }
    if (!r1s.empty()) {
      std::vector<Series> both = r1s;
      both.insert(both.end(), r2s.begin(), r2s.end());
      figure("attack_traces",
             svg_chart(both, "Attack reward per step (target vs probe RM)", "step",
                       "mean normalized score", true));
    } else {
      md += "\nMISSING: `round0/attack_trace_p0.csv`\n";
    }

    // Dominance bookkeeping across rounds.
    md += "\n## Constrained-reward dominance check\n\n";
    bool any_round = false;
    for (int r = 0; r < 16; ++r) {
      const std::filesystem::path rep = dir / ("round" + std::to_string(r)) / "report.json";
      if (!std::filesystem::exists(rep)) break;
      any_round = true;
      const nlohmann::json j = nlohmann::json::parse(read_file(rep));
      md += "- round " + std::to_string(r) + ": " +
            std::to_string(j.at("dominance_violations").get<int>()) +
            " per-prompt violations (penalized reward exceeding an accepted reward)\n";
    }
    if (!any_round) md += "MISSING: `round0/report.json`\n";
  }

  write_file(out / "index.md", md);
}

}  // namespace advrm
