#include "rlab/report/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"

namespace rlab::report {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 55;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
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

std::string num(double v) { return fmt::format("{:.2f}", v); }

struct Range {
  double lo = 0, hi = 1;
};

Range padded(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) return {0, 1};
  if (hi - lo < 1e-12) return {lo - 0.5, hi + 0.5};
  return {lo, hi};
}

}  // namespace

std::string render_svg(const Plot& plot) {
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  std::vector<double> categories;
  for (const auto& s : plot.series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i]);
      yhi = std::max(yhi, s.y[i]);
      categories.push_back(s.x[i]);
    }
  }
  const bool empty = categories.empty();
  std::sort(categories.begin(), categories.end());
  categories.erase(std::unique(categories.begin(), categories.end()), categories.end());
  if (plot.type == PlotType::bars && !empty) ylo = std::min(ylo, 0.0);
  const Range xr = padded(xlo, xhi);
  const Range yr = padded(ylo, yhi);

  auto sx = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto sy = [&](double y) { return kTop + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      kWidth, kHeight);
  out += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth, kHeight);
  out += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                     num(kLeft + pw / 2), escape(plot.title));
  out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
                     num(kLeft), num(kTop), num(pw), num(ph));
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", num(kLeft + pw / 2),
                     num(kHeight - 12), escape(plot.x_label));
  out += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                     num(kTop + ph / 2), escape(plot.y_label));

  if (empty) {
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#b00\">no data</text>\n",
                       num(kLeft + pw / 2), num(kTop + ph / 2));
    out += "</svg>\n";
    return out;
  }

  for (int i = 0; i <= 4; ++i) {
    const double y = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    out += fmt::format("<line x1=\"{0}\" x2=\"{1}\" y1=\"{2}\" y2=\"{2}\" stroke=\"#ddd\"/>\n", num(kLeft),
                       num(kLeft + pw), num(sy(y)));
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", num(kLeft - 6),
                       num(sy(y) + 4), y);
  }

  const std::size_t n_series = plot.series.size();
  if (plot.type == PlotType::line) {
    for (double c : categories) {
      out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:g}</text>\n", num(sx(c)),
                         num(kTop + ph + 16), c);
    }
    for (std::size_t k = 0; k < n_series; ++k) {
      const auto& s = plot.series[k];
      std::string points;
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        if (!points.empty()) points += ' ';
        points += num(sx(s.x[i])) + "," + num(sy(s.y[i]));
      }
      out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                         kPalette[k % std::size(kPalette)], points);
    }
  } else {
    const double slot = pw / static_cast<double>(categories.size());
    const double bar = slot * 0.8 / static_cast<double>(std::max<std::size_t>(1, n_series));
    const double base = sy(std::clamp(0.0, yr.lo, yr.hi));
    for (std::size_t ci = 0; ci < categories.size(); ++ci) {
      out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:g}</text>\n",
                         num(kLeft + slot * (static_cast<double>(ci) + 0.5)), num(kTop + ph + 16), categories[ci]);
    }
    for (std::size_t k = 0; k < n_series; ++k) {
      const auto& s = plot.series[k];
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        const auto ci = static_cast<std::size_t>(
            std::lower_bound(categories.begin(), categories.end(), s.x[i]) - categories.begin());
        const double x0 = kLeft + slot * static_cast<double>(ci) + slot * 0.1 + bar * static_cast<double>(k);
        const double y1 = sy(s.y[i]);
        out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n", num(x0),
                           num(std::min(y1, base)), num(bar), num(std::abs(base - y1)),
                           kPalette[k % std::size(kPalette)]);
      }
    }
  }

  for (std::size_t k = 0; k < n_series; ++k) {
    const double y = kTop + 10 + 18 * static_cast<double>(k);
    out += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", num(kWidth - kRight + 12),
                       num(y - 10), kPalette[k % std::size(kPalette)]);
    out += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", num(kWidth - kRight + 30), num(y),
                       escape(plot.series[k].name));
  }
  out += "</svg>\n";
  return out;
}

Plot plot_from_csv(const CsvTable& table, const PlotSpec& spec) {
  Plot plot;
  plot.type = spec.type;
  plot.title = spec.title;
  plot.x_label = spec.x_column;
  plot.y_label = spec.y_column;
  if (table.columns.empty()) return plot;
  const std::size_t xc = table.column(spec.x_column);
  const std::size_t yc = table.column(spec.y_column);
  const std::size_t sc = spec.series_column.empty() ? 0 : table.column(spec.series_column);
  const std::size_t fc = spec.filter_column.empty() ? 0 : table.column(spec.filter_column);
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<double, double>>> points;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (!spec.filter_column.empty() && table.rows[r][fc] != spec.filter_value) continue;
    const std::string name = spec.series_column.empty() ? spec.y_column : table.rows[r][sc];
    if (!points.contains(name)) order.push_back(name);
    points[name].emplace_back(table.number(r, table.columns[xc]), table.number(r, table.columns[yc]));
  }
  for (const auto& name : order) {
    auto pts = points[name];
    std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    Series s{name, {}, {}};
    for (const auto& [x, y] : pts) {
      s.x.push_back(x);
      s.y.push_back(y);
    }
    plot.series.push_back(std::move(s));
  }
  return plot;
}

void emit_plot(const std::filesystem::path& csv, const PlotSpec& spec, const std::filesystem::path& svg) {
  write_text(svg, render_svg(plot_from_csv(read_csv(csv), spec)));
}

}  // namespace rlab::report
