#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rlab/report/csv.hpp"

namespace rlab::report {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

enum class PlotType { line, bars };

struct Plot {
  PlotType type = PlotType::line;
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;  // bars: grouped per x value, one bar per series
};

std::string render_svg(const Plot& plot);

// Which CSV columns feed a plot. An empty series column gives a single series.
struct PlotSpec {
  PlotType type = PlotType::line;
  std::string title;
  std::string x_column;
  std::string y_column;
  std::string series_column;
  // Only rows whose `filter_column` equals `filter_value` (when set).
  std::string filter_column;
  std::string filter_value;
};

// Series appear in first-seen order; x values are sorted within a series.
Plot plot_from_csv(const CsvTable& table, const PlotSpec& spec);

void emit_plot(const std::filesystem::path& csv, const PlotSpec& spec, const std::filesystem::path& svg);

}  // namespace rlab::report
