#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mein {

using CsvRow = std::vector<std::string>;

/// Writes `rows` under `header`. When `append` is set and the file already
/// exists, its header must match and rows are added at the end.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<CsvRow>& rows, bool append = false);

std::vector<CsvRow> read_csv(const std::filesystem::path& path);

/// Fixed-point text for a value, or "" when absent.
std::string format_fixed(std::optional<double> value, int decimals);

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  double spread = 0.0;  // half-height of the error bar
};

struct PlotSeries {
  std::string label;
  std::vector<PlotPoint> points;
};

/// Line chart with a base-10 logarithmic x axis. Points with x <= 0 are
/// left out.
std::string line_plot_svg(const std::vector<PlotSeries>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace mein
