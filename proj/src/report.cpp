#include "mein/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mein {

namespace {

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string join(const CsvRow& row) {
  std::string line;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) line += ',';
    line += quote(row[i]);
  }
  return line;
}

CsvRow split(const std::string& line) {
  CsvRow out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        out.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.emplace_back();
    } else {
      out.back() += ch;
    }
  }
  return out;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<CsvRow>& rows, bool append) {
  const bool existing = append && std::filesystem::exists(path);
  if (existing) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (split(first) != header) {
      throw std::runtime_error(path.string() + ": existing CSV has a different column set");
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | (existing ? std::ios::app : std::ios::trunc));
  if (!out) throw std::runtime_error("cannot write " + path.string());
  if (!existing) out << join(header) << '\n';
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw std::logic_error("CSV row width does not match header");
    out << join(row) << '\n';
  }
}

std::vector<CsvRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<CsvRow> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(split(line));
  return rows;
}

std::string format_fixed(std::optional<double> value, int decimals) {
  if (!value) return {};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *value);
  return buf;
}

std::string line_plot_svg(const std::vector<PlotSeries>& series, const std::string& title,
                          const std::string& x_label, const std::string& y_label) {
  constexpr double kWidth = 640, kHeight = 420;
  constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;

  double lx_min = INFINITY, lx_max = -INFINITY, y_min = INFINITY, y_max = -INFINITY;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      if (p.x <= 0) continue;
      lx_min = std::min(lx_min, std::log10(p.x));
      lx_max = std::max(lx_max, std::log10(p.x));
      y_min = std::min(y_min, p.y - p.spread);
      y_max = std::max(y_max, p.y + p.spread);
    }
  }
  if (!std::isfinite(lx_min)) {
    lx_min = 0;
    lx_max = 1;
    y_min = 0;
    y_max = 1;
  }
  lx_min = std::floor(lx_min);
  lx_max = std::max(std::ceil(lx_max), lx_min + 1);
  const double pad = std::max(0.5, 0.1 * (y_max - y_min));
  y_min = std::max(0.0, y_min - pad);
  y_max += pad;

  auto sx = [&](double x) { return kLeft + (std::log10(x) - lx_min) / (lx_max - lx_min) * plot_w; };
  auto sy = [&](double y) { return kTop + (y_max - y) / (y_max - y_min) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
      << escape_xml(title) << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int e = static_cast<int>(lx_min); e <= static_cast<int>(lx_max); ++e) {
    const double x = kLeft + (e - lx_min) / (lx_max - lx_min) * plot_w;
    svg << "<line x1=\"" << num(x) << "\" y1=\"" << kTop << "\" x2=\"" << num(x) << "\" y2=\""
        << kTop + plot_h << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << num(x) << "\" y=\"" << kTop + plot_h + 18
        << "\" text-anchor=\"middle\">1e" << e << "</text>\n";
  }
  constexpr int kYTicks = 5;
  for (int i = 0; i <= kYTicks; ++i) {
    const double v = y_min + (y_max - y_min) * i / kYTicks;
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << num(sy(v)) << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
        << num(sy(v)) << "\" stroke=\"#eee\"/>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(sy(v) + 4) << "\" text-anchor=\"end\">" << num(v)
        << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">"
      << escape_xml(x_label) << "</text>\n";
  svg << "<text transform=\"translate(18," << kTop + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape_xml(y_label) << "</text>\n";

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd"};
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto color = colors[k % std::size(colors)];
    std::vector<PlotPoint> pts;
    for (const auto& p : series[k].points)
      if (p.x > 0) pts.push_back(p);
    std::sort(pts.begin(), pts.end(), [](const PlotPoint& a, const PlotPoint& b) { return a.x < b.x; });
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts) svg << num(sx(p.x)) << ',' << num(sy(p.y)) << ' ';
    svg << "\"/>\n";
    for (const auto& p : pts) {
      if (p.spread > 0) {
        svg << "<line x1=\"" << num(sx(p.x)) << "\" y1=\"" << num(sy(p.y - p.spread)) << "\" x2=\""
            << num(sx(p.x)) << "\" y2=\"" << num(sy(p.y + p.spread)) << "\" stroke=\"" << color << "\"/>\n";
      }
      svg << "<circle cx=\"" << num(sx(p.x)) << "\" cy=\"" << num(sy(p.y)) << "\" r=\"4\" fill=\"" << color
          << "\"/>\n";
    }
    svg << "<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 16 + 16 * k << "\" fill=\"" << color << "\">"
        << escape_xml(series[k].label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace mein
