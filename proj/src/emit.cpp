#include "gtnp/emit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace gtnp {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

// fixed formatting keeps the SVG text stable
std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double W = 640, H = 420, L = 70, R = 20, T = 30, B = 50;

  double px(double x) const { return L + (x - x0) / (x1 - x0) * (W - L - R); }
  double py(double y) const { return H - B - (y - y0) / (y1 - y0) * (H - T - B); }
};

Frame make_frame(const std::vector<double>& xs, const std::vector<double>& ys) {
  Frame f{0, 1, 0, 1};
  if (xs.empty()) return f;
  auto [xa, xb] = std::minmax_element(xs.begin(), xs.end());
  auto [ya, yb] = std::minmax_element(ys.begin(), ys.end());
  f = {*xa, *xb, *ya, *yb};
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double p = span > 0 ? 0.08 * span : std::max(1e-3, 0.1 * std::abs(lo));
    lo -= p;
    hi += p;
  };
  pad(f.x0, f.x1);
  pad(f.y0, f.y1);
  return f;
}

std::string axes(const Frame& f, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(Frame::W, 0) << "\" height=\"" << fmt(Frame::H, 0)
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << fmt(Frame::W / 2) << "\" y=\"18\" text-anchor=\"middle\">" << escape(title) << "</text>\n";
  const double xl = Frame::L, xr = Frame::W - Frame::R, yt = Frame::T, yb = Frame::H - Frame::B;
  s << "<path d=\"M" << fmt(xl) << ' ' << fmt(yt) << " L" << fmt(xl) << ' ' << fmt(yb) << " L" << fmt(xr) << ' '
    << fmt(yb) << "\" stroke=\"black\" fill=\"none\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << fmt(f.px(xv)) << "\" y=\"" << fmt(yb + 16) << "\" text-anchor=\"middle\">" << fmt(xv, 3)
      << "</text>\n";
    s << "<text x=\"" << fmt(xl - 6) << "\" y=\"" << fmt(f.py(yv) + 4) << "\" text-anchor=\"end\">" << fmt(yv, 3)
      << "</text>\n";
  }
  s << "<text x=\"" << fmt((xl + xr) / 2) << "\" y=\"" << fmt(Frame::H - 12) << "\" text-anchor=\"middle\">"
    << escape(xlabel) << "</text>\n";
  s << "<text x=\"14\" y=\"" << fmt((yt + yb) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
    << fmt((yt + yb) / 2) << ")\">" << escape(ylabel) << "</text>\n";
  return s.str();
}

const char* colour(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  return palette[i % 7];
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  auto out = open_out(path);
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.split << ',' << num(r.loglik) << ',' << num(r.loglik_stderr) << ',' << num(r.rmse)
        << ',' << num(r.rmse_stderr) << ',' << num(r.fpt_ms) << ',' << r.params << '\n';
  }
  finish(out, path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("'" + path + "' lacks the metrics header");
  std::vector<MetricsRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 8) throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": expected 8 columns");
    try {
      rows.push_back({std::stoull(c[0]), c[1], std::stod(c[2]), std::stod(c[3]), std::stod(c[4]), std::stod(c[5]),
                      std::stod(c[6]), std::stoull(c[7])});
    } catch (const std::exception&) {
      throw FormatError("'" + path + "' line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

void write_task_records_csv(const std::string& path, const std::vector<TaskRecord>& records) {
  auto out = open_out(path);
  out << "task,loglik,rmse,targets\n";
  for (const auto& r : records) out << r.task << ',' << num(r.loglik) << ',' << num(r.rmse) << ',' << r.targets << '\n';
  finish(out, path);
}

void write_errors_csv(const std::string& path, const std::vector<double>& errors) {
  auto out = open_out(path);
  out << "normalized_error\n";
  for (double e : errors) out << num(e) << '\n';
  finish(out, path);
}

std::string scatter_svg(const std::vector<LabelledMetrics>& series) {
  struct Point {
    std::string label;
    double x, y;
  };
  std::vector<Point> pts;
  for (const auto& s : series) {
    for (auto it = s.rows.rbegin(); it != s.rows.rend(); ++it) {
      if (std::isfinite(it->fpt_ms) && std::isfinite(it->loglik)) {
        pts.push_back({s.label, it->fpt_ms, it->loglik});
        break;
      }
    }
  }
  std::vector<double> xs, ys;
  for (const auto& p : pts) {
    xs.push_back(p.x);
    ys.push_back(p.y);
  }
  const auto f = make_frame(xs, ys);
  std::string svg = axes(f, "Test log-likelihood vs forward pass time", "forward pass time (ms, batch of 8)", "log-lik");
  std::ostringstream s;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    s << "<circle class=\"point\" cx=\"" << fmt(f.px(pts[i].x)) << "\" cy=\"" << fmt(f.py(pts[i].y))
      << "\" r=\"5\" fill=\"" << colour(i) << "\"/>\n";
    s << "<text class=\"label\" x=\"" << fmt(f.px(pts[i].x) + 8) << "\" y=\"" << fmt(f.py(pts[i].y) - 6) << "\">"
      << escape(pts[i].label) << "</text>\n";
  }
  if (pts.empty()) s << "<text x=\"320\" y=\"210\" text-anchor=\"middle\">no timed rows</text>\n";
  return svg + s.str() + "</svg>\n";
}

std::string learning_curve_svg(const std::vector<LabelledMetrics>& series) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    for (const auto& r : s.rows) {
      if (r.split == "val" && std::isfinite(r.loglik)) {
        xs.push_back(double(r.iteration));
        ys.push_back(r.loglik);
      }
    }
  }
  const auto f = make_frame(xs, ys);
  std::string svg = axes(f, "Validation log-likelihood", "iteration", "log-lik");
  std::ostringstream s;
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string d;
    for (const auto& r : series[i].rows) {
      if (r.split != "val" || !std::isfinite(r.loglik)) continue;
      d += (d.empty() ? "M" : " L") + fmt(f.px(double(r.iteration))) + " " + fmt(f.py(r.loglik));
    }
    if (d.empty()) continue;
    s << "<path class=\"curve\" d=\"" << d << "\" stroke=\"" << colour(i) << "\" fill=\"none\" stroke-width=\"1.5\"/>\n";
    s << "<text x=\"" << fmt(Frame::W - Frame::R - 4) << "\" y=\"" << fmt(Frame::T + 14 * (i + 1))
      << "\" text-anchor=\"end\" fill=\"" << colour(i) << "\">" << escape(series[i].label) << "</text>\n";
  }
  if (xs.empty()) s << "<text x=\"320\" y=\"210\" text-anchor=\"middle\">no validation rows</text>\n";
  return svg + s.str() + "</svg>\n";
}

void plot_metrics(const std::vector<std::string>& csv_paths, const std::string& out_dir) {
  std::vector<LabelledMetrics> series;
  for (const auto& p : csv_paths) {
    const std::filesystem::path path(p);
    std::string label = path.parent_path().filename().string();
    if (label.empty()) label = path.stem().string();
    series.push_back({label, read_metrics_csv(p)});
  }
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path out(out_dir);
  for (const auto& [name, text] : {std::pair{"scatter.svg", scatter_svg(series)},
                                   std::pair{"learning_curve.svg", learning_curve_svg(series)}}) {
    const auto path = (out / name).string();
    auto f = open_out(path);
    f << text;
    finish(f, path);
  }
}

}  // namespace gtnp
