#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "flobloch/error.hpp"

namespace flobloch {

namespace fs = std::filesystem;

// Writes path via a sibling temp file and a rename, so readers never see a
// half-written file.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    os.flush();
    if (!os) throw Error(ErrorKind::Io, "write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorKind::Io, "cannot rename " + tmp.string() + " to " + path.string());
  }
}

// Files written for one run; on failure they are removed again.
class ArtifactSet {
 public:
  explicit ArtifactSet(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

  void write(const std::string& name, const std::string& content) {
    write_file_atomic(dir_ / name, content);
    if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
  }

  void discard() {
    std::error_code ec;
    for (const auto& f : files_) fs::remove(dir_ / f, ec);
    files_.clear();
  }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

struct CarpetAxes {
  std::string x_label = "Theta";
  std::string y_label = "t";
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;
  std::string title;
};

namespace detail {

inline std::array<int, 3> viridis(double v) {
  static constexpr double anchors[9][3] = {
      {68, 1, 84},    {71, 44, 122},  {59, 81, 139},   {44, 113, 142}, {33, 144, 141},
      {39, 173, 129}, {92, 200, 99},  {170, 220, 50},  {253, 231, 37},
  };
  v = std::clamp(v, 0.0, 1.0) * 8.0;
  const int i = std::min(7, static_cast<int>(v));
  const double fr = v - i;
  std::array<int, 3> c{};
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<int>(std::lround(anchors[i][k] + fr * (anchors[i + 1][k] - anchors[i][k])));
  return c;
}

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

}  // namespace detail

// Averages blocks so the matrix has at most max_rows x max_cols cells.
inline std::vector<std::vector<double>> block_average(const std::vector<std::vector<double>>& m,
                                                      std::size_t max_rows, std::size_t max_cols) {
  if (m.empty()) return m;
  const std::size_t R = m.size(), C = m.front().size();
  const std::size_t rb = (R + max_rows - 1) / max_rows, cb = (C + max_cols - 1) / max_cols;
  if (rb <= 1 && cb <= 1) return m;
  std::vector<std::vector<double>> out;
  for (std::size_t r0 = 0; r0 < R; r0 += rb) {
    std::vector<double> row;
    for (std::size_t c0 = 0; c0 < C; c0 += cb) {
      double acc = 0.0;
      std::size_t cnt = 0;
      for (std::size_t r = r0; r < std::min(R, r0 + rb); ++r)
        for (std::size_t c = c0; c < std::min(C, c0 + cb); ++c, ++cnt) acc += m[r][c];
      row.push_back(acc / static_cast<double>(cnt));
    }
    out.push_back(std::move(row));
  }
  return out;
}

// Heatmap: row i is the i-th time (drawn bottom to top), column j the j-th
// angle bin.
inline std::string emit_carpet(const std::vector<std::vector<double>>& rows, const CarpetAxes& axes) {
  if (rows.size() < 2 || rows.front().size() < 2)
    throw Error(ErrorKind::Dimension, "carpet needs at least 2 rows and 2 columns");
  const std::size_t R = rows.size(), C = rows.front().size();
  double vmax = 0.0;
  for (const auto& row : rows) {
    if (row.size() != C) throw Error(ErrorKind::Dimension, "carpet rows differ in length");
    for (double v : row) {
      if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "carpet value is not finite");
      vmax = std::max(vmax, v);
    }
  }
  const double left = 70, right = 20, top = 30, bottom = 50, W = 600, H = 400;
  const double cw = W / static_cast<double>(C), ch = H / static_cast<double>(R);
  using detail::fmt;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt("%.0f", left + W + right) << "\" height=\""
    << fmt("%.0f", top + H + bottom) << "\" shape-rendering=\"crispEdges\">\n";
  s << "<!-- colormap: viridis, 9 anchors, piecewise linear; value = density / max (max = "
    << fmt("%.6e", vmax) << "); rows = " << R << " times, bottom to top; columns = " << C << " angle bins -->\n";
  s << "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t r = 0; r < R; ++r) {
    const double y = top + H - static_cast<double>(r + 1) * ch;
    for (std::size_t c = 0; c < C; ++c) {
      const auto col = detail::viridis(vmax > 0 ? rows[r][c] / vmax : 0.0);
      s << "<rect x=\"" << fmt("%.3f", left + static_cast<double>(c) * cw) << "\" y=\"" << fmt("%.3f", y)
        << "\" width=\"" << fmt("%.3f", cw) << "\" height=\"" << fmt("%.3f", ch) << "\" fill=\"rgb(" << col[0]
        << ',' << col[1] << ',' << col[2] << ")\"/>\n";
    }
  }
  s << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << W << "\" height=\"" << H
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = k / 4.0;
    const double x = left + fx * W;
    const double y = top + H - fx * H;
    s << "<line x1=\"" << fmt("%.1f", x) << "\" y1=\"" << top + H << "\" x2=\"" << fmt("%.1f", x) << "\" y2=\""
      << top + H + 5 << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << fmt("%.1f", x) << "\" y=\"" << top + H + 18
      << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt("%.4g", axes.x_min + fx * (axes.x_max - axes.x_min))
      << "</text>\n";
    s << "<line x1=\"" << left - 5 << "\" y1=\"" << fmt("%.1f", y) << "\" x2=\"" << left << "\" y2=\""
      << fmt("%.1f", y) << "\" stroke=\"black\"/>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << fmt("%.1f", y + 4)
      << "\" font-size=\"11\" text-anchor=\"end\">" << fmt("%.4g", axes.y_min + fx * (axes.y_max - axes.y_min))
      << "</text>\n";
  }
  s << "<text x=\"" << left + W / 2 << "\" y=\"" << top + H + 40 << "\" font-size=\"13\" text-anchor=\"middle\">"
    << detail::xml_escape(axes.x_label) << "</text>\n";
  s << "<text x=\"18\" y=\"" << top + H / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << top + H / 2 << ")\">" << detail::xml_escape(axes.y_label) << "</text>\n";
  if (!axes.title.empty())
    s << "<text x=\"" << left + W / 2 << "\" y=\"20\" font-size=\"13\" text-anchor=\"middle\">"
      << detail::xml_escape(axes.title) << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

// Formats a double with 17 significant digits (round-trip exact).
inline std::string csv_number(double v) { return detail::fmt("%.17g", v); }

}  // namespace flobloch
