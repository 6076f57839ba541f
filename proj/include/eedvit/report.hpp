#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "eedvit/errors.hpp"
#include "eedvit/io.hpp"
#include "eedvit/profiler.hpp"

namespace eedvit {

inline constexpr const char* profile_csv_header = "layer,entropy_nats,n_eff,eed_percent,phantom_count,mi_proxy";

inline std::string format_sig9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string profile_csv(const EEDProfile& prof) {
  if (prof.layers.empty()) {
    throw DegenerateInput("cannot export an empty profile");
  }
  std::ostringstream os;
  os << profile_csv_header << '\n';
  for (std::size_t l = 0; l < prof.layers.size(); ++l) {
    const auto& r = prof.layers[l];
    os << l << ',' << format_sig9(r.entropy_nats) << ',' << format_sig9(r.n_eff) << ','
       << format_sig9(r.eed_percent) << ',' << r.phantom_count << ',' << format_sig9(r.mi_proxy_nats) << '\n';
  }
  return os.str();
}

/// Parses a profile CSV written by profile_csv. Eigenvalues are not stored,
/// so the reports carry scalar metrics only; `dim` is recovered from
/// n_eff / eed_percent.
inline EEDProfile parse_profile_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != profile_csv_header) {
    throw FormatError(origin + ": missing or unexpected CSV header");
  }
  EEDProfile prof;
  std::size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      cells.push_back(cell);
    }
    if (cells.size() != 6) {
      throw FormatError(origin + ": expected 6 columns, got " + std::to_string(cells.size()));
    }
    try {
      if (std::stoul(cells[0]) != expected) {
        throw FormatError(origin + ": layer indices must run 0..L-1 in order");
      }
      SpectrumReport r;
      r.entropy_nats = std::stod(cells[1]);
      r.n_eff = std::stod(cells[2]);
      r.eed_percent = std::stod(cells[3]);
      r.phantom_count = std::stoul(cells[4]);
      r.mi_proxy_nats = std::stod(cells[5]);
      if (r.eed_percent > 0.0) {
        r.dim = static_cast<std::size_t>(std::lround(100.0 * r.n_eff / r.eed_percent));
      }
      prof.layers.push_back(std::move(r));
    } catch (const std::invalid_argument&) {
      throw FormatError(origin + ": non-numeric cell in '" + line + "'");
    } catch (const std::out_of_range&) {
      throw FormatError(origin + ": numeric cell out of range in '" + line + "'");
    }
    ++expected;
  }
  if (prof.layers.empty()) {
    throw FormatError(origin + ": profile has no layer rows");
  }
  prof.dim = prof.layers.front().dim;
  return prof;
}

inline EEDProfile read_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_profile_csv(ss.str(), path);
}

/// Standalone SVG line chart of EED% against layer index. The data series is
/// the single <path class="eed"> element, one coordinate pair per layer.
inline std::string profile_svg(const EEDProfile& prof, const std::string& title) {
  if (prof.layers.empty()) {
    throw DegenerateInput("cannot plot an empty profile");
  }
  constexpr double width = 480, height = 300, left = 56, right = 16, top = 36, bottom = 44;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const std::size_t n = prof.layers.size();
  auto x_of = [&](std::size_t l) {
    return left + (n == 1 ? plot_w / 2 : plot_w * static_cast<double>(l) / static_cast<double>(n - 1));
  };
  auto y_of = [&](double pct) { return top + plot_h * (1.0 - std::clamp(pct, 0.0, 100.0) / 100.0); };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto escape = [](const std::string& s) {
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
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
     << escape(title) << "</text>\n";
  for (int pct = 0; pct <= 100; pct += 25) {
    const double y = y_of(pct);
    os << "<line x1=\"" << left << "\" y1=\"" << fmt(y) << "\" x2=\"" << width - right << "\" y2=\"" << fmt(y)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << fmt(y + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << pct << "%</text>\n";
  }
  for (std::size_t l = 0; l < n; ++l) {
    os << "<text x=\"" << fmt(x_of(l)) << "\" y=\"" << height - bottom + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">L" << l << "</text>\n";
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 8
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">layer (" << layer_convention
     << ")</text>\n";
  os << "<path class=\"eed\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" d=\"";
  for (std::size_t l = 0; l < n; ++l) {
    os << (l == 0 ? "M" : " L") << fmt(x_of(l)) << ',' << fmt(y_of(prof.layers[l].eed_percent));
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

/// Writes <stem>.csv and <stem>.svg atomically.
inline void export_profile(const EEDProfile& prof, const std::string& stem, const std::string& title) {
  const std::string csv = profile_csv(prof);
  const std::string svg = profile_svg(prof, title);
  write_text_atomic(stem + ".csv", csv);
  write_text_atomic(stem + ".svg", svg);
}

/// Human-readable key = value summary of one profile, including the
/// measurement conventions.
inline std::string profile_summary(const EEDProfile& prof) {
  const auto b = bottleneck(prof);
  std::ostringstream os;
  os << "layer_convention = " << layer_convention << '\n'
     << "covariance = " << to_string(prof.centering) << '\n'
     << "include_cls = " << (prof.include_cls ? "true" : "false") << '\n'
     << "dataset = " << prof.dataset_tag << '\n'
     << "embed_dim = " << prof.dim << '\n'
     << "probe_images = " << prof.probe_images << '\n'
     << "token_rows = " << prof.token_rows << '\n'
     << "layers = " << prof.layers.size() << '\n'
     << "bottleneck_layer = " << b.argmin_layer << '\n'
     << "min_eed_percent = " << format_sig9(b.min_eed_percent) << '\n'
     << "first_eed_percent = " << format_sig9(b.first_eed_percent) << '\n'
     << "last_eed_percent = " << format_sig9(b.last_eed_percent) << '\n'
     << "u_shape_score = " << format_sig9(b.u_shape_score) << '\n'
     << "generalization_proxy_units = arbitrary (constant fixed to 1)\n";
  return os.str();
}

inline std::string comparison_csv(const ComparisonReport& report) {
  std::ostringstream os;
  os << "rank,profile,min_eed_percent,bottleneck_layer,first_eed_percent,last_eed_percent,u_shape_score,tied\n";
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    os << i + 1 << ',' << r.name << ',' << format_sig9(r.summary.min_eed_percent) << ',' << r.summary.argmin_layer
       << ',' << format_sig9(r.summary.first_eed_percent) << ',' << format_sig9(r.summary.last_eed_percent) << ','
       << format_sig9(r.summary.u_shape_score) << ',' << (r.tied_with_previous ? "yes" : "no") << '\n';
  }
  return os.str();
}

inline std::string comparison_table(const ComparisonReport& report) {
  std::size_t name_w = 7;
  for (const auto& r : report.rows) {
    name_w = std::max(name_w, r.name.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "profile"
     << "  min EED%  layer  first EED%  last EED%  U-score\n";
  for (const auto& r : report.rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << r.name << std::right << std::fixed
       << std::setprecision(2) << std::setw(10) << r.summary.min_eed_percent << std::setw(7)
       << r.summary.argmin_layer << std::setw(12) << r.summary.first_eed_percent << std::setw(11)
       << r.summary.last_eed_percent << std::setw(9) << r.summary.u_shape_score
       << (r.tied_with_previous ? "  (tie)" : "") << '\n';
  }
  if (report.has_ties) {
    os << "note: tied minima are listed in input order\n";
  }
  os << "bottleneck depth ordering: deepest (lowest min EED%) first; " << layer_convention << '\n';
  return os.str();
}

} // namespace eedvit
