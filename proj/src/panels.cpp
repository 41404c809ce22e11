#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "metasim/cli_io.hpp"

namespace metasim {

namespace fs = std::filesystem;

std::string to_string(PanelMetric m) {
  switch (m) {
    case PanelMetric::kBiasTau2: return "bias_tau2";
    case PanelMetric::kBiasTheta: return "bias_theta";
    case PanelMetric::kCoverage: return "coverage";
  }
  return "?";
}

PanelMetric parse_panel_metric(const std::string& text) {
  for (auto m : {PanelMetric::kBiasTau2, PanelMetric::kBiasTheta, PanelMetric::kCoverage}) {
    if (to_string(m) == text) return m;
  }
  throw std::invalid_argument("unknown metric '" + text +
                              "' (expected bias_tau2, bias_theta or coverage)");
}

namespace {

struct Row {
  DgmKind dgm;
  int K;
  int n;
  double theta;
  double tau2;
  double p_c;
  double sigma2;
  std::string estimator;
  std::string value;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool same(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

std::vector<double> distinct(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end(), same), v.end());
  return v;
}

std::vector<double> select(const std::vector<double>& present, const std::optional<double>& want,
                           const char* axis, std::ostream& err) {
  if (!want) return present;
  for (double v : present) {
    if (same(v, *want)) return {v};
  }
  err << "level=warn event=absent_value axis=" << axis << " value=" << format_number(*want)
      << '\n';
  return {*want};
}

std::string sanitize(std::string s) {
  for (auto& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) c = 'p';
  }
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

std::vector<PanelFigure> build_panels(std::istream& metric_csv, const PanelSpec& spec,
                                      std::ostream& err) {
  std::string line;
  if (!std::getline(metric_csv, line) || line != kMetricHeader) {
    throw std::runtime_error("metric file does not start with the expected header");
  }
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(metric_csv, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 11) {
      throw std::runtime_error("metric file line " + std::to_string(line_no) +
                               ": expected 11 columns");
    }
    if (c[7] != spec.estimator) continue;
    rows.push_back({parse_dgm(c[0]), std::stoi(c[1]), std::stoi(c[2]), std::stod(c[3]),
                    std::stod(c[4]), std::stod(c[5]), std::stod(c[6]), c[7], c[8]});
  }
  if (rows.empty()) {
    err << "level=warn event=no_rows estimator=" << spec.estimator << '\n';
    return {};
  }

  std::vector<double> thetas, pcs, sigmas;
  std::set<int> ns, ks;
  std::vector<double> taus;
  for (const auto& r : rows) {
    thetas.push_back(r.theta);
    pcs.push_back(r.p_c);
    taus.push_back(r.tau2);
    ns.insert(r.n);
    ks.insert(r.K);
    if (!is_fixed_intercept(r.dgm)) sigmas.push_back(r.sigma2);
  }
  if (sigmas.empty()) sigmas.push_back(0.0);
  taus = distinct(taus);

  std::vector<PanelFigure> figures;
  for (double th : select(distinct(thetas), spec.theta, "theta", err)) {
    for (double pc : select(distinct(pcs), spec.p_c, "p_c", err)) {
      for (double s2 : select(distinct(sigmas), spec.sigma2, "sigma2", err)) {
        PanelFigure fig;
        fig.theta = th;
        fig.p_c = pc;
        fig.sigma2 = s2;
        fig.stem = sanitize(to_string(spec.metric) + "_" + spec.estimator + "_theta" + fmt(th) +
                            "_pc" + fmt(pc) + "_sigma2" + fmt(s2));
        std::map<std::tuple<int, int, double, int>, std::string> cells;
        for (const auto& r : rows) {
          if (!same(r.theta, th) || !same(r.p_c, pc)) continue;
          if (!is_fixed_intercept(r.dgm) && !same(r.sigma2, s2)) continue;
          const auto key = std::make_tuple(r.n, r.K, r.tau2, static_cast<int>(r.dgm));
          if (!cells.emplace(key, r.value).second) {
            throw std::runtime_error("duplicate metric row for one panel cell");
          }
        }
        if (cells.empty()) {
          err << "level=warn event=empty_figure stem=" << fig.stem << '\n';
        }
        for (const auto& [key, value] : cells) {
          const auto& [n, K, tau2, dgm] = key;
          fig.points.push_back({n, K, tau2, static_cast<DgmKind>(dgm), value});
        }
        figures.push_back(std::move(fig));
      }
    }
  }
  return figures;
}

std::string panel_csv(const PanelFigure& fig) {
  std::string out = "facet_n,facet_K,tau2,dgm,value\n";
  for (const auto& p : fig.points) {
    out += std::to_string(p.facet_n) + "," + std::to_string(p.facet_K) + "," +
           format_number(p.tau2) + "," + to_string(p.dgm) + "," + p.value + "\n";
  }
  return out;
}

namespace {

constexpr double kPanelW = 220.0;
constexpr double kPanelH = 160.0;
constexpr double kMarginL = 60.0;
constexpr double kMarginT = 60.0;
constexpr double kGap = 40.0;

const char* colour(DgmKind d) {
  switch (d) {
    case DgmKind::kFIM1: return "#1f77b4";
    case DgmKind::kFIM2: return "#ff7f0e";
    case DgmKind::kRIM1: return "#2ca02c";
    case DgmKind::kRIM2: return "#d62728";
    case DgmKind::kURIM1: return "#9467bd";
  }
  return "#000000";
}

std::string glyph(DgmKind d, double x, double y) {
  std::ostringstream os;
  const char* c = colour(d);
  constexpr double r = 3.5;
  switch (d) {
    case DgmKind::kFIM1:
      os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << r
         << "\" fill=\"none\" stroke=\"" << c << "\"/>";
      break;
    case DgmKind::kFIM2:
      os << "<polygon points=\"" << x << "," << y - r << " " << x - r << "," << y + r << " "
         << x + r << "," << y + r << "\" fill=\"none\" stroke=\"" << c << "\"/>";
      break;
    case DgmKind::kRIM1:
      os << "<path d=\"M" << x - r << " " << y << "H" << x + r << "M" << x << " " << y - r << "V"
         << y + r << "\" stroke=\"" << c << "\"/>";
      break;
    case DgmKind::kRIM2:
      os << "<path d=\"M" << x - r << " " << y - r << "L" << x + r << " " << y + r << "M"
         << x - r << " " << y + r << "L" << x + r << " " << y - r << "\" stroke=\"" << c
         << "\"/>";
      break;
    case DgmKind::kURIM1:
      os << "<polygon points=\"" << x << "," << y - r << " " << x + r << "," << y << " " << x
         << "," << y + r << " " << x - r << "," << y << "\" fill=\"none\" stroke=\"" << c
         << "\"/>";
      break;
  }
  return os.str();
}

std::optional<double> numeric(const std::string& s) {
  if (s.empty() || s == "NA") return std::nullopt;
  try {
    const double v = std::stod(s);
    return std::isfinite(v) ? std::optional<double>(v) : std::nullopt;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

std::string panel_svg(const PanelFigure& fig, const PanelSpec& spec) {
  std::set<int> ns, ks;
  std::set<DgmKind> dgms;
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  bool first_x = true, first_y = true;
  for (const auto& p : fig.points) {
    ns.insert(p.facet_n);
    ks.insert(p.facet_K);
    dgms.insert(p.dgm);
    if (first_x) {
      xmin = xmax = p.tau2;
      first_x = false;
    }
    xmin = std::min(xmin, p.tau2);
    xmax = std::max(xmax, p.tau2);
    if (const auto v = numeric(p.value)) {
      if (first_y) {
        ymin = ymax = *v;
        first_y = false;
      }
      ymin = std::min(ymin, *v);
      ymax = std::max(ymax, *v);
    }
  }
  if (spec.metric == PanelMetric::kCoverage) {
    ymin = first_y ? spec.nominal : std::min(ymin, spec.nominal);
    ymax = first_y ? spec.nominal : std::max(ymax, spec.nominal);
  }
  const double span = ymax - ymin;
  const double pad = span > 0.0 ? 0.05 * span : std::max(0.05, 0.05 * std::abs(ymax));
  ymin -= pad;
  ymax += pad;
  if (xmax <= xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }

  const double width = kMarginL + static_cast<double>(ks.size()) * (kPanelW + kGap);
  const double height = kMarginT + static_cast<double>(ns.size()) * (kPanelH + kGap) + 20.0;
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "<text x=\"" << kMarginL << "\" y=\"18\" font-size=\"13\">" << to_string(spec.metric)
     << " " << spec.estimator << "  theta=" << fmt(fig.theta) << " p_c=" << fmt(fig.p_c)
     << " sigma2=" << fmt(fig.sigma2) << "</text>\n";

  double lx = kMarginL;
  for (const auto d : dgms) {
    os << glyph(d, lx, 36.0) << "<text x=\"" << lx + 8 << "\" y=\"40\">" << to_string(d)
       << "</text>\n";
    lx += 70.0;
  }

  std::size_t row = 0;
  for (const int n : ns) {
    std::size_t col = 0;
    for (const int K : ks) {
      const double x0 = kMarginL + static_cast<double>(col) * (kPanelW + kGap);
      const double y0 = kMarginT + static_cast<double>(row) * (kPanelH + kGap);
      auto px = [&](double x) { return x0 + (x - xmin) / (xmax - xmin) * kPanelW; };
      auto py = [&](double y) { return y0 + kPanelH - (y - ymin) / (ymax - ymin) * kPanelH; };

      os << "<g>\n<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << kPanelW
         << "\" height=\"" << kPanelH << "\" fill=\"none\" stroke=\"#888\"/>\n";
      os << "<text x=\"" << x0 + 4 << "\" y=\"" << y0 + 12 << "\">n=" << n << ", K=" << K
         << "</text>\n";
      os << "<text x=\"" << x0 << "\" y=\"" << y0 + kPanelH + 12 << "\">" << fmt(xmin)
         << "</text><text x=\"" << x0 + kPanelW - 20 << "\" y=\"" << y0 + kPanelH + 12 << "\">"
         << fmt(xmax) << "</text>\n";
      os << "<text x=\"" << x0 - 50 << "\" y=\"" << y0 + 10 << "\">" << fmt(ymax)
         << "</text><text x=\"" << x0 - 50 << "\" y=\"" << y0 + kPanelH << "\">" << fmt(ymin)
         << "</text>\n";
      if (spec.metric == PanelMetric::kCoverage) {
        os << "<line x1=\"" << x0 << "\" x2=\"" << x0 + kPanelW << "\" y1=\"" << py(spec.nominal)
           << "\" y2=\"" << py(spec.nominal)
           << "\" stroke=\"#444\" stroke-dasharray=\"4 3\" class=\"nominal\"/>\n";
      } else if (ymin < 0.0 && ymax > 0.0) {
        os << "<line x1=\"" << x0 << "\" x2=\"" << x0 + kPanelW << "\" y1=\"" << py(0.0)
           << "\" y2=\"" << py(0.0) << "\" stroke=\"#ccc\"/>\n";
      }

      for (const auto d : dgms) {
        // Consecutive finite points are joined; a missing or NA cell breaks the line.
        std::vector<std::pair<double, std::optional<double>>> trace;
        for (const auto& p : fig.points) {
          if (p.facet_n == n && p.facet_K == K && p.dgm == d) {
            trace.emplace_back(p.tau2, numeric(p.value));
          }
        }
        std::sort(trace.begin(), trace.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::string path;
        bool pen_down = false;
        for (const auto& [x, y] : trace) {
          if (!y) {
            pen_down = false;
            continue;
          }
          std::ostringstream seg;
          seg.precision(6);
          seg << (pen_down ? "L" : "M") << px(x) << " " << py(*y);
          path += seg.str();
          pen_down = true;
        }
        if (!path.empty()) {
          os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << colour(d) << "\"/>\n";
        }
        for (const auto& [x, y] : trace) {
          if (y) os << glyph(d, px(x), py(*y)) << '\n';
        }
      }
      os << "</g>\n";
      ++col;
    }
    ++row;
  }
  os << "</svg>\n";
  return os.str();
}

int cmd_panels(const fs::path& metrics_dir, const PanelSpec& spec, const fs::path& out_dir,
               std::ostream& err) {
  const fs::path src = metrics_dir / (to_string(spec.metric) + ".csv");
  std::ifstream in(src);
  if (!in) {
    err << "level=error event=input_error msg=\"cannot read " << src.string() << "\"\n";
    return kExitConfig;
  }
  std::vector<PanelFigure> figures;
  try {
    figures = build_panels(in, spec, err);
  } catch (const std::exception& e) {
    err << "level=error event=input_error msg=\"" << e.what() << "\"\n";
    return kExitConfig;
  }
  fs::create_directories(out_dir);
  for (const auto& fig : figures) {
    write_file_atomic(out_dir / (fig.stem + ".csv"), panel_csv(fig));
    write_file_atomic(out_dir / (fig.stem + ".svg"), panel_svg(fig, spec));
  }
  err << "level=info event=panels_written count=" << figures.size() << '\n';
  return kExitOk;
}

}  // namespace metasim
