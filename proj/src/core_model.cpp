#include "metasim/core_model.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace metasim {

std::string to_string(ZeroCellPolicy policy) {
  switch (policy) {
    case ZeroCellPolicy::kAddHalf: return "add-half";
    case ZeroCellPolicy::kAddHalfKeepAll: return "add-half-all";
    case ZeroCellPolicy::kExclude: return "exclude";
  }
  return "unknown";
}

ZeroCellPolicy parse_zero_cell_policy(const std::string& text) {
  if (text == "add-half") return ZeroCellPolicy::kAddHalf;
  if (text == "add-half-all") return ZeroCellPolicy::kAddHalfKeepAll;
  if (text == "exclude") return ZeroCellPolicy::kExclude;
  throw std::invalid_argument("unknown zero-cell policy '" + text + "'");
}

MetaDataset::MetaDataset(std::vector<Study2x2> studies) : studies_(std::move(studies)) {
  if (studies_.size() < 2) {
    throw std::invalid_argument("a meta-analysis needs at least 2 studies");
  }
  for (std::size_t i = 0; i < studies_.size(); ++i) {
    if (!studies_[i].valid()) {
      throw std::invalid_argument("study " + std::to_string(i) + " has invalid counts");
    }
  }
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("logit: probability must lie in (0, 1)");
  }
  return std::log(p / (1.0 - p));
}

double expit(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

EffectEstimate effect_of_study(const Study2x2& s, ZeroCellPolicy policy) {
  if (!s.valid()) throw std::invalid_argument("effect_of_study: invalid counts");

  EffectEstimate out;
  double events_t = static_cast<double>(s.x_t);
  double events_c = static_cast<double>(s.x_c);
  double rest_t = static_cast<double>(s.n_t - s.x_t);
  double rest_c = static_cast<double>(s.n_c - s.x_c);

  if (s.has_boundary_cell()) {
    // Haldane-Anscombe: p = (x + 0.5) / (n + 1). The variance
    // 1 / ((n + 1) p (1 - p)) is then identical to 1/(x + 0.5) + 1/(n - x + 0.5),
    // which is the form used below.
    events_t += 0.5;
    events_c += 0.5;
    rest_t += 0.5;
    rest_c += 0.5;
    out.adjusted = true;
    switch (policy) {
      case ZeroCellPolicy::kAddHalf: out.usable = !s.double_zero(); break;
      case ZeroCellPolicy::kAddHalfKeepAll: out.usable = true; break;
      case ZeroCellPolicy::kExclude: out.usable = false; break;
    }
  }

  out.theta_hat = std::log(events_t / rest_t) - std::log(events_c / rest_c);
  out.v2_hat = 1.0 / events_t + 1.0 / rest_t + 1.0 / events_c + 1.0 / rest_c;
  return out;
}

std::vector<EffectEstimate> effects_of(std::span<const Study2x2> studies,
                                       ZeroCellPolicy policy) {
  std::vector<EffectEstimate> out;
  out.reserve(studies.size());
  for (const auto& s : studies) out.push_back(effect_of_study(s, policy));
  return out;
}

double true_variance(double p_t, double p_c, double n_t, double n_c) {
  if (!(p_t > 0.0 && p_t < 1.0 && p_c > 0.0 && p_c < 1.0)) {
    throw std::domain_error("true_variance: probabilities must lie in (0, 1)");
  }
  if (!(n_t > 0.0 && n_c > 0.0)) {
    throw std::domain_error("true_variance: arm sizes must be positive");
  }
  return 1.0 / (n_t * p_t * (1.0 - p_t)) + 1.0 / (n_c * p_c * (1.0 - p_c));
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::int64_t parse_count(const std::string& text, std::size_t line_no) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw std::runtime_error("line " + std::to_string(line_no) + ": '" + text +
                             "' is not an integer count");
  }
  return v;
}

}  // namespace

std::vector<Study2x2> read_studies_csv(std::istream& in) {
  std::vector<Study2x2> out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = split_fields(t);
    if (!header_seen) {
      if (fields != std::vector<std::string>{"x_t", "n_t", "x_c", "n_c"}) {
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": expected header x_t,n_t,x_c,n_c");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != 4) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected 4 fields");
    }
    Study2x2 s{parse_count(fields[0], line_no), parse_count(fields[1], line_no),
               parse_count(fields[2], line_no), parse_count(fields[3], line_no)};
    if (!s.valid()) {
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": counts must satisfy 0 <= x <= n and n >= 1");
    }
    out.push_back(s);
  }
  if (!header_seen) throw std::runtime_error("empty study file");
  return out;
}

void write_studies_csv(std::ostream& out, std::span<const Study2x2> studies) {
  out << "x_t,n_t,x_c,n_c\n";
  for (const auto& s : studies) {
    out << s.x_t << ',' << s.n_t << ',' << s.x_c << ',' << s.n_c << '\n';
  }
}

}  // namespace metasim
