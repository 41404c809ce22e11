#include "metasim/datagen.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace metasim {

std::string to_string(DgmKind dgm) {
  switch (dgm) {
    case DgmKind::kFIM1: return "FIM1";
    case DgmKind::kFIM2: return "FIM2";
    case DgmKind::kRIM1: return "RIM1";
    case DgmKind::kRIM2: return "RIM2";
    case DgmKind::kURIM1: return "URIM1";
  }
  return "?";
}

DgmKind parse_dgm(const std::string& text) {
  for (DgmKind d : kAllDgms) {
    if (to_string(d) == text) return d;
  }
  throw std::invalid_argument("unknown data-generation mechanism '" + text + "'");
}

double effect_split(DgmKind dgm) noexcept {
  return (dgm == DgmKind::kFIM2 || dgm == DgmKind::kRIM2) ? 0.5 : 0.0;
}

bool is_fixed_intercept(DgmKind dgm) noexcept {
  return dgm == DgmKind::kFIM1 || dgm == DgmKind::kFIM2;
}

void Scenario::validate() const {
  if (K < 2) throw std::invalid_argument("scenario: K must be >= 2");
  if (n < 1) throw std::invalid_argument("scenario: n must be >= 1");
  if (!std::isfinite(theta)) throw std::invalid_argument("scenario: theta must be finite");
  if (!(tau2 >= 0.0) || !std::isfinite(tau2)) {
    throw std::invalid_argument("scenario: tau2 must be >= 0");
  }
  if (!(p_c > 0.0 && p_c < 1.0)) throw std::invalid_argument("scenario: p_c must lie in (0, 1)");
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) {
    throw std::invalid_argument("scenario: sigma2 must be >= 0");
  }
  if (dgm == DgmKind::kURIM1) uniform_halfwidth(p_c, sigma2);
}

std::string Scenario::canonical() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "dgm=%s;K=%d;n=%d;theta=%.9f;tau2=%.9f;p_c=%.9f;sigma2=%.9f",
                to_string(dgm).c_str(), K, n, theta, tau2, p_c,
                is_fixed_intercept(dgm) ? 0.0 : sigma2);
  return buf;
}

std::uint64_t Scenario::id() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t ReplicationStream::seed() const noexcept {
  return combine64(combine64(master_seed, scenario_id), rep_index);
}

Xoshiro256pp ReplicationStream::study_engine(std::size_t i) const noexcept {
  return Xoshiro256pp(combine64(seed(), static_cast<std::uint64_t>(i)));
}

double uniform_halfwidth(double p_c, double sigma2) {
  if (!(p_c > 0.0 && p_c < 1.0) || !(sigma2 >= 0.0)) {
    throw std::invalid_argument("uniform_halfwidth: need p_c in (0, 1) and sigma2 >= 0");
  }
  const double h = std::sqrt(sigma2) * std::sqrt(3.0) * p_c * (1.0 - p_c);
  if (p_c - h <= 0.0 || p_c + h >= 1.0) {
    throw std::invalid_argument("uniform control-arm interval escapes (0, 1)");
  }
  return h;
}

double delta_p_match(double p_c0, double sigma2) {
  if (!(p_c0 > 0.0 && p_c0 < 1.0) || !(sigma2 >= 0.0)) {
    throw std::invalid_argument("delta_p_match: need p_c in (0, 1) and sigma2 >= 0");
  }
  const double spread = p_c0 * (1.0 - p_c0);
  return std::sqrt(12.0 * spread * spread * sigma2);
}

StudyDraw draw_study(const Scenario& sc, Xoshiro256pp& engine) {
  StudyDraw d;
  d.b = std::sqrt(sc.tau2) * standard_normal(engine);
  switch (sc.dgm) {
    case DgmKind::kFIM1:
    case DgmKind::kFIM2:
      break;
    case DgmKind::kRIM1:
    case DgmKind::kRIM2:
      d.u = std::sqrt(sc.sigma2) * standard_normal(engine);
      break;
    case DgmKind::kURIM1: {
      const double h = uniform_halfwidth(sc.p_c, sc.sigma2);
      d.p_c_uniform = sc.p_c - h + 2.0 * h * uniform_open01(engine);
      break;
    }
  }
  return d;
}

ArmProbs probs_from_draw(const Scenario& sc, const StudyDraw& draw) {
  const double c = effect_split(sc.dgm);
  double alpha = 0.0;
  double base = 0.0;  // control-arm probability before the effect split
  switch (sc.dgm) {
    case DgmKind::kFIM1:
    case DgmKind::kFIM2:
      alpha = logit(sc.p_c);
      base = sc.p_c;
      break;
    case DgmKind::kRIM1:
    case DgmKind::kRIM2:
      alpha = logit(sc.p_c) + draw.u;
      base = draw.u == 0.0 ? sc.p_c : expit(alpha);
      break;
    case DgmKind::kURIM1:
      alpha = logit(draw.p_c_uniform);
      base = draw.p_c_uniform;
      break;
  }
  // Zero offsets return the base probability exactly rather than expit(logit(p)).
  const double offset_t = sc.theta + (1.0 - c) * draw.b;
  const double offset_c = -c * draw.b;
  return {offset_t == 0.0 ? base : expit(alpha + offset_t),
          offset_c == 0.0 ? base : expit(alpha + offset_c)};
}

ArmProbs study_probs(const Scenario& sc, const ReplicationStream& stream, std::size_t i) {
  sc.validate();
  auto engine = stream.study_engine(i);
  return probs_from_draw(sc, draw_study(sc, engine));
}

MetaDataset generate_dataset(const Scenario& sc, const ReplicationStream& stream) {
  sc.validate();
  std::vector<Study2x2> studies;
  studies.reserve(static_cast<std::size_t>(sc.K));
  for (int i = 0; i < sc.K; ++i) {
    auto engine = stream.study_engine(static_cast<std::size_t>(i));
    const ArmProbs p = probs_from_draw(sc, draw_study(sc, engine));
    const std::int64_t x_t = binomial(engine, sc.n, p.p_t);
    const std::int64_t x_c = binomial(engine, sc.n, p.p_c);
    studies.push_back({x_t, sc.n, x_c, sc.n});
  }
  return MetaDataset(std::move(studies));
}

}  // namespace metasim
