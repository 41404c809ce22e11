#pragma once

#include <cstdint>
#include <string>

#include "metasim/core_model.hpp"
#include "metasim/rng.hpp"

namespace metasim {

// Data-generation mechanisms. FIM: fixed control-arm intercepts; RIM: normal
// random intercepts on the logit scale; URIM1: control probabilities drawn
// uniformly. The digit gives the split c of the random effect b_i between
// arms: 1 -> c = 0 (all of b_i in the treatment arm), 2 -> c = 1/2.
enum class DgmKind { kFIM1, kFIM2, kRIM1, kRIM2, kURIM1 };

inline constexpr DgmKind kAllDgms[] = {DgmKind::kFIM1, DgmKind::kFIM2, DgmKind::kRIM1,
                                       DgmKind::kRIM2, DgmKind::kURIM1};

std::string to_string(DgmKind dgm);
DgmKind parse_dgm(const std::string& text);
double effect_split(DgmKind dgm) noexcept;  // c
bool is_fixed_intercept(DgmKind dgm) noexcept;

struct Scenario {
  int K = 2;
  int n = 1;
  double theta = 0.0;
  double tau2 = 0.0;
  double p_c = 0.5;
  double sigma2 = 0.0;  // unused by FIM1/FIM2
  DgmKind dgm = DgmKind::kFIM1;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  // Fixed-precision text form; FIM scenarios encode sigma2 as 0.
  std::string canonical() const;
  // FNV-1a hash of canonical().
  std::uint64_t id() const;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

struct ReplicationStream {
  std::uint64_t master_seed = 0;
  std::uint64_t scenario_id = 0;
  std::uint64_t rep_index = 0;

  std::uint64_t seed() const noexcept;
  // Independent engine for study i of this replication.
  Xoshiro256pp study_engine(std::size_t i) const noexcept;
};

// The random quantities behind one study: the effect deviation b_i and the
// control-arm draw (u_i for RIM, p_iC for URIM1; unused for FIM).
struct StudyDraw {
  double b = 0.0;
  double u = 0.0;
  double p_c_uniform = 0.0;
};

struct ArmProbs {
  double p_t = 0.0;
  double p_c = 0.0;
};

// sigma * sqrt(3) * p_c * (1 - p_c); throws std::invalid_argument if the
// interval [p_c - h, p_c + h] leaves (0, 1).
double uniform_halfwidth(double p_c, double sigma2);
// sqrt(12 [p_c (1 - p_c)]^2 sigma2): width of a uniform whose variance matches
// a logit-normal intercept with variance sigma2, to first order.
double delta_p_match(double p_c0, double sigma2);

StudyDraw draw_study(const Scenario& sc, Xoshiro256pp& engine);
ArmProbs probs_from_draw(const Scenario& sc, const StudyDraw& draw);
ArmProbs study_probs(const Scenario& sc, const ReplicationStream& stream, std::size_t i);

MetaDataset generate_dataset(const Scenario& sc, const ReplicationStream& stream);

}  // namespace metasim
