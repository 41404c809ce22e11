#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace metasim {

// Raw counts of one two-arm study.
struct Study2x2 {
  std::int64_t x_t = 0;
  std::int64_t n_t = 1;
  std::int64_t x_c = 0;
  std::int64_t n_c = 1;

  bool valid() const noexcept {
    return n_t >= 1 && n_c >= 1 && x_t >= 0 && x_c >= 0 && x_t <= n_t && x_c <= n_c;
  }
  // Any cell of the 2x2 table is empty.
  bool has_boundary_cell() const noexcept {
    return x_t == 0 || x_t == n_t || x_c == 0 || x_c == n_c;
  }
  // No events in either arm, or events for everyone in both arms.
  bool double_zero() const noexcept {
    return (x_t == 0 && x_c == 0) || (x_t == n_t && x_c == n_c);
  }
  Study2x2 swapped() const noexcept { return {x_c, n_c, x_t, n_t}; }

  friend bool operator==(const Study2x2&, const Study2x2&) = default;
};

struct EffectEstimate {
  double theta_hat = 0.0;  // log-odds-ratio
  double v2_hat = 0.0;     // delta-method variance
  bool adjusted = false;   // 0.5 was added to every cell
  bool usable = true;      // enters two-stage pooling
};

// Handling of studies with an empty cell.
enum class ZeroCellPolicy {
  kAddHalf,         // correct boundary studies, drop double-zero/double-full ones
  kAddHalfKeepAll,  // correct boundary studies, keep every study
  kExclude,         // drop every boundary study
};

std::string to_string(ZeroCellPolicy policy);
ZeroCellPolicy parse_zero_cell_policy(const std::string& text);

class MetaDataset {
 public:
  MetaDataset() = default;
  // Throws std::invalid_argument when fewer than 2 studies or any study is invalid.
  explicit MetaDataset(std::vector<Study2x2> studies);

  std::span<const Study2x2> studies() const noexcept { return studies_; }
  std::size_t K() const noexcept { return studies_.size(); }
  const Study2x2& operator[](std::size_t i) const { return studies_[i]; }

  friend bool operator==(const MetaDataset&, const MetaDataset&) = default;

 private:
  std::vector<Study2x2> studies_;
};

// ln(p / (1 - p)); throws std::domain_error outside (0, 1).
double logit(double p);
// 1 / (1 + exp(-x)), evaluated without overflow for either sign of x.
double expit(double x) noexcept;

EffectEstimate effect_of_study(const Study2x2& s,
                               ZeroCellPolicy policy = ZeroCellPolicy::kAddHalf);
std::vector<EffectEstimate> effects_of(std::span<const Study2x2> studies,
                                       ZeroCellPolicy policy = ZeroCellPolicy::kAddHalf);

// Delta-method variance of the log-odds-ratio at the true probabilities.
double true_variance(double p_t, double p_c, double n_t, double n_c);

// Study table with header `x_t,n_t,x_c,n_c`, one study per row. Blank lines
// and lines starting with '#' are skipped. Throws std::runtime_error with the
// offending line number on malformed input.
std::vector<Study2x2> read_studies_csv(std::istream& in);
void write_studies_csv(std::ostream& out, std::span<const Study2x2> studies);

}  // namespace metasim
