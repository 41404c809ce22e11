#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "metasim/core_model.hpp"

using namespace metasim;
using doctest::Approx;

TEST_CASE("logit at reference points") {
  CHECK(logit(0.5) == 0.0);
  CHECK(logit(0.1) == Approx(std::log(1.0 / 9.0)).epsilon(1e-14));
  CHECK(logit(0.1) == Approx(-2.19722).epsilon(1e-5));
  CHECK(logit(0.4) == Approx(-0.405465).epsilon(1e-5));
  CHECK_THROWS_AS(logit(0.0), std::domain_error);
  CHECK_THROWS_AS(logit(1.0), std::domain_error);
  CHECK_THROWS_AS(logit(-0.2), std::domain_error);
}

TEST_CASE("expit at reference points and saturation") {
  CHECK(expit(0.0) == 0.5);
  CHECK(expit(-2.19722) == Approx(0.1).epsilon(1e-5));
  for (double x : {40.0, 700.0, 1e6, -40.0, -700.0, -1e6}) {
    const double p = expit(x);
    CHECK(std::isfinite(p));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  // 1 - e^-40 rounds to 1 in double; strictness holds up to |x| = 36.
  CHECK(expit(36.0) < 1.0);
  CHECK(expit(-40.0) > 0.0);
  CHECK(expit(40.0) == 1.0);
}

TEST_CASE("expit inverts logit on [1e-6, 1 - 1e-6]") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(1e-6, 1.0 - 1e-6);
  for (int i = 0; i < 10000; ++i) {
    const double p = u(rng);
    CHECK(std::abs(expit(logit(p)) - p) <= 1e-12);
  }
  CHECK(std::abs(expit(logit(1e-6)) - 1e-6) <= 1e-12);
  CHECK(std::abs(expit(logit(1.0 - 1e-6)) - (1.0 - 1e-6)) <= 1e-12);
}

TEST_CASE("effect of a study without boundary cells") {
  SUBCASE("20/40 vs 10/40") {
    const auto e = effect_of_study({20, 40, 10, 40});
    CHECK(e.theta_hat == Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(e.theta_hat == Approx(1.09861).epsilon(1e-5));
    // 1/(40 * 0.25) + 1/(40 * 0.1875)
    CHECK(e.v2_hat == Approx(0.1 + 1.0 / 7.5).epsilon(1e-12));
    CHECK(e.v2_hat == Approx(0.233333).epsilon(1e-5));
    CHECK_FALSE(e.adjusted);
    CHECK(e.usable);
  }
  SUBCASE("4/40 vs 4/40") {
    const auto e = effect_of_study({4, 40, 4, 40});
    CHECK(e.theta_hat == 0.0);
    CHECK(e.v2_hat == Approx(2.0 / 3.6).epsilon(1e-12));
    CHECK(e.v2_hat == Approx(0.55556).epsilon(1e-5));
  }
}

TEST_CASE("half correction for a zero cell") {
  const auto e = effect_of_study({0, 40, 4, 40}, ZeroCellPolicy::kAddHalf);
  const double pt = 0.5 / 41.0, pc = 4.5 / 41.0;
  CHECK(e.adjusted);
  CHECK(e.usable);
  CHECK(e.theta_hat == Approx(std::log(pt / (1 - pt)) - std::log(pc / (1 - pc))).epsilon(1e-12));
  CHECK(e.v2_hat == Approx(1 / 0.5 + 1 / 40.5 + 1 / 4.5 + 1 / 36.5).epsilon(1e-12));
}

TEST_CASE("zero-cell policies on double-zero studies") {
  const Study2x2 dz{0, 40, 0, 40};
  const Study2x2 df{40, 40, 40, 40};
  for (const auto& s : {dz, df}) {
    const auto drop = effect_of_study(s, ZeroCellPolicy::kAddHalf);
    CHECK(drop.adjusted);
    CHECK_FALSE(drop.usable);
    const auto keep = effect_of_study(s, ZeroCellPolicy::kAddHalfKeepAll);
    CHECK(keep.adjusted);
    CHECK(keep.usable);
    CHECK(keep.theta_hat == Approx(0.0));
    const auto excl = effect_of_study(s, ZeroCellPolicy::kExclude);
    CHECK_FALSE(excl.usable);
  }
  const auto single = effect_of_study({0, 40, 4, 40}, ZeroCellPolicy::kExclude);
  CHECK_FALSE(single.usable);
  CHECK(single.adjusted);
}

TEST_CASE("adjusted iff a boundary cell exists") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> n_dist(1, 30);
  for (int i = 0; i < 5000; ++i) {
    const int nt = n_dist(rng), nc = n_dist(rng);
    const Study2x2 s{std::uniform_int_distribution<int>(0, nt)(rng), nt,
                     std::uniform_int_distribution<int>(0, nc)(rng), nc};
    for (auto policy :
         {ZeroCellPolicy::kAddHalf, ZeroCellPolicy::kAddHalfKeepAll, ZeroCellPolicy::kExclude}) {
      const auto e = effect_of_study(s, policy);
      CHECK(e.adjusted == s.has_boundary_cell());
      if (e.usable) CHECK(e.v2_hat > 0.0);
    }
  }
}

TEST_CASE("swapping arms negates the effect and keeps its variance") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> n_dist(1, 200);
  for (int i = 0; i < 2000; ++i) {
    const int nt = n_dist(rng), nc = n_dist(rng);
    const Study2x2 s{std::uniform_int_distribution<int>(0, nt)(rng), nt,
                     std::uniform_int_distribution<int>(0, nc)(rng), nc};
    const auto a = effect_of_study(s);
    const auto b = effect_of_study(s.swapped());
    CHECK(b.theta_hat == Approx(-a.theta_hat).epsilon(1e-12));
    CHECK(b.v2_hat == Approx(a.v2_hat).epsilon(1e-12));
    CHECK(a.usable == b.usable);
  }
}

TEST_CASE("variance at the true probabilities") {
  CHECK(true_variance(0.1, 0.1, 40, 40) == Approx(0.55556).epsilon(1e-5));
  CHECK(true_variance(0.4, 0.4, 100, 100) == Approx(0.08333).epsilon(1e-4));
  for (double n : {10.0, 40.0, 1000.0}) CHECK(true_variance(0.5, 0.5, n, n) == Approx(8.0 / n));
  CHECK(true_variance(0.2, 0.7, 30, 90) == Approx(true_variance(0.7, 0.2, 90, 30)));
  double prev = true_variance(0.3, 0.1, 10, 50);
  for (double n = 11; n < 200; n += 7) {
    const double v = true_variance(0.3, 0.1, n, 50);
    CHECK(v < prev);
    prev = v;
  }
  CHECK_THROWS_AS(true_variance(0.0, 0.3, 10, 10), std::domain_error);
  CHECK_THROWS_AS(true_variance(0.3, 1.0, 10, 10), std::domain_error);
}

TEST_CASE("datasets need two valid studies") {
  CHECK_THROWS_AS(MetaDataset({{1, 10, 2, 10}}), std::invalid_argument);
  CHECK_THROWS_AS(MetaDataset({{1, 10, 2, 10}, {11, 10, 2, 10}}), std::invalid_argument);
  const MetaDataset ds({{1, 10, 2, 10}, {3, 10, 2, 10}});
  CHECK(ds.K() == 2);
  CHECK(ds[1].x_t == 3);
}

TEST_CASE("study CSV round trip and errors") {
  std::istringstream in("x_t,n_t,x_c,n_c\n# comment\n\n3,40,5,40\n 0 , 20 , 1 , 20 \n");
  const auto studies = read_studies_csv(in);
  REQUIRE(studies.size() == 2);
  CHECK(studies[0] == Study2x2{3, 40, 5, 40});
  CHECK(studies[1] == Study2x2{0, 20, 1, 20});

  std::ostringstream out;
  write_studies_csv(out, studies);
  std::istringstream back(out.str());
  CHECK(read_studies_csv(back) == studies);

  std::istringstream empty("");
  CHECK_THROWS_AS(read_studies_csv(empty), std::runtime_error);
  std::istringstream bad_header("a,b,c,d\n1,2,3,4\n");
  CHECK_THROWS_AS(read_studies_csv(bad_header), std::runtime_error);
  std::istringstream bad_row("x_t,n_t,x_c,n_c\n1,2,3\n");
  CHECK_THROWS_AS(read_studies_csv(bad_row), std::runtime_error);
  std::istringstream invalid("x_t,n_t,x_c,n_c\n5,4,1,4\n");
  CHECK_THROWS_AS(read_studies_csv(invalid), std::runtime_error);
}

TEST_CASE("zero-cell policy names") {
  for (auto p : {ZeroCellPolicy::kAddHalf, ZeroCellPolicy::kAddHalfKeepAll,
                 ZeroCellPolicy::kExclude}) {
    CHECK(parse_zero_cell_policy(to_string(p)) == p);
  }
  CHECK_THROWS(parse_zero_cell_policy("bogus"));
}
