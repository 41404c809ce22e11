#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "metasim/twostage.hpp"
#include "oracles.hpp"

using namespace metasim;
using doctest::Approx;

namespace {

std::vector<EffectEstimate> make(const std::vector<double>& y, const std::vector<double>& v) {
  std::vector<EffectEstimate> out;
  for (std::size_t i = 0; i < y.size(); ++i) out.push_back({y[i], v[i], false, true});
  return out;
}

std::vector<Study2x2> equal_sizes(std::size_t k, int n = 100) {
  return std::vector<Study2x2>(k, Study2x2{n / 2, n, n / 2, n});
}

struct RandomMeta {
  std::vector<double> y, v;
};

RandomMeta random_meta(std::mt19937_64& rng, int k) {
  std::uniform_real_distribution<double> vd(0.02, 1.0), td(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  const double tau2 = td(rng);
  RandomMeta m;
  for (int i = 0; i < k; ++i) {
    const double v = vd(rng);
    m.v.push_back(v);
    m.y.push_back(0.3 + std::sqrt(v + tau2) * z(rng));
  }
  return m;
}

}  // namespace

TEST_CASE("Q statistic reference values") {
  const auto e = make({0, 2}, {0.5, 0.5});
  CHECK(generalized_q(e, 0.0) == Approx(4.0).epsilon(1e-14));
  CHECK(generalized_q(e, 1.5) == Approx(1.0).epsilon(1e-14));
  CHECK(generalized_q(make({0.7, 0.7}, {0.2, 0.9}), 0.0) == Approx(0.0).scale(1.0));
  CHECK_THROWS_AS(generalized_q(make({1.0}, {0.2}), 0.0), EstimationError);
}

TEST_CASE("Q skips unusable effects") {
  auto e = make({0, 2, 50}, {0.5, 0.5, 0.1});
  e[2].usable = false;
  CHECK(generalized_q(e, 0.0) == Approx(4.0));
  e[1].usable = false;
  CHECK_THROWS_AS(tau2_dl(e), EstimationError);
}

TEST_CASE("Q is nonincreasing and vanishes for large tau2") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 50; ++rep) {
    const auto m = random_meta(rng, 8);
    const auto e = make(m.y, m.v);
    double prev = generalized_q(e, 0.0);
    CHECK(prev == Approx(oracle::q_stat(m.y, m.v, 0.0)).epsilon(1e-12));
    for (double t = 0.05; t < 20.0; t *= 1.3) {
      const double q = generalized_q(e, t);
      CHECK(q <= prev * (1.0 + 1e-12));
      prev = q;
    }
    CHECK(generalized_q(e, 1e12) < 1e-9);
  }
}

TEST_CASE("DL reference values") {
  const auto at_k_minus_1 = tau2_dl(make({0, 1}, {0.5, 0.5}));
  CHECK(at_k_minus_1.value == 0.0);
  CHECK_FALSE(at_k_minus_1.truncated);

  CHECK(tau2_dl(make({0, 2}, {0.5, 0.5})).value == Approx(1.5).epsilon(1e-14));

  const auto flat = tau2_dl(make({0.4, 0.4, 0.4}, {0.1, 0.3, 0.5}));
  CHECK(flat.value == 0.0);
  CHECK(flat.truncated);
}

TEST_CASE("DL agrees with the closed form on random data") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    const auto m = random_meta(rng, 2 + rep % 20);
    CHECK(tau2_dl(make(m.y, m.v)).value ==
          Approx(oracle::dl_closed_form(m.y, m.v)).epsilon(1e-12).scale(1e-12));
  }
}

TEST_CASE("MP reference values and residual") {
  const auto two = tau2_mp(make({0, 2}, {0.5, 0.5}));
  CHECK(two.value == Approx(1.5).epsilon(1e-9));
  CHECK(two.converged);
  const auto low = tau2_mp(make({0, 0.5}, {0.5, 0.5}));
  CHECK(low.value == 0.0);
  CHECK(low.truncated);

  std::mt19937_64 rng(8);
  int interior = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto m = random_meta(rng, 3 + rep % 15);
    const auto e = make(m.y, m.v);
    const auto est = tau2_mp(e);
    CHECK(est.converged);
    const double k1 = static_cast<double>(m.y.size()) - 1.0;
    if (est.value > 0.0) {
      ++interior;
      CHECK(std::abs(oracle::q_stat(m.y, m.v, est.value) - k1) <= 1e-8);
    } else {
      CHECK(oracle::q_stat(m.y, m.v, 0.0) <= k1);
    }
  }
  CHECK(interior > 50);
}

TEST_CASE("MP and DL agree on two studies with equal variances") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> yd(-3, 3), vd(0.05, 2);
  for (int rep = 0; rep < 200; ++rep) {
    const double v = vd(rng);
    const auto e = make({yd(rng), yd(rng)}, {v, v});
    CHECK(tau2_mp(e).value == Approx(tau2_dl(e).value).epsilon(1e-8).scale(1e-9));
  }
}

TEST_CASE("REML matches a grid maximizer and has zero slope at interior optima") {
  std::mt19937_64 rng(31);
  int interior = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = random_meta(rng, 5);
    const auto e = make(m.y, m.v);
    const auto est = tau2_reml(e);
    CHECK(est.converged);
    const double grid = oracle::reml_grid_argmax(m.y, m.v);
    CHECK(std::abs(est.value - grid) <= 1e-3);
    CHECK(reml_loglik(e, 0.7) == Approx(oracle::reml(m.y, m.v, 0.7)).epsilon(1e-12));
    if (est.value > 1e-3) {
      ++interior;
      auto f = [&](std::vector<double> t) { return oracle::reml(m.y, m.v, t[0]); };
      const double slope = oracle::central_difference(f, std::vector<double>{est.value}, 0, 1e-5);
      CHECK(std::abs(slope) <= 1e-6);
    }
  }
  CHECK(interior > 3);
}

TEST_CASE("every tau2 estimator returns 0 on identical effects") {
  const auto e = make({0.3, 0.3, 0.3, 0.3}, {0.1, 0.2, 0.4, 0.8});
  CHECK(tau2_dl(e).value == 0.0);
  CHECK(tau2_mp(e).value == 0.0);
  CHECK(tau2_reml(e).value == 0.0);
  const auto kd = kd_substitute();
  CHECK(kd.estimate(e).value == 0.0);
}

TEST_CASE("KD slot defaults to MP and says so") {
  const auto kd = kd_substitute();
  CHECK(kd.label == "KD-substitute(MP)");
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = random_meta(rng, 6);
    const auto e = make(m.y, m.v);
    CHECK(kd.estimate(e).value == tau2_mp(e).value);
  }
}

TEST_CASE("inverse-variance pooling") {
  const auto p = iv_pool(make({0, 2}, {0.5, 0.5}), 1.5);
  CHECK(p.theta_hat == Approx(1.0).epsilon(1e-14));
  CHECK(p.se == Approx(1.0).epsilon(1e-14));
  CHECK(std::isinf(p.df));

  const auto mean = iv_pool(make({1, 2, 6}, {0.3, 0.3, 0.3}), 0.0);
  CHECK(mean.theta_hat == Approx(3.0));

  // Growing tau2 moves the estimate monotonically toward the unweighted mean.
  const auto e = make({0.0, 1.0}, {0.1, 1.0});
  double prev = iv_pool(e, 0.0).theta_hat;
  for (double t = 0.1; t < 1e4; t *= 2) {
    const double th = iv_pool(e, t).theta_hat;
    CHECK(th > prev);
    CHECK(th < 0.5);
    prev = th;
  }
  CHECK(iv_pool(e, 1e9).theta_hat == Approx(0.5).epsilon(1e-6));
}

TEST_CASE("pooling is invariant to study order") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    const auto m = random_meta(rng, 7);
    auto e = make(m.y, m.v);
    const auto a = iv_pool(e, 0.3);
    const double dl = tau2_dl(e).value, mp = tau2_mp(e).value, re = tau2_reml(e).value;
    std::shuffle(e.begin(), e.end(), rng);
    const auto b = iv_pool(e, 0.3);
    CHECK(b.theta_hat == Approx(a.theta_hat).epsilon(1e-12));
    CHECK(b.se == Approx(a.se).epsilon(1e-12));
    CHECK(tau2_dl(e).value == Approx(dl).epsilon(1e-12).scale(1e-12));
    CHECK(tau2_mp(e).value == Approx(mp).epsilon(1e-8).scale(1e-9));
    CHECK(tau2_reml(e).value == Approx(re).epsilon(1e-7).scale(1e-8));
  }
}

TEST_CASE("translation equivariance") {
  std::mt19937_64 rng(91);
  for (int rep = 0; rep < 50; ++rep) {
    const auto m = random_meta(rng, 6);
    const auto e = make(m.y, m.v);
    const double delta = 1.7;
    std::vector<double> shifted_y = m.y;
    for (double& y : shifted_y) y += delta;
    const auto s = make(shifted_y, m.v);
    CHECK(tau2_dl(s).value == Approx(tau2_dl(e).value).epsilon(1e-9).scale(1e-10));
    CHECK(tau2_mp(s).value == Approx(tau2_mp(e).value).epsilon(1e-8).scale(1e-9));
    CHECK(tau2_reml(s).value == Approx(tau2_reml(e).value).epsilon(1e-7).scale(1e-8));
    CHECK(iv_pool(s, 0.2).theta_hat == Approx(iv_pool(e, 0.2).theta_hat + delta).epsilon(1e-12));
    const auto sizes = equal_sizes(6);
    CHECK(ssw_point(s, sizes).theta_hat ==
          Approx(ssw_point(e, sizes).theta_hat + delta).epsilon(1e-12));
  }
}

TEST_CASE("sample-size weights") {
  const auto e = make({0.0, 1.0}, {0.5, 0.5});
  const std::vector<Study2x2> sizes{{10, 40, 10, 40}, {300, 1000, 300, 1000}};
  const auto w = ssw_weights(e, sizes);
  REQUIRE(w.size() == 2);
  CHECK(w[0] == Approx(20.0 / 520.0));
  CHECK(w[0] == Approx(0.03846).epsilon(1e-4));
  CHECK(w[1] == Approx(0.96154).epsilon(1e-5));

  const auto eq = ssw_point(make({1, 2, 6}, {0.1, 0.5, 0.9}), equal_sizes(3));
  CHECK(eq.theta_hat == Approx(3.0));
  CHECK(eq.df == 2.0);

  const std::vector<Study2x2> dominant{{10, 20, 10, 20}, {5000, 1000000, 5000, 1000000}};
  CHECK(ssw_point(make({-3.0, 0.25}, {0.5, 0.5}), dominant).theta_hat ==
        Approx(0.25).epsilon(1e-4));
}

TEST_CASE("SSW interval") {
  const auto e = make({0, 2}, {0.5, 0.5});
  Tau2Estimate t;
  t.value = 1.5;
  t.method = Tau2Method::kKD;
  const auto ci = ssw_ci(e, equal_sizes(2), t, 0.95);
  CHECK((ci.lo + ci.hi) / 2 == Approx(1.0));
  CHECK((ci.hi - ci.lo) / 2 == Approx(12.7062).epsilon(1e-5));
  const auto p = ssw_pooled(e, equal_sizes(2), t);
  CHECK(p.se == Approx(1.0));
  CHECK(p.df == 1.0);
  const auto h = ssw_pooled(e, equal_sizes(2), t, SswVariance::kHksj);
  // Residual dispersion (1 + 1) / (0.5 + 1.5) / (K - 1) = 1 leaves V unchanged.
  CHECK(h.se == Approx(1.0));

  // tau2 = 0 and equal variances: V = v * sum w~^2 = v / K.
  Tau2Estimate zero;
  const auto five = ssw_pooled(make({0, 1, 2, 3, 4}, {0.4, 0.4, 0.4, 0.4, 0.4}), equal_sizes(5),
                               zero);
  CHECK(five.se * five.se == Approx(0.4 / 5.0));
  CHECK(five.se * five.se < 0.4);

  CHECK_THROWS_AS(ssw_ci(make({1.0}, {0.1}), equal_sizes(1), t), EstimationError);
  CHECK(parse_ssw_variance(to_string(SswVariance::kHksj)) == SswVariance::kHksj);
  CHECK(parse_ssw_variance(to_string(SswVariance::kPlugin)) == SswVariance::kPlugin);
}

TEST_CASE("Wald interval") {
  const auto ci = wald_ci({0.0, 1.0});
  CHECK(ci.lo == Approx(-1.95996).epsilon(1e-5));
  CHECK(ci.hi == Approx(1.95996).epsilon(1e-5));
  CHECK(ci.level == 0.95);
  PooledEstimate t1{0.0, 1.0, 1.0};
  CHECK(wald_ci(t1).hi == Approx(12.7062).epsilon(1e-5));
  CHECK(critical_value(0.95, 1.0) == Approx(12.7062).epsilon(1e-5));
  CHECK(critical_value(0.99, std::numeric_limits<double>::infinity()) ==
        Approx(2.57583).epsilon(1e-5));
  const auto point = wald_ci({0.4, 0.0});
  CHECK(point.lo == 0.4);
  CHECK(point.hi == 0.4);
}

TEST_CASE("Wald coverage is dual to the standardized distance") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3), s(0.01, 2);
  for (int rep = 0; rep < 2000; ++rep) {
    const double df = rep % 3 == 0 ? std::numeric_limits<double>::infinity() : 1.0 + rep % 29;
    const PooledEstimate p{u(rng), s(rng), df};
    const double theta0 = u(rng);
    const auto ci = wald_ci(p, 0.9);
    const double z = std::abs(p.theta_hat - theta0) / p.se;
    const double c = critical_value(0.9, df);
    // Skip ties within rounding of the boundary.
    if (std::abs(z - c) < 1e-9) continue;
    CHECK(ci.contains(theta0) == (z <= c));
  }
}

TEST_CASE("estimator names") {
  CHECK(to_string(Tau2Method::kDL) == "DL");
  CHECK(to_string(Tau2Method::kREML) == "REML");
  CHECK(to_string(Tau2Method::kMP) == "MP");
}
