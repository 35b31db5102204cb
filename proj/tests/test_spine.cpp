#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "doctest.h"
#include "rwre/errors.hpp"
#include "rwre/law.hpp"
#include "rwre/quenched.hpp"
#include "rwre/rng.hpp"
#include "rwre/spine.hpp"
#include "rwre/tree.hpp"
#include "support/dense_oracle.hpp"
#include "support/quadrature.hpp"
#include "support/spine_oracle.hpp"
#include "support/stats.hpp"

using namespace rwre;

namespace {
const double kLn2 = std::log(2.0);
const double kPi = 3.14159265358979323846;

OffspringLaw critical_null() {
  return OffspringLaw::log_normal(2, -2 * kLn2, 2 * kLn2);
}

// Tilts back to the same N(0, 2 ln 2) step law, through theta = 1/2.
OffspringLaw critical_boundary() {
  return OffspringLaw::log_normal(2, -4 * kLn2, 8 * kLn2);
}

OffspringLaw critical_table() {
  return OffspringLaw::discrete({{0.125, 2, {2.0, 2.0}},
                                 {0.5, 2, {0.5, 0.5}},
                                 {0.375, 0, {}}});
}

OffspringLaw unary_law() { return OffspringLaw::discrete({{1.0, 1, {1.0}}}); }

// Critical table whose tilted walk sees two offspring counts (3 or 1, each
// with probability 1/2) while the displacement stays deterministic.
OffspringLaw varying_nu_law() {
  const double a = 2.0 / 3.0;
  return OffspringLaw::discrete({{0.25, 3, {a, a, a}}, {0.75, 1, {a}}});
}

double bstar_for(double sigma2) { return std::cbrt(1.5 * kPi * kPi * sigma2); }

std::vector<char> level_flags(const MarkedTree& t, int level) {
  std::vector<char> f(t.size() + 1, 0);
  for (VertexId x = 0; x < static_cast<VertexId>(t.size()); ++x)
    if (t.depth[x] == level) f[x] = 1;
  return f;
}

}  // namespace

TEST_CASE("unary law: the spinal tree is the whole tree") {
  const SpinalTree sp = sample_q_tree(unary_law(), 8, 414);
  REQUIRE(sp.generations() == 8);
  REQUIRE(sp.spine.size() == 9);
  CHECK(sp.tree.size() == 9);
  for (size_t k = 0; k < sp.spine.size(); ++k) {
    CHECK(sp.spine[k] == static_cast<VertexId>(k));
    CHECK(sp.spine_potential[k] == 0.0);
    if (k >= 1) CHECK(sp.brothers[k].empty());
  }
  CHECK(additive_martingale(sp.tree, 8) == 1.0);

  const SpinalTree again = sample_q_tree(unary_law(), 8, 414);
  CHECK(again.tree.key == sp.tree.key);
  CHECK(again.tree.a_mark == sp.tree.a_mark);
  CHECK(again.spine == sp.spine);
  const SpinalTree other = sample_q_tree(unary_law(), 8, 415);
  CHECK(other.tree.key != sp.tree.key);
}

TEST_CASE("spine increments are centered Gaussian for log-normal marks") {
  // Mean 0, variance 2 ln 2: the exponential tilt of N(-2 ln 2, 2 ln 2).
  const double var = 2 * kLn2;
  std::vector<double> inc;
  inc.reserve(50000);
  for (uint64_t seed = 0; seed < 25000; ++seed) {
    const SpinalTree sp =
        sample_q_tree(critical_null(), 2, 1000 + seed, SpineGrowth::SpineOnly);
    for (double d : sp.spine_increments()) inc.push_back(d);
  }
  REQUIRE(inc.size() == 50000);
  const double n = static_cast<double>(inc.size());
  CHECK(std::abs(stats::sample_mean(inc)) <= 3.0 * std::sqrt(var / n));
  CHECK(std::abs(stats::sample_var(inc) - var) <=
        3.0 * var * std::sqrt(2.0 / (n - 1.0)));
  CHECK(stats::ks_normal(inc, 0.0, var) <= 0.015);
}

TEST_CASE("boundary-tilt laws rescale before spinal sampling") {
  std::vector<double> inc;
  inc.reserve(20000);
  for (uint64_t seed = 0; seed < 10000; ++seed) {
    const SpinalTree sp = sample_q_tree(critical_boundary(), 2, 7000 + seed,
                                        SpineGrowth::SpineOnly);
    for (double d : sp.spine_increments()) inc.push_back(d);
  }
  const double var = 2 * kLn2;
  const double n = static_cast<double>(inc.size());
  CHECK(std::abs(stats::sample_mean(inc)) <= 3.0 * std::sqrt(var / n));
  CHECK(stats::ks_normal(inc, 0.0, var) <= 0.02);

  const SpinalTree sp = sample_q_tree(critical_boundary(), 2, 3);
  CHECK(sp.tree.law.mu == doctest::Approx(-2 * kLn2));
  CHECK(sp.tree.law.s2 == doctest::Approx(2 * kLn2));
}

TEST_CASE("spine increments for the table law take the two tilted values") {
  long long plus = 0, total = 0;
  for (uint64_t seed = 0; seed < 20000; ++seed) {
    const SpinalTree sp =
        sample_q_tree(critical_table(), 3, 40000 + seed, SpineGrowth::SpineOnly);
    for (double d : sp.spine_increments()) {
      CHECK(std::abs(std::abs(d) - kLn2) <= 1e-12);
      ++total;
      if (d > 0) ++plus;
    }
  }
  REQUIRE(total == 60000);
  const double frac = static_cast<double>(plus) / static_cast<double>(total);
  CHECK(std::abs(frac - 0.5) <=
        3.0 * std::sqrt(0.25 / static_cast<double>(total)));
}

TEST_CASE("size-biased expectations match martingale-weighted plain ones") {
  // E_sb[F(W_n)] = E[W_n F(W_n)] with F bounded; F = min(1/w, 10).
  auto run = [](const OffspringLaw& law, uint64_t salt) {
    const int n = 2;
    const long long reps = 20000;
    std::vector<double> q_side, p_side;
    q_side.reserve(reps);
    p_side.reserve(reps);
    for (long long rep = 0; rep < reps; ++rep) {
      const SpinalTree sp =
          sample_q_tree(law, n, salt + static_cast<uint64_t>(rep));
      const double w = additive_martingale(sp.tree, n);
      REQUIRE(w > 0.0);
      q_side.push_back(std::min(1.0 / w, 10.0));
      const MarkedTree t =
          sample_tree(law, n, salt + 500000 + static_cast<uint64_t>(rep),
                      SurvivalPolicy::AllowExtinct);
      const double wp = additive_martingale(t, n);
      p_side.push_back(wp > 0.0 ? wp * std::min(1.0 / wp, 10.0) : 0.0);
    }
    const double nq = static_cast<double>(q_side.size());
    const double gap =
        std::abs(stats::sample_mean(q_side) - stats::sample_mean(p_side));
    const double pooled = std::sqrt(stats::sample_var(q_side) / nq +
                                    stats::sample_var(p_side) / nq);
    CHECK(gap <= 3.0 * pooled);
  };
  run(critical_table(), 90000);
  run(critical_null(), 140000);
}

TEST_CASE("level sums of e^{-V} average to one over plain trees") {
  auto run = [](const OffspringLaw& law, int n, uint64_t salt) {
    const long long reps = 20000;
    std::vector<double> w;
    w.reserve(reps);
    for (long long rep = 0; rep < reps; ++rep) {
      const MarkedTree t = sample_tree(law, n, salt + static_cast<uint64_t>(rep),
                                       SurvivalPolicy::AllowExtinct);
      w.push_back(additive_martingale(t, n));
    }
    const double mean = stats::sample_mean(w);
    const double se =
        std::sqrt(stats::sample_var(w) / static_cast<double>(w.size()));
    CHECK(std::abs(mean - 1.0) <= 3.0 * se);
  };
  run(critical_table(), 4, 210000);
  run(critical_null(), 3, 260000);
}

TEST_CASE("ancestry-line sums match the tilted walk in distribution") {
  SUBCASE("constant functional is exact on the walk side") {
    const auto chk = many_to_one_check(critical_table(), 3,
                                       PathFunctional::one(), 20000, 31000);
    CHECK(chk.rhs.p_hat == 1.0);
    CHECK(chk.rhs.se == 0.0);
    CHECK(chk.consistent);
  }
  SUBCASE("offspring functional with a genuinely random count") {
    const auto chk =
        many_to_one_check(varying_nu_law(), 2,
                          PathFunctional::first_offspring_equals(3), 10000,
                          32000);
    CHECK(chk.rhs.p_hat > 0.3);
    CHECK(chk.rhs.p_hat < 0.7);
    CHECK(chk.consistent);
  }
  SUBCASE("offspring cap nobody satisfies is zero on both sides") {
    const auto chk = many_to_one_check(critical_table(), 2,
                                       PathFunctional::offspring_at_most(1),
                                       5000, 33000);
    CHECK(chk.lhs.p_hat == 0.0);
    CHECK(chk.rhs.p_hat == 0.0);
    CHECK(chk.consistent);
  }
  SUBCASE("potential band, Gaussian increments") {
    const auto chk = many_to_one_check(critical_null(), 3,
                                       PathFunctional::potential_band(-2.5, 2.5),
                                       15000, 34000);
    CHECK(chk.lhs.p_hat > 0.0);
    CHECK(chk.rhs.p_hat > 0.0);
    CHECK(chk.consistent);
  }
  SUBCASE("potential band that cuts two-step lattice paths") {
    const auto chk = many_to_one_check(critical_table(), 2,
                                       PathFunctional::potential_band(-1.1, 1.1),
                                       15000, 35000);
    CHECK(chk.rhs.p_hat > 0.0);
    CHECK(chk.rhs.p_hat < 1.0);
    CHECK(chk.consistent);
  }
  SUBCASE("population enumeration refuses deep levels") {
    CHECK_THROWS_AS(many_to_one_check(critical_table(), 5,
                                      PathFunctional::one(), 100, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(many_to_one_check(critical_table(), 2,
                                      PathFunctional::one(), 1, 1),
                    std::invalid_argument);
  }
}

TEST_CASE("weighted band sum: exact sweep equals direct enumeration") {
  const std::vector<std::pair<double, double>> atoms = {{0.5, 1.0},
                                                        {0.5, -1.0}};
  const StepLaw step = StepLaw::rademacher();
  const double b = bstar_for(1.0);
  for (int n : {12, 16}) {
    const double a = 0.61803 * b;
    const auto est = first_moment_rate(step, a, b, n, 0, 0);
    CHECK(est.exact);
    CHECK(est.se == 0.0);
    CHECK(est.reps == 0);
    const double ref = oracle::first_moment_sum_enum(atoms, a, b, n);
    CHECK(est.p_hat == doctest::Approx(ref).epsilon(1e-12));
    CHECK(est.predicted_rate == doctest::Approx(a - b));
  }
}

TEST_CASE("weighted band sum rate approaches a - b") {
  // The polylog corrections shrink like n^{-1/3} log n, so finite-n rates
  // sit well above a - b; the checkable facts are the monotone drift
  // toward the prediction and the bracketing from above.
  const double b = bstar_for(1.0);
  SUBCASE("a = b: the rate decreases toward zero from above") {
    const auto e216 = first_moment_rate(StepLaw::rademacher(), b, b, 216, 0, 0);
    const auto e512 = first_moment_rate(StepLaw::rademacher(), b, b, 512, 0, 0);
    const auto e1728 =
        first_moment_rate(StepLaw::rademacher(), b, b, 1728, 0, 0);
    CHECK(e1728.exact);
    CHECK(e1728.predicted_rate == doctest::Approx(0.0));
    CHECK(e216.rate < 0.7);
    CHECK(e216.rate > e512.rate);
    CHECK(e512.rate > e1728.rate);
    CHECK(e1728.rate > 0.0);
  }
  SUBCASE("a = b/2: the rate drifts down toward the negative prediction") {
    const auto e216 =
        first_moment_rate(StepLaw::rademacher(), 0.5 * b, b, 216, 0, 0);
    const auto e512 =
        first_moment_rate(StepLaw::rademacher(), 0.5 * b, b, 512, 0, 0);
    const auto e1728 =
        first_moment_rate(StepLaw::rademacher(), 0.5 * b, b, 1728, 0, 0);
    CHECK(e1728.exact);
    CHECK(e216.rate < 0.0);
    CHECK(e216.rate > e512.rate);
    CHECK(e512.rate > e1728.rate);
    CHECK(e1728.rate <= -0.55);
    CHECK(e1728.rate > e1728.predicted_rate);
    // the two slopes separate by roughly b/2 at matched depth
    const auto flat = first_moment_rate(StepLaw::rademacher(), b, b, 1728, 0, 0);
    CHECK(e1728.rate <= flat.rate - 0.9);
  }
  SUBCASE("n = 1 collapses to the single boundary weight") {
    const auto est = first_moment_rate(StepLaw::rademacher(), 0.4 * b, b, 1, 0, 0);
    CHECK(est.exact);
    CHECK(est.p_hat == doctest::Approx(std::exp(0.4 * b)).epsilon(1e-12));
    CHECK(est.rate == doctest::Approx(0.4 * b));
  }
}

TEST_CASE("weighted band sum: Monte Carlo fallback against quadrature") {
  const StepLaw step = StepLaw::gaussian(0.0, 1.0);
  const double b = bstar_for(1.0);
  const double a = 0.8 * b;
  const int n = 3;
  const double cn = std::cbrt(3.0);
  const auto est = first_moment_rate(step, a, b, n, 400000, 91);
  CHECK_FALSE(est.exact);
  CHECK_FALSE(est.insufficient);

  auto wj = [&](int j) {
    return std::exp(a * cn - b * std::cbrt(static_cast<double>(n - j)));
  };
  auto band_lo = [&](int i) {
    return a * cn - b * std::cbrt(static_cast<double>(n - i));
  };
  const double p1 =
      stats::normal_cdf(a * cn) - stats::normal_cdf(band_lo(1));
  const double p2 = oracle::gaussian_expect(
      [&](double s) {
        if (s <= band_lo(1) || s > a * cn) return 0.0;
        return stats::normal_cdf(a * cn - s) -
               stats::normal_cdf(band_lo(2) - s);
      },
      0.0, 1.0);
  const double ref = wj(1) + wj(2) * p1 + wj(3) * p2;
  CHECK(std::abs(est.p_hat - ref) <= 3.5 * est.se);
}

TEST_CASE("weighted band sum parameter guards") {
  const double b = bstar_for(1.0);
  CHECK_THROWS_AS(first_moment_rate(StepLaw::rademacher(), 1.0, 2.0, 8, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(first_moment_rate(StepLaw::rademacher(), 0.0, b, 8, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(first_moment_rate(StepLaw::rademacher(), b + 0.1, b, 8, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(first_moment_rate(StepLaw::rademacher(), 0.5 * b, b, 0, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      first_moment_rate(StepLaw::gaussian(0.0, 1.0), 0.5 * b, b, 8, 1, 0),
      std::invalid_argument);
}

TEST_CASE("band-and-cap bound: degenerate laws have closed answers") {
  const StepLaw unary = tilted_step_law(unary_law());
  SUBCASE("no cap leaves the ingredients but no bound") {
    const auto sm = second_moment_bound_ingredients(
        unary, IntervalFamily::whole_line(), std::nullopt, 5, 0, 0);
    CHECK(sm.numerator.exact);
    CHECK(sm.numerator.p_hat == 1.0);
    CHECK(sm.numerator.log_p == 0.0);
    CHECK(sm.h_sum.p_hat == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(sm.bound == 0.0);
    CHECK(sm.log_bound == -std::numeric_limits<double>::infinity());
  }
  SUBCASE("cap one erases the overlap correction") {
    const auto sm = second_moment_bound_ingredients(
        unary, IntervalFamily::whole_line(), 1, 5, 0, 0);
    CHECK(sm.bound == 1.0);
    CHECK(sm.rate == 0.0);
  }
  SUBCASE("unconstrained weighted mass is the moment power") {
    const StepLaw step = tilted_step_law(critical_table());
    const auto sm = second_moment_bound_ingredients(
        step, IntervalFamily::whole_line(), std::nullopt, 6, 0, 0);
    // E e^{S_1} = (e^{ln 2} + e^{-ln 2}) / 2 = 1.25
    CHECK(sm.numerator.p_hat ==
          doctest::Approx(std::pow(1.25, 6)).epsilon(1e-12));
  }
}

TEST_CASE("band-and-cap bound: exact sweep equals direct enumeration") {
  const StepLaw step = tilted_step_law(critical_table());
  const int n = 6;
  const double b = bstar_for(step.step_var());
  // eps = 0.45 keeps an even lattice point inside the depth-6 band (the
  // walk has period two, and 4 ln 2 misses the eps = 0.35 floor by 0.09)
  const auto iv = IntervalFamily::bands(b, b, 0.45);
  const long long cap = second_moment_default_cap(n);
  REQUIRE(cap == 4);
  const auto sm = second_moment_bound_ingredients(step, iv, cap, n, 0, 0);
  REQUIRE(sm.numerator.exact);
  REQUIRE(sm.h_sum.exact);

  std::vector<oracle::WeightedAtom> atoms;
  for (size_t i = 0; i < step.mixture.size(); ++i)
    atoms.push_back({step.mixture[i].first, step.mixture[i].second,
                     step.mixture_nu[i] <= cap});
  const double num_ref = oracle::weighted_band_enum(
      atoms, n, [&](int i) { return iv.lo(i, n); },
      [&](int i) { return iv.hi(i, n); });
  CHECK(sm.numerator.p_hat == doctest::Approx(num_ref).epsilon(1e-12));

  std::vector<oracle::WeightedAtom> free_atoms = atoms;
  for (auto& at : free_atoms) at.ok = true;
  double h_ref = 0.0;
  for (int j = 1; j <= n; ++j) {
    const double ulo = iv.lo(j, n), uhi = iv.hi(j, n);
    const double du = (uhi - ulo) / 63.0;
    double best = 0.0;
    for (int g = 0; g < 64; ++g) {
      const double u = ulo + du * static_cast<double>(g);
      best = std::max(best,
                      oracle::weighted_band_enum(
                          free_atoms, n - j,
                          [&](int i) { return iv.lo(i + j, n) - u; },
                          [&](int i) { return iv.hi(i + j, n) - u; }));
    }
    h_ref += best;
  }
  CHECK(sm.h_sum.p_hat == doctest::Approx(h_ref).epsilon(1e-12));

  // The assembled quantity lower-bounds the admissible-ray probability.
  const double exact = oracle::band_ray_exists_exact(
      critical_table(), n, [&](int i) { return iv.lo(i, n); },
      [&](int i) { return iv.hi(i, n); }, kLn2);
  CHECK(exact < 1.0);
  CHECK(sm.bound > 0.0);
  CHECK(sm.bound <= exact * (1.0 + 1e-12));
}

TEST_CASE("band-and-cap bound: Monte Carlo against Gaussian closed forms") {
  const StepLaw step = tilted_step_law(critical_null());
  REQUIRE(step.kind == StepLaw::Kind::Gaussian);
  const double var = step.var;
  const int n = 2;
  const double b = bstar_for(var);
  const auto iv = IntervalFamily::bands(b, b, 0.4);
  const long long cap = second_moment_default_cap(n);
  REQUIRE(cap == 3);
  const auto sm =
      second_moment_bound_ingredients(step, iv, cap, n, 300000, 4242);
  CHECK_FALSE(sm.numerator.exact);
  CHECK_FALSE(sm.insufficient);
  CHECK_FALSE(sm.grid_too_coarse);

  const double num_ref = oracle::gaussian_expect(
      [&](double s) {
        if (s < iv.lo(1, n) || s > iv.hi(1, n)) return 0.0;
        return std::exp(s) * oracle::exp_band_gaussian(
                                 0.0, var, iv.lo(2, n) - s, iv.hi(2, n) - s);
      },
      0.0, var);
  CHECK(std::abs(sm.numerator.p_hat - num_ref) <= 3.5 * sm.numerator.se);

  double h1 = 0.0;
  const double du = (iv.hi(1, n) - iv.lo(1, n)) / 63.0;
  for (int g = 0; g < 64; ++g) {
    const double u = iv.lo(1, n) + du * static_cast<double>(g);
    h1 = std::max(h1, oracle::exp_band_gaussian(0.0, var, iv.lo(2, n) - u,
                                                iv.hi(2, n) - u));
  }
  const double h_ref = h1 + 1.0;  // the j = n term is the empty product
  CHECK(std::abs(sm.h_sum.p_hat - h_ref) <= 3.5 * sm.h_sum.se + 0.002 * h_ref);
}

TEST_CASE("band-and-cap bound: deep lattice sweep stays in the rate window") {
  const StepLaw step = tilted_step_law(critical_table());
  const int n = 512;
  const double b = bstar_for(step.step_var());
  const auto iv = IntervalFamily::bands(b, b, 0.2);
  const long long cap = second_moment_default_cap(n);
  REQUIRE(cap == 116);
  const auto sm = second_moment_bound_ingredients(step, iv, cap, n, 0, 0);
  CHECK(sm.numerator.exact);
  CHECK(sm.h_sum.exact);
  CHECK(sm.bound > 0.0);
  CHECK(sm.rate <= 0.02);
  CHECK(sm.rate > -b);
}

TEST_CASE("band-and-cap bound guards") {
  CHECK_THROWS_AS(second_moment_bound_ingredients(
                      StepLaw::rademacher(), IntervalFamily::whole_line(), 4,
                      4, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(second_moment_bound_ingredients(
                      tilted_step_law(critical_table()),
                      IntervalFamily::whole_line(), 0, 4, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(second_moment_bound_ingredients(
                      tilted_step_law(critical_table()),
                      IntervalFamily::whole_line(), std::nullopt, 0, 0, 0),
                  std::invalid_argument);
  CHECK(second_moment_default_cap(6) == 4);
  CHECK(second_moment_default_cap(512) == 116);
}

TEST_CASE("return-product recursion dominates its partitioned lower bound") {
  SUBCASE("flat three-level chain by hand") {
    BirthDeathSpec spec;
    spec.b = {1.0, 1.0, 1.0};
    spec.r = {0.0, 0.0, 0.0};
    spec.partition = {0, 2};
    const auto zb = z_recursion_and_bound(spec);
    CHECK(zb.product == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(zb.bound == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(zb.holds);
  }
  SUBCASE("huge interior kill rates crush both sides") {
    BirthDeathSpec spec;
    spec.b = {1.0, 1.0, 1.0};
    spec.r = {0.0, 1e9, 1e9};
    spec.partition = {0, 2};
    const auto zb = z_recursion_and_bound(spec);
    CHECK(zb.product <= 1e-8);
    CHECK(zb.bound <= 1e-100);
    CHECK(zb.holds);
  }
  SUBCASE("ten thousand random specifications never violate the bound") {
    Stream st(515151);
    for (int trial = 0; trial < 10000; ++trial) {
      const int n = 2 + static_cast<int>(st.below(49));
      BirthDeathSpec spec;
      spec.b.resize(static_cast<size_t>(n));
      spec.r.resize(static_cast<size_t>(n));
      for (double& bi : spec.b) bi = std::exp(2.0 * st.u01() - 1.0);
      for (double& ri : spec.r) ri = st.u01();
      const int max_blocks = std::min(5, n - 1);
      const int blocks = 1 + static_cast<int>(
                                 st.below(static_cast<uint64_t>(max_blocks)));
      std::set<int> cuts;
      cuts.insert(0);
      cuts.insert(n - 1);
      while (static_cast<int>(cuts.size()) < blocks + 1)
        cuts.insert(1 + static_cast<int>(
                            st.below(static_cast<uint64_t>(n - 2)) ));
      spec.partition.assign(cuts.begin(), cuts.end());
      const auto zb = z_recursion_and_bound(spec);
      REQUIRE(zb.holds);
    }
  }
}

TEST_CASE("chain hit probability: closed form, direction, and simulation") {
  auto flat = [](double bval, int n) {
    BirthDeathSpec spec;
    spec.b.assign(static_cast<size_t>(n), bval);
    spec.r.assign(static_cast<size_t>(n), 0.0);
    spec.partition = {0, n - 1};
    return spec;
  };
  SUBCASE("symmetric chain gives the gambler's-ruin value") {
    const auto f = birth_death_formulas(flat(1.0, 4), 0, 3);
    CHECK(f.hit_prob == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(f.golosov_bound == doctest::Approx(9.0).epsilon(1e-15));
  }
  SUBCASE("drift away from the target raises the downhill hit probability") {
    // b < 1 tilts each step toward the target side: e^{v} grows with the
    // level, concentrating the denominator on i = m.
    const auto fdown = birth_death_formulas(flat(0.5, 4), 0, 3);
    CHECK(fdown.hit_prob == doctest::Approx(8.0 / 21.0).epsilon(1e-12));
    CHECK(fdown.hit_prob > 1.0 / 6.0);
    const auto fup = birth_death_formulas(flat(2.0, 4), 0, 3);
    CHECK(fup.hit_prob == doctest::Approx(1.0 / 21.0).epsilon(1e-12));
    CHECK(fup.hit_prob < 1.0 / 6.0);
  }
  SUBCASE("direct simulation agrees with both closed forms") {
    BirthDeathSpec spec;
    spec.b = {1.3, 0.7, 1.1, 0.9, 1.5, 0.6, 1.2, 0.8};
    spec.r.assign(8, 0.0);
    spec.partition = {0, 7};
    const int ell = 1, m = 6;
    const auto f = birth_death_formulas(spec, ell, m);
    const auto mc = birth_death_chain_mc(spec, ell, m, 200000, 616);
    CHECK(std::abs(mc.hit.p_hat - f.hit_prob) <= 3.5 * mc.hit.se);
    CHECK(mc.mean_hit_time > 0.0);
    CHECK(mc.mean_hit_time <= f.golosov_bound + 3.0 * mc.hit_time_se);

    const auto fsym = birth_death_formulas(flat(1.0, 4), 0, 3);
    const auto mcsym = birth_death_chain_mc(flat(1.0, 4), 0, 3, 200000, 617);
    CHECK(std::abs(mcsym.hit.p_hat - fsym.hit_prob) <= 3.5 * mcsym.hit.se);
    CHECK(mcsym.mean_hit_time <= fsym.golosov_bound + 3.0 * mcsym.hit_time_se);
  }
  SUBCASE("index guards") {
    CHECK_THROWS_AS(birth_death_formulas(flat(1.0, 4), 2, 2),
                    std::invalid_argument);
    CHECK_THROWS_AS(birth_death_formulas(flat(1.0, 4), 0, 4),
                    std::invalid_argument);
    BirthDeathSpec bad = flat(1.0, 4);
    bad.partition = {0, 1, 1, 3};
    CHECK_THROWS_AS(z_recursion_and_bound(bad), std::invalid_argument);
    bad = flat(1.0, 4);
    bad.b[2] = 0.0;
    CHECK_THROWS_AS(z_recursion_and_bound(bad), std::invalid_argument);
  }
}

TEST_CASE("nested return products are monotone convex in the kill rates") {
  CHECK(fj_convexity_probe(0.7, {0.9, 1.3}, 3, 200, 11));
  CHECK(fj_convexity_probe(0.3, {2.0}, 2, 50, 12));  // no free coordinates
  Stream st(737373);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 3 + static_cast<int>(st.below(6));
    std::vector<double> a(static_cast<size_t>(n) - 1);
    for (double& ai : a) ai = std::exp(2.0 * st.u01() - 1.0);
    CHECK(fj_convexity_probe(st.u01(), a, n, 40, 1000 + trial));
  }
  CHECK_THROWS_AS(fj_convexity_probe(1.2, {1.0}, 2, 10, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(fj_convexity_probe(0.5, {1.0, 1.0}, 2, 10, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(fj_convexity_probe(0.5, {0.0}, 2, 10, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(fj_convexity_probe(0.5, {}, 1, 10, 0),
                  std::invalid_argument);
}

TEST_CASE("spinal return product matches the dense absorption solve") {
  auto run = [](const OffspringLaw& law, uint64_t seed) {
    const int n = 5;
    const SpinalTree sp = sample_q_tree(law, n, seed);
    const MarkedTree& t = sp.tree;
    const auto d = spine_return_decomposition(sp);
    CHECK(d.y[static_cast<size_t>(n)] == 1.0);

    std::vector<char> success(t.size() + 1, 0);
    success[0] = 1;
    const auto h =
        oracle::absorption_probability(t, success, level_flags(t, n));
    const double ref = h[sp.spine[static_cast<size_t>(n) - 1]];
    CHECK(d.y_product == doctest::Approx(ref).epsilon(1e-10));
  };
  for (uint64_t seed = 1; seed <= 6; ++seed) {
    run(critical_table(), seed);
    run(critical_null(), 100 + seed);
  }
}

TEST_CASE("averaged brother escapes move the return product monotonically") {
  const int n = 5;
  const SpinalTree sp = sample_q_tree(critical_table(), n, 4321);
  const std::vector<double> ones(static_cast<size_t>(n), 1.0);
  const std::vector<double> zeros(static_cast<size_t>(n), 0.0);
  const auto d1 = spine_return_decomposition(sp, &ones);
  const auto d0 = spine_return_decomposition(sp, &zeros);
  const auto base = spine_return_decomposition(sp);
  // escape probabilities live in [0, 1]: clamping them to 1 (resp. 0) can
  // only shrink (resp. grow) the partial return product.
  CHECK(d1.z_product <= base.y_product + 1e-12);
  CHECK(d0.z_product >= base.y_product - 1e-12);

  const SpinalTree tiny = sample_q_tree(critical_table(), 1, 5);
  const auto dt = spine_return_decomposition(tiny, &ones);
  CHECK(dt.y_product == 1.0);
  CHECK(dt.z_product == 1.0);
}

TEST_CASE("level flow identity: top boundary mass equals root conductance") {
  // sum_{|x|=n} e^{-V(x)} h(parent(x)) = sum_{|c|=1} A_c escape(c): both
  // sides are the effective conductance between the root and level n.
  auto run = [](const MarkedTree& t, int n) {
    std::vector<char> success(t.size() + 1, 0);
    success[0] = 1;
    const auto h =
        oracle::absorption_probability(t, success, level_flags(t, n));
    double lhs = 0.0;
    for (VertexId x = 0; x < static_cast<VertexId>(t.size()); ++x)
      if (t.depth[x] == n) lhs += std::exp(-t.v[x]) * h[t.parent[x]];
    const auto sol = solve_levels(t, n);
    double rhs = 0.0;
    for (VertexId c = t.child_begin[0]; c < t.child_end[0]; ++c)
      rhs += t.a_mark[c] * sol.escape(c);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  };
  for (uint64_t seed = 1; seed <= 4; ++seed)
    run(sample_q_tree(critical_table(), 4, seed).tree, 4);
  run(sample_tree(critical_null(), 4, 99), 4);
}

TEST_CASE("spinal tree serialization round trip") {
  SUBCASE("full arena") {
    const SpinalTree sp = sample_q_tree(critical_table(), 4, 77);
    save_spinal_tree(sp, "spinal_rt.bin");
    const SpinalTree back = load_spinal_tree("spinal_rt.bin");
    CHECK(back.spine == sp.spine);
    CHECK(back.spine_potential == sp.spine_potential);
    CHECK(back.brothers == sp.brothers);
    CHECK(back.tree.v == sp.tree.v);
    CHECK(back.tree.a_mark == sp.tree.a_mark);
    CHECK(back.tree.key == sp.tree.key);
    CHECK(back.tree.child_begin == sp.tree.child_begin);
    std::remove("spinal_rt.bin");
  }
  SUBCASE("lazy arena keeps growing identically after a reload") {
    SpinalTree sp =
        sample_q_tree(critical_null(), 6, 9, SpineGrowth::SpineOnly);
    save_spinal_tree(sp, "spinal_lazy.bin");
    SpinalTree back = load_spinal_tree("spinal_lazy.bin");
    REQUIRE(back.brothers == sp.brothers);
    const VertexId brother = sp.brothers[2][0];
    sp.tree.ensure_children(brother);
    back.tree.ensure_children(brother);
    REQUIRE(sp.tree.size() == back.tree.size());
    CHECK(back.tree.a_mark == sp.tree.a_mark);
    CHECK(back.tree.key == sp.tree.key);
    std::remove("spinal_lazy.bin");
  }
  SUBCASE("format and path failures") {
    FILE* f = std::fopen("spinal_bad.bin", "wb");
    REQUIRE(f != nullptr);
    const char head[] = "{\"format\":\"rwre-tree-v1\",\"count\":0}\n";
    std::fwrite(head, 1, sizeof(head) - 1, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_spinal_tree("spinal_bad.bin"), std::runtime_error);
    std::remove("spinal_bad.bin");
    CHECK_THROWS_AS(load_spinal_tree("no_such_spinal_file.bin"),
                    std::runtime_error);
  }
}

TEST_CASE("spinal sampling regime guards") {
  CHECK_THROWS_AS(sample_q_tree(OffspringLaw::log_normal(2, 0.3, 0.1), 3, 1),
                  WrongRegime);
  CHECK_THROWS_AS(sample_q_tree(critical_table(), 0, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(additive_martingale(sample_q_tree(unary_law(), 2, 1).tree, -1),
                  std::invalid_argument);
}
