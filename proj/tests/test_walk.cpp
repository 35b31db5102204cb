#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "rwre/quenched.hpp"
#include "rwre/walk.hpp"

using namespace rwre;

namespace {
const double kLn2 = std::log(2.0);

OffspringLaw critical_null() { return OffspringLaw::log_normal(2, -2 * kLn2, 2 * kLn2); }

OffspringLaw critical_table() {
  return OffspringLaw::discrete({{0.125, 2, {2.0, 2.0}},
                                 {0.5, 2, {0.5, 0.5}},
                                 {0.375, 0, {}}});
}

OffspringLaw unary_law() { return OffspringLaw::discrete({{1.0, 1, {1.0}}}); }
}  // namespace

TEST_CASE("zero steps is the trivial trajectory") {
  auto t = sample_tree(critical_null(), 3, 1);
  auto tr = run_walk(t, 0, 42);
  CHECK(tr.steps_taken == 0);
  CHECK(tr.current == 0);
  CHECK(tr.returns_to_root == 0);
  REQUIRE(tr.max_depth_curve.size() == 1);
  CHECK(tr.max_depth_curve[0].second == 0.0);
  CHECK(tr.tau.at(0) == 0);
}

TEST_CASE("unary walk obeys the sqrt(n) sanity band") {
  auto t = sample_tree(unary_law(), 1, 5);
  auto tr = run_walk(t, 1000000, 2024);
  const double maxd = tr.max_depth_curve.back().second;
  CHECK(maxd >= 10.0);
  CHECK(maxd <= 10000.0);
  CHECK(tr.returns_to_root > 100);
  // the tree was grown on demand well past its sampled depth
  CHECK(t.size() > 100);
  CHECK(t.depth.back() >= static_cast<int>(maxd));
}

TEST_CASE("trajectories are reproducible bit for bit") {
  auto t1 = sample_tree(critical_null(), 4, 99);
  auto t2 = sample_tree(critical_null(), 4, 99);
  auto a = run_walk(t1, 200000, 7);
  auto b = run_walk(t2, 200000, 7);
  CHECK(a.max_depth_curve == b.max_depth_curve);
  CHECK(a.tau == b.tau);
  CHECK(a.returns_to_root == b.returns_to_root);
  CHECK(a.current == b.current);
  CHECK(t1.size() == t2.size());
  CHECK(t1.a_mark == t2.a_mark);

  auto t3 = sample_tree(critical_null(), 4, 99);
  auto c = run_walk(t3, 200000, 8);
  CHECK(c.tau != a.tau);
}

TEST_CASE("checkpoint curve equals brute recomputation from positions") {
  auto t = sample_tree(critical_null(), 4, 17);
  auto tr = run_walk(t, 10000, 3, BoundaryPolicy::ReflectAtParentOfRoot, true);
  REQUIRE(tr.positions.size() == 10001);

  std::vector<double> prefix_max(tr.positions.size());
  double m = 0;
  for (size_t j = 0; j < tr.positions.size(); ++j) {
    const double d =
        tr.positions[j] == kNoVertex ? 0.0 : static_cast<double>(t.depth[tr.positions[j]]);
    m = std::max(m, d);
    prefix_max[j] = m;
  }
  for (const auto& [k, d] : tr.max_depth_curve)
    CHECK(d == prefix_max[static_cast<size_t>(k)]);

  // curve nondecreasing, first-passage times strictly increasing in level
  for (size_t i = 1; i < tr.max_depth_curve.size(); ++i) {
    CHECK(tr.max_depth_curve[i].first > tr.max_depth_curve[i - 1].first);
    CHECK(tr.max_depth_curve[i].second >= tr.max_depth_curve[i - 1].second);
  }
  long long prev = -1;
  for (const auto& [level, step] : tr.tau) {
    CHECK(step > prev);
    prev = step;
  }
}

TEST_CASE("absorption at the depth cap") {
  auto t = sample_tree(unary_law(), 5, 5);
  auto tr = run_walk(t, 1000000, 11, BoundaryPolicy::AbsorbAtDepthCap);
  CHECK(tr.depth_cap_hit);
  CHECK(tr.steps_taken < 1000000);
  CHECK(t.depth[tr.current] == 5);
  CHECK(tr.max_depth_curve.back().second == 5.0);
  CHECK(tr.tau.at(5) == tr.steps_taken);
  // absorbing run never grows the tree
  CHECK(t.size() == 6);
}

TEST_CASE("long-run visit frequencies match the invariant measure") {
  // find a finite chain: a table-law tree that went extinct everywhere
  MarkedTree t;
  bool ok = false;
  for (uint64_t seed = 0; seed < 200 && !ok; ++seed) {
    t = sample_tree(critical_table(), 8, 3000 + seed, SurvivalPolicy::AllowExtinct);
    bool fully_extinct = true;
    for (VertexId x = 0; x < t.size(); ++x)
      if (t.depth[x] == 8) fully_extinct = false;
    ok = fully_extinct && t.size() >= 8;
  }
  REQUIRE(ok);

  const size_t size_before = t.size();
  auto tr = run_walk(t, 1000000, 31, BoundaryPolicy::ReflectAtParentOfRoot, true);
  CHECK(t.size() == size_before);  // every leaf was already materialized

  std::vector<long long> visits(t.size(), 0);
  long long below_visits = 0;
  for (VertexId p : tr.positions) {
    if (p == kNoVertex)
      ++below_visits;
    else
      ++visits[p];
  }
  // pi(x) = e^{-V(x)} / omega(x, parent); pi(below) = 1
  std::vector<double> pi(t.size());
  double total = 1.0;
  for (VertexId x = 0; x < t.size(); ++x) {
    pi[x] = std::exp(-t.v[x]) * (1.0 + t.mark_sum(x));
    total += pi[x];
  }
  const double steps = static_cast<double>(tr.positions.size());
  for (VertexId x = 0; x < t.size(); ++x) {
    const double expected = steps * pi[x] / total;
    if (expected < 1000) continue;
    CHECK(std::abs(visits[x] / expected - 1.0) <= 0.15);
  }
  const double expected_below = steps / total;
  if (expected_below >= 1000)
    CHECK(std::abs(below_visits / expected_below - 1.0) <= 0.15);
}

TEST_CASE("level-hitting Monte Carlo agrees with the exact solver") {
  auto tu = sample_tree(unary_law(), 4, 1);
  auto est = estimate_beta_mc(tu, 4, 100000, 55);
  CHECK(std::abs(est.p_hat - 0.2) <= 3 * est.se);
  CHECK(est.reps == 100000);

  CHECK_THROWS_AS(estimate_beta_mc(tu, 0, 1000, 1), std::invalid_argument);
  CHECK_THROWS_AS(estimate_beta_mc(tu, 9, 1000, 1), DepthUnavailable);

  for (uint64_t seed : {101u, 102u, 103u, 104u, 105u}) {
    auto t = sample_tree(critical_null(), 4, seed);
    for (int n : {2, 4}) {
      const double exact = solve_levels(t, n).beta_n;
      auto mc = estimate_beta_mc(t, n, 100000, seed * 13 + n);
      CHECK(std::abs(mc.p_hat - exact) <= 3.5 * mc.se);
    }
  }
}

TEST_CASE("displacement table and the rate converter") {
  auto rep = limit_constants(critical_null());
  REQUIRE(rep.predicted_displacement_constant.has_value());
  const double c4a = *rep.predicted_displacement_constant;

  // synthetic curve lying exactly on the predicted law -> ratios one
  Trajectory synth;
  synth.steps_taken = 10000;
  for (long long k : {10, 100, 1000, 10000}) {
    const double lk = std::log(static_cast<double>(k));
    synth.max_depth_curve.emplace_back(k, c4a * lk * lk * lk);
  }
  auto table = displacement_scaling({synth}, rep);
  REQUIRE(table.rows.size() == 4);
  for (const auto& row : table.rows)
    CHECK(row.ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(table.cube_log_plausible);

  // sqrt(n) growth must be flagged as incompatible
  auto tu = sample_tree(unary_law(), 1, 5);
  auto srw = run_walk(tu, 1000000, 2024);
  auto diverging = displacement_scaling({srw}, rep);
  CHECK(!diverging.cube_log_plausible);
  CHECK(diverging.ratio_trend > 2.5);

  // measured rate c = (3 pi^2 sigma^2 / 8)^{1/3} converts to 4/alpha
  const double sigma2 = 2 * kLn2;
  const double c = std::cbrt(3 * M_PI * M_PI * sigma2 / 8.0);
  CHECK(displacement_constant_from_rate(c) == doctest::Approx(c4a).epsilon(1e-12));

  auto transient = limit_constants(OffspringLaw::log_normal(2, 0.5, 0.1));
  CHECK_THROWS_AS(displacement_scaling({synth}, transient), WrongRegime);
}
