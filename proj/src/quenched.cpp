#include "rwre/quenched.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace rwre {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(1 + e^x) without overflow
double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// log sum of exp(terms); -inf entries are transparent
double logsumexp(const std::vector<double>& terms) {
  double m = kNegInf;
  for (double t : terms) m = std::max(m, t);
  if (m == kNegInf) return kNegInf;
  double s = 0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

// log S of the escape recursion at x: S = sum_children A_c g(c)
double log_weighted_child_sum(const MarkedTree& t,
                              const std::vector<double>& log_escape,
                              VertexId x) {
  std::vector<double> terms;
  if (t.materialized(x)) {
    terms.reserve(static_cast<size_t>(t.n_children(x)));
    for (VertexId c = t.child_begin[x]; c < t.child_end[x]; ++c)
      terms.push_back(std::log(t.a_mark[c]) + log_escape[c]);
  }
  return logsumexp(terms);
}

}  // namespace

QuenchedSolution solve_levels(const MarkedTree& t, int n) {
  if (n < 1) throw std::invalid_argument("solve_levels: n must be >= 1");
  bool level_exists = false;
  for (VertexId x = 0; x < t.size() && !level_exists; ++x)
    level_exists = (t.depth[x] == n);
  if (!level_exists)
    throw DepthUnavailable("solve_levels: no vertex at requested level");

  QuenchedSolution sol;
  sol.tree = &t;
  sol.level = n;
  sol.log_escape.assign(t.size(), std::numeric_limits<double>::quiet_NaN());

  // children always follow parents in the arena, so a reverse sweep is
  // bottom-up regardless of how the tree was grown
  for (VertexId x = static_cast<VertexId>(t.size()); x-- > 0;) {
    if (t.depth[x] > n) continue;
    if (t.depth[x] == n) {
      sol.log_escape[x] = 0.0;  // absorbing level
      continue;
    }
    const double ls = log_weighted_child_sum(t, sol.log_escape, x);
    // g = S/(1+S), log g = -softplus(-log S)
    sol.log_escape[x] = (ls == kNegInf) ? kNegInf : -softplus(-ls);
  }

  sol.log_beta = sol.log_escape[0];
  const double ls_root = log_weighted_child_sum(t, sol.log_escape, 0);
  sol.log_rho = ls_root - std::log1p(t.mark_sum(0));
  sol.beta_n = std::exp(sol.log_beta);
  sol.rho_n = std::exp(sol.log_rho);
  return sol;
}

double hit_before_return_path(const MarkedTree& t, VertexId x) {
  if (x == 0 || x >= t.size())
    throw std::invalid_argument("hit_before_return_path: x must be a proper vertex");
  // vbar[x] is the max of V over ]]root, x]]; factoring it out keeps every
  // exponential in [0, 1]
  const double m = t.vbar[x];
  double denom = 0.0;
  VertexId x1 = x;
  for (VertexId cur = x; cur != 0; cur = t.parent[cur]) {
    denom += std::exp(t.v[cur] - m);
    x1 = cur;
  }
  const double omega_root_x1 = t.a_mark[x1] / (1.0 + t.mark_sum(0));
  return omega_root_x1 * std::exp(t.v[x1] - m) / denom;
}

double expected_visits(const MarkedTree& t, VertexId x) {
  if (x >= t.size())
    throw std::invalid_argument("expected_visits: bad vertex id");
  // omega(root, below) e^{-V(x)} / omega(x, parent)
  return (1.0 + t.mark_sum(x)) * std::exp(-t.v[x]) / (1.0 + t.mark_sum(0));
}

PotentialBoundCheck rho_potential_bound_check(const MarkedTree& t, int n) {
  PotentialBoundCheck out;
  out.lhs = solve_levels(t, n).rho_n;

  double c = std::numeric_limits<double>::infinity();
  const double denom = 1.0 + t.mark_sum(0);
  for (VertexId ch = t.child_begin[0]; ch < t.child_end[0]; ++ch)
    c = std::min(c, (t.a_mark[ch] / denom) * std::exp(t.v[ch]));
  out.c_omega = c;

  const double min_vbar = min_vbar_exact(t, n).min_vbar;
  out.rhs = (c / n) * std::exp(-min_vbar);
  out.holds = out.lhs >= out.rhs * (1.0 - 1e-9);
  return out;
}

}  // namespace rwre
