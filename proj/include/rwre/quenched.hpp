// Exact quenched hitting and return probabilities on a fixed environment:
// level-absorbing escape recursion in log-space, closed-form path formulas,
// and the potential lower bound on the no-return probability.
#pragma once

#include <cmath>
#include <vector>

#include "rwre/tree.hpp"

namespace rwre {

struct QuenchedSolution {
  const MarkedTree* tree = nullptr;
  int level = 0;

  // beta_n = P{hit level n before the artificial parent below the root},
  // rho_n = P{hit level n before returning to the root}; log variants stay
  // finite long after the linear ones underflow.
  double beta_n = 0.0;
  double rho_n = 0.0;
  double log_beta = -std::numeric_limits<double>::infinity();
  double log_rho = -std::numeric_limits<double>::infinity();

  // log of each vertex's probability of reaching level n before stepping to
  // its parent; 0 at level n, -inf where level n is unreachable, NaN for
  // vertices deeper than the level.
  std::vector<double> log_escape;

  double escape(VertexId x) const { return std::exp(log_escape[x]); }
  double conductance(VertexId x) const { return std::exp(-tree->v[x]); }
};

// Bottom-up solve with level n absorbing. Vertices whose offspring were
// never drawn count as childless, i.e. the chain is the one on the
// materialized arena. Requires a vertex at depth n.
QuenchedSolution solve_levels(const MarkedTree& tree, int n);

// P{hit x before returning to the root}, via the one-dimensional reduction
// along ]]root, x]]: omega(root, x1) e^{V(x1)} / sum_z e^{V(z)}, evaluated
// with the path maximum factored out. x must not be the root.
double hit_before_return_path(const MarkedTree& tree, VertexId x);

// Expected number of visits to x during one excursion from the root
// (counting time 0): omega(root, below) e^{-V(x)} / omega(x, parent).
double expected_visits(const MarkedTree& tree, VertexId x);

struct PotentialBoundCheck {
  double lhs = 0.0;   // exact rho_n
  double rhs = 0.0;   // (c/n) exp(-min over |x|=n of max V on the ray)
  double c_omega = 0.0;
  bool holds = false;
};

// Checks rho_n >= (c/n) e^{-min vbar} with c = min over root children of
// omega(root, child) e^{V(child)}.
PotentialBoundCheck rho_potential_bound_check(const MarkedTree& tree, int n);

}  // namespace rwre
