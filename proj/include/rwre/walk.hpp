// Quenched walk simulation: exact chain stepping with cached alias rows,
// geometric checkpointing of the running max displacement, first-passage
// times, Monte Carlo level-hitting estimates, and the displacement-vs-
// (log n)^3 comparison table.
#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "rwre/estimate.hpp"
#include "rwre/law.hpp"
#include "rwre/tree.hpp"

namespace rwre {

enum class BoundaryPolicy {
  ReflectAtParentOfRoot,  // grow the tree lazily, walk is unbounded above
  AbsorbAtDepthCap        // stop (with a flag) when the walk reaches depth_cap
};

struct Trajectory {
  long long steps_taken = 0;
  // running max |X_j| sampled at steps ceil(1.1^j), plus the final step
  std::vector<std::pair<long long, double>> max_depth_curve;
  std::map<int, long long> tau;  // level -> first-passage step; tau[0] = 0
  long long returns_to_root = 0;
  VertexId current = 0;          // kNoVertex when standing below the root
  bool depth_cap_hit = false;
  uint64_t rng_seed = 0;
  // filled only when run_walk is asked to record (debug); kNoVertex encodes
  // the position below the root
  std::vector<VertexId> positions;
};

// Exact simulation started at the root. The tree grows lazily along the
// walk under ReflectAtParentOfRoot (hence the mutable reference); growth
// draws no randomness from the walk stream, so trajectories are reproducible
// bit for bit given (tree seed, rng_seed).
Trajectory run_walk(MarkedTree& tree, long long n_steps, uint64_t rng_seed,
                    BoundaryPolicy policy = BoundaryPolicy::ReflectAtParentOfRoot,
                    bool record_positions = false);

// Fraction of excursions from the root that reach level n before stepping
// below the root. Vertices with undrawn offspring act as childless, matching
// solve_levels. Requires n >= 1 and a vertex at depth n.
RateEstimate estimate_beta_mc(const MarkedTree& tree, int n, long long excursions,
                              uint64_t rng_seed);

struct DisplacementRow {
  long long k = 0;
  double max_depth = 0.0;     // median across trajectories
  double prediction = 0.0;    // constant * (log k)^3
  double ratio = 0.0;
};

struct DisplacementTable {
  std::vector<DisplacementRow> rows;
  double ratio_trend = 1.0;   // last ratio / ratio near sqrt(last k)
  bool cube_log_plausible = true;  // false when the ratios keep growing
};

// Per-checkpoint comparison of the measured running max against the
// predicted constant * (log k)^3 curve. Throws WrongRegime when the law has
// no critical displacement constant.
DisplacementTable displacement_scaling(const std::vector<Trajectory>& trajectories,
                                       const RegimeReport& constants);

// Translates a measured decay rate -log rho_n ~ c n^{1/3} into the matching
// displacement constant 1/c^3.
double displacement_constant_from_rate(double c);

}  // namespace rwre
