// Marked Galton-Watson environments: arena storage, potential V and running
// max V-bar, transition rows, exact and pruned min-V-bar searches, and a
// binary serialization round trip.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "rwre/errors.hpp"
#include "rwre/law.hpp"
#include "rwre/rng.hpp"

namespace rwre {

using VertexId = uint32_t;
inline constexpr VertexId kNoVertex = std::numeric_limits<VertexId>::max();

enum class SurvivalPolicy { AllowExtinct, RejectUntilDepth };

struct MarkedTree {
  OffspringLaw law;
  uint64_t seed = 0;       // effective seed (after extinction retries)
  uint64_t base_seed = 0;  // seed the caller passed in
  int attempts_used = 0;   // extinction rejections + 1
  int depth_cap = 0;       // generations guaranteed materialized by sampling

  // arena; index 0 is the root, vertices appear in nondecreasing depth order
  std::vector<VertexId> parent;      // kNoVertex at the root
  std::vector<int32_t> depth;
  std::vector<double> a_mark;        // A on the edge parent -> this; 0 at root
  std::vector<double> v;             // potential; v[0] = 0
  std::vector<double> vbar;          // max of v over ]]root, x]]; -inf at root
  std::vector<uint64_t> key;         // per-vertex RNG key
  // contiguous child range [child_begin, child_end); child_begin == kNoVertex
  // means the vertex's offspring have not been drawn yet
  std::vector<VertexId> child_begin;
  std::vector<VertexId> child_end;

  size_t size() const { return parent.size(); }
  bool materialized(VertexId x) const { return child_begin[x] != kNoVertex; }
  int n_children(VertexId x) const { return static_cast<int>(child_end[x] - child_begin[x]); }

  // Sum of the marks attached to x's children (the A_i(x) row).
  double mark_sum(VertexId x) const {
    double s = 0;
    for (VertexId c = child_begin[x]; c < child_end[x]; ++c) s += a_mark[c];
    return s;
  }

  // omega(x, parent(x)) = 1/(1 + sum A_i(x)); requires materialized(x) or a
  // childless leaf (then 1).
  double omega_to_parent(VertexId x) const { return 1.0 / (1.0 + mark_sum(x)); }

  // Draw x's offspring if not drawn yet; appends children to the arena.
  void ensure_children(VertexId x);

  // first vertex index at each materialized depth (levels are contiguous
  // only for BFS-sampled trees; use vertices_at_depth for general access)
  std::vector<VertexId> vertices_at_depth(int d) const;
};

MarkedTree sample_tree(const OffspringLaw& law, int depth, uint64_t rng_seed,
                       SurvivalPolicy policy = SurvivalPolicy::RejectUntilDepth,
                       int max_attempts = 1000);

// Transition row of the walk at x: (neighbor, probability) pairs; the parent
// entry comes first, with kNoVertex standing for the root's artificial
// parent. Passing x = kNoVertex yields the artificial parent's row {(root,1)}.
std::vector<std::pair<VertexId, double>> transition_row(const MarkedTree& tree,
                                                        VertexId x);

struct RaySummary {
  int depth = 0;
  double min_vbar = 0.0;
  std::vector<int> argmin_ranks;   // child rank per generation, length depth
  std::vector<double> argmin_v;    // V along the argmin ray, length depth
  long long explored_count = 0;
};

// Exact min over |x|=n of V-bar(x) by DFS over the materialized arena.
RaySummary min_vbar_exact(const MarkedTree& tree, int n);

struct PrunedResult {
  enum class Status { Found, ThresholdExceeded, BudgetExceeded };
  Status status = Status::ThresholdExceeded;
  RaySummary summary;       // valid when status == Found
  double best_seen = std::numeric_limits<double>::infinity();
  long long explored_count = 0;
};

// Lazy depth-first search over the tree determined by (law, seed): prunes any
// vertex whose running max exceeds min(threshold, best complete ray so far),
// so a Found result carries the exact minimum. Never materializes an arena.
PrunedResult min_vbar_pruned(const OffspringLaw& law, int n, double threshold,
                             uint64_t rng_seed,
                             long long explored_budget = 100000000);

// Escalating-threshold driver: retries min_vbar_pruned with a growing
// threshold until the exact minimum is found or the budget is spent.
PrunedResult min_vbar_adaptive(const OffspringLaw& law, int n,
                               double initial_threshold, uint64_t rng_seed,
                               long long explored_budget = 100000000);

void save_tree(const MarkedTree& tree, const std::string& path);
MarkedTree load_tree(const std::string& path);

}  // namespace rwre
