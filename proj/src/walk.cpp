#include "rwre/walk.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "rwre/rng.hpp"

namespace rwre {

namespace {

constexpr uint64_t kWalkSalt = 0x77616c6bu;
constexpr uint64_t kBetaSalt = 0x62657461u;

// Walker alias table over a transition row; O(1) per sample.
struct AliasRow {
  std::vector<double> prob;
  std::vector<uint32_t> alias;
  std::vector<VertexId> target;  // kNoVertex encodes "below the root"

  explicit AliasRow(const std::vector<std::pair<VertexId, double>>& row) {
    const size_t m = row.size();
    prob.assign(m, 0.0);
    alias.assign(m, 0);
    target.resize(m);
    std::vector<double> scaled(m);
    for (size_t i = 0; i < m; ++i) {
      target[i] = row[i].first;
      scaled[i] = row[i].second * static_cast<double>(m);
    }
    std::vector<uint32_t> small, large;
    for (size_t i = 0; i < m; ++i)
      (scaled[i] < 1.0 ? small : large).push_back(static_cast<uint32_t>(i));
    while (!small.empty() && !large.empty()) {
      const uint32_t s = small.back();
      small.pop_back();
      const uint32_t l = large.back();
      prob[s] = scaled[s];
      alias[s] = l;
      scaled[l] -= 1.0 - scaled[s];
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (uint32_t i : large) prob[i] = 1.0;
    for (uint32_t i : small) prob[i] = 1.0;
  }

  VertexId sample(Stream& st) const {
    const uint64_t i = st.below(target.size());
    return target[st.u01() < prob[i] ? i : alias[i]];
  }
};

// Lazy per-vertex cache. Vertices with undrawn offspring get the childless
// row (step to the parent with probability one), matching the truncated
// chain used by the exact solver.
struct RowCache {
  std::vector<std::unique_ptr<AliasRow>> rows;

  const AliasRow& get(const MarkedTree& t, VertexId x) {
    if (x >= rows.size()) rows.resize(t.size());
    if (!rows[x]) {
      if (t.materialized(x)) {
        rows[x] = std::make_unique<AliasRow>(transition_row(t, x));
      } else {
        std::vector<std::pair<VertexId, double>> row{{t.parent[x], 1.0}};
        rows[x] = std::make_unique<AliasRow>(row);
      }
    }
    return *rows[x];
  }
};

std::vector<long long> checkpoint_steps(long long n_steps) {
  std::vector<long long> ck;
  double v = 1.0;
  while (true) {
    const long long k = static_cast<long long>(std::ceil(v));
    if (k > n_steps) break;
    if (ck.empty() || k != ck.back()) ck.push_back(k);
    v *= 1.1;
  }
  if (n_steps > 0 && (ck.empty() || ck.back() != n_steps))
    ck.push_back(n_steps);
  return ck;
}

}  // namespace

Trajectory run_walk(MarkedTree& tree, long long n_steps, uint64_t rng_seed,
                    BoundaryPolicy policy, bool record_positions) {
  if (n_steps < 0) throw std::invalid_argument("run_walk: negative n_steps");
  Trajectory tr;
  tr.rng_seed = rng_seed;
  tr.tau[0] = 0;

  Stream st(mix64(rng_seed, kWalkSalt));
  RowCache cache;
  const auto ck = checkpoint_steps(n_steps);
  size_t next_ck = 0;

  VertexId x = 0;
  bool below = false;
  int max_depth = 0;
  if (record_positions) tr.positions.push_back(0);

  for (long long i = 1; i <= n_steps; ++i) {
    if (below) {
      below = false;
      x = 0;
      ++tr.returns_to_root;
    } else {
      if (!tree.materialized(x) &&
          policy == BoundaryPolicy::ReflectAtParentOfRoot)
        tree.ensure_children(x);
      const VertexId next = cache.get(tree, x).sample(st);
      if (next == kNoVertex) {
        below = true;
      } else {
        x = next;
        if (x == 0) ++tr.returns_to_root;
        const int d = tree.depth[x];
        if (d > max_depth) {
          max_depth = d;  // depth changes by one per step
          tr.tau[d] = i;
        }
      }
    }
    tr.steps_taken = i;
    if (record_positions) tr.positions.push_back(below ? kNoVertex : x);
    while (next_ck < ck.size() && ck[next_ck] == i) {
      tr.max_depth_curve.emplace_back(i, static_cast<double>(max_depth));
      ++next_ck;
    }
    if (!below && policy == BoundaryPolicy::AbsorbAtDepthCap &&
        tree.depth[x] >= tree.depth_cap) {
      tr.depth_cap_hit = true;
      break;
    }
  }
  if (tr.max_depth_curve.empty() ||
      tr.max_depth_curve.back().first != tr.steps_taken)
    tr.max_depth_curve.emplace_back(tr.steps_taken,
                                    static_cast<double>(max_depth));
  tr.current = below ? kNoVertex : x;
  return tr;
}

RateEstimate estimate_beta_mc(const MarkedTree& tree, int n, long long excursions,
                              uint64_t rng_seed) {
  if (n < 1) throw std::invalid_argument("estimate_beta_mc: n must be >= 1");
  if (excursions < 1)
    throw std::invalid_argument("estimate_beta_mc: need at least one excursion");
  bool level_exists = false;
  for (VertexId x = 0; x < tree.size() && !level_exists; ++x)
    level_exists = (tree.depth[x] == n);
  if (!level_exists)
    throw DepthUnavailable("estimate_beta_mc: no vertex at requested level");

  Stream st(mix64(rng_seed, kBetaSalt));
  RowCache cache;
  long long hits = 0;
  for (long long e = 0; e < excursions; ++e) {
    VertexId x = 0;
    while (true) {
      if (tree.depth[x] == n) {
        ++hits;
        break;
      }
      const VertexId next = cache.get(tree, x).sample(st);
      if (next == kNoVertex) break;  // stepped below the root first
      x = next;
    }
  }
  return RateEstimate::from_bernoulli(hits, excursions);
}

DisplacementTable displacement_scaling(const std::vector<Trajectory>& trajectories,
                                       const RegimeReport& constants) {
  if (!constants.predicted_displacement_constant)
    throw WrongRegime(
        "displacement_scaling: law has no critical displacement constant");
  if (trajectories.empty())
    throw std::invalid_argument("displacement_scaling: no trajectories");
  const double c = *constants.predicted_displacement_constant;

  long long min_steps = trajectories.front().steps_taken;
  for (const auto& tr : trajectories)
    min_steps = std::min(min_steps, tr.steps_taken);

  DisplacementTable table;
  std::vector<double> depths;
  for (const auto& [k, d0] : trajectories.front().max_depth_curve) {
    if (k < 3 || k > min_steps) continue;  // need log k clear of zero
    depths.clear();
    bool everywhere = true;
    for (const auto& tr : trajectories) {
      double found = -1.0;
      for (const auto& [kk, dd] : tr.max_depth_curve)
        if (kk == k) {
          found = dd;
          break;
        }
      if (found < 0) {
        everywhere = false;
        break;
      }
      depths.push_back(found);
    }
    if (!everywhere) continue;
    std::sort(depths.begin(), depths.end());
    const size_t m = depths.size();
    const double median =
        (m % 2) ? depths[m / 2] : 0.5 * (depths[m / 2 - 1] + depths[m / 2]);
    const double lk = std::log(static_cast<double>(k));
    DisplacementRow row;
    row.k = k;
    row.max_depth = median;
    row.prediction = c * lk * lk * lk;
    row.ratio = median / row.prediction;
    table.rows.push_back(row);
  }

  if (table.rows.size() >= 2) {
    const auto& last = table.rows.back();
    const double mid_target = std::sqrt(static_cast<double>(last.k));
    const DisplacementRow* mid = &table.rows.front();
    for (const auto& r : table.rows)
      if (std::fabs(static_cast<double>(r.k) - mid_target) <
          std::fabs(static_cast<double>(mid->k) - mid_target))
        mid = &r;
    if (mid->ratio > 0 && mid->k < last.k) {
      table.ratio_trend = last.ratio / mid->ratio;
      table.cube_log_plausible = table.ratio_trend <= 2.5;
    }
  }
  return table;
}

double displacement_constant_from_rate(double c) {
  if (c <= 0)
    throw std::invalid_argument("displacement_constant_from_rate: c must be > 0");
  return 1.0 / (c * c * c);
}

}  // namespace rwre
