#include "rwre/tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "rwre/law_json.hpp"
#include "rwre/rng.hpp"

namespace rwre {

namespace {

constexpr uint64_t kTreeSalt = 0x74726565u;  // root key namespace
constexpr uint64_t kMarkSalt = 0x6d61726bu;  // per-child mark draw
constexpr uint64_t kAtomSalt = 0x61746f6du;  // per-vertex offspring atom

uint64_t root_key_for(uint64_t seed, uint32_t attempt) {
  return mix64(seed ^ kTreeSalt, attempt);
}

// Offspring of the vertex identified by `key`. Marks are pure functions of
// the keys, so eager sampling, lazy growth during a walk, and the arena-free
// pruned search all see bit-identical trees.
struct ChildDraw {
  uint64_t key;
  double a;
};

void draw_offspring(const OffspringLaw& law, uint64_t key,
                    std::vector<ChildDraw>& out) {
  out.clear();
  if (law.kind == OffspringLaw::Kind::LogNormal) {
    out.reserve(static_cast<size_t>(law.n_children));
    for (int r = 0; r < law.n_children; ++r) {
      const uint64_t ck = mix64(key, static_cast<uint64_t>(r));
      Stream st(mix64(ck, kMarkSalt));
      out.push_back({ck, std::exp(st.normal(law.mu, law.s2))});
    }
    return;
  }
  Stream st(mix64(key, kAtomSalt));
  const double u = st.u01();
  double acc = 0.0;
  const DiscreteAtom* chosen = &law.atoms.back();
  for (const auto& at : law.atoms) {
    acc += at.prob;
    if (u < acc) {
      chosen = &at;
      break;
    }
  }
  out.reserve(static_cast<size_t>(chosen->n));
  for (int r = 0; r < chosen->n; ++r)
    out.push_back({mix64(key, static_cast<uint64_t>(r)), chosen->a[r]});
}

void push_root(MarkedTree& t, uint64_t root_key) {
  t.parent.push_back(kNoVertex);
  t.depth.push_back(0);
  t.a_mark.push_back(0.0);
  t.v.push_back(0.0);
  t.vbar.push_back(-std::numeric_limits<double>::infinity());
  t.key.push_back(root_key);
  t.child_begin.push_back(kNoVertex);
  t.child_end.push_back(kNoVertex);
}

void push_child(MarkedTree& t, VertexId x, uint64_t child_key, double a) {
  t.parent.push_back(x);
  t.depth.push_back(t.depth[x] + 1);
  t.a_mark.push_back(a);
  const double vc = t.v[x] - std::log(a);
  t.v.push_back(vc);
  t.vbar.push_back(x == 0 ? vc : std::max(t.vbar[x], vc));
  t.key.push_back(child_key);
  t.child_begin.push_back(kNoVertex);
  t.child_end.push_back(kNoVertex);
}

}  // namespace

void MarkedTree::ensure_children(VertexId x) {
  if (x >= size()) throw std::out_of_range("ensure_children: bad vertex id");
  if (materialized(x)) return;

  std::vector<ChildDraw> kids;
  draw_offspring(law, key[x], kids);
  child_begin[x] = static_cast<VertexId>(size());
  child_end[x] = static_cast<VertexId>(size() + kids.size());
  for (const auto& k : kids) push_child(*this, x, k.key, k.a);
}

std::vector<VertexId> MarkedTree::vertices_at_depth(int d) const {
  std::vector<VertexId> out;
  for (VertexId x = 0; x < size(); ++x)
    if (depth[x] == d) out.push_back(x);
  return out;
}

MarkedTree sample_tree(const OffspringLaw& law, int depth, uint64_t rng_seed,
                       SurvivalPolicy policy, int max_attempts) {
  law.validate();
  if (depth < 0) throw std::invalid_argument("sample_tree: negative depth");
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    MarkedTree t;
    t.law = law;
    t.base_seed = rng_seed;
    t.seed = rng_seed;
    t.attempts_used = attempt + 1;
    t.depth_cap = depth;
    push_root(t, root_key_for(rng_seed, static_cast<uint32_t>(attempt)));

    for (VertexId x = 0; x < t.size(); ++x) {
      if (t.depth[x] >= depth) break;  // BFS order: the rest is at the cap
      t.ensure_children(x);
    }
    const int reached = t.depth.back();  // BFS order: deepest is last
    if (reached >= depth || policy == SurvivalPolicy::AllowExtinct)
      return t;
  }
  throw ExtinctionBudgetExceeded(
      "sample_tree: no tree surviving to requested depth within attempt "
      "budget");
}

std::vector<std::pair<VertexId, double>> transition_row(const MarkedTree& t,
                                                        VertexId x) {
  if (x == kNoVertex) return {{0, 1.0}};  // holding vertex below the root
  if (x >= t.size()) throw std::out_of_range("transition_row: bad vertex id");
  if (!t.materialized(x))
    throw std::logic_error("transition_row: offspring of x not drawn yet");
  const double denom = 1.0 + t.mark_sum(x);
  std::vector<std::pair<VertexId, double>> row;
  row.reserve(1 + static_cast<size_t>(t.n_children(x)));
  row.emplace_back(t.parent[x], 1.0 / denom);
  for (VertexId c = t.child_begin[x]; c < t.child_end[x]; ++c)
    row.emplace_back(c, t.a_mark[c] / denom);
  return row;
}

namespace {

RaySummary summarize_ray(const MarkedTree& t, VertexId x) {
  RaySummary s;
  s.depth = t.depth[x];
  s.min_vbar = t.vbar[x];
  for (VertexId cur = x; cur != 0; cur = t.parent[cur]) {
    const VertexId p = t.parent[cur];
    s.argmin_ranks.push_back(static_cast<int>(cur - t.child_begin[p]));
    s.argmin_v.push_back(t.v[cur]);
  }
  std::reverse(s.argmin_ranks.begin(), s.argmin_ranks.end());
  std::reverse(s.argmin_v.begin(), s.argmin_v.end());
  return s;
}

}  // namespace

RaySummary min_vbar_exact(const MarkedTree& t, int n) {
  VertexId best = kNoVertex;
  long long explored = 0;
  for (VertexId x = 0; x < t.size(); ++x) {
    if (t.depth[x] > n) continue;
    ++explored;
    if (t.depth[x] == n && (best == kNoVertex || t.vbar[x] < t.vbar[best]))
      best = x;
  }
  if (best == kNoVertex)
    throw DepthUnavailable("min_vbar_exact: no vertex at requested depth");
  RaySummary s = summarize_ray(t, best);
  s.explored_count = explored;
  return s;
}

namespace {

struct VirtualChild {
  uint64_t key;
  double v;
  double vbar;
  int rank;
};

// Depth-first search over the virtual tree defined by (law, seed) without
// materializing an arena. Children are visited in increasing vbar order so
// the incumbent tightens as early as possible; subtrees whose root already
// violates min(threshold, incumbent) are pruned. A Found result is therefore
// the exact minimum over depth-n rays whenever that minimum is <= threshold.
struct PrunedSearch {
  const OffspringLaw& law;
  int n;
  double threshold;
  long long budget;

  PrunedSearch(const OffspringLaw& l, int n_, double th, long long b)
      : law(l), n(n_), threshold(th), budget(b) {}

  long long explored = 0;
  double incumbent = std::numeric_limits<double>::infinity();
  std::vector<int> path;      // child ranks along the current ray
  std::vector<double> vpath;  // V along the current ray
  std::vector<int> best_path;
  std::vector<double> best_vpath;
  bool out_of_budget = false;
  std::vector<ChildDraw> scratch;

  bool admissible(double vb) const {
    return vb <= threshold && vb < incumbent;
  }

  void visit(uint64_t key, int depth, double v, double vbar) {
    if (++explored > budget) {
      out_of_budget = true;
      return;
    }
    if (depth == n) {
      incumbent = vbar;
      best_path = path;
      best_vpath = vpath;
      return;
    }
    draw_offspring(law, key, scratch);
    std::vector<VirtualChild> kids;
    kids.reserve(scratch.size());
    for (int r = 0; r < static_cast<int>(scratch.size()); ++r) {
      const double vc = v - std::log(scratch[r].a);
      const double vb = (depth == 0) ? vc : std::max(vbar, vc);
      kids.push_back({scratch[r].key, vc, vb, r});
    }
    std::sort(kids.begin(), kids.end(),
              [](const VirtualChild& a, const VirtualChild& b) {
                return a.vbar < b.vbar;
              });
    for (const auto& k : kids) {
      if (!admissible(k.vbar)) break;  // sorted: the rest are no better
      path.push_back(k.rank);
      vpath.push_back(k.v);
      visit(k.key, depth + 1, k.v, k.vbar);
      path.pop_back();
      vpath.pop_back();
      if (out_of_budget) return;
    }
  }
};

}  // namespace

PrunedResult min_vbar_pruned(const OffspringLaw& law, int n, double threshold,
                             uint64_t rng_seed, long long explored_budget) {
  law.validate();
  if (n <= 0) throw std::invalid_argument("min_vbar_pruned: n must be >= 1");
  PrunedSearch search(law, n, threshold, explored_budget);
  search.visit(root_key_for(rng_seed, 0), 0, 0.0,
               -std::numeric_limits<double>::infinity());

  PrunedResult res;
  res.explored_count = std::min(search.explored, explored_budget);
  res.best_seen = search.incumbent;
  const bool found = std::isfinite(search.incumbent);
  if (found) {
    res.summary.depth = n;
    res.summary.min_vbar = search.incumbent;
    res.summary.argmin_ranks = search.best_path;
    res.summary.argmin_v = search.best_vpath;
    res.summary.explored_count = res.explored_count;
  }
  if (search.out_of_budget)
    res.status = PrunedResult::Status::BudgetExceeded;
  else if (found)
    res.status = PrunedResult::Status::Found;
  else
    res.status = PrunedResult::Status::ThresholdExceeded;
  return res;
}

PrunedResult min_vbar_adaptive(const OffspringLaw& law, int n,
                               double initial_threshold, uint64_t rng_seed,
                               long long explored_budget) {
  if (initial_threshold <= 0.0)
    throw std::invalid_argument("min_vbar_adaptive: threshold must be > 0");
  double t = initial_threshold;
  long long spent = 0;
  for (int round = 0; round < 60; ++round) {
    PrunedResult res =
        min_vbar_pruned(law, n, t, rng_seed, explored_budget - spent);
    spent += res.explored_count;
    res.explored_count = spent;
    if (res.status != PrunedResult::Status::ThresholdExceeded) return res;
    if (spent >= explored_budget) {
      res.status = PrunedResult::Status::BudgetExceeded;
      return res;
    }
    t *= 1.3;
  }
  // Only reachable when the tree dies out before depth n: by now the
  // threshold is astronomically large, so any existing ray would be found.
  throw DepthUnavailable("min_vbar_adaptive: tree extinct before depth n");
}

void save_tree(const MarkedTree& t, const std::string& path) {
  // DFS preorder makes on-disk sibling order equal rank order, so the loader
  // can rebuild contiguous child ranges without extra bookkeeping.
  std::vector<VertexId> order;
  order.reserve(t.size());
  std::vector<VertexId> stack = {0};
  while (!stack.empty()) {
    const VertexId x = stack.back();
    stack.pop_back();
    order.push_back(x);
    if (!t.materialized(x)) continue;
    for (VertexId c = t.child_end[x]; c-- > t.child_begin[x];)
      stack.push_back(c);
  }
  std::vector<uint32_t> dfs_index(t.size());
  for (uint32_t i = 0; i < order.size(); ++i) dfs_index[order[i]] = i;

  nlohmann::json header;
  header["format"] = "rwre-tree-v1";
  header["law"] = law_to_json(t.law);
  header["seed"] = t.seed;
  header["base_seed"] = t.base_seed;
  header["attempts_used"] = t.attempts_used;
  header["depth_cap"] = t.depth_cap;
  header["count"] = order.size();
  const std::string head = header.dump() + "\n";

  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("save_tree: cannot open " + path);
  std::fwrite(head.data(), 1, head.size(), f);
  for (const VertexId x : order) {
    const uint32_t p = (x == 0) ? kNoVertex : dfs_index[t.parent[x]];
    const uint8_t drawn = t.materialized(x) ? 1 : 0;
    const double a = t.a_mark[x];
    std::fwrite(&p, sizeof(p), 1, f);
    std::fwrite(&drawn, sizeof(drawn), 1, f);
    std::fwrite(&a, sizeof(a), 1, f);
  }
  if (std::fclose(f) != 0)
    throw std::runtime_error("save_tree: write failed for " + path);
}

MarkedTree load_tree(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("load_tree: cannot open " + path);
  std::string head;
  for (int c; (c = std::fgetc(f)) != EOF && c != '\n';)
    head.push_back(static_cast<char>(c));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    std::fclose(f);
    throw std::runtime_error(std::string("load_tree: bad header: ") +
                             e.what());
  }
  if (header.value("format", "") != "rwre-tree-v1") {
    std::fclose(f);
    throw std::runtime_error("load_tree: unrecognized format tag");
  }
  const size_t count = header.at("count").get<size_t>();
  std::vector<uint32_t> rec_parent(count);
  std::vector<uint8_t> rec_drawn(count);
  std::vector<double> rec_mark(count);
  for (size_t i = 0; i < count; ++i) {
    if (std::fread(&rec_parent[i], sizeof(uint32_t), 1, f) != 1 ||
        std::fread(&rec_drawn[i], sizeof(uint8_t), 1, f) != 1 ||
        std::fread(&rec_mark[i], sizeof(double), 1, f) != 1) {
      std::fclose(f);
      throw std::runtime_error("load_tree: truncated record section");
    }
  }
  std::fclose(f);
  if (count == 0 || rec_parent[0] != kNoVertex)
    throw std::runtime_error("load_tree: record section must start at root");

  // Children of each DFS index, already in rank order (preorder property).
  std::vector<std::vector<uint32_t>> kids(count);
  for (uint32_t i = 1; i < count; ++i) {
    if (rec_parent[i] >= i)
      throw std::runtime_error("load_tree: parent pointer out of order");
    if (!rec_drawn[rec_parent[i]])
      throw std::runtime_error("load_tree: child of an undrawn vertex");
    kids[rec_parent[i]].push_back(i);
  }

  MarkedTree t;
  t.law = law_from_json(header.at("law"));
  t.seed = header.at("seed").get<uint64_t>();
  t.base_seed = header.at("base_seed").get<uint64_t>();
  t.attempts_used = header.at("attempts_used").get<int>();
  t.depth_cap = header.at("depth_cap").get<int>();
  push_root(t, root_key_for(t.seed,
                            static_cast<uint32_t>(t.attempts_used - 1)));

  // Rebuild in BFS order so arenas from load_tree and sample_tree match.
  std::vector<uint32_t> queue = {0};     // DFS indices, BFS visit order
  std::vector<VertexId> arena_of(count, kNoVertex);
  arena_of[0] = 0;
  for (size_t qi = 0; qi < queue.size(); ++qi) {
    const uint32_t di = queue[qi];
    const VertexId x = arena_of[di];
    if (!rec_drawn[di]) continue;  // offspring never sampled: keep it lazy
    t.child_begin[x] = static_cast<VertexId>(t.size());
    t.child_end[x] = static_cast<VertexId>(t.size() + kids[di].size());
    uint32_t rank = 0;
    for (const uint32_t dc : kids[di]) {
      arena_of[dc] = static_cast<VertexId>(t.size());
      queue.push_back(dc);
      push_child(t, x, mix64(t.key[x], rank), rec_mark[dc]);
      ++rank;
    }
  }
  return t;
}

}  // namespace rwre
