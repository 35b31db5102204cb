#include "rwre/spine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <utility>

#include "rwre/errors.hpp"
#include "rwre/law_json.hpp"
#include "rwre/quenched.hpp"
#include "rwre/rng.hpp"

namespace rwre {

namespace {

constexpr uint64_t kQRootSalt = 0x71726f6fu;   // spinal-arena root keys
constexpr uint64_t kFamilySalt = 0x7370696eu;  // size-biased family draws
constexpr uint64_t kTreeSideSalt = 0x6d746f6cu;
constexpr uint64_t kWalkSideSalt = 0x6d746f72u;
constexpr uint64_t kFirstMomentSalt = 0x666d6f6du;
constexpr uint64_t kNumeratorSalt = 0x736d6e75u;
constexpr uint64_t kOverlapSalt = 0x736d6873u;
constexpr uint64_t kChainSalt = 0x62646d63u;
constexpr uint64_t kProbeSalt = 0x666a7072u;

constexpr double kEdge = 1e-9;  // lattice bound rounding guard
constexpr int kUGrid = 64;      // shift-grid resolution for overlap terms

double neg_inf() { return -std::numeric_limits<double>::infinity(); }

// Mean and standard error in one pass.
struct Welford {
  double mean = 0.0, m2 = 0.0;
  long long count = 0;

  void add(double x) {
    ++count;
    const double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }
  double se() const {
    if (count < 2) return 0.0;
    return std::sqrt(m2 / (static_cast<double>(count - 1) *
                           static_cast<double>(count)));
  }
};

// theta-rescale unless the law already satisfies the martingale
// normalization log E[sum A] = 0.
OffspringLaw resolve_critical(const OffspringLaw& law) {
  law.validate();
  if (std::abs(psi(law, 1.0)) <= 1e-9) return law;
  const double theta = solve_theta(law);
  OffspringLaw scaled = rescale(law, theta);
  if (std::abs(psi(scaled, 1.0)) > 1e-9)
    throw WrongRegime(
        "resolve_critical: rescaled law misses the martingale normalization");
  return scaled;
}

uint64_t q_root_key(uint64_t seed) { return mix64(seed ^ kQRootSalt, 0); }

// Same arena conventions as ordinary tree growth (v, vbar, key chaining), so
// ensure_children on off-spine vertices continues the tree bit-identically.
void push_root(MarkedTree& t, uint64_t root_key) {
  t.parent.push_back(kNoVertex);
  t.depth.push_back(0);
  t.a_mark.push_back(0.0);
  t.v.push_back(0.0);
  t.vbar.push_back(neg_inf());
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

struct SpinalFamily {
  std::vector<double> marks;
  int spine_rank = 0;
};

// One family under the mark-sum reweighted law plus the mark-proportional
// spine child. LogNormal: a uniformly chosen rank gets the exponentially
// tilted mark (log-mark mean shifted by s2) and becomes the spine child.
// Tables: atom weights p_k * (mark sum of k) add up to e^{psi(1)} = 1 under
// the critical normalization, so plain inversion is exact.
SpinalFamily draw_spinal_family(const OffspringLaw& law, Stream& st) {
  SpinalFamily fam;
  if (law.kind == OffspringLaw::Kind::LogNormal) {
    const int m = law.n_children;
    fam.spine_rank = static_cast<int>(st.below(static_cast<uint64_t>(m)));
    fam.marks.reserve(static_cast<size_t>(m));
    for (int r = 0; r < m; ++r) {
      const double mu = (r == fam.spine_rank) ? law.mu + law.s2 : law.mu;
      fam.marks.push_back(std::exp(st.normal(mu, law.s2)));
    }
    return fam;
  }

  double total = 0.0;
  for (const auto& at : law.atoms) {
    double s = 0.0;
    for (double a : at.a) s += a;
    total += at.prob * s;
  }
  const double u = st.u01() * total;
  const DiscreteAtom* chosen = nullptr;
  double acc = 0.0;
  for (const auto& at : law.atoms) {
    double s = 0.0;
    for (double a : at.a) s += a;
    acc += at.prob * s;
    if (u < acc) {
      chosen = &at;
      break;
    }
  }
  if (chosen == nullptr) {  // top-of-scale rounding: take the last usable atom
    for (auto it = law.atoms.rbegin(); it != law.atoms.rend(); ++it) {
      double s = 0.0;
      for (double a : it->a) s += a;
      if (s > 0.0) {
        chosen = &*it;
        break;
      }
    }
  }
  if (chosen == nullptr)
    throw WrongRegime("draw_spinal_family: law has no family with marks");

  fam.marks = chosen->a;
  double s = 0.0;
  for (double a : fam.marks) s += a;
  const double uc = st.u01() * s;
  acc = 0.0;
  fam.spine_rank = static_cast<int>(fam.marks.size()) - 1;
  for (size_t r = 0; r < fam.marks.size(); ++r) {
    acc += fam.marks[r];
    if (uc < acc) {
      fam.spine_rank = static_cast<int>(r);
      break;
    }
  }
  return fam;
}

}  // namespace

std::vector<double> SpinalTree::spine_increments() const {
  std::vector<double> inc;
  inc.reserve(spine_potential.size() - 1);
  for (size_t k = 1; k < spine_potential.size(); ++k)
    inc.push_back(spine_potential[k] - spine_potential[k - 1]);
  return inc;
}

SpinalTree sample_q_tree(const OffspringLaw& law, int n, uint64_t rng_seed,
                         SpineGrowth growth) {
  if (n < 1) throw std::invalid_argument("sample_q_tree: n must be >= 1");
  const OffspringLaw q_law = resolve_critical(law);

  SpinalTree sp;
  MarkedTree& t = sp.tree;
  t.law = q_law;
  t.base_seed = rng_seed;
  t.seed = rng_seed;
  t.attempts_used = 1;
  t.depth_cap = n;
  push_root(t, q_root_key(rng_seed));
  sp.spine.push_back(0);

  // BFS over the arena; the spine vertex of each generation draws the
  // size-biased family, everything else grows unbiased (or stays lazy).
  const uint64_t fam_key = mix64(rng_seed ^ kFamilySalt, 0);
  for (VertexId x = 0; x < static_cast<VertexId>(t.size()); ++x) {
    const int d = t.depth[x];
    if (d >= n) break;  // BFS order: the rest sits at the cap
    if (x == sp.spine[static_cast<size_t>(d)]) {
      Stream st(mix64(fam_key, static_cast<uint64_t>(d)));
      const SpinalFamily fam = draw_spinal_family(q_law, st);
      t.child_begin[x] = static_cast<VertexId>(t.size());
      t.child_end[x] = static_cast<VertexId>(t.size() + fam.marks.size());
      for (size_t r = 0; r < fam.marks.size(); ++r)
        push_child(t, x, mix64(t.key[x], static_cast<uint64_t>(r)),
                   fam.marks[r]);
      sp.spine.push_back(t.child_begin[x] +
                         static_cast<VertexId>(fam.spine_rank));
    } else if (growth == SpineGrowth::FullTree) {
      t.ensure_children(x);
    }
  }

  sp.spine_potential.reserve(sp.spine.size());
  for (VertexId w : sp.spine) sp.spine_potential.push_back(t.v[w]);
  sp.brothers.assign(sp.spine.size(), {});
  for (size_t k = 1; k < sp.spine.size(); ++k) {
    const VertexId p = sp.spine[k - 1];
    for (VertexId c = t.child_begin[p]; c < t.child_end[p]; ++c)
      if (c != sp.spine[k]) sp.brothers[k].push_back(c);
  }
  return sp;
}

double additive_martingale(const MarkedTree& t, int n) {
  if (n < 0)
    throw std::invalid_argument("additive_martingale: negative level");
  double w = 0.0;
  for (VertexId x = 0; x < static_cast<VertexId>(t.size()); ++x)
    if (t.depth[x] == n) w += std::exp(-t.v[x]);
  return w;
}

PathFunctional PathFunctional::one() { return {}; }

PathFunctional PathFunctional::potential_band(double lo, double hi) {
  PathFunctional f;
  f.kind = Kind::PotentialBand;
  f.lo = lo;
  f.hi = hi;
  return f;
}

PathFunctional PathFunctional::first_offspring_equals(long long count) {
  PathFunctional f;
  f.kind = Kind::FirstOffspringEquals;
  f.value = count;
  return f;
}

PathFunctional PathFunctional::offspring_at_most(long long cap) {
  PathFunctional f;
  f.kind = Kind::OffspringAtMost;
  f.value = cap;
  return f;
}

double PathFunctional::evaluate(const std::vector<double>& v,
                                const std::vector<long long>& offspring) const {
  switch (kind) {
    case Kind::One:
      return 1.0;
    case Kind::PotentialBand:
      for (double vi : v)
        if (vi < lo || vi > hi) return 0.0;
      return 1.0;
    case Kind::FirstOffspringEquals:
      return (!offspring.empty() && offspring.front() == value) ? 1.0 : 0.0;
    case Kind::OffspringAtMost:
      for (long long k : offspring)
        if (k > value) return 0.0;
      return 1.0;
  }
  return 0.0;
}

ManyToOneCheck many_to_one_check(const OffspringLaw& law, int n,
                                 const PathFunctional& f, long long reps,
                                 uint64_t rng_seed) {
  if (n < 1 || n > 4)
    throw std::invalid_argument(
        "many_to_one_check: tree side enumerates whole populations, need "
        "1 <= n <= 4");
  if (reps < 2)
    throw std::invalid_argument("many_to_one_check: need at least 2 replicas");
  const OffspringLaw q_law = resolve_critical(law);
  const StepLaw step = tilted_step_law(q_law);

  std::vector<double> vpath(static_cast<size_t>(n));
  std::vector<long long> kpath(static_cast<size_t>(n));

  Welford tree_side;
  for (long long rep = 0; rep < reps; ++rep) {
    const MarkedTree t = sample_tree(q_law, n, mix64(rng_seed ^ kTreeSideSalt,
                                                     static_cast<uint64_t>(rep)),
                                     SurvivalPolicy::AllowExtinct);
    double x_rep = 0.0;
    for (VertexId x = 0; x < static_cast<VertexId>(t.size()); ++x) {
      if (t.depth[x] != n) continue;
      VertexId cur = x;
      for (int i = n; i >= 1; --i) {
        vpath[static_cast<size_t>(i - 1)] = t.v[cur];
        const VertexId p = t.parent[cur];
        kpath[static_cast<size_t>(i - 1)] = t.n_children(p);
        cur = p;
      }
      x_rep += std::exp(-t.v[x]) * f.evaluate(vpath, kpath);
    }
    tree_side.add(x_rep);
  }

  Welford walk_side;
  for (long long rep = 0; rep < reps; ++rep) {
    Stream st(mix64(rng_seed ^ kWalkSideSalt, static_cast<uint64_t>(rep)));
    double s = 0.0;
    for (int i = 1; i <= n; ++i) {
      const auto [dv, nu] = step.sample_with_nu(st);
      s += dv;
      vpath[static_cast<size_t>(i - 1)] = s;
      kpath[static_cast<size_t>(i - 1)] = nu;
    }
    walk_side.add(f.evaluate(vpath, kpath));
  }

  ManyToOneCheck out;
  out.lhs.p_hat = tree_side.mean;
  out.lhs.se = tree_side.se();
  out.lhs.log_p = tree_side.mean > 0 ? std::log(tree_side.mean) : neg_inf();
  out.lhs.reps = reps;
  out.rhs.p_hat = walk_side.mean;
  out.rhs.se = walk_side.se();
  out.rhs.log_p = walk_side.mean > 0 ? std::log(walk_side.mean) : neg_inf();
  out.rhs.reps = reps;
  out.pooled_se = std::sqrt(out.lhs.se * out.lhs.se + out.rhs.se * out.rhs.se);
  out.gap = std::abs(out.lhs.p_hat - out.rhs.p_hat);
  out.consistent = out.gap <= 3.0 * out.pooled_se + 1e-12;
  return out;
}

namespace {

struct LatticeAtom {
  long long k = 0;
  double w = 0.0;
};

// Common lattice scale: every atom displacement is an integer multiple of
// the returned step. Gaussian and incommensurate supports get nullopt.
std::optional<double> lattice_scale(const StepLaw& step) {
  if (step.kind == StepLaw::Kind::Gaussian) return std::nullopt;
  if (step.kind == StepLaw::Kind::Rademacher) return 1.0;
  std::vector<double> pts;
  for (const auto& [w, p] : step.mixture)
    if (std::abs(p) > 1e-12) pts.push_back(std::abs(p));
  if (pts.empty()) return 1.0;  // every atom sits at zero
  const double s = *std::min_element(pts.begin(), pts.end());
  for (double p : pts) {
    const double q = p / s;
    if (std::abs(q - std::round(q)) > 1e-9 * std::max(1.0, q))
      return std::nullopt;
  }
  return s;
}

// Atom list on the common lattice, optionally dropping atoms whose offspring
// companion exceeds nu_cap (nu_cap < 0 keeps everything).
std::vector<LatticeAtom> lattice_atoms(const StepLaw& step, double s,
                                       long long nu_cap) {
  std::vector<LatticeAtom> out;
  auto push = [&](double w, double p, long long nu) {
    if (nu_cap >= 0 && nu > nu_cap) return;
    out.push_back({std::llround(p / s), w});
  };
  switch (step.kind) {
    case StepLaw::Kind::Rademacher:
      push(0.5, 1.0, step.nu_const);
      push(0.5, -1.0, step.nu_const);
      break;
    case StepLaw::Kind::FiniteMixture:
      for (size_t i = 0; i < step.mixture.size(); ++i) {
        const long long nu = step.mixture_nu.empty()
                                 ? step.nu_const
                                 : step.mixture_nu[i];
        push(step.mixture[i].first, step.mixture[i].second, nu);
      }
      break;
    case StepLaw::Kind::Gaussian:
      break;  // never on a lattice
  }
  return out;
}

constexpr long long kOpenWindow = (1LL << 60);

// Forward mass vector on a lattice window with a rescale ledger so deep
// band probabilities survive underflow.
struct BandDp {
  long long lo = 0;
  std::vector<double> mass;
  double log_scale = 0.0;
  std::vector<double> scratch;

  void reset() {
    lo = 0;
    mass.assign(1, 1.0);
    log_scale = 0.0;
  }
  bool alive() const { return !mass.empty(); }

  // One convolution step, then restriction to [wlo, whi].
  void step(const std::vector<LatticeAtom>& atoms, long long wlo,
            long long whi) {
    if (mass.empty()) return;
    if (atoms.empty()) {
      mass.clear();
      return;
    }
    long long kmin = atoms.front().k, kmax = atoms.front().k;
    for (const auto& at : atoms) {
      kmin = std::min(kmin, at.k);
      kmax = std::max(kmax, at.k);
    }
    const long long hi_cur = lo + static_cast<long long>(mass.size()) - 1;
    const long long nlo = std::max(wlo, lo + kmin);
    const long long nhi = std::min(whi, hi_cur + kmax);
    if (nlo > nhi) {
      mass.clear();
      return;
    }
    scratch.assign(static_cast<size_t>(nhi - nlo + 1), 0.0);
    for (size_t i = 0; i < mass.size(); ++i) {
      const double m = mass[i];
      if (m == 0.0) continue;
      const long long k = lo + static_cast<long long>(i);
      for (const auto& at : atoms) {
        const long long kk = k + at.k;
        if (kk < nlo || kk > nhi) continue;
        scratch[static_cast<size_t>(kk - nlo)] += m * at.w;
      }
    }
    mass.swap(scratch);
    lo = nlo;
    double total = 0.0;
    for (double m : mass) total += m;
    if (total <= 0.0) {
      mass.clear();
      return;
    }
    if (total < 1e-120) {
      const double inv = 1.0 / total;
      for (double& m : mass) m *= inv;
      log_scale += std::log(total);
    }
  }

  double log_mass() const {
    if (mass.empty()) return neg_inf();
    double total = 0.0;
    for (double m : mass) total += m;
    return total > 0.0 ? std::log(total) + log_scale : neg_inf();
  }

  // log of sum_k mass[k] e^{k s}.
  double log_weighted(double s) const {
    if (mass.empty()) return neg_inf();
    double best = neg_inf();
    for (size_t i = 0; i < mass.size(); ++i)
      if (mass[i] > 0.0)
        best = std::max(best, std::log(mass[i]) +
                                  static_cast<double>(lo +
                                                      static_cast<long long>(
                                                          i)) *
                                      s);
    if (best == neg_inf()) return neg_inf();
    double acc = 0.0;
    for (size_t i = 0; i < mass.size(); ++i)
      if (mass[i] > 0.0)
        acc += std::exp(std::log(mass[i]) +
                        static_cast<double>(lo + static_cast<long long>(i)) *
                            s -
                        best);
    return best + std::log(acc) + log_scale;
  }
};

// Inclusive integer window for real bounds on the lattice k*s.
long long lattice_floor(double x, double s) {
  return static_cast<long long>(std::floor(x / s + kEdge));
}
long long lattice_ceil(double x, double s) {
  return static_cast<long long>(std::ceil(x / s - kEdge));
}

}  // namespace

RateEstimate first_moment_rate(const StepLaw& step, double a, double b, int n,
                               long long reps, uint64_t rng_seed) {
  const double sigma2 = step.step_var();
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
    throw std::invalid_argument("first_moment_rate: degenerate step law");
  const double pi = 3.14159265358979323846;
  const double bstar = std::cbrt(1.5 * pi * pi * sigma2);
  if (std::abs(b - bstar) > 1e-6 * std::max(1.0, bstar))
    throw std::invalid_argument(
        "first_moment_rate: b must equal (3 pi^2 sigma^2 / 2)^{1/3}");
  if (!(a > 0.0) || a > b + 1e-12)
    throw std::invalid_argument("first_moment_rate: need 0 < a <= b");
  if (n < 1) throw std::invalid_argument("first_moment_rate: n must be >= 1");

  const double cn = std::cbrt(static_cast<double>(n));
  std::vector<double> log_w(static_cast<size_t>(n) + 1, 0.0);
  for (int j = 1; j <= n; ++j)
    log_w[static_cast<size_t>(j)] =
        a * cn - b * std::cbrt(static_cast<double>(n - j));

  const auto scale = lattice_scale(step);
  if (scale) {
    const double s = *scale;
    const auto atoms = lattice_atoms(step, s, -1);
    std::vector<double> log_p(static_cast<size_t>(n) + 1, neg_inf());
    log_p[1] = 0.0;
    BandDp dp;
    dp.reset();
    const long long hi = lattice_floor(a * cn, s);
    for (int i = 1; i <= n - 1 && dp.alive(); ++i) {
      // upper bound inclusive, lower bound strict
      const long long lo =
          lattice_floor(a * cn - b * std::cbrt(static_cast<double>(n - i)),
                        s) +
          1;
      dp.step(atoms, lo, hi);
      log_p[static_cast<size_t>(i) + 1] = dp.log_mass();
    }
    double best = neg_inf();
    for (int j = 1; j <= n; ++j)
      best = std::max(best, log_w[static_cast<size_t>(j)] +
                                log_p[static_cast<size_t>(j)]);
    double acc = 0.0;
    for (int j = 1; j <= n; ++j) {
      const double t =
          log_w[static_cast<size_t>(j)] + log_p[static_cast<size_t>(j)];
      if (t > neg_inf()) acc += std::exp(t - best);
    }
    const double ls = best + std::log(acc);
    RateEstimate est = RateEstimate::exact_log(ls);
    est.rate = ls / cn;
    est.predicted_rate = a - b;
    return est;
  }

  if (reps < 2)
    throw std::invalid_argument("first_moment_rate: need at least 2 replicas");
  std::vector<double> wpref(static_cast<size_t>(n) + 1, 0.0);
  for (int j = 1; j <= n; ++j)
    wpref[static_cast<size_t>(j)] =
        wpref[static_cast<size_t>(j) - 1] +
        std::exp(log_w[static_cast<size_t>(j)]);
  std::vector<long long> first_violation(static_cast<size_t>(n) + 1, 0);
  Welford acc;
  for (long long rep = 0; rep < reps; ++rep) {
    Stream st(mix64(rng_seed ^ kFirstMomentSalt, static_cast<uint64_t>(rep)));
    double sum_s = 0.0;
    int t = n;  // bands 1..t-1 hold
    for (int i = 1; i <= n - 1; ++i) {
      sum_s += step.sample(st);
      const double lo = a * cn - b * std::cbrt(static_cast<double>(n - i));
      if (!(sum_s > lo && sum_s <= a * cn)) {
        t = i;
        break;
      }
    }
    ++first_violation[static_cast<size_t>(t)];
    acc.add(wpref[static_cast<size_t>(t)]);
  }
  // survivors of the j-th band prefix, and the term dominating the sum
  std::vector<long long> surv(static_cast<size_t>(n) + 2, 0);
  for (int j = n; j >= 1; --j)
    surv[static_cast<size_t>(j)] = surv[static_cast<size_t>(j) + 1] +
                                   first_violation[static_cast<size_t>(j)];
  int jstar = 1;
  double best = neg_inf();
  for (int j = 1; j <= n; ++j) {
    if (surv[static_cast<size_t>(j)] == 0) continue;
    const double t = log_w[static_cast<size_t>(j)] +
                     std::log(static_cast<double>(surv[static_cast<size_t>(j)]) /
                              static_cast<double>(reps));
    if (t > best) {
      best = t;
      jstar = j;
    }
  }
  RateEstimate est;
  est.p_hat = acc.mean;
  est.se = acc.se();
  est.log_p = std::log(acc.mean);
  est.rate = est.log_p / cn;
  est.predicted_rate = a - b;
  est.hits = surv[static_cast<size_t>(jstar)];
  est.reps = reps;
  est.insufficient = est.hits < 30;
  return est;
}

IntervalFamily IntervalFamily::bands(double a, double b, double eps) {
  IntervalFamily f;
  f.a = a;
  f.b = b;
  f.eps = eps;
  return f;
}

IntervalFamily IntervalFamily::whole_line() {
  IntervalFamily f;
  f.unconstrained = true;
  return f;
}

double IntervalFamily::lo(int i, int n) const {
  if (unconstrained) return neg_inf();
  return (a - eps) * std::cbrt(static_cast<double>(n)) -
         b * std::cbrt(static_cast<double>(n - i));
}

double IntervalFamily::hi(int i, int n) const {
  if (unconstrained) return std::numeric_limits<double>::infinity();
  return a * std::cbrt(static_cast<double>(n));
}

long long second_moment_default_cap(int n) {
  const double c = std::floor(std::exp(std::pow(static_cast<double>(n), 0.25)));
  if (c >= 9e17) return 900000000000000000LL;
  return static_cast<long long>(c);
}

namespace {

bool carries_nu(const StepLaw& step) {
  if (step.kind == StepLaw::Kind::FiniteMixture)
    return step.nu_const >= 0 ||
           step.mixture_nu.size() == step.mixture.size();
  return step.nu_const >= 0;
}

struct OverlapTerm {
  double value = 0.0;
  double se = 0.0;
  long long hits = 0;
  bool coarse = false;
};

}  // namespace

SecondMomentBound second_moment_bound_ingredients(
    const StepLaw& step, const IntervalFamily& intervals,
    std::optional<long long> nu_cap, int n, long long reps,
    uint64_t rng_seed) {
  if (n < 1)
    throw std::invalid_argument(
        "second_moment_bound_ingredients: n must be >= 1");
  long long cap = -1;
  if (nu_cap) {
    cap = *nu_cap;
    if (cap < 1)
      throw std::invalid_argument(
          "second_moment_bound_ingredients: offspring cap must be >= 1");
    if (!carries_nu(step))
      throw std::invalid_argument(
          "second_moment_bound_ingredients: step law carries no offspring "
          "counts");
  }

  SecondMomentBound out;
  out.nu_cap = cap >= 0 ? cap : 0;
  const double cn = std::cbrt(static_cast<double>(n));
  const auto scale = lattice_scale(step);

  std::vector<OverlapTerm> terms(static_cast<size_t>(n) + 1);
  if (scale) {
    const double s = *scale;
    const auto atoms_num = lattice_atoms(step, s, cap);
    const auto atoms_h = lattice_atoms(step, s, -1);

    BandDp dp;
    dp.reset();
    for (int i = 1; i <= n && dp.alive(); ++i) {
      const long long wlo = intervals.unconstrained
                                ? -kOpenWindow
                                : lattice_ceil(intervals.lo(i, n), s);
      const long long whi = intervals.unconstrained
                                ? kOpenWindow
                                : lattice_floor(intervals.hi(i, n), s);
      dp.step(atoms_num, wlo, whi);
    }
    const double log_num = dp.log_weighted(s);
    out.numerator = RateEstimate::exact_log(log_num);
    out.numerator.rate = log_num / cn;

    for (int j = 1; j <= n; ++j) {
      const int m = n - j;
      const double ulo = intervals.unconstrained ? 0.0 : intervals.lo(j, n);
      const double uhi = intervals.unconstrained ? 0.0 : intervals.hi(j, n);
      const int cells = (uhi > ulo) ? kUGrid : 1;
      const double du = cells > 1 ? (uhi - ulo) / (cells - 1) : 0.0;
      double best_val = neg_inf();
      double prev = -1.0;
      for (int g = 0; g < cells; ++g) {
        const double u = ulo + du * static_cast<double>(g);
        BandDp hdp;
        hdp.reset();
        for (int i = 1; i <= m && hdp.alive(); ++i) {
          const long long wlo =
              intervals.unconstrained
                  ? -kOpenWindow
                  : lattice_ceil(intervals.lo(i + j, n) - u, s);
          const long long whi =
              intervals.unconstrained
                  ? kOpenWindow
                  : lattice_floor(intervals.hi(i + j, n) - u, s);
          hdp.step(atoms_h, wlo, whi);
        }
        const double lv = hdp.log_weighted(s);
        const double v = lv > neg_inf() ? std::exp(lv) : 0.0;
        best_val = std::max(best_val, lv);
        if (g > 0 && prev > 0.0 && v > 0.0 &&
            (v > 2.0 * prev || prev > 2.0 * v))
          terms[static_cast<size_t>(j)].coarse = true;
        prev = v;
      }
      terms[static_cast<size_t>(j)].value =
          best_val > neg_inf() ? std::exp(best_val) : 0.0;
    }
    double h_total = 0.0;
    bool coarse = false;
    for (int j = 1; j <= n; ++j) {
      h_total += terms[static_cast<size_t>(j)].value;
      coarse = coarse || terms[static_cast<size_t>(j)].coarse;
    }
    out.h_sum = RateEstimate::exact_log(h_total > 0.0 ? std::log(h_total)
                                                      : neg_inf());
    out.grid_too_coarse = coarse;
  } else {
    if (reps < 2)
      throw std::invalid_argument(
          "second_moment_bound_ingredients: need at least 2 replicas");
    Welford num;
    long long num_hits = 0;
    for (long long rep = 0; rep < reps; ++rep) {
      Stream st(mix64(rng_seed ^ kNumeratorSalt, static_cast<uint64_t>(rep)));
      double s_val = 0.0;
      bool alive = true;
      for (int i = 1; i <= n; ++i) {
        const auto [dv, nu] = step.sample_with_nu(st);
        if (cap >= 0 && nu > cap) {
          alive = false;
          break;
        }
        s_val += dv;
        if (!intervals.unconstrained &&
            (s_val < intervals.lo(i, n) || s_val > intervals.hi(i, n))) {
          alive = false;
          break;
        }
      }
      if (alive) {
        ++num_hits;
        num.add(std::exp(s_val));
      } else {
        num.add(0.0);
      }
    }
    out.numerator.p_hat = num.mean;
    out.numerator.se = num.se();
    out.numerator.log_p = num.mean > 0.0 ? std::log(num.mean) : neg_inf();
    out.numerator.rate = out.numerator.log_p / cn;
    out.numerator.hits = num_hits;
    out.numerator.reps = reps;
    out.numerator.insufficient = num_hits < 30;

    // Shift grid shares each path through the running intersection of
    // admissible u; cell sums accumulate by prefix differences.
    double h_total = 0.0, h_var = 0.0;
    long long min_hits = std::numeric_limits<long long>::max();
    bool coarse = false, short_cells = false;
    for (int j = 1; j <= n; ++j) {
      const int m = n - j;
      const double glo = intervals.unconstrained ? 0.0 : intervals.lo(j, n);
      const double ghi = intervals.unconstrained ? 0.0 : intervals.hi(j, n);
      const int cells = (ghi > glo) ? kUGrid : 1;
      const double du = cells > 1 ? (ghi - glo) / (cells - 1) : 0.0;
      std::vector<double> sum_diff(static_cast<size_t>(cells) + 1, 0.0);
      std::vector<double> sq_diff(static_cast<size_t>(cells) + 1, 0.0);
      std::vector<long long> cnt_diff(static_cast<size_t>(cells) + 1, 0);
      const uint64_t jkey = mix64(rng_seed ^ kOverlapSalt,
                                  static_cast<uint64_t>(j));
      for (long long rep = 0; rep < reps; ++rep) {
        Stream st(mix64(jkey, static_cast<uint64_t>(rep)));
        double s_val = 0.0;
        double alo = glo, ahi = ghi;
        for (int i = 1; i <= m && alo <= ahi; ++i) {
          s_val += step.sample(st);
          if (intervals.unconstrained) continue;
          alo = std::max(alo, intervals.lo(i + j, n) - s_val);
          ahi = std::min(ahi, intervals.hi(i + j, n) - s_val);
        }
        if (alo > ahi) continue;
        int gl = 0, gr = cells - 1;
        if (cells > 1) {
          gl = static_cast<int>(std::ceil((alo - glo) / du - 1e-12));
          gr = static_cast<int>(std::floor((ahi - glo) / du + 1e-12));
          gl = std::max(gl, 0);
          gr = std::min(gr, cells - 1);
          if (gl > gr) continue;
        }
        const double w = std::exp(s_val);
        sum_diff[static_cast<size_t>(gl)] += w;
        sum_diff[static_cast<size_t>(gr) + 1] -= w;
        sq_diff[static_cast<size_t>(gl)] += w * w;
        sq_diff[static_cast<size_t>(gr) + 1] -= w * w;
        ++cnt_diff[static_cast<size_t>(gl)];
        --cnt_diff[static_cast<size_t>(gr) + 1];
      }
      double best = -1.0, best_se = 0.0, prev = -1.0;
      long long best_hits = 0, prev_hits = 0;
      double csum = 0.0, csq = 0.0;
      long long ccnt = 0;
      for (int g = 0; g < cells; ++g) {
        csum += sum_diff[static_cast<size_t>(g)];
        csq += sq_diff[static_cast<size_t>(g)];
        ccnt += cnt_diff[static_cast<size_t>(g)];
        const double mean = csum / static_cast<double>(reps);
        if (mean > best) {
          best = mean;
          best_hits = ccnt;
          const double var =
              std::max(0.0, csq / static_cast<double>(reps) - mean * mean);
          best_se = std::sqrt(var / static_cast<double>(reps));
        }
        if (g > 0 && prev_hits >= 30 && ccnt >= 30 && prev > 0.0 &&
            mean > 0.0 && (mean > 2.0 * prev || prev > 2.0 * mean))
          coarse = true;
        prev = mean;
        prev_hits = ccnt;
      }
      terms[static_cast<size_t>(j)].value = best;
      h_total += best;
      h_var += best_se * best_se;
      min_hits = std::min(min_hits, best_hits);
      short_cells = short_cells || best_hits < 30;
    }
    out.h_sum.p_hat = h_total;
    out.h_sum.se = std::sqrt(h_var);
    out.h_sum.log_p = h_total > 0.0 ? std::log(h_total) : neg_inf();
    out.h_sum.hits = min_hits;
    out.h_sum.reps = reps;
    out.h_sum.insufficient = short_cells;
    out.grid_too_coarse = coarse;
  }

  out.insufficient = out.numerator.insufficient || out.h_sum.insufficient;
  if (cap >= 1) {
    out.log_bound =
        out.numerator.log_p -
        std::log1p(static_cast<double>(cap - 1) * out.h_sum.p_hat);
    out.bound = std::exp(out.log_bound);
    out.rate = out.log_bound / cn;
  } else {
    out.log_bound = neg_inf();
    out.bound = 0.0;
    out.rate = 0.0;
  }
  return out;
}

void BirthDeathSpec::validate() const {
  const int nn = n();
  if (nn < 2)
    throw std::invalid_argument("birth-death spec: need at least two levels");
  if (static_cast<int>(r.size()) != nn)
    throw std::invalid_argument(
        "birth-death spec: r must hold r_0..r_{n-1} (same length as b)");
  for (double bi : b)
    if (!(bi > 0.0) || !std::isfinite(bi))
      throw std::invalid_argument("birth-death spec: b entries must be > 0");
  for (double ri : r)
    if (ri < 0.0 || !std::isfinite(ri))
      throw std::invalid_argument("birth-death spec: r entries must be >= 0");
  if (partition.size() < 2 || partition.front() != 0 ||
      partition.back() != nn - 1)
    throw std::invalid_argument(
        "birth-death spec: partition must run 0 = m_0 < ... < m_k = n-1");
  for (size_t i = 1; i < partition.size(); ++i)
    if (partition[i] <= partition[i - 1])
      throw std::invalid_argument(
          "birth-death spec: partition must increase strictly");
}

std::vector<double> BirthDeathSpec::potential() const {
  std::vector<double> v(static_cast<size_t>(n()) + 1, 0.0);
  for (int j = 1; j <= n(); ++j)
    v[static_cast<size_t>(j)] =
        v[static_cast<size_t>(j) - 1] - std::log(b[static_cast<size_t>(j) - 1]);
  return v;
}

ZRecursionBound z_recursion_and_bound(const BirthDeathSpec& spec) {
  spec.validate();
  const int nn = spec.n();
  std::vector<double> z(static_cast<size_t>(nn) + 1, 0.0);
  double log_product = 0.0;
  for (int j = nn - 1; j >= 1; --j) {
    // b_{j+1} sits at index j
    z[static_cast<size_t>(j)] =
        1.0 / (1.0 + spec.r[static_cast<size_t>(j)] +
               spec.b[static_cast<size_t>(j)] *
                   (1.0 - z[static_cast<size_t>(j) + 1]));
    log_product += std::log(z[static_cast<size_t>(j)]);
  }

  const std::vector<double> v = spec.potential();
  const int k = static_cast<int>(spec.partition.size()) - 1;
  double log_bound = -static_cast<double>(k) * std::log(2.0);
  for (int i = 1; i <= k; ++i) {
    const int l = spec.partition[static_cast<size_t>(i) - 1];
    const int h = spec.partition[static_cast<size_t>(i)];
    const int d = h - l;
    log_bound -= std::log(static_cast<double>(d));
    double rmax = 0.0;
    double lambda = neg_inf();
    double vstar = neg_inf();
    double run_max = neg_inf();
    for (int j = l + 1; j <= h; ++j) {
      rmax = std::max(rmax, spec.r[static_cast<size_t>(j)]);
      lambda = std::max(lambda, v[static_cast<size_t>(j)] -
                                    v[static_cast<size_t>(h)]);
      run_max = std::max(run_max, v[static_cast<size_t>(j)]);
      vstar = std::max(vstar, run_max - v[static_cast<size_t>(j)]);
    }
    lambda += std::max(0.0, v[static_cast<size_t>(h)] -
                                v[static_cast<size_t>(h) + 1]);
    log_bound -= lambda + static_cast<double>(d) * static_cast<double>(d) *
                              rmax * std::exp(vstar);
  }

  ZRecursionBound out;
  out.log_product = log_product;
  out.log_bound = log_bound;
  out.product = std::exp(log_product);
  out.bound = std::exp(log_bound);
  out.holds = log_product >= log_bound;
  return out;
}

BirthDeathFormulas birth_death_formulas(const BirthDeathSpec& spec, int ell,
                                        int m) {
  spec.validate();
  if (ell < 0 || ell >= m || m >= spec.n())
    throw std::invalid_argument(
        "birth_death_formulas: need 0 <= ell < m < n");
  const std::vector<double> v = spec.potential();
  double vmax = neg_inf();
  for (int i = ell + 1; i <= m; ++i)
    vmax = std::max(vmax, v[static_cast<size_t>(i)]);
  double acc = 0.0;
  for (int i = ell + 1; i <= m; ++i)
    acc += std::exp(v[static_cast<size_t>(i)] - vmax);
  BirthDeathFormulas out;
  out.log_hit_prob = -std::log1p(spec.b[static_cast<size_t>(m)]) +
                     v[static_cast<size_t>(m)] - (vmax + std::log(acc));
  out.hit_prob = std::exp(out.log_hit_prob);
  double drop = neg_inf();
  double run_max = neg_inf();
  for (int j = ell + 1; j <= m; ++j) {
    run_max = std::max(run_max, v[static_cast<size_t>(j)]);
    drop = std::max(drop, run_max - v[static_cast<size_t>(j)]);
  }
  out.golosov_bound = static_cast<double>(m - ell) *
                      static_cast<double>(m - ell) * std::exp(drop);
  return out;
}

BirthDeathChainMc birth_death_chain_mc(const BirthDeathSpec& spec, int ell,
                                       int m, long long reps,
                                       uint64_t rng_seed) {
  spec.validate();
  if (ell < 0 || ell >= m || m >= spec.n())
    throw std::invalid_argument("birth_death_chain_mc: need 0 <= ell < m < n");
  if (reps < 1)
    throw std::invalid_argument("birth_death_chain_mc: need replicas");
  // up-step probability from state j: b_{j+1} / (1 + b_{j+1})
  std::vector<double> up(static_cast<size_t>(m) + 1, 0.0);
  for (int j = ell + 1; j <= m; ++j)
    up[static_cast<size_t>(j)] = spec.b[static_cast<size_t>(j)] /
                                 (1.0 + spec.b[static_cast<size_t>(j)]);
  long long hits = 0;
  Welford times;
  for (long long rep = 0; rep < reps; ++rep) {
    Stream st(mix64(rng_seed ^ kChainSalt, static_cast<uint64_t>(rep)));
    // an excursion opening upward must cross m again before reaching ell
    if (st.u01() < up[static_cast<size_t>(m)]) continue;
    int j = m - 1;
    long long t = 1;
    while (j != ell && j != m) {
      j += (st.u01() < up[static_cast<size_t>(j)]) ? 1 : -1;
      ++t;
    }
    if (j == ell) {
      ++hits;
      times.add(static_cast<double>(t));
    }
  }
  BirthDeathChainMc out;
  out.hit = RateEstimate::from_bernoulli(hits, reps);
  out.mean_hit_time = times.mean;
  out.hit_time_se = times.se();
  return out;
}

bool fj_convexity_probe(double c, const std::vector<double>& a, int n,
                        int samples, uint64_t rng_seed) {
  if (n < 2) throw std::invalid_argument("fj_convexity_probe: need n >= 2");
  if (c < 0.0 || c > 1.0)
    throw std::invalid_argument("fj_convexity_probe: c must lie in [0, 1]");
  if (static_cast<int>(a.size()) != n - 1)
    throw std::invalid_argument(
        "fj_convexity_probe: a must hold a_1..a_{n-1}");
  for (double ai : a)
    if (!(ai > 0.0) || !std::isfinite(ai))
      throw std::invalid_argument("fj_convexity_probe: a entries must be > 0");
  const int coords = n - 2;  // free coordinates u_1..u_{n-2}
  if (coords == 0 || samples <= 0) return true;

  // a[j] holds a_{j+1} for the recursion step at index j
  auto product = [&](const std::vector<double>& u) {
    double next = c;
    double prod = c;
    for (int j = n - 2; j >= 1; --j) {
      const double fj =
          1.0 / (1.0 + u[static_cast<size_t>(j)] +
                 a[static_cast<size_t>(j)] * (1.0 - next));
      prod *= fj;
      next = fj;
    }
    return prod;
  };

  std::vector<double> u(static_cast<size_t>(n) - 1, 0.0);
  Stream st(mix64(rng_seed ^ kProbeSalt, 0));
  for (int sample = 0; sample < samples; ++sample) {
    for (int j = 1; j <= coords; ++j)
      u[static_cast<size_t>(j)] = -std::log(st.u01_pos()) * 1.5;
    const int q = 1 + static_cast<int>(st.below(static_cast<uint64_t>(coords)));
    const double h = 0.05 - 0.5 * std::log(st.u01_pos());
    u[static_cast<size_t>(q)] = h - std::log(st.u01_pos());  // keeps u_q-h >= 0

    const double p0 = product(u);
    u[static_cast<size_t>(q)] += h;
    const double pp = product(u);
    u[static_cast<size_t>(q)] -= 2.0 * h;
    const double pm = product(u);
    if (p0 < 0.0 || pp < 0.0 || pm < 0.0) return false;
    if (pp - 2.0 * p0 + pm < -1e-9) return false;
    if (pp > p0 + 1e-12 || p0 > pm + 1e-12) return false;
  }
  return true;
}

SpineDecomposition spine_return_decomposition(
    const SpinalTree& sp, const std::vector<double>* mean_beta) {
  const MarkedTree& t = sp.tree;
  const int n = sp.generations();
  if (n < 1)
    throw std::invalid_argument(
        "spine_return_decomposition: spine must reach depth 1");
  const QuenchedSolution sol = solve_levels(t, n);

  SpineDecomposition d;
  d.b.assign(static_cast<size_t>(n) + 1, 0.0);
  for (int j = 1; j <= n; ++j)
    d.b[static_cast<size_t>(j)] = t.a_mark[sp.spine[static_cast<size_t>(j)]];

  d.xi.assign(static_cast<size_t>(n) + 1, 0.0);
  for (int j = 1; j <= n - 2; ++j)
    for (VertexId x : sp.brothers[static_cast<size_t>(j) + 1])
      d.xi[static_cast<size_t>(j)] += t.a_mark[x] * sol.escape(x);

  d.y.assign(static_cast<size_t>(n) + 1, 0.0);
  d.y[static_cast<size_t>(n)] =
      t.omega_to_parent(sp.spine[static_cast<size_t>(n)]);
  if (n >= 2)
    d.y[static_cast<size_t>(n) - 1] =
        t.omega_to_parent(sp.spine[static_cast<size_t>(n) - 1]);
  for (int j = n - 2; j >= 1; --j)
    d.y[static_cast<size_t>(j)] =
        1.0 / (1.0 + d.xi[static_cast<size_t>(j)] +
               (1.0 - d.y[static_cast<size_t>(j) + 1]) *
                   d.b[static_cast<size_t>(j) + 1]);
  d.log_y_product = 0.0;
  for (int j = 1; j <= n; ++j)
    d.log_y_product += std::log(d.y[static_cast<size_t>(j)]);
  d.y_product = std::exp(d.log_y_product);

  if (mean_beta != nullptr) {
    if (n >= 3 && static_cast<int>(mean_beta->size()) < n - 1)
      throw std::invalid_argument(
          "spine_return_decomposition: mean escape table must cover depths "
          "1..n-2");
    d.xi_mean.assign(static_cast<size_t>(n) + 1, 0.0);
    for (int j = 1; j <= n - 2; ++j)
      for (VertexId x : sp.brothers[static_cast<size_t>(j) + 1])
        d.xi_mean[static_cast<size_t>(j)] +=
            t.a_mark[x] * (*mean_beta)[static_cast<size_t>(n - 1 - j)];
    d.z.assign(static_cast<size_t>(n) + 1, 0.0);
    if (n >= 2)
      d.z[static_cast<size_t>(n) - 1] = d.y[static_cast<size_t>(n) - 1];
    for (int j = n - 2; j >= 1; --j)
      d.z[static_cast<size_t>(j)] =
          1.0 / (1.0 + d.xi_mean[static_cast<size_t>(j)] +
                 (1.0 - d.z[static_cast<size_t>(j) + 1]) *
                     d.b[static_cast<size_t>(j) + 1]);
    d.z_product = 1.0;
    for (int j = 1; j <= n - 1; ++j)
      d.z_product *= d.z[static_cast<size_t>(j)];
  }
  return d;
}

void save_spinal_tree(const SpinalTree& sp, const std::string& path) {
  const MarkedTree& t = sp.tree;
  std::vector<uint32_t> ranks;
  ranks.reserve(sp.spine.size() - 1);
  for (size_t k = 1; k < sp.spine.size(); ++k)
    ranks.push_back(static_cast<uint32_t>(
        sp.spine[k] - t.child_begin[sp.spine[k - 1]]));

  // Same record layout as plain trees: DFS preorder keeps sibling order
  // equal to rank order, so child ranges rebuild contiguously.
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
  header["format"] = "rwre-spinal-v1";
  header["law"] = law_to_json(t.law);
  header["seed"] = t.seed;
  header["base_seed"] = t.base_seed;
  header["attempts_used"] = t.attempts_used;
  header["depth_cap"] = t.depth_cap;
  header["count"] = order.size();
  header["spine_ranks"] = ranks;
  const std::string head = header.dump() + "\n";

  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("save_spinal_tree: cannot open " + path);
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
    throw std::runtime_error("save_spinal_tree: write failed for " + path);
}

SpinalTree load_spinal_tree(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("load_spinal_tree: cannot open " + path);
  std::string head;
  for (int c; (c = std::fgetc(f)) != EOF && c != '\n';)
    head.push_back(static_cast<char>(c));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    std::fclose(f);
    throw std::runtime_error(std::string("load_spinal_tree: bad header: ") +
                             e.what());
  }
  if (header.value("format", "") != "rwre-spinal-v1") {
    std::fclose(f);
    throw std::runtime_error("load_spinal_tree: unrecognized format tag");
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
      throw std::runtime_error("load_spinal_tree: truncated record section");
    }
  }
  std::fclose(f);
  if (count == 0 || rec_parent[0] != kNoVertex)
    throw std::runtime_error(
        "load_spinal_tree: record section must start at root");

  std::vector<std::vector<uint32_t>> kids(count);
  for (uint32_t i = 1; i < count; ++i) {
    if (rec_parent[i] >= i)
      throw std::runtime_error("load_spinal_tree: parent pointer out of order");
    if (!rec_drawn[rec_parent[i]])
      throw std::runtime_error("load_spinal_tree: child of an undrawn vertex");
    kids[rec_parent[i]].push_back(i);
  }

  SpinalTree sp;
  MarkedTree& t = sp.tree;
  t.law = law_from_json(header.at("law"));
  t.seed = header.at("seed").get<uint64_t>();
  t.base_seed = header.at("base_seed").get<uint64_t>();
  t.attempts_used = header.at("attempts_used").get<int>();
  t.depth_cap = header.at("depth_cap").get<int>();
  push_root(t, q_root_key(t.seed));

  std::vector<uint32_t> queue = {0};
  std::vector<VertexId> arena_of(count, kNoVertex);
  arena_of[0] = 0;
  for (size_t qi = 0; qi < queue.size(); ++qi) {
    const uint32_t di = queue[qi];
    const VertexId x = arena_of[di];
    if (!rec_drawn[di]) continue;
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

  const std::vector<uint32_t> ranks =
      header.at("spine_ranks").get<std::vector<uint32_t>>();
  sp.spine.push_back(0);
  for (const uint32_t rank : ranks) {
    const VertexId p = sp.spine.back();
    if (!t.materialized(p) ||
        t.child_begin[p] + rank >= t.child_end[p])
      throw std::runtime_error("load_spinal_tree: spine rank out of range");
    sp.spine.push_back(t.child_begin[p] + rank);
  }
  sp.spine_potential.reserve(sp.spine.size());
  for (VertexId w : sp.spine) sp.spine_potential.push_back(t.v[w]);
  sp.brothers.assign(sp.spine.size(), {});
  for (size_t k = 1; k < sp.spine.size(); ++k) {
    const VertexId p = sp.spine[k - 1];
    for (VertexId c = t.child_begin[p]; c < t.child_end[p]; ++c)
      if (c != sp.spine[k]) sp.brothers[k].push_back(c);
  }
  return sp;
}

}  // namespace rwre
