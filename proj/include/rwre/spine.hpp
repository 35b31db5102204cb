// Size-biased spinal decomposition: sampling a tree with a distinguished
// ray whose law is the additive-martingale change of measure, consistency
// checks between the tree-sum and single-walk views, moment-method rate
// estimators for the depth-n escape probability, and the deterministic
// birth-and-death recursions those estimates reduce to.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rwre/estimate.hpp"
#include "rwre/law.hpp"
#include "rwre/step_law.hpp"
#include "rwre/tree.hpp"

namespace rwre {

// Marked tree carrying a distinguished root-to-depth-n ray w_0..w_n.
// brothers[k] lists the children of w_{k-1} other than w_k (possibly empty);
// their subtrees are ordinary trees of the unbiased law.
struct SpinalTree {
  MarkedTree tree;
  std::vector<VertexId> spine;              // w_0 = root, ..., w_n
  std::vector<double> spine_potential;      // V(w_k), same length as spine
  std::vector<std::vector<VertexId>> brothers;  // brothers[k], k = 1..n

  int generations() const { return static_cast<int>(spine.size()) - 1; }
  // Increments V(w_k) - V(w_{k-1}), k = 1..n; i.i.d. with the tilted step
  // law by construction.
  std::vector<double> spine_increments() const;
};

enum class SpineGrowth {
  FullTree,   // brother subtrees materialized down to depth n
  SpineOnly   // brothers present as vertices but left undrawn (lazy)
};

// Samples the tree under the size-biased (spinal) change of measure: each
// spine generation draws one family from the law reweighted by its mark
// sum (exact Gaussian shift for LogNormal marks, exact inversion over
// atom weights p_k * mark-sum for tables), the spine child is picked with
// probability proportional to its mark, and everything off the spine
// grows unbiased.
// Laws with a tilt root theta < 1 are rescaled first; throws WrongRegime
// when no tilt making the martingale normalization hold exists.
SpinalTree sample_q_tree(const OffspringLaw& law, int n, uint64_t rng_seed,
                         SpineGrowth growth = SpineGrowth::FullTree);

// W_n = sum over |x|=n of e^{-V(x)} on the materialized arena. Mean one
// over unbiased trees (extinct ones included); strictly positive on spinal
// trees.
double additive_martingale(const MarkedTree& tree, int n);

// Bounded functional of a depth-n ancestry line: evaluated on the potentials
// V(x_1..x_n) and the offspring counts N(x_0..x_{n-1}).
struct PathFunctional {
  enum class Kind { One, PotentialBand, FirstOffspringEquals, OffspringAtMost };
  Kind kind = Kind::One;
  double lo = 0.0, hi = 0.0;   // PotentialBand: all V(x_i) in [lo, hi]
  long long value = 0;         // offspring-count parameter

  static PathFunctional one();
  static PathFunctional potential_band(double lo, double hi);
  static PathFunctional first_offspring_equals(long long count);  // N(x_0) == count
  static PathFunctional offspring_at_most(long long cap);         // all N(x_i) <= cap

  double evaluate(const std::vector<double>& v,
                  const std::vector<long long>& offspring) const;
};

struct ManyToOneCheck {
  RateEstimate lhs;       // tree side: mean of sum_{|x|=n} e^{-V(x)} F(path)
  RateEstimate rhs;       // walk side: mean of F(S_i, nu_{i-1})
  double pooled_se = 0.0;
  double gap = 0.0;       // |lhs - rhs|
  bool consistent = false;  // gap <= 3 pooled se
};

// Two-sided Monte Carlo of the depth-n many-to-one identity. The tree side
// averages over unbiased trees (extinct ones contribute zero); the walk side
// averages F over the tilted (S, nu) walk. Requires n <= 4: the tree side
// enumerates whole populations. Laws are theta-rescaled like sample_q_tree.
ManyToOneCheck many_to_one_check(const OffspringLaw& law, int n,
                                 const PathFunctional& f, long long reps,
                                 uint64_t rng_seed);

// Upper bound on P{min over |x|=n of max-potential <= a n^{1/3}}:
//   sum_{j=1}^n e^{a n^{1/3} - b (n-j)^{1/3}}
//            P{a n^{1/3} >= S_i > a n^{1/3} - b (n-i)^{1/3} for all i < j}.
// Requires 0 < a <= b and b = (3 pi^2 sigma^2 / 2)^{1/3} for the step's
// variance; the reported rate log(sum)/n^{1/3} is predicted to approach
// a - b. Lattice step laws are evaluated exactly (one band sweep yields
// every survival probability); other laws fall back to Monte Carlo with the
// insufficient flag tied to the dominating term's survivor count.
RateEstimate first_moment_rate(const StepLaw& step, double a, double b, int n,
                               long long reps, uint64_t rng_seed);

// Interval family I_i = [(a-eps) n^{1/3} - b (n-i)^{1/3}, a n^{1/3}],
// 1 <= i <= n, or the whole line when unconstrained.
struct IntervalFamily {
  double a = 0.0, b = 0.0, eps = 0.0;
  bool unconstrained = false;

  static IntervalFamily bands(double a, double b, double eps);
  static IntervalFamily whole_line();

  double lo(int i, int n) const;
  double hi(int i, int n) const;
};

struct SecondMomentBound {
  RateEstimate numerator;  // E[e^{S_n} 1{S_i in I_i, nu_{i-1} <= cap, all i}]
  RateEstimate h_sum;      // sum_{j=1}^n of the grid supremum of h_{j,n}
  long long nu_cap = 0;    // cap actually applied; 0 means none
  double log_bound = 0.0;  // log numerator - log(1 + (cap-1) h_sum)
  double bound = 0.0;
  double rate = 0.0;       // log_bound / n^{1/3}
  bool grid_too_coarse = false;  // adjacent grid suprema differ by > 2x
  bool insufficient = false;
};

// Floor of e^{n^{1/4}}, the offspring cap the moment method uses by default.
long long second_moment_default_cap(int n);

// Lower-bound ingredients for P{some |x|=n keeps V(x_i) in I_i for all i}:
// the capped weighted band mass (numerator) and the overlap terms h_{j,n},
// each a supremum over a 64-point grid on I_j of the shifted band mass
//   h_{j,n}(u) = E[e^{S_{n-j}} 1{S_i in I_{i+j} - u, 0 <= i <= n-j}].
// The assembled bound is numerator / (1 + (cap-1) sum_j h_j). Lattice step
// laws evaluate everything exactly; others use Monte Carlo (the grid shares
// paths through a running intersection of admissible shifts). nu_cap
// nullopt drops the offspring constraint, in which case no bound is
// assembled (log_bound = -inf).
SecondMomentBound second_moment_bound_ingredients(
    const StepLaw& step, const IntervalFamily& intervals,
    std::optional<long long> nu_cap, int n, long long reps, uint64_t rng_seed);

// Finite birth-and-death environment on {0..n}: up-weight b_{j+1} and
// killing rate r_j at interior state j, plus a coarsening partition
// m_0 = 0 < m_1 < ... < m_k = n-1 for the product lower bound. b_1 and r_0
// are carried for index parity but play no role in the recursions.
struct BirthDeathSpec {
  std::vector<double> b;       // b_1..b_n, all > 0
  std::vector<double> r;       // r_0..r_{n-1}, all >= 0
  std::vector<int> partition;  // m_0=0 < m_1 < ... < m_k = n-1

  int n() const { return static_cast<int>(b.size()); }
  void validate() const;  // throws std::invalid_argument
  // v(0)=0, v(j) = -(log b_1 + ... + log b_j), j = 1..n.
  std::vector<double> potential() const;
};

struct ZRecursionBound {
  double product = 0.0;  // prod_{j=1}^{n-1} z_j
  double bound = 0.0;    // partitioned lower bound
  bool holds = false;    // log_product >= log_bound, no tolerance
  double log_product = 0.0;
  double log_bound = 0.0;
};

// Backward recursion z_n = 0, z_j = 1/(1 + r_j + b_{j+1}(1 - z_{j+1})),
// its product, and the lower bound
//   2^{-k} / prod(m_i - m_{i-1})
//     * exp{-sum_i (lambda_i + (m_i - m_{i-1})^2 r^(i) e^{v*_i})}
// with r^(i) the block max of r, lambda_i the block max of v(j) - v(m_i)
// plus (v(m_i) - v(m_i + 1))^+, and v*_i the largest in-block potential
// drop. The comparison is done in log space so deep products stay exact.
ZRecursionBound z_recursion_and_bound(const BirthDeathSpec& spec);

struct BirthDeathFormulas {
  double hit_prob = 0.0;       // P_m{tau(ell) < tau(m)} for the chain
  double log_hit_prob = 0.0;
  double golosov_bound = 0.0;  // upper bound on E_m[tau(ell) | hit]
};

// Closed forms on the chain that steps j -> j+1 with probability
// b_{j+1}/(1 + b_{j+1}): the exact downward hit probability
//   1/(1 + b_{m+1}) * e^{v(m)} / sum_{i=ell+1}^m e^{v(i)}
// and the reflected-chain bound (m-ell)^2 e^{max drop of v on (ell, m]}.
// Requires 0 <= ell < m < n.
BirthDeathFormulas birth_death_formulas(const BirthDeathSpec& spec, int ell,
                                        int m);

struct BirthDeathChainMc {
  RateEstimate hit;            // excursions from m reaching ell first
  double mean_hit_time = 0.0;  // steps to ell, averaged over hits
  double hit_time_se = 0.0;
};

// Direct simulation of excursions from m (an excursion whose first move
// goes above m returns to m before reaching ell, so it is scored without
// being walked). Cross-checks both closed forms above.
BirthDeathChainMc birth_death_chain_mc(const BirthDeathSpec& spec, int ell,
                                       int m, long long reps,
                                       uint64_t rng_seed);

// Numerical probe of the structure behind the conditional-mean comparison:
// the product of the nested maps
//   F_{n-1} = c,  F_j(u_j..u_{n-2}) = 1/(1 + u_j + a_{j+1}(1 - F_{j+1}))
// must be nonincreasing and convex in every coordinate on the nonnegative
// orthant. Checks random second differences (>= -1e-9) and pathwise
// monotonicity. a holds a_1..a_{n-1}; a_1 is unused, kept for index parity.
bool fj_convexity_probe(double c, const std::vector<double>& a, int n,
                        int samples, uint64_t rng_seed);

struct SpineDecomposition {
  // All vectors are indexed by spine generation j; entry 0 is unused.
  std::vector<double> b;         // B(w_j) = e^{-(V(w_j) - V(w_{j-1}))}
  std::vector<double> xi;        // brother escape sums, j = 1..n-2
  std::vector<double> y;         // y_j = P{from w_j, depth n before w_{j-1}'s
                                 //        level-crossing back}, j = 1..n
  double y_product = 0.0;        // prod y_j = P{from w_n: root before
                                 //             returning to depth n}
  double log_y_product = 0.0;
  // Filled when a mean-escape table is supplied: the recursion with xi_j
  // replaced by its conditional mean sum_{brothers} B(x) mean_beta[n-1-j].
  std::vector<double> xi_mean;
  std::vector<double> z;
  double z_product = 0.0;
};

// Exact decomposition of the no-return probability along the spine:
// xi_j sums B(x) times the solved escape probability over the brothers of
// w_{j+1}, y_n = omega(w_n, w_{n-1}), and
//   y_j = 1 / (1 + xi_j + (1 - y_{j+1}) B(w_{j+1})).
// mean_beta (optional) holds estimates of the annealed escape probability
// by depth (index m >= 1 used for m <= n-2) and activates the z variant.
SpineDecomposition spine_return_decomposition(
    const SpinalTree& sp, const std::vector<double>* mean_beta = nullptr);

// On-disk format: a one-line JSON header (law, seeds, spine child ranks)
// followed by the same preorder record section trees use. Loading restores
// arena order, keys, and the spine indices.
void save_spinal_tree(const SpinalTree& sp, const std::string& path);
SpinalTree load_spinal_tree(const std::string& path);

}  // namespace rwre
