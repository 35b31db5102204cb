// One-dimensional walk laboratory: band-confinement and reflected-walk
// small-deviation probabilities, the weighted corollary sums, the
// sandwich inequality for the reflected maximum, and Brownian-constant
// reference estimates.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rwre/estimate.hpp"
#include "rwre/step_law.hpp"

namespace rwre {

// Continuous function on [0,1] sampled at 256 equispaced points with linear
// interpolation in between. The limit integrals are evaluated on the same
// grid, keeping predictions and simulations consistent.
struct GridFn {
  std::vector<double> values;  // values[k] = f(k/255), k = 0..255

  static GridFn constant(double c) { return GridFn{std::vector<double>(256, c)}; }

  template <class F>
  static GridFn sample(F&& fn) {
    GridFn g;
    g.values.resize(256);
    for (int k = 0; k < 256; ++k) g.values[k] = fn(k / 255.0);
    return g;
  }

  double operator()(double t) const {
    if (t <= 0.0) return values.front();
    if (t >= 1.0) return values.back();
    const double x = t * 255.0;
    const int k = static_cast<int>(x);
    const double frac = x - k;
    return values[k] * (1.0 - frac) + values[k + 1] * frac;
  }

  double min_value() const;
  double max_value() const;
  bool is_constant(double tol = 1e-12) const;
};

// Trapezoid rule on the grid for the rate integrals.
double grid_integral_inv_sq(const GridFn& f);                         // int dt / f^2
double grid_integral_inv_sq_gap(const GridFn& g1, const GridFn& g2); // int dt / (g2-g1)^2

struct BandSpec {
  GridFn g1 = GridFn::constant(-1.0);
  GridFn g2 = GridFn::constant(1.0);
  std::optional<GridFn> f;             // reflected-event profile (positive)
  double delta = 0.0;                  // reflected events: (1+delta) S-bar - S
  double an_exponent = 1.0 / 3.0;      // a_n = n^exponent; must be < 1/2

  double a_n(long long n) const;
  void validate() const;               // g1 < g2, f > 0, exponent in (0, 1/2)
};

// P{g1(i/n) a_n <= S_i <= g2(i/n) a_n for all 1 <= i <= n}. Monte Carlo for
// general laws, counting-measure Monte Carlo on the integer lattice for
// Rademacher; rate = -(a_n^2/n) log p, predicted from the Mogulskii limit.
// endpoint_b adds the constraint S_n >= (g2(1) - b) a_n.
RateEstimate band_probability(const StepLaw& step, const BandSpec& band,
                              long long n, long long reps, uint64_t rng_seed,
                              std::optional<double> endpoint_b = std::nullopt);

// P{(1+delta) S-bar_i - S_i <= a_n f(i/n) for all i}, with S-bar the running
// max over steps 1..i. endpoint_b adds S-bar_n - S_n <= b a_n f(1).
// Very rare Rademacher events with constant f are evaluated exactly on the
// finite constraint chain (result has exact = true, se = 0).
RateEstimate reflected_event_probability(const StepLaw& step, const BandSpec& band,
                                         long long n, long long reps,
                                         uint64_t rng_seed,
                                         std::optional<double> endpoint_b = std::nullopt);

struct CorollaryVariant {
  enum class Kind {
    C23i,   // sup over u in [0, b n^{1/3}] of the f-band started at u
    C23ii,  // sum_j e^{-b (n-j)^{1/3}} P(a-ceiling band up to j)
    C32i,   // sum_j e^{-a (n-j)^{1/3}} P(reflected cap a (n-i)^{1/3} up to j)
    C32ii   // same with the (1+delta) reflected functional
  };
  Kind kind = Kind::C23ii;
  GridFn f = GridFn::constant(1.0);  // C23i profile
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;

  static CorollaryVariant c23i(GridFn f, double b);
  static CorollaryVariant c23ii(double a, double b);  // requires b >= a > 0
  static CorollaryVariant c32i(double a);
  static CorollaryVariant c32ii(double a, double delta);
};

// Evaluates the displayed sum (or sup) and returns rate = -log(value)/n^{1/3}
// with the predicted limit rate attached. Exact forward recursion on the
// integer lattice for Rademacher with n <= 30; Monte Carlo otherwise, with
// every prefix length extracted from the same replica paths.
RateEstimate corollary_sum(const StepLaw& step, const CorollaryVariant& variant,
                           long long n, long long reps_per_term, uint64_t rng_seed);

struct SandwichResult {
  double lower = 0.0;   // (eta/r) e^{-(1+delta) pi^2 sigma^2 n / 8 r^2}
  double p_hat = 0.0;
  double se = 0.0;
  double upper = 0.0;   // e^{-(1-delta) pi^2 sigma^2 n / 8 r^2}
  bool holds = false;   // lower <= p_hat <= upper within 3 SE
  long long hits = 0;
  long long reps = 0;
  double neg_log_p = 0.0;
  double predicted_neg_log_p = 0.0;  // pi^2 sigma^2 n / 8 r^2
};

// P{max_i (S-bar_i - S_i) < r, S-bar_n = S_n, all aux events}, where the aux
// events are i.i.d. per-step coins of probability aux_event_prob independent
// of the steps. Requires r in [4, sqrt(n)/2] and aux_event_prob^n >= 1 -
// eta/r (the joint-probability hypothesis); delta is pinned to 0.5.
SandwichResult reflected_sandwich_check(const StepLaw& step, int r, long long n,
                                        double aux_event_prob, long long reps,
                                        uint64_t rng_seed);

enum class BrownianVariant { ChungReflected, ReflectedWithMaxCap };

// P{sup_{[0,1]} (W-bar - W) <= u} (and, for the capped variant, W-bar(1) <=
// c u) via an n-step Rademacher discretization; rate = -u^2 log p against
// pi^2/8 resp. pi^2/2. Rare settings are evaluated exactly on the
// constraint chain when it fits the work budget.
RateEstimate brownian_reference(double u, long long n, long long reps,
                                uint64_t rng_seed, BrownianVariant variant,
                                double c = 1.0);

}  // namespace rwre
