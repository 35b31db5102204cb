// Rademacher events run on the integer lattice through the kernels in
// rw1d_kernels.hpp; real-valued laws use per-replica splitmix streams. Rare
// constant-profile events are evaluated exactly by forward iteration of the
// finite constraint chain. (Importance sampling tilted by the infinite-
// horizon survival eigenfunction is unbiased but useless here: the reducible
// chains give near-zero eigenfunction mass to states a finite-horizon path
// may still visit late, so finite-replica estimates sit far below the
// truth.) All replica blocks have thread-count-independent boundaries and
// are reduced in block order, keeping every estimate bit-reproducible.
#include "rwre/rw1d.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <tuple>
#include <utility>

#include "rw1d_kernels.hpp"
#include "rwre/errors.hpp"
#include "rwre/rng.hpp"
#include "rwre/threads.hpp"

namespace rwre {

double GridFn::min_value() const {
  double m = values.front();
  for (double v : values) m = std::min(m, v);
  return m;
}

double GridFn::max_value() const {
  double m = values.front();
  for (double v : values) m = std::max(m, v);
  return m;
}

bool GridFn::is_constant(double tol) const {
  return max_value() - min_value() <= tol;
}

double grid_integral_inv_sq(const GridFn& f) {
  double acc = 0.0;
  for (int k = 0; k + 1 < 256; ++k) {
    const double a = 1.0 / (f.values[k] * f.values[k]);
    const double b = 1.0 / (f.values[k + 1] * f.values[k + 1]);
    acc += 0.5 * (a + b);
  }
  return acc / 255.0;
}

double grid_integral_inv_sq_gap(const GridFn& g1, const GridFn& g2) {
  double acc = 0.0;
  for (int k = 0; k + 1 < 256; ++k) {
    const double da = g2.values[k] - g1.values[k];
    const double db = g2.values[k + 1] - g1.values[k + 1];
    acc += 0.5 * (1.0 / (da * da) + 1.0 / (db * db));
  }
  return acc / 255.0;
}

double BandSpec::a_n(long long n) const {
  return std::pow(static_cast<double>(n), an_exponent);
}

void BandSpec::validate() const {
  if (g1.values.size() != 256 || g2.values.size() != 256 ||
      (f && f->values.size() != 256))
    throw std::invalid_argument("BandSpec: profiles must use the 256-point grid");
  if (!(an_exponent > 0.0 && an_exponent < 0.5))
    throw std::invalid_argument("BandSpec: a_n exponent must lie in (0, 1/2)");
  if (!(g1.values[0] < 0.0 && g2.values[0] > 0.0))
    throw std::invalid_argument("BandSpec: need g1(0) < 0 < g2(0)");
  for (int k = 0; k < 256; ++k)
    if (!(g1.values[k] < g2.values[k]))
      throw std::invalid_argument("BandSpec: need g1 < g2 pointwise");
  if (f)
    for (double v : f->values)
      if (!(v > 0.0)) throw std::invalid_argument("BandSpec: f must be positive");
  if (delta < 0.0) throw std::invalid_argument("BandSpec: delta must be >= 0");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;
constexpr double kPiSq = kPi * kPi;
constexpr uint64_t kPathSalt = 0x72773164;  // real-valued path streams
constexpr uint64_t kAuxSalt = 0x617578;     // sandwich auxiliary coins
constexpr long long kBlock = 1 << 15;
constexpr long long kMinHits = 30;
constexpr long long kTargetHits = 100;
constexpr size_t kMaxChainStates = 60000;
constexpr long long kMaxChainWork = 1000000000;  // transitions * states budget
constexpr double kEdge = 1e-9;  // slack when rounding real bounds to lattice

// Bounds beyond |S_i| <= n never bind; clamping keeps the int32 cast safe for
// arbitrarily wide profiles.
double clamp_bound(double x, long long n) {
  const double lim = static_cast<double>(n) + 2.0;
  return std::min(lim, std::max(-lim, x));
}
int32_t floor_edge(double x, long long n) {
  return static_cast<int32_t>(std::floor(clamp_bound(x, n) + kEdge));
}
int32_t ceil_edge(double x, long long n) {
  return static_cast<int32_t>(std::ceil(clamp_bound(x, n) - kEdge));
}

template <class Pred>  // Pred(rep) -> bool
long long count_hits(long long reps, Pred&& pred) {
  const long long nb = (reps + kBlock - 1) / kBlock;
  std::vector<long long> partial(static_cast<size_t>(nb), 0);
  parallel_blocks(nb, [&](long long b) {
    const long long end = std::min(reps, (b + 1) * kBlock);
    long long h = 0;
    for (long long r = b * kBlock; r < end; ++r) h += pred(r) ? 1 : 0;
    partial[static_cast<size_t>(b)] = h;
  });
  long long hits = 0;
  for (long long p : partial) hits += p;
  return hits;
}

template <class DieFn>  // DieFn(rep) -> first violating step in [1, n+1]
std::vector<long long> die_histogram(long long reps, long long n, DieFn&& fn) {
  const long long nb = (reps + kBlock - 1) / kBlock;
  std::vector<std::vector<long long>> partial(static_cast<size_t>(nb));
  parallel_blocks(nb, [&](long long b) {
    std::vector<long long> h(static_cast<size_t>(n) + 2, 0);
    const long long end = std::min(reps, (b + 1) * kBlock);
    for (long long r = b * kBlock; r < end; ++r) ++h[static_cast<size_t>(fn(r))];
    partial[static_cast<size_t>(b)] = std::move(h);
  });
  std::vector<long long> hist(static_cast<size_t>(n) + 2, 0);
  for (const auto& h : partial)
    for (size_t i = 0; i < hist.size(); ++i) hist[i] += h[i];
  return hist;
}

std::vector<long long> kernel_band_die_hist(uint64_t seed, long long reps,
                                            long long n,
                                            const std::vector<int32_t>& lo,
                                            const std::vector<int32_t>& hi) {
  const long long nb = (reps + kBlock - 1) / kBlock;
  std::vector<std::vector<long long>> partial(static_cast<size_t>(nb));
  parallel_blocks(nb, [&](long long b) {
    const long long begin = b * kBlock;
    const long long cnt = std::min(kBlock, reps - begin);
    std::vector<int32_t> die(static_cast<size_t>(cnt));
    kernels::band(seed, static_cast<uint64_t>(begin), cnt, n, lo.data(),
                  hi.data(), die.data(), nullptr);
    std::vector<long long> h(static_cast<size_t>(n) + 2, 0);
    for (int32_t d : die) ++h[static_cast<size_t>(d)];
    partial[static_cast<size_t>(b)] = std::move(h);
  });
  std::vector<long long> hist(static_cast<size_t>(n) + 2, 0);
  for (const auto& h : partial)
    for (size_t i = 0; i < hist.size(); ++i) hist[i] += h[i];
  return hist;
}

std::vector<long long> kernel_reflected_die_hist(uint64_t seed, long long reps,
                                                 long long n,
                                                 const std::vector<int32_t>& cap,
                                                 bool max_includes_start) {
  const long long nb = (reps + kBlock - 1) / kBlock;
  std::vector<std::vector<long long>> partial(static_cast<size_t>(nb));
  parallel_blocks(nb, [&](long long b) {
    const long long begin = b * kBlock;
    const long long cnt = std::min(kBlock, reps - begin);
    std::vector<int32_t> die(static_cast<size_t>(cnt));
    kernels::reflected(seed, static_cast<uint64_t>(begin), cnt, n, cap.data(),
                       max_includes_start, die.data(), nullptr);
    std::vector<long long> h(static_cast<size_t>(n) + 2, 0);
    for (int32_t d : die) ++h[static_cast<size_t>(d)];
    partial[static_cast<size_t>(b)] = std::move(h);
  });
  std::vector<long long> hist(static_cast<size_t>(n) + 2, 0);
  for (const auto& h : partial)
    for (size_t i = 0; i < hist.size(); ++i) hist[i] += h[i];
  return hist;
}

// (M, R) = (running max, max - walk) on the lattice, exclusive convention:
// the max starts at S_1, so step 1 lands in (+-1, 0). Constraint
// delta*M + R <= cap[i-1] (cap already carries the rounding slack).
int32_t mr_die_exclusive(uint64_t seed, uint64_t rep, long long n,
                         const std::vector<double>& cap, double delta,
                         int32_t* final_r) {
  int32_t M = 0, R = 0;
  uint64_t word = 0;
  for (long long i = 1; i <= n; ++i) {
    const int b = static_cast<int>((i - 1) & 63);
    if (b == 0) word = ctr_word(seed, rep, static_cast<uint64_t>((i - 1) >> 6));
    const bool up = (word >> b) & 1u;
    if (i == 1) {
      M = up ? 1 : -1;
      R = 0;
    } else if (up) {
      if (R == 0)
        ++M;
      else
        --R;
    } else {
      ++R;
    }
    if (delta * M + R > cap[i - 1]) return static_cast<int32_t>(i);
  }
  if (final_r) *final_r = R;
  return static_cast<int32_t>(n) + 1;
}

// Inclusive convention (Brownian reference): max starts at S_0 = 0.
bool maxcap_survives(uint64_t seed, uint64_t rep, long long n, int32_t B_gap,
                     int32_t B_max) {
  int32_t M = 0, R = 0;
  uint64_t word = 0;
  for (long long i = 1; i <= n; ++i) {
    const int b = static_cast<int>((i - 1) & 63);
    if (b == 0) word = ctr_word(seed, rep, static_cast<uint64_t>((i - 1) >> 6));
    if ((word >> b) & 1u) {
      if (R == 0)
        ++M;
      else
        --R;
    } else {
      ++R;
    }
    if (R > B_gap || M > B_max) return false;
  }
  return true;
}

// ---- exact lattice distributions (Rademacher), used for small n ----

// Alive mass after each step for the band event; masses[i-1] = P(survive
// through step i).
std::vector<double> band_alive_mass(long long n, const std::vector<int32_t>& lo,
                                    const std::vector<int32_t>& hi) {
  const int off = static_cast<int>(n);
  std::vector<double> v(2 * n + 1, 0.0), nv(2 * n + 1, 0.0);
  v[static_cast<size_t>(off)] = 1.0;
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (long long i = 1; i <= n; ++i) {
    std::fill(nv.begin(), nv.end(), 0.0);
    for (long long j = 0; j <= 2 * n; ++j) {
      if (v[j] == 0.0) continue;
      if (j > 0) nv[j - 1] += 0.5 * v[j];
      if (j < 2 * n) nv[j + 1] += 0.5 * v[j];
    }
    const long long jlo = std::max<long long>(0, lo[i - 1] + off);
    const long long jhi = std::min<long long>(2 * n, hi[i - 1] + off);
    double mass = 0.0;
    for (long long j = 0; j <= 2 * n; ++j) {
      if (j < jlo || j > jhi)
        nv[j] = 0.0;
      else
        mass += nv[j];
    }
    out[i - 1] = mass;
    v.swap(nv);
  }
  return out;
}

std::vector<double> reflected_alive_mass(long long n,
                                         const std::vector<int32_t>& cap,
                                         bool max_includes_start) {
  std::vector<double> v(static_cast<size_t>(n) + 2, 0.0),
      nv(static_cast<size_t>(n) + 2, 0.0);
  v[0] = 1.0;
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (long long i = 1; i <= n; ++i) {
    if (i == 1 && !max_includes_start) {
      nv = v;  // first step never opens a gap under the exclusive max
    } else {
      std::fill(nv.begin(), nv.end(), 0.0);
      for (long long r = 0; r <= n; ++r) {
        if (v[r] == 0.0) continue;
        nv[r == 0 ? 0 : r - 1] += 0.5 * v[r];
        nv[r + 1] += 0.5 * v[r];
      }
    }
    double mass = 0.0;
    for (long long r = 0; r <= n + 1; ++r) {
      if (r > cap[i - 1])
        nv[r] = 0.0;
      else
        mass += nv[r];
    }
    out[i - 1] = mass;
    v.swap(nv);
  }
  return out;
}

// (M, R) mass, exclusive convention, constraint delta*M + R <= cap[i-1].
std::vector<double> mr_alive_mass(long long n, const std::vector<double>& cap,
                                  double delta) {
  const long long mdim = n + 2;  // M in [-1, n] stored at M+1
  const long long rdim = n + 1;
  auto at = [&](std::vector<double>& a, long long M, long long R) -> double& {
    return a[static_cast<size_t>((M + 1) * rdim + R)];
  };
  std::vector<double> v(static_cast<size_t>(mdim * rdim), 0.0),
      nv(v.size(), 0.0);
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (long long i = 1; i <= n; ++i) {
    std::fill(nv.begin(), nv.end(), 0.0);
    if (i == 1) {
      at(nv, 1, 0) = 0.5;
      at(nv, -1, 0) = 0.5;
    } else {
      for (long long M = -1; M <= n; ++M)
        for (long long R = 0; R <= n; ++R) {
          const double m = at(v, M, R);
          if (m == 0.0) continue;
          if (R == 0) {
            if (M + 1 <= n) at(nv, M + 1, 0) += 0.5 * m;
          } else {
            at(nv, M, R - 1) += 0.5 * m;
          }
          if (R + 1 <= n) at(nv, M, R + 1) += 0.5 * m;
        }
    }
    double mass = 0.0;
    for (long long M = -1; M <= n; ++M)
      for (long long R = 0; R <= n; ++R) {
        double& m = at(nv, M, R);
        if (m == 0.0) continue;
        if (delta * static_cast<double>(M) + static_cast<double>(R) > cap[i - 1])
          m = 0.0;
        else
          mass += m;
      }
    out[i - 1] = mass;
    v.swap(nv);
  }
  return out;
}

// ---- exact finite-horizon survival on a small constraint chain ----

struct Chain {
  std::vector<std::vector<std::pair<int, double>>> rows;  // substochastic
  std::vector<std::pair<int, double>> init;               // substochastic
};

Chain gap_chain(int32_t B) {
  Chain ch;
  ch.rows.resize(static_cast<size_t>(B) + 1);
  for (int32_t r = 0; r <= B; ++r) {
    ch.rows[r].emplace_back(r == 0 ? 0 : r - 1, 0.5);
    if (r + 1 <= B) ch.rows[r].emplace_back(r + 1, 0.5);
  }
  return ch;
}

// Reachable (M, R) states under the given constraint; empty rows signal the
// state space exceeded kMaxChainStates and the caller should fall back to
// direct sampling.
Chain mr_chain(const std::function<bool(int32_t, int32_t)>& ok,
               const std::vector<std::tuple<int32_t, int32_t, double>>& starts) {
  Chain ch;
  std::map<std::pair<int32_t, int32_t>, int> idx;
  std::vector<std::pair<int32_t, int32_t>> states;
  auto intern = [&](int32_t M, int32_t R) {
    const auto key = std::make_pair(M, R);
    auto it = idx.find(key);
    if (it != idx.end()) return it->second;
    const int id = static_cast<int>(states.size());
    idx.emplace(key, id);
    states.push_back(key);
    return id;
  };
  for (const auto& [M, R, p] : starts)
    if (ok(M, R)) ch.init.emplace_back(intern(M, R), p);
  for (size_t k = 0; k < states.size(); ++k) {
    if (states.size() > kMaxChainStates) {
      ch.rows.clear();
      ch.init.clear();
      return ch;
    }
    const auto [M, R] = states[k];
    std::vector<std::pair<int, double>> row;
    const int32_t upM = R == 0 ? M + 1 : M;
    const int32_t upR = R == 0 ? 0 : R - 1;
    if (ok(upM, upR)) row.emplace_back(intern(upM, upR), 0.5);
    if (ok(M, R + 1)) row.emplace_back(intern(M, R + 1), 0.5);
    ch.rows.push_back(std::move(row));
  }
  return ch;
}

// Survival mass after the given number of transitions, by forward iteration
// of the substochastic kernel. Rescaling keeps log_p finite when the
// probability itself underflows. Returns nullopt when transitions * states
// exceeds the work budget; the caller falls back to direct sampling.
std::optional<RateEstimate> chain_survival_exact(const Chain& chain,
                                                 long long transitions) {
  const long long m = static_cast<long long>(chain.rows.size());
  if (m > 0 && transitions > kMaxChainWork / m) return std::nullopt;
  if (m == 0 || chain.init.empty()) return RateEstimate::exact_log(-kInf);
  std::vector<double> v(static_cast<size_t>(m), 0.0);
  std::vector<double> nv(static_cast<size_t>(m), 0.0);
  for (const auto& [s, p] : chain.init) v[static_cast<size_t>(s)] += p;
  double log_scale = 0.0;
  auto total = [&] {
    double t = 0.0;
    for (double x : v) t += x;
    return t;
  };
  for (long long k = 0; k < transitions; ++k) {
    std::fill(nv.begin(), nv.end(), 0.0);
    for (size_t s = 0; s < static_cast<size_t>(m); ++s) {
      if (v[s] == 0.0) continue;
      for (const auto& [t, p] : chain.rows[s])
        nv[static_cast<size_t>(t)] += v[s] * p;
    }
    v.swap(nv);
    const double mass = total();
    if (mass <= 0.0) return RateEstimate::exact_log(-kInf);
    if (mass < 1e-120) {
      for (auto& x : v) x /= mass;
      log_scale += std::log(mass);
    }
  }
  const double mass = total();
  return RateEstimate::exact_log(mass > 0.0 ? log_scale + std::log(mass)
                                            : -kInf);
}

// ---- weighted-sum assembly for the corollary displays ----

// w[j-1] is the weight of the length-j prefix event; hist[d] counts replicas
// whose first violation happened at step d (d = n+1: none). The per-replica
// statistic sum_j w_j 1{survive through j} is a function of d alone, so mean
// and variance come straight off the histogram.
RateEstimate assemble_sum_mc(const std::vector<long long>& hist, long long reps,
                             const std::vector<double>& w) {
  const long long n = static_cast<long long>(w.size());
  std::vector<double> pw(static_cast<size_t>(n) + 1, 0.0);
  for (long long j = 1; j <= n; ++j) pw[j] = pw[j - 1] + w[j - 1];
  double mean = 0.0, ex2 = 0.0;
  for (long long d = 1; d <= n + 1; ++d) {
    if (hist[d] == 0) continue;
    const double x = pw[d - 1];
    const double frac = static_cast<double>(hist[d]) / static_cast<double>(reps);
    mean += frac * x;
    ex2 += frac * x * x;
  }
  RateEstimate e;
  e.reps = reps;
  e.p_hat = mean;
  e.se = std::sqrt(std::max(0.0, ex2 - mean * mean) / static_cast<double>(reps));
  e.log_p = mean > 0.0 ? std::log(mean) : -kInf;
  // suffix counts: hits_j = #replicas surviving through step j
  std::vector<long long> hits_j(static_cast<size_t>(n) + 1, 0);
  long long acc = 0;
  for (long long j = n; j >= 1; --j) {
    acc += hist[j + 1];
    hits_j[j] = acc;
  }
  e.hits = hits_j[1];
  double starved = 0.0, zero_bound = 0.0;
  for (long long j = 1; j <= n; ++j) {
    const double contrib =
        w[j - 1] * static_cast<double>(hits_j[j]) / static_cast<double>(reps);
    if (hits_j[j] < kMinHits) starved += contrib;
    if (hits_j[j] == 0) zero_bound += w[j - 1] / static_cast<double>(reps);
  }
  e.insufficient = mean <= 0.0 || starved > 0.2 * mean || zero_bound > 0.2 * mean;
  return e;
}

RateEstimate assemble_sum_exact(const std::vector<double>& mass,
                                const std::vector<double>& w) {
  double sum = 0.0;
  for (size_t j = 0; j < w.size(); ++j) sum += w[j] * mass[j];
  RateEstimate e;
  e.exact = true;
  e.p_hat = sum;
  e.log_p = sum > 0.0 ? std::log(sum) : -kInf;
  return e;
}

}  // namespace

RateEstimate band_probability(const StepLaw& step, const BandSpec& band,
                              long long n, long long reps, uint64_t rng_seed,
                              std::optional<double> endpoint_b) {
  band.validate();
  if (n < 1) throw std::invalid_argument("band_probability: n must be >= 1");
  if (reps < 1) throw std::invalid_argument("band_probability: reps must be >= 1");
  if (endpoint_b && !(*endpoint_b > 0.0))
    throw std::invalid_argument("band_probability: endpoint b must be > 0");
  const double an = band.a_n(n);
  const double predicted =
      0.5 * kPiSq * step.step_var() * grid_integral_inv_sq_gap(band.g1, band.g2);
  RateEstimate est;
  if (step.kind == StepLaw::Kind::Rademacher) {
    std::vector<int32_t> lo(static_cast<size_t>(n)), hi(static_cast<size_t>(n));
    for (long long i = 1; i <= n; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(n);
      lo[i - 1] = ceil_edge(band.g1(t) * an, n);
      hi[i - 1] = floor_edge(band.g2(t) * an, n);
    }
    if (endpoint_b)
      lo[n - 1] = std::max(lo[n - 1], ceil_edge((band.g2(1.0) - *endpoint_b) * an, n));
    const auto hist = kernel_band_die_hist(rng_seed, reps, n, lo, hi);
    est = RateEstimate::from_bernoulli(hist[static_cast<size_t>(n) + 1], reps);
  } else {
    std::vector<double> lo(static_cast<size_t>(n)), hi(static_cast<size_t>(n));
    for (long long i = 1; i <= n; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(n);
      lo[i - 1] = band.g1(t) * an - kEdge;
      hi[i - 1] = band.g2(t) * an + kEdge;
    }
    if (endpoint_b)
      lo[n - 1] = std::max(lo[n - 1], (band.g2(1.0) - *endpoint_b) * an - kEdge);
    const long long hits = count_hits(reps, [&](long long r) {
      Stream st(mix64(rng_seed ^ kPathSalt, static_cast<uint64_t>(r)));
      double s = 0.0;
      for (long long i = 0; i < n; ++i) {
        s += step.sample(st);
        if (s < lo[i] || s > hi[i]) return false;
      }
      return true;
    });
    est = RateEstimate::from_bernoulli(hits, reps);
  }
  est.rate = -(an * an / static_cast<double>(n)) * est.log_p;
  est.predicted_rate = predicted;
  est.insufficient = est.hits < kMinHits;
  return est;
}

RateEstimate reflected_event_probability(const StepLaw& step, const BandSpec& band,
                                         long long n, long long reps,
                                         uint64_t rng_seed,
                                         std::optional<double> endpoint_b) {
  band.validate();
  if (!band.f)
    throw std::invalid_argument("reflected_event_probability: BandSpec.f required");
  if (n < 1) throw std::invalid_argument("reflected_event_probability: n >= 1");
  if (reps < 1) throw std::invalid_argument("reflected_event_probability: reps >= 1");
  if (endpoint_b && !(*endpoint_b > 0.0 && *endpoint_b < 1.0))
    throw std::invalid_argument("reflected_event_probability: b must be in (0,1)");
  const double an = band.a_n(n);
  const GridFn& f = *band.f;
  const double delta = band.delta;
  const double predicted = (delta == 0.0 ? 0.125 : 0.5) * kPiSq *
                           step.step_var() * grid_integral_inv_sq(f);
  const double asym_nlp = predicted * static_cast<double>(n) / (an * an);
  const bool rare =
      asym_nlp > std::max(2.0, std::log(static_cast<double>(reps)) -
                                   std::log(static_cast<double>(kTargetHits)));
  const bool lattice = step.kind == StepLaw::Kind::Rademacher;

  RateEstimate est;
  bool done = false;
  // Constant-profile lattice events too rare for the replica budget are
  // evaluated exactly on the (gap) or (max, gap) constraint chain.
  if (lattice && f.is_constant() && !endpoint_b && rare) {
    const double creal = an * f.values[0] + kEdge;
    Chain chain;
    if (delta == 0.0) {
      const int32_t B = floor_edge(an * f.values[0], n);
      if (B >= 0 && B <= static_cast<int32_t>(kMaxChainStates)) {
        chain = gap_chain(B);
        chain.init = {{0, 1.0}};
      }
    } else {
      chain = mr_chain(
          [&](int32_t M, int32_t R) {
            return delta * M + static_cast<double>(R) <= creal;
          },
          {{1, 0, 0.5}, {-1, 0, 0.5}});
    }
    if (!chain.rows.empty()) {
      if (const auto ex = chain_survival_exact(chain, n - 1)) {
        est = *ex;
        done = true;
      }
    } else if (delta == 0.0 && floor_edge(an * f.values[0], n) < 0) {
      est = RateEstimate::from_bernoulli(0, reps);
      done = true;
    }
  }
  if (!done && lattice && delta == 0.0) {
    std::vector<int32_t> cap(static_cast<size_t>(n));
    for (long long i = 1; i <= n; ++i)
      cap[i - 1] = floor_edge(an * f(static_cast<double>(i) / n), n);
    if (endpoint_b)
      cap[n - 1] = std::min(cap[n - 1], floor_edge(*endpoint_b * an * f(1.0), n));
    const auto hist = kernel_reflected_die_hist(rng_seed, reps, n, cap, false);
    est = RateEstimate::from_bernoulli(hist[static_cast<size_t>(n) + 1], reps);
    done = true;
  }
  if (!done && lattice) {
    std::vector<double> cap(static_cast<size_t>(n));
    for (long long i = 1; i <= n; ++i)
      cap[i - 1] = an * f(static_cast<double>(i) / n) + kEdge;
    const std::optional<int32_t> cap_r =
        endpoint_b ? std::optional<int32_t>(floor_edge(*endpoint_b * an * f(1.0), n))
                   : std::nullopt;
    const long long hits = count_hits(reps, [&](long long r) {
      int32_t fr = 0;
      const int32_t die = mr_die_exclusive(rng_seed, static_cast<uint64_t>(r), n,
                                           cap, delta, &fr);
      return die == n + 1 && (!cap_r || fr <= *cap_r);
    });
    est = RateEstimate::from_bernoulli(hits, reps);
    done = true;
  }
  if (!done) {
    std::vector<double> cap(static_cast<size_t>(n));
    for (long long i = 1; i <= n; ++i)
      cap[i - 1] = an * f(static_cast<double>(i) / n) + kEdge;
    const std::optional<double> cap_r =
        endpoint_b ? std::optional<double>(*endpoint_b * an * f(1.0) + kEdge)
                   : std::nullopt;
    const long long hits = count_hits(reps, [&](long long r) {
      Stream st(mix64(rng_seed ^ kPathSalt, static_cast<uint64_t>(r)));
      double s = 0.0, smax = -kInf;
      for (long long i = 1; i <= n; ++i) {
        s += step.sample(st);
        smax = std::max(smax, s);
        if ((1.0 + delta) * smax - s > cap[i - 1]) return false;
      }
      return !cap_r || smax - s <= *cap_r;
    });
    est = RateEstimate::from_bernoulli(hits, reps);
  }
  est.rate = -(an * an / static_cast<double>(n)) * est.log_p;
  est.predicted_rate = predicted;
  est.insufficient = !est.exact && est.hits < kMinHits;
  return est;
}

CorollaryVariant CorollaryVariant::c23i(GridFn f, double b) {
  CorollaryVariant v;
  v.kind = Kind::C23i;
  v.f = std::move(f);
  v.b = b;
  return v;
}

CorollaryVariant CorollaryVariant::c23ii(double a, double b) {
  CorollaryVariant v;
  v.kind = Kind::C23ii;
  v.a = a;
  v.b = b;
  return v;
}

CorollaryVariant CorollaryVariant::c32i(double a) {
  CorollaryVariant v;
  v.kind = Kind::C32i;
  v.a = a;
  return v;
}

CorollaryVariant CorollaryVariant::c32ii(double a, double delta) {
  CorollaryVariant v;
  v.kind = Kind::C32ii;
  v.a = a;
  v.delta = delta;
  return v;
}

RateEstimate corollary_sum(const StepLaw& step, const CorollaryVariant& variant,
                           long long n, long long reps_per_term,
                           uint64_t rng_seed) {
  if (n < 1) throw std::invalid_argument("corollary_sum: n must be >= 1");
  if (reps_per_term < 1)
    throw std::invalid_argument("corollary_sum: reps_per_term must be >= 1");
  using Kind = CorollaryVariant::Kind;
  switch (variant.kind) {
    case Kind::C23i:
      if (!(variant.b > 0.0))
        throw std::invalid_argument("corollary_sum: C23i needs b > 0");
      if (variant.f.values.size() != 256 || !(variant.f.min_value() > 0.0))
        throw std::invalid_argument("corollary_sum: C23i needs positive f");
      break;
    case Kind::C23ii:
      // b = a is the balanced choice where both branches of the predicted
      // min coincide; only b < a is rejected.
      if (!(variant.b >= variant.a && variant.a > 0.0))
        throw std::invalid_argument("corollary_sum: C23ii needs b >= a > 0");
      break;
    case Kind::C32i:
      if (!(variant.a > 0.0))
        throw std::invalid_argument("corollary_sum: C32i needs a > 0");
      break;
    case Kind::C32ii:
      if (!(variant.a > 0.0 && variant.delta > 0.0))
        throw std::invalid_argument("corollary_sum: C32ii needs a > 0, delta > 0");
      break;
  }
  const double cb = std::cbrt(static_cast<double>(n));
  const double sigma2 = step.step_var();
  const bool lattice = step.kind == StepLaw::Kind::Rademacher;
  const bool exact = lattice && n <= 30;
  RateEstimate est;
  double predicted = 0.0;

  if (variant.kind == Kind::C23i) {
    predicted = 0.5 * kPiSq * sigma2 * grid_integral_inv_sq(variant.f);
    const int32_t umax = floor_edge(variant.b * cb, n);
    // Offsets walked on the integer grid; the limit rate is offset-uniform.
    long long best_hits = -1;
    double best_exact = -1.0;
    for (int32_t u = 0; u <= std::max<int32_t>(umax, 0); ++u) {
      std::vector<int32_t> lo(static_cast<size_t>(n)), hi(static_cast<size_t>(n));
      for (long long i = 1; i <= n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n);
        lo[i - 1] = ceil_edge(u - cb * variant.f(t), n);
        hi[i - 1] = u;
      }
      if (lattice && exact) {
        const auto mass = band_alive_mass(n, lo, hi);
        best_exact = std::max(best_exact, mass[static_cast<size_t>(n) - 1]);
      } else if (lattice) {
        const auto hist = kernel_band_die_hist(rng_seed, reps_per_term, n, lo, hi);
        best_hits = std::max(best_hits, hist[static_cast<size_t>(n) + 1]);
      } else {
        const long long hits = count_hits(reps_per_term, [&](long long r) {
          Stream st(mix64(rng_seed ^ kPathSalt, static_cast<uint64_t>(r)));
          double s = 0.0;
          for (long long i = 1; i <= n; ++i) {
            s += step.sample(st);
            const double t = static_cast<double>(i) / static_cast<double>(n);
            if (s > u + kEdge || s < u - cb * variant.f(t) - kEdge) return false;
          }
          return true;
        });
        best_hits = std::max(best_hits, hits);
      }
    }
    if (exact) {
      est.exact = true;
      est.p_hat = best_exact;
      est.log_p = best_exact > 0.0 ? std::log(best_exact) : -kInf;
    } else {
      est = RateEstimate::from_bernoulli(best_hits, reps_per_term);
      est.insufficient = best_hits < kMinHits;
    }
  } else if (variant.kind == Kind::C23ii) {
    predicted = std::min(variant.b, 1.5 * kPiSq * sigma2 / (variant.b * variant.b));
    const double top = variant.a * cb;
    std::vector<double> w(static_cast<size_t>(n));
    for (long long j = 1; j <= n; ++j)
      w[j - 1] = std::exp(-variant.b * std::cbrt(static_cast<double>(n - j)));
    std::vector<int32_t> lo(static_cast<size_t>(n)), hi(static_cast<size_t>(n));
    std::vector<double> lo_real(static_cast<size_t>(n));
    for (long long i = 1; i <= n; ++i) {
      const double floor_v = top - variant.b * std::cbrt(static_cast<double>(n - i));
      lo[i - 1] = floor_edge(floor_v, n) + 1;  // strict: S_i > floor_v
      hi[i - 1] = floor_edge(top, n);
      lo_real[i - 1] = floor_v;
    }
    if (exact) {
      est = assemble_sum_exact(band_alive_mass(n, lo, hi), w);
    } else if (lattice) {
      est = assemble_sum_mc(kernel_band_die_hist(rng_seed, reps_per_term, n, lo, hi),
                            reps_per_term, w);
    } else {
      const auto hist = die_histogram(reps_per_term, n, [&](long long r) {
        Stream st(mix64(rng_seed ^ kPathSalt, static_cast<uint64_t>(r)));
        double s = 0.0;
        for (long long i = 1; i <= n; ++i) {
          s += step.sample(st);
          if (s > top + kEdge || s <= lo_real[i - 1]) return i;
        }
        return n + 1;
      });
      est = assemble_sum_mc(hist, reps_per_term, w);
    }
  } else {  // C32i / C32ii
    const double delta = variant.kind == Kind::C32ii ? variant.delta : 0.0;
    predicted = std::min(variant.a, (delta == 0.0 ? 0.375 : 1.5) * kPiSq * sigma2 /
                                        (variant.a * variant.a));
    std::vector<double> w(static_cast<size_t>(n));
    std::vector<double> cap_real(static_cast<size_t>(n));
    for (long long j = 1; j <= n; ++j) {
      w[j - 1] = std::exp(-variant.a * std::cbrt(static_cast<double>(n - j)));
      cap_real[j - 1] = variant.a * std::cbrt(static_cast<double>(n - j)) + kEdge;
    }
    if (variant.kind == Kind::C32i && lattice) {
      std::vector<int32_t> cap(static_cast<size_t>(n));
      for (long long i = 1; i <= n; ++i)
        cap[i - 1] = floor_edge(variant.a * std::cbrt(static_cast<double>(n - i)), n);
      if (exact)
        est = assemble_sum_exact(reflected_alive_mass(n, cap, false), w);
      else
        est = assemble_sum_mc(
            kernel_reflected_die_hist(rng_seed, reps_per_term, n, cap, false),
            reps_per_term, w);
    } else if (lattice) {
      if (exact) {
        est = assemble_sum_exact(mr_alive_mass(n, cap_real, delta), w);
      } else {
        const auto hist = die_histogram(reps_per_term, n, [&](long long r) {
          return static_cast<long long>(mr_die_exclusive(
              rng_seed, static_cast<uint64_t>(r), n, cap_real, delta, nullptr));
        });
        est = assemble_sum_mc(hist, reps_per_term, w);
      }
    } else {
      const auto hist = die_histogram(reps_per_term, n, [&](long long r) {
        Stream st(mix64(rng_seed ^ kPathSalt, static_cast<uint64_t>(r)));
        double s = 0.0, smax = -kInf;
        for (long long i = 1; i <= n; ++i) {
          s += step.sample(st);
          smax = std::max(smax, s);
          if ((1.0 + delta) * smax - s > cap_real[i - 1]) return i;
        }
        return n + 1;
      });
      est = assemble_sum_mc(hist, reps_per_term, w);
    }
  }
  est.rate = -est.log_p / cb;
  est.predicted_rate = predicted;
  return est;
}

SandwichResult reflected_sandwich_check(const StepLaw& step, int r, long long n,
                                        double aux_event_prob, long long reps,
                                        uint64_t rng_seed) {
  constexpr double kEta = 0.5;
  constexpr int kR0 = 4;
  constexpr double kDelta = 0.5;
  if (n < 1) throw std::invalid_argument("reflected_sandwich_check: n >= 1");
  if (reps < 1) throw std::invalid_argument("reflected_sandwich_check: reps >= 1");
  if (r < kR0 || static_cast<double>(r) > kEta * std::sqrt(static_cast<double>(n)) + 1e-12)
    throw std::invalid_argument(
        "reflected_sandwich_check: r must lie in [4, sqrt(n)/2]");
  if (!(aux_event_prob > 0.0 && aux_event_prob <= 1.0))
    throw std::invalid_argument(
        "reflected_sandwich_check: aux_event_prob must be in (0, 1]");
  if (aux_event_prob < 1.0 &&
      static_cast<double>(n) * std::log(aux_event_prob) < std::log1p(-kEta / r))
    throw HypothesisViolated(
        "reflected_sandwich_check: P(all aux events) < 1 - eta/r");

  const double pred =
      kPiSq * step.step_var() * static_cast<double>(n) / (8.0 * r * r);
  SandwichResult out;
  out.predicted_neg_log_p = pred;
  out.lower = (kEta / r) * std::exp(-(1.0 + kDelta) * pred);
  out.upper = std::exp(-(1.0 - kDelta) * pred);
  out.reps = reps;

  const double q = aux_event_prob;
  const auto aux_ok = [&](uint64_t rep) {
    if (q >= 1.0) return true;
    Stream st(mix64(rng_seed ^ kAuxSalt, rep));
    // first failing step is 1 + floor(log U / log q), geometric
    const double t = std::floor(std::log(st.u01_pos()) / std::log(q));
    return t >= static_cast<double>(n);
  };

  long long hits = 0;
  if (step.kind == StepLaw::Kind::Rademacher) {
    const std::vector<int32_t> cap(static_cast<size_t>(n), r - 1);  // strict < r
    const long long nb = (reps + kBlock - 1) / kBlock;
    std::vector<long long> partial(static_cast<size_t>(nb), 0);
    parallel_blocks(nb, [&](long long b) {
      const long long begin = b * kBlock;
      const long long cnt = std::min(kBlock, reps - begin);
      std::vector<int32_t> die(static_cast<size_t>(cnt));
      std::vector<int32_t> fin(static_cast<size_t>(cnt), -1);
      kernels::reflected(rng_seed, static_cast<uint64_t>(begin), cnt, n,
                         cap.data(), false, die.data(), fin.data());
      long long h = 0;
      for (long long k = 0; k < cnt; ++k) {
        if (die[k] != n + 1 || fin[k] != 0) continue;  // need S-bar_n = S_n
        if (aux_ok(static_cast<uint64_t>(begin + k))) ++h;
      }
      partial[static_cast<size_t>(b)] = h;
    });
    for (long long p : partial) hits += p;
  } else {
    hits = count_hits(reps, [&](long long rep) {
      Stream st(mix64(rng_seed ^ kPathSalt, static_cast<uint64_t>(rep)));
      double s = 0.0, smax = -kInf;
      for (long long i = 1; i <= n; ++i) {
        s += step.sample(st);
        smax = std::max(smax, s);
        if (smax - s >= static_cast<double>(r)) return false;
      }
      return smax == s && aux_ok(static_cast<uint64_t>(rep));
    });
  }
  const auto est = RateEstimate::from_bernoulli(hits, reps);
  out.p_hat = est.p_hat;
  out.se = est.se;
  out.hits = hits;
  out.neg_log_p = -est.log_p;
  out.holds = (out.p_hat + 3.0 * out.se >= out.lower) &&
              (out.p_hat - 3.0 * out.se <= out.upper);
  return out;
}

RateEstimate brownian_reference(double u, long long n, long long reps,
                                uint64_t rng_seed, BrownianVariant variant,
                                double c) {
  if (n < 4) throw std::invalid_argument("brownian_reference: n must be >= 4");
  if (reps < 1) throw std::invalid_argument("brownian_reference: reps >= 1");
  if (!(u > 0.0) || kPiSq / (8.0 * u * u) > 12.0 + 1e-12)
    throw std::invalid_argument(
        "brownian_reference: need pi^2/(8 u^2) <= 12 for estimability");
  if (variant == BrownianVariant::ReflectedWithMaxCap && !(c > 0.0))
    throw std::invalid_argument("brownian_reference: c must be > 0");
  const double rootn = std::sqrt(static_cast<double>(n));
  const int32_t b_gap = floor_edge(u * rootn, n);
  const int32_t b_max = floor_edge(c * u * rootn, n);
  const double predicted =
      variant == BrownianVariant::ChungReflected ? kPiSq / 8.0 : kPiSq / 2.0;
  const double asym_nlp = predicted / (u * u);
  const bool rare =
      asym_nlp > std::max(2.0, std::log(static_cast<double>(reps)) -
                                   std::log(static_cast<double>(kTargetHits)));
  RateEstimate est;
  bool done = false;
  if (variant == BrownianVariant::ChungReflected) {
    if (rare && b_gap <= static_cast<int32_t>(kMaxChainStates)) {
      Chain chain = gap_chain(b_gap);
      chain.init = {{0, 1.0}};
      if (const auto ex = chain_survival_exact(chain, n)) {
        est = *ex;
        done = true;
      }
    }
    if (!done) {
      const std::vector<int32_t> cap(static_cast<size_t>(n), b_gap);
      const auto hist = kernel_reflected_die_hist(rng_seed, reps, n, cap, true);
      est = RateEstimate::from_bernoulli(hist[static_cast<size_t>(n) + 1], reps);
      done = true;
    }
  } else {
    if (rare) {
      Chain chain = mr_chain(
          [&](int32_t M, int32_t R) { return M <= b_max && R <= b_gap; },
          {{0, 0, 1.0}});
      if (!chain.rows.empty()) {
        if (const auto ex = chain_survival_exact(chain, n)) {
          est = *ex;
          done = true;
        }
      }
    }
    if (!done) {
      const long long hits = count_hits(reps, [&](long long r) {
        return maxcap_survives(rng_seed, static_cast<uint64_t>(r), n, b_gap,
                               b_max);
      });
      est = RateEstimate::from_bernoulli(hits, reps);
    }
  }
  est.rate = -(u * u) * est.log_p;
  est.predicted_rate = predicted;
  est.insufficient = !est.exact && est.hits < kMinHits;
  return est;
}

}  // namespace rwre
