#include "rwre/law.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rwre {

namespace {
constexpr double kRegimeTol = 1e-9;   // |inf psi| below this counts as 0
constexpr double kRootTol = 1e-12;    // |psi'(theta)| target
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

OffspringLaw OffspringLaw::log_normal(int n_children, double mu, double s2) {
  OffspringLaw law;
  law.kind = Kind::LogNormal;
  law.n_children = n_children;
  law.mu = mu;
  law.s2 = s2;
  law.validate();
  return law;
}

OffspringLaw OffspringLaw::discrete(std::vector<DiscreteAtom> atoms) {
  OffspringLaw law;
  law.kind = Kind::DiscreteTable;
  law.atoms = std::move(atoms);
  law.validate();
  return law;
}

void OffspringLaw::validate() const {
  if (kind == Kind::LogNormal) {
    if (n_children <= 0) throw std::invalid_argument("LogNormal: n_children must be positive");
    if (!(s2 > 0)) throw std::invalid_argument("LogNormal: s2 must be positive");
    if (!std::isfinite(mu) || !std::isfinite(s2))
      throw std::invalid_argument("LogNormal: non-finite parameter");
    return;
  }
  if (atoms.empty()) throw std::invalid_argument("DiscreteTable: no atoms");
  double total = 0;
  for (auto& at : atoms) {
    if (!(at.prob > 0) || at.prob > 1) throw std::invalid_argument("DiscreteTable: prob out of (0,1]");
    if (at.n < 0 || static_cast<size_t>(at.n) != at.a.size())
      throw std::invalid_argument("DiscreteTable: mark count mismatch");
    for (double a : at.a)
      if (!(a > 0)) throw std::invalid_argument("DiscreteTable: marks must be positive");
    total += at.prob;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("DiscreteTable: probabilities must sum to 1");
}

double OffspringLaw::mean_offspring() const {
  if (kind == Kind::LogNormal) return n_children;
  double m = 0;
  for (auto& at : atoms) m += at.prob * at.n;
  return m;
}

bool OffspringLaw::can_go_extinct() const {
  if (kind == Kind::LogNormal) return false;
  for (auto& at : atoms)
    if (at.n == 0) return true;
  return false;
}

std::string OffspringLaw::describe() const {
  std::ostringstream os;
  if (kind == Kind::LogNormal) {
    os << "LogNormal{n=" << n_children << ", mu=" << mu << ", s2=" << s2 << "}";
  } else {
    os << "DiscreteTable{";
    for (size_t j = 0; j < atoms.size(); ++j) {
      if (j) os << ", ";
      os << "(" << atoms[j].prob << ", n=" << atoms[j].n << ")";
    }
    os << "}";
  }
  return os.str();
}

double psi(const OffspringLaw& law, double t) {
  if (!std::isfinite(t)) throw NonFinite("psi: t is not finite");
  if (law.kind == OffspringLaw::Kind::LogNormal) {
    // E[sum A^t] = n * E[e^{tG}] = n * exp(t mu + t^2 s2 / 2)
    return std::log(static_cast<double>(law.n_children)) + t * law.mu +
           0.5 * t * t * law.s2;
  }
  double sum = 0;
  for (auto& at : law.atoms) {
    double inner = 0;
    for (double a : at.a) inner += std::pow(a, t);
    sum += at.prob * inner;
  }
  return std::log(sum);  // -inf when every atom is childless
}

double psi_prime(const OffspringLaw& law, double t) {
  if (!std::isfinite(t)) throw NonFinite("psi_prime: t is not finite");
  if (law.kind == OffspringLaw::Kind::LogNormal) {
    return law.mu + t * law.s2;
  }
  double num = 0, den = 0;
  for (auto& at : law.atoms) {
    double in_num = 0, in_den = 0;
    for (double a : at.a) {
      double p = std::pow(a, t);
      in_den += p;
      in_num += p * std::log(a);
    }
    num += at.prob * in_num;
    den += at.prob * in_den;
  }
  return num / den;
}

namespace {

// Minimize convex psi over [0,1]. Returns (argmin, min value).
std::pair<double, double> minimize_psi(const OffspringLaw& law) {
  double d0 = psi_prime(law, 0.0);
  double d1 = psi_prime(law, 1.0);
  if (d0 >= 0) return {0.0, psi(law, 0.0)};
  if (d1 <= 0) return {1.0, psi(law, 1.0)};
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
    double mid = 0.5 * (lo + hi);
    if (psi_prime(law, mid) < 0)
      lo = mid;
    else
      hi = mid;
  }
  double t = 0.5 * (lo + hi);
  return {t, psi(law, t)};
}

// E[sum A^theta (log A)^2]
double tilted_second_moment(const OffspringLaw& law, double theta) {
  if (law.kind == OffspringLaw::Kind::LogNormal) {
    // E[e^{tG} G^2] = e^{t mu + t^2 s2/2} ((mu + t s2)^2 + s2)
    double m = law.mu + theta * law.s2;
    return law.n_children *
           std::exp(theta * law.mu + 0.5 * theta * theta * law.s2) *
           (m * m + law.s2);
  }
  double sum = 0;
  for (auto& at : law.atoms) {
    double inner = 0;
    for (double a : at.a) {
      double la = std::log(a);
      inner += std::pow(a, theta) * la * la;
    }
    sum += at.prob * inner;
  }
  return sum;
}

double solve_kappa(const OffspringLaw& law) {
  // inf{t > 1 : psi(t) = 0}; psi(1) = 0 and psi'(1) < 0 here, so psi dips
  // negative after 1 and, being convex, crosses 0 at most once more.
  double t = 1.0, step = 0.5;
  double t_hi = kInf;
  for (double probe = 1.0 + step; probe <= 4096.0; probe += step) {
    if (psi(law, probe) >= 0) {
      t_hi = probe;
      t = probe - step;
      break;
    }
    t = probe;
    if (probe > 16) step = probe;  // geometric escape for slow crossings
  }
  if (!std::isfinite(t_hi)) return kInf;
  double lo = t, hi = t_hi;
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    if (psi(law, mid) < 0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double solve_theta(const OffspringLaw& law) {
  auto [argmin, min_val] = minimize_psi(law);
  if (std::abs(min_val) > kRegimeTol)
    throw WrongRegime("solve_theta: inf psi on [0,1] is not 0");
  double d1 = psi_prime(law, 1.0);
  if (d1 < -kRootTol)
    throw WrongRegime("solve_theta: psi'(1) < 0 (kappa regime)");
  if (std::abs(d1) <= kRootTol) return 1.0;
  // psi' is nondecreasing with psi'(0) < 0 <= psi'(1): bisect.
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    double d = psi_prime(law, mid);
    if (std::abs(d) <= kRootTol && hi - lo < 1e-12) return mid;
    if (d < 0)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-16) break;
  }
  return 0.5 * (lo + hi);
}

RegimeReport limit_constants(const OffspringLaw& law) {
  RegimeReport rep;
  auto [argmin, min_val] = minimize_psi(law);
  (void)argmin;
  rep.psi_min_on_01 = min_val;
  if (min_val > kRegimeTol) {
    rep.regime = Regime::Transient;
    return rep;
  }
  if (min_val < -kRegimeTol) {
    rep.regime = Regime::PositiveRecurrentNegDrift;
    return rep;
  }
  double d1 = psi_prime(law, 1.0);
  if (d1 < -kRootTol) {
    rep.regime = Regime::SubdiffusiveKappa;
    rep.kappa = solve_kappa(law);
    return rep;
  }
  double theta = solve_theta(law);
  rep.theta = theta;
  double sigma2 = tilted_second_moment(law, theta) / theta;
  rep.sigma_theta_sq = sigma2;
  double alpha = 1.5 * M_PI * M_PI * sigma2;
  rep.alpha_theta = alpha;
  rep.predicted_minvbar_constant = std::cbrt(alpha);  // (3 pi^2 sigma^2/2)^{1/3}
  if (std::abs(theta - 1.0) <= 1e-9) {
    rep.regime = Regime::CriticalSlowNull;
    rep.predicted_displacement_constant = 4.0 / alpha;
  } else {
    rep.regime = Regime::CriticalSlowBoundary;
    rep.predicted_displacement_constant = 1.0 / alpha;
  }
  return rep;
}

OffspringLaw rescale(const OffspringLaw& law, double theta) {
  OffspringLaw out = law;
  if (law.kind == OffspringLaw::Kind::LogNormal) {
    out.mu = theta * law.mu;
    out.s2 = theta * theta * law.s2;
  } else {
    for (auto& at : out.atoms)
      for (double& a : at.a) a = std::pow(a, theta);
  }
  return out;
}

StepLaw tilted_step_law(const OffspringLaw& law, std::optional<double> theta_opt) {
  double theta;
  if (theta_opt) {
    theta = *theta_opt;
  } else if (std::abs(psi(law, 1.0)) <= kRegimeTol) {
    theta = 1.0;
  } else {
    theta = solve_theta(law);
  }
  if (std::abs(psi(law, theta)) > 1e-9)
    throw WrongRegime("tilted_step_law: psi(theta) != 0 after rescale");

  StepLaw step;
  if (law.kind == OffspringLaw::Kind::LogNormal) {
    // Tilting G by e^{theta G} shifts its mean by theta*s2; the rescaled
    // potential increment is -theta G.
    step = StepLaw::gaussian(-theta * (law.mu + theta * law.s2),
                             theta * theta * law.s2);
    step.nu_const = law.n_children;
    return step;
  }
  std::vector<std::pair<double, double>> atoms;
  std::vector<int> nus;
  for (auto& at : law.atoms) {
    for (double a : at.a) {
      atoms.emplace_back(at.prob * std::pow(a, theta), -theta * std::log(a));
      nus.push_back(at.n);
    }
  }
  step = StepLaw::finite_mixture(std::move(atoms));
  step.mixture_nu = std::move(nus);
  return step;
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Transient: return "Transient";
    case Regime::PositiveRecurrentNegDrift: return "PositiveRecurrentNegDrift";
    case Regime::SubdiffusiveKappa: return "SubdiffusiveKappa";
    case Regime::CriticalSlowNull: return "CriticalSlowNull";
    case Regime::CriticalSlowBoundary: return "CriticalSlowBoundary";
  }
  return "?";
}

}  // namespace rwre
