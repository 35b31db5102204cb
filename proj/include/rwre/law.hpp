// Parametric environment laws: psi, theta, tilted variance, regime
// classification and the predicted limit constants.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rwre/errors.hpp"
#include "rwre/step_law.hpp"

namespace rwre {

struct DiscreteAtom {
  double prob = 0.0;
  int n = 0;                  // offspring count
  std::vector<double> a;      // marks, length n, all > 0
};

struct OffspringLaw {
  enum class Kind { LogNormal, DiscreteTable };

  Kind kind = Kind::LogNormal;

  // LogNormal: N = n_children fixed, A_i = exp(G_i), G_i iid N(mu, s2).
  int n_children = 0;
  double mu = 0.0;
  double s2 = 0.0;

  // DiscreteTable: atom j drawn with prob[j], yielding n_j children with
  // the fixed mark vector a_j.
  std::vector<DiscreteAtom> atoms;

  static OffspringLaw log_normal(int n_children, double mu, double s2);
  static OffspringLaw discrete(std::vector<DiscreteAtom> atoms);

  // throws std::invalid_argument on malformed parameters
  void validate() const;

  double mean_offspring() const;
  bool can_go_extinct() const;
  std::string describe() const;
};

enum class Regime {
  Transient,                 // inf psi on [0,1] > 0
  PositiveRecurrentNegDrift, // inf psi < 0
  SubdiffusiveKappa,         // inf psi = 0, psi'(1) < 0
  CriticalSlowNull,          // inf psi = 0, theta = 1
  CriticalSlowBoundary       // inf psi = 0, theta < 1
};

struct RegimeReport {
  double psi_min_on_01 = 0.0;
  Regime regime = Regime::Transient;
  std::optional<double> theta;
  std::optional<double> sigma_theta_sq;
  std::optional<double> alpha_theta;
  std::optional<double> predicted_displacement_constant;
  std::optional<double> predicted_minvbar_constant;
  // +infinity encodes "never returns to zero"
  std::optional<double> kappa;
};

// log E[sum_i A_i^t]
double psi(const OffspringLaw& law, double t);

// psi'(t) = E[sum A_i^t log A_i] / E[sum A_i^t]
double psi_prime(const OffspringLaw& law, double t);

// Root of psi' in (0,1]; requires inf psi = 0 and psi'(1) >= 0.
double solve_theta(const OffspringLaw& law);

RegimeReport limit_constants(const OffspringLaw& law);

// Joint law of (S_1, nu_0) under the theta-rescaled tilt:
// E f(S_1, nu_0) = E[sum_i A_i^theta f(-theta log A_i, N)].
// theta defaults to 1 when psi(1)=0, else to solve_theta(law).
StepLaw tilted_step_law(const OffspringLaw& law,
                        std::optional<double> theta = std::nullopt);

// Marks raised to the power theta (the rescaled potential's environment law).
OffspringLaw rescale(const OffspringLaw& law, double theta);

const char* regime_name(Regime r);

}  // namespace rwre
