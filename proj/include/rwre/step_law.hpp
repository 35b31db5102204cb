// One-dimensional step laws for the auxiliary walk S and its integer
// companion nu (offspring count seen along the tilted path).
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "rwre/rng.hpp"

namespace rwre {

struct StepLaw {
  enum class Kind { Gaussian, FiniteMixture, Rademacher };

  Kind kind = Kind::Rademacher;

  // Gaussian
  double mean = 0.0;
  double var = 1.0;

  // FiniteMixture: atoms (weight, point); weights sum to 1.
  std::vector<std::pair<double, double>> mixture;
  // Optional per-atom nu (same length as mixture when present).
  std::vector<int> mixture_nu;
  // Deterministic nu companion (used by Gaussian/Rademacher laws); -1 = none.
  int nu_const = -1;

  static StepLaw rademacher() { return StepLaw{}; }

  static StepLaw gaussian(double mean, double var) {
    StepLaw s;
    s.kind = Kind::Gaussian;
    s.mean = mean;
    s.var = var;
    return s;
  }

  static StepLaw finite_mixture(std::vector<std::pair<double, double>> atoms) {
    StepLaw s;
    s.kind = Kind::FiniteMixture;
    s.mixture = std::move(atoms);
    return s;
  }

  double step_mean() const {
    switch (kind) {
      case Kind::Gaussian:
        return mean;
      case Kind::Rademacher:
        return 0.0;
      case Kind::FiniteMixture: {
        double m = 0;
        for (auto& [w, p] : mixture) m += w * p;
        return m;
      }
    }
    return 0;
  }

  double step_var() const {
    switch (kind) {
      case Kind::Gaussian:
        return var;
      case Kind::Rademacher:
        return 1.0;
      case Kind::FiniteMixture: {
        double m = step_mean(), v = 0;
        for (auto& [w, p] : mixture) v += w * (p - m) * (p - m);
        return v;
      }
    }
    return 0;
  }

  // All atoms at integer points (enables exact lattice DP).
  bool is_integer_lattice() const {
    if (kind == Kind::Rademacher) return true;
    if (kind != Kind::FiniteMixture) return false;
    for (auto& [w, p] : mixture)
      if (p != std::floor(p)) return false;
    return true;
  }

  double sample(Stream& st) const {
    switch (kind) {
      case Kind::Rademacher:
        return (st.next() >> 63) ? 1.0 : -1.0;
      case Kind::Gaussian:
        return st.normal(mean, var);
      case Kind::FiniteMixture: {
        double u = st.u01();
        double acc = 0;
        for (auto& [w, p] : mixture) {
          acc += w;
          if (u < acc) return p;
        }
        return mixture.back().second;
      }
    }
    return 0;
  }

  // Draw (step, nu) jointly. nu = -1 when the law carries no companion.
  std::pair<double, int> sample_with_nu(Stream& st) const {
    if (kind == Kind::FiniteMixture && !mixture_nu.empty()) {
      double u = st.u01();
      double acc = 0;
      for (size_t i = 0; i < mixture.size(); ++i) {
        acc += mixture[i].first;
        if (u < acc) return {mixture[i].second, mixture_nu[i]};
      }
      return {mixture.back().second, mixture_nu.back()};
    }
    return {sample(st), nu_const};
  }
};

}  // namespace rwre
