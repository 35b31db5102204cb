// Monte Carlo / exact estimate carrier shared by every module.
#pragma once

#include <cmath>
#include <limits>

namespace rwre {

struct RateEstimate {
  double p_hat = 0.0;  // probability (or weighted-mean) estimate
  double se = 0.0;     // standard error of p_hat (0 for exact evaluations)
  double log_p = -std::numeric_limits<double>::infinity();  // log p_hat, kept
                                                            // separately so
                                                            // exact DP values
                                                            // survive underflow
  long long hits = 0;  // replicas contributing a nonzero value
  long long reps = 0;  // replicas run (0 for exact evaluations)
  double rate = std::numeric_limits<double>::quiet_NaN();  // normalized rate
  double predicted_rate = std::numeric_limits<double>::quiet_NaN();
  bool exact = false;         // evaluated by DP/enumeration, not sampling
  bool insufficient = false;  // InsufficientHits: too few hits to trust rate

  static RateEstimate from_bernoulli(long long hits, long long reps) {
    RateEstimate e;
    e.hits = hits;
    e.reps = reps;
    e.p_hat = reps > 0 ? static_cast<double>(hits) / reps : 0.0;
    e.se = reps > 0 ? std::sqrt(e.p_hat * (1.0 - e.p_hat) / reps) : 0.0;
    e.log_p = e.p_hat > 0 ? std::log(e.p_hat)
                          : -std::numeric_limits<double>::infinity();
    return e;
  }

  static RateEstimate exact_log(double log_p) {
    RateEstimate e;
    e.log_p = log_p;
    e.p_hat = std::exp(log_p);
    e.exact = true;
    return e;
  }
};

}  // namespace rwre
