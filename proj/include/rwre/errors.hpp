#pragma once

#include <stdexcept>

namespace rwre {

struct WrongRegime : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DepthUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExtinctionBudgetExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct HypothesisViolated : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TooFewPoints : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rwre
