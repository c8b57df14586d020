#pragma once

// Running estimate of the aleatoric (irreducible) noise scale from the
// residuals of the ensemble mean on real transitions. Residuals of the mean,
// not of individual members, so member disagreement does not leak in.

#include "cig/common.hpp"

#include <cmath>
#include <span>
#include <string>

namespace cig {

inline constexpr double kSigmaFloor = 1e-6;

struct AleatoricEstimate {
  // Per-dimension variance.
  double sigma2 = 0.0;
  double beta = 0.99;
  bool initialized = false;
};

// residuals[i] = ||s'_i - mean_prediction_i||^2 / d. The first batch is taken
// as-is; later batches are blended with decay beta.
inline AleatoricEstimate update_sigma(AleatoricEstimate estimate, std::span<const double> residuals) {
  if (residuals.empty()) throw ValidationError("update_sigma needs at least one residual");
  if (!(estimate.beta >= 0.0 && estimate.beta < 1.0)) {
    throw ValidationError("beta must lie in [0, 1), got " + std::to_string(estimate.beta));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (!(residuals[i] >= 0.0) || !std::isfinite(residuals[i])) {
      throw ValidationError("residual " + std::to_string(i) +
                            " is negative or non-finite: " + std::to_string(residuals[i]));
    }
    total += residuals[i];
  }
  const double batch_mean = total / double(residuals.size());
  if (!estimate.initialized) {
    estimate.sigma2 = batch_mean;
    estimate.initialized = true;
  } else {
    estimate.sigma2 = estimate.beta * estimate.sigma2 + (1.0 - estimate.beta) * batch_mean;
  }
  return estimate;
}

// Ridge for the kernel: multiplier * sigma2 * d, with sigma2 replaced by
// kSigmaFloor while the estimate is still zero.
inline double ridge_value(const AleatoricEstimate& estimate, Index d, double multiplier = 1.0) {
  if (d < 1) throw ValidationError("latent dimension must be >= 1");
  if (!(multiplier > 0.0)) throw ValidationError("ridge multiplier must be > 0");
  const double sigma2 = estimate.sigma2 > 0.0 ? estimate.sigma2 : kSigmaFloor;
  return multiplier * sigma2 * double(d);
}

}  // namespace cig
