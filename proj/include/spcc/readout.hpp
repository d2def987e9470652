#pragma once

// Closed-form fit of the predictor output layer for generated models. The
// random body is kept; each level's lin2 becomes a shared-covariance linear
// discriminant over the post-activation lin1 features, with a fitted
// temperature. No gradient training is involved.

#include "spcc/model.hpp"
#include "spcc/octree.hpp"

namespace spcc {

struct ReadoutFitOptions {
  /// Ridge added to the within-class covariance, relative to its mean variance.
  double ridge = 1.0;
  /// Pseudo-count pulling each class mean toward the global mean.
  double mean_shrink = 5.0;
  /// Per-level cap on fitting rows (evenly strided subsample).
  std::size_t max_rows = 40000;
};

struct ReadoutFit {
  int level = 0;
  std::size_t rows = 0;
  double temperature = 1.0;
  /// Mean cross-entropy (bits per node) of the fitted readout on the
  /// temperature-search rows.
  double bits_per_node = 0.0;
};

/// Replaces every predictor's lin2 weights and bias. Trees must have the
/// model's depth.
std::vector<ReadoutFit> fit_output_readout(FloatModel& model, const std::vector<OctreeLevels>& trees,
                                           const ReadoutFitOptions& options = {}, int workers = 1);

}  // namespace spcc
