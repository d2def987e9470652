#pragma once

#include "spcc/fixed_point.hpp"
#include "spcc/io_quant.hpp"
#include "spcc/model.hpp"

#include <map>
#include <string>
#include <vector>

namespace spcc {

struct ActivationRange {
  double lo = 0.0;
  double hi = 0.0;
  /// Range feeds a PReLU and has been made symmetric about zero.
  bool symmetric = false;
};
using ActivationStats = std::map<std::string, ActivationRange>;

/// Smallest range half-width; degenerate ranges are widened to at least this.
inline constexpr double kRangeFloor = 1e-6;

/// Running min/max of every pre-activation tensor over full float forward
/// passes of `samples`, merged in sample order.
ActivationStats collect_activation_stats(const FloatModel& model, const std::vector<QuantizedCloud>& samples,
                                         int workers = 1);

/// Merges `more` into `into` (range union).
void merge_stats(ActivationStats& into, const ActivationStats& more);

/// Asymmetric: s = (hi - lo) / 255 with lo mapped to -128 (the range is first
/// extended to contain 0). Symmetric: s = max(|lo|, |hi|) / 127, z = 0.
QuantParams derive_qparams(double lo, double hi, bool symmetric);

/// m / 2^r approximating s_x * s_w / s_y with m in [2^30, 2^31).
RequantParams derive_requant(double s_x, double s_w, double s_y, std::int32_t zero_point = 0);

/// Integer model congruent with `model`. Raises MissingStats when a site has
/// no recorded range.
IntegerModel quantize_model(const FloatModel& model, const ActivationStats& stats);

/// collect_activation_stats followed by quantize_model.
IntegerModel calibrate(const FloatModel& model, const std::vector<QuantizedCloud>& samples, int workers = 1);

}  // namespace spcc
