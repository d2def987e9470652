#pragma once

// Integer-only primitives: affine quantization, 32-bit accumulation,
// multiplier/shift requantization, integer PReLU and LUT softmax.
// Nothing below the quantize_tensor boundary touches a real value.

#include "spcc/common.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace spcc {

struct QuantParams {
  double scale = 1.0;  ///< metadata only; never read by the integer runtime
  std::int32_t zero_point = 0;
  std::int32_t q_min = -128;
  std::int32_t q_max = 127;

  bool operator==(const QuantParams&) const = default;
};

/// y * multiplier / 2^shift, rounded half-to-even, plus zero_point.
struct RequantParams {
  std::int64_t multiplier = 0;  ///< in [0, 2^31)
  int shift = 0;                ///< in [0, 62]
  std::int32_t zero_point = 0;

  bool operator==(const RequantParams&) const = default;
};

/// clip(round(x / s) + z, q_min, q_max).
template <typename Derived>
MatrixI quantize_tensor(const Eigen::MatrixBase<Derived>& x, const QuantParams& p) {
  MatrixI q(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double v = round_half_even(static_cast<double>(x(i, j)) / p.scale) + p.zero_point;
      q(i, j) = static_cast<std::int32_t>(std::clamp<double>(v, p.q_min, p.q_max));
    }
  return q;
}

/// Inverse affine map, for tests and calibration diagnostics.
MatrixD dequantize_tensor(const MatrixI& q, const QuantParams& p);

/// Exact a * b. Operands within |a| <= 255, |b| <= 128 and inner size <= 2^15
/// (every sum stays below 2^30) take a packed int16 kernel; anything else
/// uses the generic product. Both give identical results.
MatrixI int_matmul(const MatrixI& a, const Eigen::Ref<const MatrixI>& b);

/// y = sum_c (q_x - z_x) * q_w + b with 32-bit accumulation. Weights are
/// symmetric (zero point 0). Rows are independent so `workers` never changes
/// the result.
MatrixI int_linear(const MatrixI& q_x, std::int32_t z_x, const MatrixI& q_w, const RowVector<std::int32_t>& bias,
                   int workers = 1);

std::int32_t requantize(std::int64_t y, const RequantParams& p, std::int32_t q_min = -128, std::int32_t q_max = 127);
MatrixI requantize(const MatrixI& y, const RequantParams& p, std::int32_t q_min = -128, std::int32_t q_max = 127);

/// Rescales q from zero point z_in into the grid described by p.
MatrixI rescale(const MatrixI& q, std::int32_t z_in, const RequantParams& p);

/// Elementwise sum of two grids: (ma * (a - za) + mb * (b - zb)) / 2^r + z_y,
/// both multipliers sharing one shift.
MatrixI int_add(const MatrixI& a, std::int32_t za, const RequantParams& pa, const MatrixI& b, std::int32_t zb,
                const RequantParams& pb, std::int32_t q_min = -128, std::int32_t q_max = 127);

/// q if q >= 0, else requantize(q, slope[c]); inputs must carry zero point 0.
void int_prelu(MatrixI& q, std::span<const RequantParams> slopes, std::int32_t zero_point = 0);

/// Fixed-point exponential table over [-16, 0] for the softmax.
struct ExpLut {
  static constexpr int kSize = 1024;
  static constexpr int kFracBits = 24;    ///< table values are Q24
  static constexpr int kLogitFracBits = 8;  ///< logits are Q8
  static constexpr int kStepShift = 2;    ///< one table step = 4 Q8 units = 1/64 nat
  static constexpr std::int32_t kDomainMin = -16 * (1 << kLogitFracBits);

  std::array<std::int32_t, kSize> table{};

  /// Materializes the table. Only ever called offline when an integer model
  /// is produced; the runtime reads the stored table.
  static ExpLut generate();

  std::int32_t lookup(std::int32_t d) const {
    d = std::clamp(d, kDomainMin, 0);
    const int idx = kSize - 1 - ((-d) >> kStepShift);
    return table[static_cast<std::size_t>(std::max(idx, 0))];
  }

  bool valid() const;
  bool operator==(const ExpLut&) const = default;
};

inline constexpr std::int32_t kProbTotal = 1 << 16;
inline constexpr int kLogitFracBits = ExpLut::kLogitFracBits;

/// Largest-remainder normalization of non-negative weights to masses summing
/// to exactly 2^16, then every zero mass lifted to 1 (taken from the largest).
void normalize_masses(std::span<const std::uint64_t> weights, std::span<std::int32_t> masses);

/// Integer softmax of one row of Q8 logits into 255 Q16 masses.
void int_softmax(std::span<const std::int32_t> logits, const ExpLut& lut, std::span<std::int32_t> masses);
MatrixI int_softmax(const MatrixI& logits, const ExpLut& lut, int workers = 1);

}  // namespace spcc
