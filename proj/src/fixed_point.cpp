#include "spcc/fixed_point.hpp"

#include "spcc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spcc {

MatrixD dequantize_tensor(const MatrixI& q, const QuantParams& p) {
  return ((q.array() - p.zero_point).cast<double>() * p.scale).matrix();
}

namespace {

/// y += a * b on int16 data, four inner terms per pass over an output row.
void packed_gemm(const std::int16_t* a, const std::int16_t* b, std::int32_t* y, Eigen::Index n, Eigen::Index k,
                 Eigen::Index m) {
  for (Eigen::Index i = 0; i < n; ++i) {
    std::int32_t* yi = y + i * m;
    const std::int16_t* ai = a + i * k;
    Eigen::Index p = 0;
    for (; p + 4 <= k; p += 4) {
      const std::int32_t a0 = ai[p], a1 = ai[p + 1], a2 = ai[p + 2], a3 = ai[p + 3];
      const std::int16_t* b0 = b + p * m;
      const std::int16_t* b1 = b0 + m;
      const std::int16_t* b2 = b1 + m;
      const std::int16_t* b3 = b2 + m;
      for (Eigen::Index j = 0; j < m; ++j) yi[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const std::int32_t av = ai[p];
      const std::int16_t* bp = b + p * m;
      for (Eigen::Index j = 0; j < m; ++j) yi[j] += av * bp[j];
    }
  }
}

}  // namespace

MatrixI int_matmul(const MatrixI& a, const Eigen::Ref<const MatrixI>& b) {
  require(a.cols() == b.rows(), ErrorCode::ShapeMismatch, "int_matmul inner dimensions differ");
  const bool packable = b.rows() <= (1 << 15) && (a.size() == 0 || a.cwiseAbs().maxCoeff() <= 255) &&
                        (b.size() == 0 || b.cwiseAbs().maxCoeff() <= 128);
  if (!packable) return a * b;
  using Packed = RowMatrix<std::int16_t>;
  const Packed a16 = a.cast<std::int16_t>();
  const Packed b16 = b.cast<std::int16_t>();
  MatrixI y = MatrixI::Zero(a.rows(), b.cols());
  packed_gemm(a16.data(), b16.data(), y.data(), a.rows(), a.cols(), b.cols());
  return y;
}

MatrixI int_linear(const MatrixI& q_x, std::int32_t z_x, const MatrixI& q_w, const RowVector<std::int32_t>& bias,
                   int workers) {
  require(q_x.cols() == q_w.rows(), ErrorCode::ShapeMismatch, "int_linear inner dimensions differ");
  require(bias.cols() == q_w.cols(), ErrorCode::ShapeMismatch, "int_linear bias length != output width");
  require(q_w.rows() <= (1 << 15), ErrorCode::AccumulatorRisk, "reduction length exceeds 2^15");
  MatrixI y(q_x.rows(), q_w.cols());
  parallel_rows(q_x.rows(), workers, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
    const auto n = static_cast<Eigen::Index>(end - begin);
    const MatrixI centered = (q_x.middleRows(begin, n).array() - z_x).matrix();
    y.middleRows(begin, n) = int_matmul(centered, q_w);
    y.middleRows(begin, n).rowwise() += bias;
  });
  return y;
}

std::int32_t requantize(std::int64_t y, const RequantParams& p, std::int32_t q_min, std::int32_t q_max) {
  const std::int64_t v = shift_round_half_even(y * p.multiplier, p.shift) + p.zero_point;
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(v, q_min, q_max));
}

MatrixI requantize(const MatrixI& y, const RequantParams& p, std::int32_t q_min, std::int32_t q_max) {
  MatrixI q(y.rows(), y.cols());
  const std::int32_t* src = y.data();
  std::int32_t* dst = q.data();
  for (Eigen::Index i = 0; i < y.size(); ++i) dst[i] = requantize(src[i], p, q_min, q_max);
  return q;
}

MatrixI rescale(const MatrixI& q, std::int32_t z_in, const RequantParams& p) {
  MatrixI out(q.rows(), q.cols());
  const std::int32_t* src = q.data();
  std::int32_t* dst = out.data();
  for (Eigen::Index i = 0; i < q.size(); ++i) dst[i] = requantize(std::int64_t{src[i]} - z_in, p);
  return out;
}

MatrixI int_add(const MatrixI& a, std::int32_t za, const RequantParams& pa, const MatrixI& b, std::int32_t zb,
                const RequantParams& pb, std::int32_t q_min, std::int32_t q_max) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::ShapeMismatch, "int_add operand shapes differ");
  require(pa.shift == pb.shift && pa.zero_point == pb.zero_point, ErrorCode::ContractViolation,
          "int_add requants must share shift and zero point");
  MatrixI y(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const std::int64_t acc = (std::int64_t{a.data()[i]} - za) * pa.multiplier + (std::int64_t{b.data()[i]} - zb) * pb.multiplier;
    y.data()[i] = static_cast<std::int32_t>(
        std::clamp<std::int64_t>(shift_round_half_even(acc, pa.shift) + pa.zero_point, q_min, q_max));
  }
  return y;
}

void int_prelu(MatrixI& q, std::span<const RequantParams> slopes, std::int32_t zero_point) {
  require(zero_point == 0, ErrorCode::ContractViolation, "PReLU input must have zero point 0");
  require(static_cast<Eigen::Index>(slopes.size()) == q.cols(), ErrorCode::ShapeMismatch,
          "one PReLU slope per channel");
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index c = 0; c < q.cols(); ++c)
      if (q(i, c) < 0) q(i, c) = requantize(q(i, c), slopes[static_cast<std::size_t>(c)]);
}

ExpLut ExpLut::generate() {
  ExpLut lut;
  const double step = std::ldexp(1.0, kStepShift - kLogitFracBits);
  for (int j = 0; j < kSize; ++j) {
    const double x = (j - (kSize - 1)) * step;
    lut.table[static_cast<std::size_t>(j)] =
        static_cast<std::int32_t>(round_half_even(std::exp(x) * static_cast<double>(1 << kFracBits)));
  }
  return lut;
}

bool ExpLut::valid() const {
  if (table[kSize - 1] != (1 << kFracBits)) return false;
  if (table[0] < 1) return false;
  for (int j = 1; j < kSize; ++j)
    if (table[static_cast<std::size_t>(j)] < table[static_cast<std::size_t>(j - 1)]) return false;
  return true;
}

void normalize_masses(std::span<const std::uint64_t> weights, std::span<std::int32_t> masses) {
  const std::size_t n = weights.size();
  require(masses.size() == n && n > 0 && n <= static_cast<std::size_t>(kProbTotal), ErrorCode::ShapeMismatch,
          "mass vector size mismatch");
  std::uint64_t sum = 0;
  for (auto w : weights) sum += w;
  require(sum > 0, ErrorCode::InvalidMass, "all weights are zero");
  require(sum < (std::uint64_t{1} << 47), ErrorCode::InvalidMass, "weight sum too large");

  std::array<std::uint64_t, 256> rem_small{};
  std::vector<std::uint64_t> rem_big;
  std::uint64_t* rem = rem_small.data();
  if (n > rem_small.size()) {
    rem_big.resize(n);
    rem = rem_big.data();
  }
  // quotient via a per-row 64-bit reciprocal, corrected to the exact value
  using u128 = unsigned __int128;
  const std::uint64_t inv = sum > 1 ? static_cast<std::uint64_t>((u128{1} << 64) / sum) : 0;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t scaled = weights[i] << 16;
    std::uint64_t q = sum > 1 ? static_cast<std::uint64_t>((u128{scaled} * inv) >> 64) : scaled;
    std::uint64_t r = scaled - q * sum;
    while (r >= sum) {
      ++q;
      r -= sum;
    }
    masses[i] = static_cast<std::int32_t>(q);
    rem[i] = r;
    assigned += masses[i];
  }
  std::int64_t deficit = kProbTotal - assigned;
  if (deficit > 0) {
    std::array<std::uint16_t, 256> order_small{};
    std::vector<std::uint16_t> order_big;
    std::uint16_t* order = order_small.data();
    if (n > order_small.size()) {
      order_big.resize(n);
      order = order_big.data();
    }
    std::iota(order, order + n, std::uint16_t{0});
    const auto by_remainder = [rem](std::uint16_t a, std::uint16_t b) {
      return rem[a] != rem[b] ? rem[a] > rem[b] : a < b;
    };
    // the order is total (index breaks ties), so the selected set is unique
    if (static_cast<std::size_t>(deficit) < n) std::nth_element(order, order + deficit, order + n, by_remainder);
    for (std::int64_t k = 0; k < deficit; ++k) ++masses[order[k]];
  }
  std::int32_t lifted = 0;
  std::size_t argmax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (masses[i] == 0) {
      masses[i] = 1;
      ++lifted;
    }
    if (masses[i] > masses[argmax]) argmax = i;
  }
  masses[argmax] -= lifted;
}

void int_softmax(std::span<const std::int32_t> logits, const ExpLut& lut, std::span<std::int32_t> masses) {
  require(logits.size() == masses.size(), ErrorCode::ShapeMismatch, "softmax row size mismatch");
  const std::int32_t peak = *std::max_element(logits.begin(), logits.end());
  std::array<std::uint64_t, kNumSymbols> small{};
  std::vector<std::uint64_t> big;
  std::span<std::uint64_t> e;
  if (logits.size() <= small.size()) {
    e = std::span<std::uint64_t>(small.data(), logits.size());
  } else {
    big.resize(logits.size());
    e = big;
  }
  for (std::size_t i = 0; i < logits.size(); ++i) {
    // logits are bounded well inside int32 so the difference cannot overflow
    const std::int64_t d = std::int64_t{logits[i]} - peak;
    e[i] = static_cast<std::uint64_t>(lut.lookup(static_cast<std::int32_t>(std::max<std::int64_t>(d, ExpLut::kDomainMin))));
  }
  normalize_masses(e, masses);
}

MatrixI int_softmax(const MatrixI& logits, const ExpLut& lut, int workers) {
  MatrixI masses(logits.rows(), logits.cols());
  parallel_rows(logits.rows(), workers, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
    for (std::ptrdiff_t r = begin; r < end; ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      int_softmax(std::span<const std::int32_t>(logits.row(row).data(), static_cast<std::size_t>(logits.cols())),
                  lut, std::span<std::int32_t>(masses.row(row).data(), static_cast<std::size_t>(masses.cols())));
    }
  });
  return masses;
}

}  // namespace spcc
