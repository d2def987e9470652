#include "spcc/fixed_point.hpp"
#include "spcc/network.hpp"
#include "support.hpp"

#include <cmath>
#include <numeric>

using namespace spcc;
using spcc::test::uniform_int;

namespace {

/// Exact half-even rounding of y * m / 2^r in 128-bit arithmetic.
std::int64_t rational_oracle(std::int64_t y, std::int64_t m, int r) {
  const __int128 num = static_cast<__int128>(y) * m;
  const __int128 den = static_cast<__int128>(1) << r;
  __int128 q = num / den;
  __int128 rem = num % den;
  if (rem < 0) {
    rem += den;
    --q;
  }
  if (2 * rem > den || (2 * rem == den && (q & 1) != 0)) ++q;
  return static_cast<std::int64_t>(q);
}

MatrixI random_int(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, int lo, int hi) {
  MatrixI m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<std::int32_t>(uniform_int(rng, lo, hi));
  return m;
}

std::vector<std::int32_t> masses_of(const std::vector<std::int32_t>& logits) {
  static const ExpLut lut = ExpLut::generate();
  std::vector<std::int32_t> m(logits.size());
  int_softmax(logits, lut, m);
  return m;
}

}  // namespace

TEST_SUITE("int_runtime") {
  TEST_CASE("affine quantization examples") {
    MatrixD x(1, 3);
    x << 1.0, 1000.0, -0.3;
    CHECK(quantize_tensor(x.leftCols(1), {0.5, 0}) == MatrixI::Constant(1, 1, 2));
    CHECK(quantize_tensor(x.middleCols(1, 1), {1.0, 0}) == MatrixI::Constant(1, 1, 127));
    CHECK(quantize_tensor(x.rightCols(1), {0.1, 10}) == MatrixI::Constant(1, 1, 7));

    std::mt19937_64 rng(1);
    const QuantParams p{0.037, -11};
    MatrixD v(50, 20);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = (test::unit(rng) * 255 - 117) * 0.037;
    const MatrixD back = dequantize_tensor(quantize_tensor(v, p), p);
    CHECK((back - v).cwiseAbs().maxCoeff() <= 0.037 / 2 + 1e-12);
  }

  TEST_CASE("integer linear examples") {
    MatrixI x(1, 2), w(2, 1);
    x << 1, 2;
    w << 3, 4;
    RowVector<std::int32_t> b(1);
    b << 5;
    CHECK(int_linear(x, 0, w, b)(0, 0) == 16);
    w << 1, 1;
    b << 0;
    CHECK(int_linear(x, 1, w, b)(0, 0) == 1);
    CHECK(test::error_of([] { int_linear(MatrixI::Zero(1, 40000), 0, MatrixI::Zero(40000, 1), RowVector<std::int32_t>::Zero(1)); }) ==
          ErrorCode::AccumulatorRisk);
    CHECK(test::error_of([] { int_linear(MatrixI::Zero(1, 3), 0, MatrixI::Zero(2, 1), RowVector<std::int32_t>::Zero(1)); }) ==
          ErrorCode::ShapeMismatch);
  }

  TEST_CASE("integer products match a 64-bit oracle for any worker count") {
    std::mt19937_64 rng(2);
    for (int n = 0; n < 30; ++n) {
      const Eigen::Index rows = 1 + static_cast<Eigen::Index>(rng() % 900), k = 1 + static_cast<Eigen::Index>(rng() % 300);
      const Eigen::Index cols = 1 + static_cast<Eigen::Index>(rng() % 40);
      const bool wide = n % 3 == 0;  // outside the packed kernel's operand bounds
      const MatrixI x = random_int(rng, rows, k, wide ? -3000 : -128, wide ? 3000 : 127);
      const MatrixI w = random_int(rng, k, cols, -127, 127);
      const RowVector<std::int32_t> b = random_int(rng, 1, cols, -100000, 100000);
      const std::int32_t zx = static_cast<std::int32_t>(uniform_int(rng, -128, 127));
      const RowMatrix<std::int64_t> centered = (x.cast<std::int64_t>().array() - zx).matrix();
      RowMatrix<std::int64_t> want = centered * w.cast<std::int64_t>();
      want.rowwise() += b.cast<std::int64_t>();
      const MatrixI one = int_linear(x, zx, w, b, 1);
      CHECK(one.cast<std::int64_t>() == want);
      CHECK(int_linear(x, zx, w, b, 4) == one);
      CHECK(int_matmul(x, w).cast<std::int64_t>() == (x.cast<std::int64_t>() * w.cast<std::int64_t>()));
    }
  }

  TEST_CASE("requantization rounds half to even") {
    CHECK(requantize(16, {1, 0, 0}) == 16);
    CHECK(requantize(1000, {32768, 20, 0}) == 31);
    CHECK(requantize(-1000, {32768, 20, 0}) == -31);
    CHECK(requantize(3, {1, 1, 0}) == 2);
    CHECK(requantize(5, {1, 1, 0}) == 2);
    CHECK(requantize(-3, {1, 1, 0}) == -2);
    CHECK(requantize(100000, {1 << 30, 30, 5}) == 127);
    CHECK(requantize(100000, {1 << 30, 30, 5}, -1000000, 1000000) == 100005);

    std::mt19937_64 rng(3);
    for (int n = 0; n < 200000; ++n) {
      const std::int64_t y = uniform_int(rng, -(std::int64_t{1} << 31), (std::int64_t{1} << 31) - 1);
      const std::int64_t m = uniform_int(rng, 0, (std::int64_t{1} << 31) - 1);
      const int r = static_cast<int>(uniform_int(rng, 0, 62));
      const std::int32_t z = static_cast<std::int32_t>(uniform_int(rng, -128, 127));
      const std::int64_t want = std::clamp<std::int64_t>(rational_oracle(y, m, r) + z, INT32_MIN, INT32_MAX);
      REQUIRE(requantize(y, {m, r, z}, INT32_MIN, INT32_MAX) == want);
    }
    // monotone in the accumulator
    const RequantParams p{1518500250, 37, 3};
    std::int32_t last = requantize(-5000000, p);
    for (std::int64_t y = -5000000; y <= 5000000; y += 997) {
      const std::int32_t q = requantize(y, p);
      CHECK(q >= last);
      last = q;
    }
  }

  TEST_CASE("integer PReLU and addition") {
    MatrixI q(1, 4);
    q << 5, -8, -100, -2;
    const std::vector<RequantParams> quarter(4, RequantParams{1 << 30, 32, 0});
    int_prelu(q, quarter);
    CHECK(q == (MatrixI(1, 4) << 5, -2, -25, 0).finished());
    MatrixI r(1, 1);
    r << -6;
    int_prelu(r, std::span(quarter).first(1));
    CHECK(r(0, 0) == -2);
    CHECK(test::error_of([&] { int_prelu(r, std::span(quarter).first(1), 3); }) == ErrorCode::ContractViolation);

    std::mt19937_64 rng(4);
    const MatrixI a = random_int(rng, 40, 7, -128, 127), b = random_int(rng, 40, 7, -128, 127);
    const RequantParams pa{1288490189, 31, -5}, pb{858993459, 31, -5};
    const MatrixI s = int_add(a, 7, pa, b, -20, pb);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      const std::int64_t num = (std::int64_t{a.data()[i]} - 7) * pa.multiplier + (std::int64_t{b.data()[i]} + 20) * pb.multiplier;
      CHECK(s.data()[i] == std::clamp<std::int64_t>(rational_oracle(num, 1, 31) - 5, -128, 127));
    }
    CHECK(test::error_of([&] { int_add(a, 0, pa, b, 0, {pb.multiplier, 30, -5}); }) == ErrorCode::ContractViolation);
  }

  TEST_CASE("exponential table") {
    const ExpLut lut = ExpLut::generate();
    CHECK(lut.valid());
    CHECK(lut.lookup(0) == (1 << 24));
    CHECK(lut.lookup(5) == (1 << 24));
    CHECK(lut.lookup(-1000000) == lut.table[0]);
    for (std::int32_t d : {-4, -64, -256, -1000, -4092}) {
      const double want = std::exp(d / 256.0) * (1 << 24);
      CHECK(std::abs(lut.lookup(d) - want) <= 0.5 + 1e-9 * want);
    }
    ExpLut broken = lut;
    broken.table[500] = broken.table[501] + 1;
    CHECK_FALSE(broken.valid());
  }

  TEST_CASE("mass normalization") {
    std::vector<std::int32_t> m(3);
    normalize_masses(std::vector<std::uint64_t>{3, 1, 0}, m);
    CHECK(m == std::vector<std::int32_t>{49151, 16384, 1});
    CHECK(test::error_of([&] { normalize_masses(std::vector<std::uint64_t>{0, 0, 0}, m); }) == ErrorCode::InvalidMass);

    std::mt19937_64 rng(5);
    std::vector<std::int32_t> out(255);
    for (int n = 0; n < 500; ++n) {
      std::vector<std::uint64_t> w(255);
      for (auto& v : w) v = rng() % 3 == 0 ? 0 : rng() % (std::uint64_t{1} << (rng() % 40));
      w[rng() % 255] += 1;
      normalize_masses(w, out);
      CHECK(std::accumulate(out.begin(), out.end(), std::int64_t{0}) == kProbTotal);
      CHECK(*std::min_element(out.begin(), out.end()) >= 1);
    }
  }

  TEST_CASE("integer softmax examples") {
    std::vector<std::int32_t> equal(255, 77);
    const auto u = masses_of(equal);
    CHECK(u[0] == 258);
    CHECK(std::all_of(u.begin() + 1, u.end(), [](std::int32_t v) { return v == 257; }));

    std::vector<std::int32_t> peaked(255, -300);
    peaked[42] = -300 + 16 * 256;
    const auto p = masses_of(peaked);
    CHECK(p[42] == 65536 - 254);
    CHECK(std::count(p.begin(), p.end(), 1) == 254);

    std::mt19937_64 rng(6);
    double worst = 0.0;
    for (int n = 0; n < 300; ++n) {
      std::vector<std::int32_t> logits(255);
      for (auto& v : logits) v = static_cast<std::int32_t>(uniform_int(rng, -2048, 2048));
      const auto m = masses_of(logits);
      CHECK(std::accumulate(m.begin(), m.end(), std::int64_t{0}) == kProbTotal);
      const double top = *std::max_element(logits.begin(), logits.end()) / 256.0;
      double z = 0.0;
      for (auto v : logits) z += std::exp(v / 256.0 - top);
      for (std::size_t i = 0; i < 255; ++i)
        worst = std::max(worst, std::abs(m[i] / 65536.0 - std::exp(logits[i] / 256.0 - top) / z));
    }
    CHECK(worst <= std::ldexp(1.0, -8));

    const MatrixI rows = random_int(rng, 700, 255, -1500, 1500);
    CHECK(int_softmax(rows, ExpLut::generate(), 1) == int_softmax(rows, ExpLut::generate(), 3));
  }

  TEST_CASE("integer runtime is integer-typed end to end") {
    static_assert(std::is_same_v<IntOps::Dist::Scalar, std::int32_t>);
    static_assert(std::is_same_v<IntOps::Map, QuantFeatureMap>);
    static_assert(std::is_same_v<decltype(QuantFeatureMap::map)::Matrix::Scalar, std::int32_t>);
    static_assert(std::is_same_v<decltype(IntLayer::weights)::Scalar, std::int32_t>);
    static_assert(std::is_same_v<decltype(RequantParams::multiplier), std::int64_t>);
    CHECK(true);
  }
}
