#pragma once

// Coordinate-indexed sparse tensors. Features are dense row-major Eigen
// matrices aligned with a Morton-sorted key list; every operator is templated
// on the scalar so the float reference path and the integer path share the
// same gather/GEMM/scatter machinery.

#include "spcc/common.hpp"
#include "spcc/fixed_point.hpp"
#include "spcc/morton.hpp"
#include "spcc/octree.hpp"
#include "spcc/parallel.hpp"

#include <bit>
#include <memory>
#include <type_traits>

namespace spcc {

using KeyListPtr = std::shared_ptr<const KeyList>;

template <typename Scalar>
struct SparseFeatureMap {
  using Matrix = RowMatrix<Scalar>;

  int level = 0;
  KeyListPtr keys;
  Matrix feats;

  SparseFeatureMap() = default;
  SparseFeatureMap(int lvl, KeyListPtr k, Matrix f) : level(lvl), keys(std::move(k)), feats(std::move(f)) {
    require(keys && static_cast<Eigen::Index>(keys->size()) == feats.rows(), ErrorCode::ShapeMismatch,
            "feature rows must match coordinate count");
  }

  Eigen::Index rows() const { return feats.rows(); }
  Eigen::Index channels() const { return feats.cols(); }
};

using FeatureMapF = SparseFeatureMap<float>;
using FeatureMapI = SparseFeatureMap<std::int32_t>;

enum class Kernel {
  K3S1,  ///< 3x3x3 neighborhood, stride 1
  K2S2,  ///< 2x2x2 children onto parents, stride 2
};

inline constexpr int kernel_volume(Kernel k) { return k == Kernel::K3S1 ? 27 : 8; }

/// Offset of kernel tap `o`, taps in lexicographic (dx, dy, dz) order.
inline Coord kernel_offset(Kernel k, int o) {
  if (k == Kernel::K3S1) return Coord(o / 9 - 1, (o / 3) % 3 - 1, o % 3 - 1);
  return child_offset(o);
}

/// Per-tap (input row, output row) pairs sorted by output then input row.
struct KernelMap {
  Kernel kernel = Kernel::K3S1;
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::vector<std::vector<std::int32_t>> in;
  std::vector<std::vector<std::int32_t>> out;

  std::size_t pair_count() const {
    std::size_t n = 0;
    for (const auto& v : in) n += v.size();
    return n;
  }
};

/// K3S1 pairs input i with output j when in[i] = out[j] + delta;
/// K2S2 when in[i] = 2 * out[j] + delta.
KernelMap build_kernel_map(const KeyList& in_keys, const KeyList& out_keys, Kernel kernel);

namespace detail {

template <typename Scalar>
void check_conv_shapes(const RowMatrix<Scalar>& in, const KernelMap& map, const RowMatrix<Scalar>& weights) {
  require(static_cast<std::size_t>(in.rows()) == map.n_in, ErrorCode::ShapeMismatch, "input rows != kernel map");
  require(weights.rows() == kernel_volume(map.kernel) * in.cols(), ErrorCode::ShapeMismatch,
          "conv weights must be (taps * C_in) x C_out");
  if constexpr (std::is_integral_v<Scalar>) {
    require(weights.rows() <= (1 << 15), ErrorCode::AccumulatorRisk, "reduction length exceeds 2^15");
  }
}

}  // namespace detail

/// Accumulates the kernel taps into `acc` (n_out x C_out): for each tap in
/// lexicographic order, gathers the paired input rows, multiplies by the tap's
/// C_in x C_out weight block and scatter-adds into the output rows.
template <typename Scalar>
void accumulate_conv(const RowMatrix<Scalar>& in, const KernelMap& map, const RowMatrix<Scalar>& weights,
                     RowMatrix<Scalar>& acc) {
  detail::check_conv_shapes(in, map, weights);
  const Eigen::Index cin = in.cols();
  RowMatrix<Scalar> gathered;
  RowMatrix<Scalar> product;
  for (int o = 0; o < kernel_volume(map.kernel); ++o) {
    const auto& src = map.in[o];
    const auto& dst = map.out[o];
    if (src.empty()) continue;
    gathered.resize(static_cast<Eigen::Index>(src.size()), cin);
    for (std::size_t p = 0; p < src.size(); ++p) gathered.row(static_cast<Eigen::Index>(p)) = in.row(src[p]);
    if constexpr (std::is_same_v<Scalar, std::int32_t>)
      product = int_matmul(gathered, weights.middleRows(o * cin, cin));
    else
      product.noalias() = gathered * weights.middleRows(o * cin, cin);
    for (std::size_t p = 0; p < dst.size(); ++p) acc.row(dst[p]) += product.row(static_cast<Eigen::Index>(p));
  }
}

/// out[j] = bias + sum over taps and pairs of in[i] * W_tap.
template <typename Scalar>
SparseFeatureMap<Scalar> sparse_conv(const SparseFeatureMap<Scalar>& in, KeyListPtr out_keys, int out_level,
                                     const KernelMap& map, const RowMatrix<Scalar>& weights,
                                     const RowVector<Scalar>& bias) {
  require(bias.cols() == weights.cols(), ErrorCode::ShapeMismatch, "bias length != C_out");
  require(out_keys && out_keys->size() == map.n_out, ErrorCode::ShapeMismatch, "output coords != kernel map");
  RowMatrix<Scalar> acc = bias.replicate(static_cast<Eigen::Index>(map.n_out), 1);
  accumulate_conv(in.feats, map, weights, acc);
  return SparseFeatureMap<Scalar>(out_level, std::move(out_keys), std::move(acc));
}

/// Splits each row of `expanded` (N x 8*C) into 8 child blocks and keeps the
/// blocks of occupied children, in expand_children order.
template <typename Scalar>
RowMatrix<Scalar> prune_children(const RowMatrix<Scalar>& expanded, const CodeList& codes, Eigen::Index channels) {
  require(static_cast<std::size_t>(expanded.rows()) == codes.size(), ErrorCode::ShapeMismatch,
          "one occupancy code per parent row");
  require(expanded.cols() == 8 * channels, ErrorCode::ShapeMismatch, "expanded width must be 8 * C");
  Eigen::Index total = 0;
  for (auto c : codes) {
    require(c != 0, ErrorCode::InvalidOccupancy, "occupancy code 0");
    total += std::popcount(c);
  }
  RowMatrix<Scalar> out(total, channels);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < codes.size(); ++i)
    for (int c = 0; c < 8; ++c)
      if ((codes[i] >> c) & 1) out.row(r++) = expanded.row(static_cast<Eigen::Index>(i)).segment(c * channels, channels);
  return out;
}

template <typename Scalar>
void prelu_inplace(RowMatrix<Scalar>& x, const RowVector<Scalar>& slopes) {
  require(slopes.cols() == x.cols(), ErrorCode::ShapeMismatch, "one PReLU slope per channel");
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      if (x(i, c) < Scalar(0)) x(i, c) *= slopes[c];
}

/// Dense per-row linear map with optional row parallelism.
template <typename Scalar>
RowMatrix<Scalar> linear_rows(const RowMatrix<Scalar>& x, const RowMatrix<Scalar>& w, const RowVector<Scalar>& b,
                              int workers = 1) {
  require(x.cols() == w.rows(), ErrorCode::ShapeMismatch, "linear inner dimensions differ");
  require(b.cols() == w.cols(), ErrorCode::ShapeMismatch, "bias length != output width");
  RowMatrix<Scalar> y(x.rows(), w.cols());
  parallel_rows(x.rows(), workers, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
    const auto n = static_cast<Eigen::Index>(end - begin);
    y.middleRows(begin, n).noalias() = x.middleRows(begin, n) * w;
    y.middleRows(begin, n).rowwise() += b;
  });
  return y;
}

/// Same result as prune_children(linear_rows(x, w, b), codes, C) without
/// computing the blocks of unoccupied children: one GEMM per child index over
/// the parents that have that child.
template <typename Scalar>
RowMatrix<Scalar> pruned_linear(const RowMatrix<Scalar>& x, const CodeList& codes, const RowMatrix<Scalar>& w,
                                const RowVector<Scalar>& b) {
  require(static_cast<std::size_t>(x.rows()) == codes.size(), ErrorCode::ShapeMismatch,
          "one occupancy code per parent row");
  require(x.cols() == w.rows() && b.cols() == w.cols() && w.cols() % 8 == 0, ErrorCode::ShapeMismatch,
          "pruned linear shapes differ");
  const Eigen::Index cout = w.cols() / 8;
  std::vector<Eigen::Index> first(codes.size());
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    require(codes[i] != 0, ErrorCode::InvalidOccupancy, "occupancy code 0");
    first[i] = total;
    total += std::popcount(codes[i]);
  }
  RowMatrix<Scalar> out(total, cout);
  std::vector<std::size_t> parents;
  RowMatrix<Scalar> gathered, product;
  for (int c = 0; c < 8; ++c) {
    parents.clear();
    for (std::size_t i = 0; i < codes.size(); ++i)
      if ((codes[i] >> c) & 1) parents.push_back(i);
    if (parents.empty()) continue;
    gathered.resize(static_cast<Eigen::Index>(parents.size()), x.cols());
    for (std::size_t p = 0; p < parents.size(); ++p)
      gathered.row(static_cast<Eigen::Index>(p)) = x.row(static_cast<Eigen::Index>(parents[p]));
    if constexpr (std::is_same_v<Scalar, std::int32_t>)
      product = int_matmul(gathered, w.middleCols(c * cout, cout));
    else
      product.noalias() = gathered * w.middleCols(c * cout, cout);
    product.rowwise() += b.segment(c * cout, cout);
    const unsigned below = (1u << c) - 1u;
    for (std::size_t p = 0; p < parents.size(); ++p) {
      const std::size_t i = parents[p];
      out.row(first[i] + std::popcount(static_cast<unsigned>(codes[i] & below))) =
          product.row(static_cast<Eigen::Index>(p));
    }
  }
  return out;
}

/// Upsampling: linear 8x channel expansion, pruning of unoccupied
/// children, then PReLU. Output coordinates are expand_children(in, codes).
template <typename Scalar>
SparseFeatureMap<Scalar> upsample_expand(const SparseFeatureMap<Scalar>& in, const CodeList& codes,
                                         const RowMatrix<Scalar>& weights, const RowVector<Scalar>& bias,
                                         const RowVector<Scalar>& slopes) {
  require(static_cast<std::size_t>(in.rows()) == codes.size(), ErrorCode::ShapeMismatch,
          "one occupancy code per input node");
  require(weights.cols() % 8 == 0, ErrorCode::ShapeMismatch, "upsampling width must be 8 * C_out");
  const Eigen::Index cout = weights.cols() / 8;
  auto child_keys = std::make_shared<const KeyList>(expand_children(*in.keys, codes));
  RowMatrix<Scalar> expanded = linear_rows(in.feats, weights, bias);
  RowMatrix<Scalar> pruned = prune_children(expanded, codes, cout);
  prelu_inplace(pruned, slopes);
  return SparseFeatureMap<Scalar>(in.level + 1, std::move(child_keys), std::move(pruned));
}

/// Channel-wise concatenation of two maps over identical coordinates.
template <typename Scalar>
SparseFeatureMap<Scalar> concat_features(const SparseFeatureMap<Scalar>& a, const SparseFeatureMap<Scalar>& b) {
  const bool same = a.keys == b.keys || (a.keys && b.keys && *a.keys == *b.keys);
  require(same && a.level == b.level, ErrorCode::MisalignedMaps, "concatenated maps must share coordinates");
  RowMatrix<Scalar> f(a.rows(), a.channels() + b.channels());
  f.leftCols(a.channels()) = a.feats;
  f.rightCols(b.channels()) = b.feats;
  return SparseFeatureMap<Scalar>(a.level, a.keys, std::move(f));
}

}  // namespace spcc
