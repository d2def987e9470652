#pragma once

#include "spcc/io_quant.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace spcc {

/// Static 3D kd-tree over a point list (indices into the original list).
class KdTree {
 public:
  explicit KdTree(const PointList& points);

  /// Index of the nearest point and its squared distance. Ties resolve to the
  /// lowest index.
  std::pair<std::size_t, double> nearest(const Point3& q) const;
  /// Indices of the k nearest points, nearest first.
  std::vector<std::size_t> knn(const Point3& q, std::size_t k) const;

 private:
  struct Node {
    std::int32_t lo = 0, hi = 0;  ///< range in order_
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
  };
  std::int32_t build(std::int32_t lo, std::int32_t hi);

  const PointList& pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// PSNR ceiling reported for identical clouds.
inline constexpr double kPsnrCap = 999.0;

double psnr_from_mse(double mse, double peak);

/// Point-to-point PSNR with the symmetric (max of directions) MSE.
double d1_psnr(const PointList& ref, const PointList& test, double peak);
double d1_mse(const PointList& ref, const PointList& test);

struct D2Result {
  double psnr = 0.0;
  double mse = 0.0;
  /// Normals that fell back to the displacement direction.
  std::size_t degenerate_normals = 0;
};

/// Point-to-plane PSNR. Normals are estimated on `ref` from its k nearest
/// neighbors and used for both directions.
D2Result d2_psnr(const PointList& ref, const PointList& test, double peak, int k_normals = 16);

/// Unit normals of `points` by k-neighbor plane fit, oriented toward the
/// origin. `degenerate` flags fits with rank < 2.
std::vector<Point3> estimate_normals(const PointList& points, int k, std::vector<bool>* degenerate = nullptr);

/// Mean of the two directional mean nearest-neighbor distances.
double chamfer(const PointList& ref, const PointList& test);

struct RdPoint {
  double bpp = 0.0;
  double psnr = 0.0;
};
using RdCurve = std::vector<RdPoint>;

enum class BdKind { Rate, Psnr };

/// Bjontegaard delta of `test` against `anchor`: percent rate change (Rate)
/// or mean dB gain (Psnr), from cubic fits over the overlapping interval.
double bd_metric(const RdCurve& anchor, const RdCurve& test, BdKind kind);

/// Lattice coordinates as points (for distortion in voxel units).
PointList lattice_points(const QuantizedCloud& cloud);

struct RdRow {
  std::string name;
  double bpp = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double cd = 0.0;
};
void write_rd_csv(std::ostream& os, const std::vector<RdRow>& rows);

}  // namespace spcc
