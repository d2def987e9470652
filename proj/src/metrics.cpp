#include "spcc/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>

namespace spcc {

KdTree::KdTree(const PointList& points) : pts_(points), order_(points.size()) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!points.empty()) {
    nodes_.reserve(2 * points.size() / 8 + 1);
    build(0, static_cast<std::int32_t>(points.size()));
  }
}

std::int32_t KdTree::build(std::int32_t lo, std::int32_t hi) {
  constexpr std::int32_t kLeaf = 8;
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({lo, hi});
  if (hi - lo <= kLeaf) return id;
  Eigen::Vector3d mn = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d mx = -mn;
  for (std::int32_t i = lo; i < hi; ++i) {
    mn = mn.cwiseMin(pts_[order_[static_cast<std::size_t>(i)]]);
    mx = mx.cwiseMax(pts_[order_[static_cast<std::size_t>(i)]]);
  }
  int axis = 0;
  (mx - mn).maxCoeff(&axis);
  const std::int32_t mid = lo + (hi - lo) / 2;
  std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                   [&](std::size_t a, std::size_t b) { return pts_[a][axis] < pts_[b][axis]; });
  const double split = pts_[order_[static_cast<std::size_t>(mid)]][axis];
  const std::int32_t left = build(lo, mid);
  const std::int32_t right = build(mid, hi);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.left = left;
  n.right = right;
  n.axis = axis;
  n.split = split;
  return id;
}

std::pair<std::size_t, double> KdTree::nearest(const Point3& q) const {
  require(!pts_.empty(), ErrorCode::EmptyCloud, "nearest neighbor in an empty cloud");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  std::vector<std::int32_t> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (n.left < 0) {
      for (std::int32_t i = n.lo; i < n.hi; ++i) {
        const std::size_t idx = order_[static_cast<std::size_t>(i)];
        const double d = (pts_[idx] - q).squaredNorm();
        if (d < best_d || (d == best_d && idx < best)) {
          best_d = d;
          best = idx;
        }
      }
      continue;
    }
    const double diff = q[n.axis] - n.split;
    const std::int32_t near = diff < 0 ? n.left : n.right;
    const std::int32_t far = diff < 0 ? n.right : n.left;
    if (diff * diff <= best_d) stack.push_back(far);
    stack.push_back(near);
  }
  return {best, best_d};
}

std::vector<std::size_t> KdTree::knn(const Point3& q, std::size_t k) const {
  k = std::min(k, pts_.size());
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry> heap;  // worst on top
  std::vector<std::int32_t> stack{0};
  if (pts_.empty() || k == 0) return {};
  while (!stack.empty()) {
    const Node& n = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (n.left < 0) {
      for (std::int32_t i = n.lo; i < n.hi; ++i) {
        const std::size_t idx = order_[static_cast<std::size_t>(i)];
        const Entry e{(pts_[idx] - q).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push(e);
        } else if (e < heap.top()) {
          heap.pop();
          heap.push(e);
        }
      }
      continue;
    }
    const double diff = q[n.axis] - n.split;
    const std::int32_t near = diff < 0 ? n.left : n.right;
    const std::int32_t far = diff < 0 ? n.right : n.left;
    if (heap.size() < k || diff * diff <= heap.top().first) stack.push_back(far);
    stack.push_back(near);
  }
  std::vector<std::size_t> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top().second;
    heap.pop();
  }
  return out;
}

double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(3.0 * peak * peak / mse));
}

namespace {

void require_nonempty(const PointList& a, const PointList& b) {
  require(!a.empty() && !b.empty(), ErrorCode::EmptyCloud, "distortion metrics need two non-empty clouds");
}

double directional_mse(const PointList& from, const KdTree& to) {
  double sum = 0.0;
  for (const auto& p : from) sum += to.nearest(p).second;
  return sum / static_cast<double>(from.size());
}

}  // namespace

double d1_mse(const PointList& ref, const PointList& test) {
  require_nonempty(ref, test);
  const KdTree tr(ref), tt(test);
  return std::max(directional_mse(test, tr), directional_mse(ref, tt));
}

double d1_psnr(const PointList& ref, const PointList& test, double peak) {
  return psnr_from_mse(d1_mse(ref, test), peak);
}

std::vector<Point3> estimate_normals(const PointList& points, int k, std::vector<bool>* degenerate) {
  require(k >= 3 && points.size() >= static_cast<std::size_t>(k), ErrorCode::Insufficient,
          "normal estimation needs at least k >= 3 points");
  const KdTree tree(points);
  std::vector<Point3> normals(points.size());
  if (degenerate) degenerate->assign(points.size(), false);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nb = tree.knn(points[i], static_cast<std::size_t>(k));
    Point3 mean = Point3::Zero();
    for (auto j : nb) mean += points[j];
    mean /= static_cast<double>(nb.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (auto j : nb) cov += (points[j] - mean) * (points[j] - mean).transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Eigen::Vector3d ev = es.eigenvalues();  // ascending
    Point3 n = es.eigenvectors().col(0);
    if (!(ev[1] > 1e-12 * std::max(1.0, ev[2]))) {
      n = Point3::Zero();
      if (degenerate) (*degenerate)[i] = true;
    }
    if (n.dot(-points[i]) < 0) n = -n;
    normals[i] = n;
  }
  return normals;
}

D2Result d2_psnr(const PointList& ref, const PointList& test, double peak, int k_normals) {
  require_nonempty(ref, test);
  std::vector<bool> degenerate;
  std::vector<Point3> normals = estimate_normals(ref, k_normals, &degenerate);
  D2Result r;
  const KdTree tr(ref), tt(test);
  // degenerate normals fall back to the displacement direction, which makes
  // the plane error equal the point error for that neighbor
  double test_to_ref = 0.0;
  for (const auto& p : test) {
    const auto [j, d2] = tr.nearest(p);
    if (degenerate[j]) {
      test_to_ref += d2;
    } else {
      const double e = (p - ref[j]).dot(normals[j]);
      test_to_ref += e * e;
    }
  }
  test_to_ref /= static_cast<double>(test.size());
  double ref_to_test = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto [j, d2] = tt.nearest(ref[i]);
    if (degenerate[i]) {
      ref_to_test += d2;
    } else {
      const double e = (ref[i] - test[j]).dot(normals[i]);
      ref_to_test += e * e;
    }
  }
  ref_to_test /= static_cast<double>(ref.size());
  for (bool d : degenerate) r.degenerate_normals += d ? 1 : 0;
  r.mse = std::max(test_to_ref, ref_to_test);
  r.psnr = psnr_from_mse(r.mse, peak);
  return r;
}

double chamfer(const PointList& ref, const PointList& test) {
  require_nonempty(ref, test);
  const KdTree tr(ref), tt(test);
  double a = 0.0, b = 0.0;
  for (const auto& p : test) a += std::sqrt(tr.nearest(p).second);
  for (const auto& p : ref) b += std::sqrt(tt.nearest(p).second);
  return 0.5 * (a / static_cast<double>(test.size()) + b / static_cast<double>(ref.size()));
}

namespace {

/// Least-squares cubic y(x), coefficients in ascending powers.
Eigen::Vector4d fit_cubic(const std::vector<double>& x, const std::vector<double>& y) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(x.size()), 4);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    v(r, 0) = 1.0;
    v(r, 1) = x[i];
    v(r, 2) = x[i] * x[i];
    v(r, 3) = x[i] * x[i] * x[i];
    rhs[r] = y[i];
  }
  return v.colPivHouseholderQr().solve(rhs);
}

double integrate_cubic(const Eigen::Vector4d& c, double lo, double hi) {
  auto prim = [&c](double x) { return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 + c[3] * x * x * x * x / 4; };
  return prim(hi) - prim(lo);
}

}  // namespace

double bd_metric(const RdCurve& anchor, const RdCurve& test, BdKind kind) {
  require(anchor.size() >= 4 && test.size() >= 4, ErrorCode::Insufficient, "BD metrics need >= 4 points per curve");
  auto split = [kind](const RdCurve& c, std::vector<double>& x, std::vector<double>& y) {
    for (const auto& p : c) {
      require(p.bpp > 0, ErrorCode::InvalidArgument, "bpp must be positive");
      const double lr = std::log10(p.bpp);
      x.push_back(kind == BdKind::Psnr ? lr : p.psnr);
      y.push_back(kind == BdKind::Psnr ? p.psnr : lr);
    }
  };
  std::vector<double> xa, ya, xb, yb;
  split(anchor, xa, ya);
  split(test, xb, yb);
  const double lo = std::max(*std::min_element(xa.begin(), xa.end()), *std::min_element(xb.begin(), xb.end()));
  const double hi = std::min(*std::max_element(xa.begin(), xa.end()), *std::max_element(xb.begin(), xb.end()));
  require(hi > lo, ErrorCode::NoOverlap, "RD curves do not overlap");
  const double ia = integrate_cubic(fit_cubic(xa, ya), lo, hi);
  const double ib = integrate_cubic(fit_cubic(xb, yb), lo, hi);
  const double delta = (ib - ia) / (hi - lo);
  return kind == BdKind::Psnr ? delta : 100.0 * (std::pow(10.0, delta) - 1.0);
}

PointList lattice_points(const QuantizedCloud& cloud) {
  PointList pts;
  pts.reserve(cloud.keys.size());
  for (auto k : cloud.keys) pts.push_back(morton_decode(k).cast<double>());
  return pts;
}

void write_rd_csv(std::ostream& os, const std::vector<RdRow>& rows) {
  os << "name,bpp,d1_psnr,d2_psnr,chamfer\n";
  for (const auto& r : rows) os << r.name << ',' << r.bpp << ',' << r.d1 << ',' << r.d2 << ',' << r.cd << '\n';
}

}  // namespace spcc
