#include "spcc/readout.hpp"

#include "spcc/network.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>

namespace spcc {
namespace {

struct LevelRows {
  std::vector<Eigen::VectorXd> x;
  std::vector<int> label;
};

/// Summed cross-entropy (nats) of scale * base logits against the labels.
double cross_entropy(const Eigen::MatrixXd& base, const std::vector<int>& label, double scale) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < base.rows(); ++r) {
    const Eigen::RowVectorXd l = scale * base.row(r);
    const double mx = l.maxCoeff();
    total += mx + std::log((l.array() - mx).exp().sum()) - l[label[static_cast<std::size_t>(r)]];
  }
  return total;
}

ReadoutFit fit_level(FloatModel& model, int level, const LevelRows& data, const ReadoutFitOptions& opt) {
  const auto n = static_cast<Eigen::Index>(data.x.size());
  require(n > 0, ErrorCode::Insufficient, "no fitting rows for level " + std::to_string(level));
  const Eigen::Index dim = data.x.front().size();

  Eigen::VectorXd global = Eigen::VectorXd::Zero(dim);
  std::vector<Eigen::VectorXd> mean(kNumSymbols, Eigen::VectorXd::Zero(dim));
  std::vector<double> count(kNumSymbols, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(data.label[static_cast<std::size_t>(i)]);
    global += data.x[static_cast<std::size_t>(i)];
    mean[k] += data.x[static_cast<std::size_t>(i)];
    count[k] += 1.0;
  }
  global /= static_cast<double>(n);
  for (std::size_t k = 0; k < mean.size(); ++k)
    mean[k] = (mean[k] + opt.mean_shrink * global) / (count[k] + opt.mean_shrink);

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd e = data.x[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(data.label[static_cast<std::size_t>(i)])];
    cov.noalias() += e * e.transpose();
  }
  cov /= static_cast<double>(n);
  const double mean_var = std::max(cov.trace() / static_cast<double>(dim), 1e-12);
  cov.diagonal().array() += opt.ridge * mean_var;
  const Eigen::LDLT<Eigen::MatrixXd> solver(cov);

  Eigen::MatrixXd w(dim, kNumSymbols);
  Eigen::RowVectorXd b(kNumSymbols);
  const double denom = static_cast<double>(n) + 0.5 * kNumSymbols;
  for (int k = 0; k < kNumSymbols; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    w.col(k) = solver.solve(mean[ku]);
    b[k] = -0.5 * mean[ku].dot(w.col(k)) + std::log((count[ku] + 0.5) / denom);
  }
  b.array() -= b.mean();

  // the temperature is searched on an evenly strided subset
  constexpr Eigen::Index kTemperatureRows = 8000;
  const Eigen::Index stride = (n + kTemperatureRows - 1) / kTemperatureRows;
  const Eigen::Index m = (n + stride - 1) / stride;
  Eigen::MatrixXd x(m, dim);
  std::vector<int> label(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    x.row(i) = data.x[static_cast<std::size_t>(i * stride)].transpose();
    label[static_cast<std::size_t>(i)] = data.label[static_cast<std::size_t>(i * stride)];
  }
  const Eigen::MatrixXd base = (x * w).rowwise() + b;

  // golden-section search for the temperature on a convex 1-D objective
  constexpr double kPhi = 0.6180339887498949;
  double lo = 0.01, hi = 4.0;
  double a = hi - kPhi * (hi - lo), c = lo + kPhi * (hi - lo);
  double fa = cross_entropy(base, label, a), fc = cross_entropy(base, label, c);
  for (int it = 0; it < 40; ++it) {
    if (fa < fc) {
      hi = c;
      c = a;
      fc = fa;
      a = hi - kPhi * (hi - lo);
      fa = cross_entropy(base, label, a);
    } else {
      lo = a;
      a = c;
      fa = fc;
      c = lo + kPhi * (hi - lo);
      fc = cross_entropy(base, label, c);
    }
  }
  const double scale = 0.5 * (lo + hi);

  const std::string p = layer_names::level_prefix(level) + ".pred.lin2";
  model.at(p + ".w") = (scale * w).cast<float>();
  model.at(p + ".b") = (scale * b).cast<float>();
  return {level, static_cast<std::size_t>(n), 1.0 / scale,
          cross_entropy(base, label, scale) / (std::log(2.0) * static_cast<double>(m))};
}

}  // namespace

std::vector<ReadoutFit> fit_output_readout(FloatModel& model, const std::vector<OctreeLevels>& trees,
                                           const ReadoutFitOptions& options, int workers) {
  require(!trees.empty(), ErrorCode::Insufficient, "readout fitting needs at least one tree");
  require(options.ridge >= 0.0 && options.mean_shrink >= 0.0 && options.max_rows > 0, ErrorCode::InvalidArgument,
          "invalid readout fit options");
  const ModelConfig& cfg = model.config;
  const int raw = cfg.raw_level();

  std::map<int, std::size_t> available;
  for (const auto& tree : trees) {
    require(tree.depth == cfg.depth, ErrorCode::ConfigMismatch, "fitting tree depth differs from model depth");
    for (int d = raw; d < cfg.depth; ++d) available[d] += tree.node_count(d);
  }

  std::map<int, LevelRows> rows;
  std::map<int, std::size_t> seen;
  for (const auto& tree : trees) {
    FloatOps ops(model, workers);
    TreeView view(tree);
    int level = raw;
    ops.set_observer([&](const std::string& site, const MatrixF& values) {
      if (!site.ends_with(".pred.lin1")) return;
      MatrixF h = values;
      prelu_inplace(h, RowVector<float>(model.at(layer_names::level_prefix(level) + ".pred.act").row(0)));
      const std::size_t stride = (available[level] + options.max_rows - 1) / options.max_rows;
      const CodeList& codes = tree.codes_of(level);
      LevelRows& dst = rows[level];
      for (Eigen::Index r = 0; r < h.rows(); ++r, ++seen[level]) {
        if (seen[level] % stride != 0) continue;
        dst.x.push_back(h.row(r).cast<double>().transpose());
        dst.label.push_back(codes[static_cast<std::size_t>(r)] - 1);
      }
    });
    Propagator<FloatOps> prop(cfg, ops, view);
    for (level = raw; level < cfg.depth; ++level) prop.step(level);
  }

  std::vector<ReadoutFit> fits;
  for (int d = raw; d < cfg.depth; ++d) fits.push_back(fit_level(model, d, rows[d], options));
  return fits;
}

}  // namespace spcc
