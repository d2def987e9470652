#include "spcc/network.hpp"

#include <cmath>
#include <limits>

namespace spcc {

KeyListPtr TreeView::keys(int level) {
  require(level <= frontier_ && level >= 0, ErrorCode::CausalityViolation,
          "keys of level " + std::to_string(level) + " read while predicting level " + std::to_string(frontier_));
  if (trace_) trace_->push_back({frontier_, TraceEvent::Kind::Keys, level});
  auto& slot = keys_[level];
  if (!slot) slot = std::make_shared<const KeyList>(tree_.keys.at(static_cast<std::size_t>(level)));
  return slot;
}

const CodeList& TreeView::codes_of(int level) {
  require(level < frontier_ && level >= 0, ErrorCode::CausalityViolation,
          "codes of level " + std::to_string(level) + " read while predicting level " + std::to_string(frontier_));
  if (trace_) trace_->push_back({frontier_, TraceEvent::Kind::Codes, level});
  return tree_.codes_of(level);
}

const KernelMap& TreeView::kernel_map(int in_level, int out_level, Kernel kernel) {
  const auto key = std::make_tuple(in_level, out_level, static_cast<int>(kernel));
  auto it = maps_.find(key);
  if (it == maps_.end()) {
    const KeyListPtr in = keys(in_level);
    const KeyListPtr out = keys(out_level);
    it = maps_.emplace(key, build_kernel_map(*in, *out, kernel)).first;
  }
  return it->second;
}

namespace {

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename Scalar>
RowMatrix<Scalar> lookup_rows(const RowMatrix<Scalar>& table, const CodeList& codes) {
  RowMatrix<Scalar> out(static_cast<Eigen::Index>(codes.size()), table.cols());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    require(codes[i] != 0, ErrorCode::InvalidOccupancy, "occupancy code 0");
    out.row(static_cast<Eigen::Index>(i)) = table.row(codes[i] - 1);
  }
  return out;
}

std::span<const RequantParams> slopes_of(const IntLayer& layer) { return layer.requant; }

}  // namespace

void FloatOps::set_logit_perturbation(double epsilon, std::uint64_t seed) {
  epsilon_ = epsilon;
  perturb_state_ = seed;
}

FeatureMapF FloatOps::seed(TreeView& view, const std::string& site, int level) {
  KeyListPtr keys = view.keys(level);
  MatrixF f = model_.at(site).row(0).replicate(static_cast<Eigen::Index>(keys->size()), 1);
  return {level, std::move(keys), std::move(f)};
}

FeatureMapF FloatOps::embed(TreeView& view, const std::string& site, int level) {
  MatrixF f = lookup_rows(model_.at(site), view.codes_of(level));
  return {level, view.keys(level), std::move(f)};
}

FeatureMapF FloatOps::conv(TreeView& view, const std::string& site, const Map& in, int in_level, int out_level,
                           Kernel kernel) {
  const KernelMap& km = view.kernel_map(in_level, out_level, kernel);
  Map out = sparse_conv(in, view.keys(out_level), out_level, km, model_.at(site + ".w"), row(site + ".b"));
  observe(site, out.feats);
  return out;
}

FeatureMapF FloatOps::conv_prelu(TreeView& view, const std::string& site, const std::string& act, const Map& in,
                                 int level) {
  Map out = conv(view, site, in, level, level, Kernel::K3S1);
  prelu_inplace(out.feats, row(act));
  return out;
}

FeatureMapF FloatOps::add(const std::string& site, const Map& a, const Map& b) {
  require(a.level == b.level && a.rows() == b.rows() && a.channels() == b.channels(), ErrorCode::ShapeMismatch,
          "residual operands differ");
  MatrixF f = a.feats + b.feats;
  observe(site, f);
  return {a.level, a.keys, std::move(f)};
}

FeatureMapF FloatOps::concat(const std::string& site, const Map& a, const Map& b) {
  Map out = concat_features(a, b);
  observe(site, out.feats);
  return out;
}

FeatureMapF FloatOps::upsample(TreeView& view, const std::string& site, const Map& in, int in_level) {
  const CodeList& codes = view.codes_of(in_level);
  const MatrixF& w = model_.at(site + ".w");
  MatrixF pruned = pruned_linear(in.feats, codes, w, row(site + ".b"));
  observe(site, pruned);
  prelu_inplace(pruned, row(site + ".act"));
  return {in_level + 1, view.keys(in_level + 1), std::move(pruned)};
}

MatrixD FloatOps::predict(const std::string& site, const Map& in) {
  MatrixF h = linear_rows(in.feats, model_.at(site + ".lin1.w"), row(site + ".lin1.b"), workers_);
  observe(site + ".lin1", h);
  prelu_inplace(h, row(site + ".act"));
  const MatrixF logits = linear_rows(h, model_.at(site + ".lin2.w"), row(site + ".lin2.b"), workers_);
  observe(site + ".lin2", logits);
  require(logits.allFinite(), ErrorCode::NumericalFault, "non-finite logits at " + site);
  MatrixD p = logits.cast<double>();
  if (epsilon_ != 0.0) {
    for (Eigen::Index i = 0; i < p.size(); ++i)
      p.data()[i] += (splitmix(perturb_state_) & 1) ? epsilon_ : -epsilon_;
  }
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    auto row_r = p.row(r);
    row_r.array() = (row_r.array() - row_r.maxCoeff()).exp();
    row_r /= row_r.sum();
  }
  return p;
}

MatrixI IntOps::linear(const IntLayer& layer, const Map& in) const {
  return int_linear(in.map.feats, in.zero_point, layer.weights, layer.bias, workers_);
}

QuantFeatureMap IntOps::seed(TreeView& view, const std::string& site, int level) {
  const IntLayer& layer = model_.at(site);
  KeyListPtr keys = view.keys(level);
  MatrixI f = layer.weights.row(0).replicate(static_cast<Eigen::Index>(keys->size()), 1);
  return {{level, std::move(keys), std::move(f)}, layer.output.zero_point};
}

QuantFeatureMap IntOps::embed(TreeView& view, const std::string& site, int level) {
  const IntLayer& layer = model_.at(site);
  MatrixI f = lookup_rows(layer.weights, view.codes_of(level));
  return {{level, view.keys(level), std::move(f)}, layer.output.zero_point};
}

QuantFeatureMap IntOps::conv(TreeView& view, const std::string& site, const Map& in, int in_level, int out_level,
                             Kernel kernel) {
  const IntLayer& layer = model_.at(site);
  require(in.zero_point == layer.input.zero_point, ErrorCode::ContractViolation, "input grid mismatch at " + site);
  const KernelMap& km = view.kernel_map(in_level, out_level, kernel);
  const MatrixI centered = (in.map.feats.array() - in.zero_point).matrix();
  MatrixI acc = layer.bias.replicate(static_cast<Eigen::Index>(km.n_out), 1);
  accumulate_conv(centered, km, layer.weights, acc);
  MatrixI q = requantize(acc, layer.requant.at(0), layer.output.q_min, layer.output.q_max);
  observe(site, q, layer.output.zero_point);
  return {{out_level, view.keys(out_level), std::move(q)}, layer.output.zero_point};
}

QuantFeatureMap IntOps::conv_prelu(TreeView& view, const std::string& site, const std::string& act, const Map& in,
                                   int level) {
  Map out = conv(view, site, in, level, level, Kernel::K3S1);
  int_prelu(out.map.feats, slopes_of(model_.at(act)), out.zero_point);
  return out;
}

QuantFeatureMap IntOps::add(const std::string& site, const Map& a, const Map& b) {
  const IntLayer& layer = model_.at(site);
  MatrixI q = int_add(a.map.feats, a.zero_point, layer.requant.at(0), b.map.feats, b.zero_point, layer.requant.at(1),
                      layer.output.q_min, layer.output.q_max);
  observe(site, q, layer.output.zero_point);
  return {{a.map.level, a.map.keys, std::move(q)}, layer.output.zero_point};
}

QuantFeatureMap IntOps::concat(const std::string& site, const Map& a, const Map& b) {
  const IntLayer& layer = model_.at(site);
  FeatureMapI ra(a.map.level, a.map.keys, rescale(a.map.feats, a.zero_point, layer.requant.at(0)));
  FeatureMapI rb(b.map.level, b.map.keys, rescale(b.map.feats, b.zero_point, layer.requant.at(1)));
  FeatureMapI out = concat_features(ra, rb);
  observe(site, out.feats, layer.output.zero_point);
  return {std::move(out), layer.output.zero_point};
}

QuantFeatureMap IntOps::upsample(TreeView& view, const std::string& site, const Map& in, int in_level) {
  const IntLayer& layer = model_.at(site);
  const CodeList& codes = view.codes_of(in_level);
  require(layer.weights.rows() <= (1 << 15), ErrorCode::AccumulatorRisk, "reduction length exceeds 2^15");
  const MatrixI centered = (in.map.feats.array() - in.zero_point).matrix();
  MatrixI pruned = requantize(pruned_linear(centered, codes, layer.weights, layer.bias), layer.requant.at(0),
                              layer.output.q_min, layer.output.q_max);
  observe(site, pruned, layer.output.zero_point);
  int_prelu(pruned, slopes_of(model_.at(site + ".act")), layer.output.zero_point);
  return {{in_level + 1, view.keys(in_level + 1), std::move(pruned)}, layer.output.zero_point};
}

MatrixI IntOps::predict(const std::string& site, const Map& in) {
  const IntLayer& l1 = model_.at(site + ".lin1");
  MatrixI h = requantize(linear(l1, in), l1.requant.at(0), l1.output.q_min, l1.output.q_max);
  observe(site + ".lin1", h, l1.output.zero_point);
  int_prelu(h, slopes_of(model_.at(site + ".act")), l1.output.zero_point);
  const IntLayer& l2 = model_.at(site + ".lin2");
  const Map hidden{{in.map.level, in.map.keys, std::move(h)}, l1.output.zero_point};
  const MatrixI logits = requantize(linear(l2, hidden), l2.requant.at(0), l2.output.q_min, l2.output.q_max);
  observe(site + ".lin2", logits, l2.output.zero_point);
  return int_softmax(logits, model_.lut, workers_);
}

MatrixI probabilities_to_masses(const MatrixD& probs, int workers) {
  MatrixI masses(probs.rows(), probs.cols());
  parallel_rows(probs.rows(), workers, [&](std::ptrdiff_t begin, std::ptrdiff_t end) {
    std::vector<std::uint64_t> w(static_cast<std::size_t>(probs.cols()));
    for (std::ptrdiff_t r = begin; r < end; ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      // p * 2^40 is exact; adding one half and truncating rounds it
      for (Eigen::Index c = 0; c < probs.cols(); ++c)
        w[static_cast<std::size_t>(c)] = static_cast<std::uint64_t>(probs(row, c) * 0x1.0p40 + 0.5);
      normalize_masses(w, std::span<std::int32_t>(masses.row(row).data(), static_cast<std::size_t>(masses.cols())));
    }
  });
  return masses;
}

double estimate_bitrate(const MatrixD& dist, const CodeList& truth) {
  require(static_cast<std::size_t>(dist.rows()) == truth.size(), ErrorCode::ShapeMismatch, "one code per row");
  double bits = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 1, ErrorCode::InvalidOccupancy, "occupancy code 0");
    const double p = dist(static_cast<Eigen::Index>(i), truth[i] - 1);
    require(p > 0.0, ErrorCode::ProbabilityUnderflow, "true symbol has zero probability");
    bits -= std::log2(p);
  }
  return bits;
}

double estimate_bitrate(const MatrixI& masses, const CodeList& truth) {
  require(static_cast<std::size_t>(masses.rows()) == truth.size(), ErrorCode::ShapeMismatch, "one code per row");
  double bits = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::int32_t m = masses(static_cast<Eigen::Index>(i), truth[i] - 1);
    require(m > 0, ErrorCode::ProbabilityUnderflow, "true symbol has zero mass");
    bits -= std::log2(static_cast<double>(m) / kProbTotal);
  }
  return bits;
}

namespace {
template <typename Ops, typename ModelT>
std::vector<typename Ops::Dist> forward_all(const ModelT& model, const OctreeLevels& tree, int workers) {
  require(tree.depth == model.config.depth, ErrorCode::ConfigMismatch, "tree depth differs from model depth");
  Ops ops(model, workers);
  TreeView view(tree);
  Propagator<Ops> prop(model.config, ops, view);
  std::vector<typename Ops::Dist> out;
  for (int d = model.config.raw_level(); d < model.config.depth; ++d) out.push_back(prop.step(d));
  return out;
}
}  // namespace

std::vector<MatrixD> float_forward(const FloatModel& model, const OctreeLevels& tree, int workers) {
  return forward_all<FloatOps>(model, tree, workers);
}

std::vector<MatrixI> int_forward(const IntegerModel& model, const OctreeLevels& tree, int workers) {
  return forward_all<IntOps>(model, tree, workers);
}

}  // namespace spcc
