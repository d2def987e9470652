#include "spcc/calibration.hpp"

#include "spcc/network.hpp"

#include <cmath>
#include <limits>

namespace spcc {
namespace {

/// Site whose output is consumed by a PReLU, judged from the slope tensor the
/// model carries for it.
bool feeds_prelu(const FloatModel& model, const std::string& site) {
  if (model.tensors.count(site + ".act")) return true;  // upsampling
  const auto conv = site.rfind(".conv");
  if (conv != std::string::npos) return model.tensors.count(site.substr(0, conv) + ".act" + site.substr(conv + 5)) > 0;
  const auto lin1 = site.rfind(".lin1");
  if (lin1 != std::string::npos && lin1 + 5 == site.size()) return model.tensors.count(site.substr(0, lin1) + ".act") > 0;
  return false;
}

class QuantizerOps {
 public:
  using Map = QuantParams;
  using Dist = int;

  QuantizerOps(const FloatModel& model, const ActivationStats& stats, IntegerModel& out)
      : model_(model), stats_(stats), out_(out) {}

  Map seed(TreeView&, const std::string& site, int) { return table(site); }
  Map embed(TreeView&, const std::string& site, int) { return table(site); }

  Map conv(TreeView&, const std::string& site, const Map& in, int, int, Kernel) { return linear(site, in, false); }

  Map conv_prelu(TreeView&, const std::string& site, const std::string& act, const Map& in, int) {
    const Map out = linear(site, in, true);
    prelu(act);
    return out;
  }

  Map add(const std::string& site, const Map& a, const Map& b) {
    const QuantParams y = observed(site, false);
    const double ra = a.scale / y.scale;
    const double rb = b.scale / y.scale;
    const RequantParams big = derive_requant(std::max(ra, rb), 1.0, 1.0, y.zero_point);
    const auto small_m = static_cast<std::int64_t>(round_half_even(std::ldexp(std::min(ra, rb), big.shift)));
    RequantParams small{small_m, big.shift, y.zero_point};
    IntLayer layer;
    layer.kind = LayerKind::Add;
    layer.requant = ra >= rb ? std::vector{big, small} : std::vector{small, big};
    layer.input = a;
    layer.output = y;
    emit(site, std::move(layer));
    return y;
  }

  Map concat(const std::string& site, const Map& a, const Map& b) {
    const QuantParams y = observed(site, false);
    IntLayer layer;
    layer.kind = LayerKind::Concat;
    layer.requant = {derive_requant(a.scale, 1.0, y.scale, y.zero_point),
                     derive_requant(b.scale, 1.0, y.scale, y.zero_point)};
    layer.input = a;
    layer.output = y;
    emit(site, std::move(layer));
    return y;
  }

  Map upsample(TreeView&, const std::string& site, const Map& in, int) {
    const Map out = linear(site, in, true);
    prelu(site + ".act");
    return out;
  }

  Dist predict(const std::string& site, const Map& in) {
    const Map h = linear(site + ".lin1", in, true);
    prelu(site + ".act");
    QuantParams logits;
    logits.scale = 1.0 / (1 << kLogitFracBits);
    logits.q_min = -(1 << 23);
    logits.q_max = 1 << 23;
    linear(site + ".lin2", h, false, &logits);
    return 0;
  }

 private:
  QuantParams observed(const std::string& site, bool symmetric) const {
    const auto it = stats_.find(site);
    require(it != stats_.end(), ErrorCode::MissingStats, "no activation range for " + site);
    return derive_qparams(it->second.lo, it->second.hi, symmetric || it->second.symmetric);
  }

  Map table(const std::string& site) {
    const MatrixF& t = model_.at(site);
    const QuantParams p = derive_qparams(t.minCoeff(), t.maxCoeff(), false);
    IntLayer layer;
    layer.kind = LayerKind::Table;
    layer.weights = quantize_tensor(t, p);
    layer.output = p;
    emit(site, std::move(layer));
    return p;
  }

  Map linear(const std::string& site, const Map& in, bool symmetric, const QuantParams* fixed_out = nullptr) {
    const MatrixF& w = model_.at(site + ".w");
    const MatrixF& b = model_.at(site + ".b");
    const QuantParams wp = derive_qparams(w.minCoeff(), w.maxCoeff(), true);
    const QuantParams y = fixed_out ? *fixed_out : observed(site, symmetric);
    IntLayer layer;
    layer.kind = LayerKind::Linear;
    layer.weights = quantize_tensor(w, wp);
    layer.bias.resize(b.cols());
    const double bias_scale = in.scale * wp.scale;
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      const double q = round_half_even(static_cast<double>(b(0, c)) / bias_scale);
      require(std::abs(q) <= static_cast<double>(1 << 30), ErrorCode::CalibrationOverflow,
              "bias of " + site + " does not fit the accumulator");
      layer.bias[c] = static_cast<std::int32_t>(q);
    }
    layer.requant = {derive_requant(in.scale, wp.scale, y.scale, y.zero_point)};
    layer.input = in;
    layer.output = y;
    emit(site, std::move(layer));
    return y;
  }

  void prelu(const std::string& site) {
    const MatrixF& slopes = model_.at(site);
    IntLayer layer;
    layer.kind = LayerKind::PRelu;
    for (Eigen::Index c = 0; c < slopes.cols(); ++c) {
      const double a = slopes(0, c);
      require(a >= 0.0, ErrorCode::ContractViolation, "negative PReLU slope in " + site);
      layer.requant.push_back(a == 0.0 ? RequantParams{} : derive_requant(a, 1.0, 1.0));
    }
    emit(site, std::move(layer));
  }

  void emit(const std::string& site, IntLayer layer) { out_.layers.insert_or_assign(site, std::move(layer)); }

  const FloatModel& model_;
  const ActivationStats& stats_;
  IntegerModel& out_;
};

}  // namespace

void merge_stats(ActivationStats& into, const ActivationStats& more) {
  for (const auto& [site, r] : more) {
    auto [it, inserted] = into.emplace(site, r);
    if (!inserted) {
      it->second.lo = std::min(it->second.lo, r.lo);
      it->second.hi = std::max(it->second.hi, r.hi);
      it->second.symmetric = it->second.symmetric || r.symmetric;
    }
  }
}

ActivationStats collect_activation_stats(const FloatModel& model, const std::vector<QuantizedCloud>& samples,
                                         int workers) {
  require(!samples.empty(), ErrorCode::InvalidArgument, "calibration needs at least one sample");
  ActivationStats stats;
  for (const auto& sample : samples) {
    const OctreeLevels tree = build_octree(sample);
    require(tree.depth == model.config.depth, ErrorCode::ConfigMismatch, "calibration sample depth != model depth");
    FloatOps ops(model, workers);
    ops.set_observer([&](const std::string& site, const MatrixF& v) {
      if (v.size() == 0) return;
      ActivationRange r{v.minCoeff(), v.maxCoeff(), feeds_prelu(model, site)};
      if (r.symmetric) {
        const double m = std::max(std::abs(r.lo), std::abs(r.hi));
        r.lo = -m;
        r.hi = m;
      }
      merge_stats(stats, {{site, r}});
    });
    TreeView view(tree);
    Propagator<FloatOps> prop(model.config, ops, view);
    for (int d = model.config.raw_level(); d < model.config.depth; ++d) prop.step(d);
  }
  return stats;
}

QuantParams derive_qparams(double lo, double hi, bool symmetric) {
  require(hi >= lo, ErrorCode::InvalidArgument, "range upper bound below lower bound");
  QuantParams p;
  if (symmetric) {
    const double m = std::max({std::abs(lo), std::abs(hi), kRangeFloor});
    p.scale = m / 127.0;
    p.zero_point = 0;
    return p;
  }
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  if (hi - lo < 2 * kRangeFloor) {
    lo -= kRangeFloor;
    hi += kRangeFloor;
  }
  p.scale = (hi - lo) / 255.0;
  p.zero_point = static_cast<std::int32_t>(std::clamp(round_half_even(-128.0 - lo / p.scale), -128.0, 127.0));
  return p;
}

RequantParams derive_requant(double s_x, double s_w, double s_y, std::int32_t zero_point) {
  require(s_x > 0 && s_w > 0 && s_y > 0, ErrorCode::InvalidArgument, "scales must be positive");
  const double ratio = s_x * s_w / s_y;
  int e = 0;
  const double f = std::frexp(ratio, &e);  // ratio = f * 2^e, f in [0.5, 1)
  auto m = static_cast<std::int64_t>(round_half_even(std::ldexp(f, 31)));
  int r = 31 - e;
  if (m == (std::int64_t{1} << 31)) {
    m >>= 1;
    --r;
  }
  require(r >= 0 && r <= 62, ErrorCode::CalibrationOverflow, "requantization ratio out of range");
  return {m, r, zero_point};
}

IntegerModel quantize_model(const FloatModel& model, const ActivationStats& stats) {
  IntegerModel out;
  out.config = model.config;
  out.lut = ExpLut::generate();
  QuantizerOps ops(model, stats, out);
  const OctreeLevels none;
  TreeView view(none);
  Propagator<QuantizerOps> prop(model.config, ops, view);
  for (int d = model.config.raw_level(); d < model.config.depth; ++d) prop.step(d);
  stamp_hash(out);
  return out;
}

IntegerModel calibrate(const FloatModel& model, const std::vector<QuantizedCloud>& samples, int workers) {
  return quantize_model(model, collect_activation_stats(model, samples, workers));
}

}  // namespace spcc
