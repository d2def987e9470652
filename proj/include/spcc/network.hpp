#pragma once
// Per-level context network. One graph walker (Propagator) drives three op
// sets: FloatOps (reference path and calibration observer), IntOps (integer
// runtime) and the calibration-time quantizer. Every op set sees exactly the
// same sequence of named sites, which keeps the float and integer models
// structurally congruent.

#include "spcc/fixed_point.hpp"
#include "spcc/model.hpp"
#include "spcc/octree.hpp"
#include "spcc/sparse.hpp"

#include <functional>
#include <map>
#include <optional>
#include <tuple>

namespace spcc {

/// One recorded access made while predicting a level.
struct TraceEvent {
  enum class Kind : std::uint8_t { Keys, Codes };
  int coding_level = 0;
  Kind kind = Kind::Keys;
  int level = 0;
  bool operator==(const TraceEvent&) const = default;
};
using CausalityTrace = std::vector<TraceEvent>;

/// Read access to a (possibly partially decoded) octree. While level d is
/// being predicted only keys(l <= d) and codes_of(l < d) are visible; any other
/// access raises CausalityViolation.
class TreeView {
 public:
  explicit TreeView(const OctreeLevels& tree, CausalityTrace* trace = nullptr) : tree_(tree), trace_(trace) {}

  void set_frontier(int level) { frontier_ = level; }
  int frontier() const { return frontier_; }

  KeyListPtr keys(int level);
  const CodeList& codes_of(int level);
  const KernelMap& kernel_map(int in_level, int out_level, Kernel kernel);

 private:
  const OctreeLevels& tree_;
  CausalityTrace* trace_;
  int frontier_ = 0;
  std::map<int, KeyListPtr> keys_;
  std::map<std::tuple<int, int, int>, KernelMap> maps_;
};

/// Runs the per-level graph. step(d) returns the distribution over the
/// occupancy codes of the depth-d nodes; levels must be stepped in order
/// starting at config.raw_level().
template <typename Ops>
class Propagator {
 public:
  using Map = typename Ops::Map;
  using Dist = typename Ops::Dist;

  Propagator(const ModelConfig& config, Ops& ops, TreeView& view)
      : cfg_(config), ops_(ops), view_(view), next_(config.raw_level()) {}

  Dist step(int d) {
    require(d == next_ && d < cfg_.depth, ErrorCode::ContractViolation, "levels must be predicted in order");
    ++next_;
    view_.set_frontier(d);
    const std::string p = layer_names::level_prefix(d);
    const int t = cfg_.decision_level();
    if (!cfg_.is_deep(d)) {
      if (!prev_) prev_ = ops_.seed(view_, "seed", d - 1);
      Map s = resblock(p + ".res", *prev_, d - 1);
      Map e = ops_.embed(view_, p + ".up.emb", d - 1);
      Map f = ops_.upsample(view_, p + ".up", ops_.concat(p + ".up.cat", s, e), d - 1);
      if (d == t) dense_ = f;
      prev_ = f;
      return ops_.predict(p + ".pred", f);
    }
    require(dense_.has_value(), ErrorCode::ContractViolation, "dense-level features missing");
    Map g = ops_.embed(view_, p + ".g.emb", d - 1);
    for (int j = 0, lvl = d - 1; lvl > t; ++j, --lvl)
      g = ops_.conv(view_, p + ".g.down" + std::to_string(j), g, lvl, lvl - 1, Kernel::K2S2);
    Map cur = resblock(p + ".h", ops_.concat(p + ".h.cat", *dense_, g), t);
    for (int s = 0; s < d - t; ++s) {
      const std::string sp = p + ".s" + std::to_string(s);
      Map e = ops_.embed(view_, sp + ".emb", t + s);
      cur = ops_.upsample(view_, sp, ops_.concat(sp + ".cat", cur, e), t + s);
    }
    return ops_.predict(p + ".pred", cur);
  }

 private:
  Map resblock(const std::string& prefix, const Map& x, int level) {
    std::optional<Map> y;
    const Map* in = &x;
    for (int i = 0; i + 1 < cfg_.resblock_depth; ++i) {
      y = ops_.conv_prelu(view_, prefix + ".conv" + std::to_string(i), prefix + ".act" + std::to_string(i), *in,
                          level);
      in = &*y;
    }
    Map last = ops_.conv(view_, prefix + ".conv" + std::to_string(cfg_.resblock_depth - 1), *in, level, level,
                         Kernel::K3S1);
    return ops_.add(prefix + ".add", x, last);
  }

  ModelConfig cfg_;
  Ops& ops_;
  TreeView& view_;
  int next_;
  std::optional<Map> prev_;
  std::optional<Map> dense_;
};

/// Float reference ops. Linear outputs are reported to `observer` before any
/// activation (used by calibration).
class FloatOps {
 public:
  using Map = FeatureMapF;
  using Dist = MatrixD;  ///< N x 255 probabilities
  using Observer = std::function<void(const std::string& site, const MatrixF& values)>;

  explicit FloatOps(const FloatModel& model, int workers = 1) : model_(model), workers_(workers) {}

  void set_observer(Observer obs) { observer_ = std::move(obs); }
  /// Adds +-epsilon (independent random sign per logit) before the softmax.
  void set_logit_perturbation(double epsilon, std::uint64_t seed);

  Map seed(TreeView& view, const std::string& site, int level);
  Map embed(TreeView& view, const std::string& site, int level);
  Map conv(TreeView& view, const std::string& site, const Map& in, int in_level, int out_level, Kernel kernel);
  Map conv_prelu(TreeView& view, const std::string& site, const std::string& act, const Map& in, int level);
  Map add(const std::string& site, const Map& a, const Map& b);
  Map concat(const std::string& site, const Map& a, const Map& b);
  Map upsample(TreeView& view, const std::string& site, const Map& in, int in_level);
  Dist predict(const std::string& site, const Map& in);

 private:
  void observe(const std::string& site, const MatrixF& v) {
    if (observer_) observer_(site, v);
  }
  RowVector<float> row(const std::string& name) const { return model_.at(name).row(0); }

  const FloatModel& model_;
  int workers_;
  Observer observer_;
  double epsilon_ = 0.0;
  std::uint64_t perturb_state_ = 0;
};

/// Integer feature map: int8-range values with the zero point of their grid.
struct QuantFeatureMap {
  FeatureMapI map;
  std::int32_t zero_point = 0;
};

/// Integer-only ops. No real-valued arithmetic is reachable from here.
class IntOps {
 public:
  using Map = QuantFeatureMap;
  using Dist = MatrixI;  ///< N x 255 Q16 masses, rows sum to 2^16

  /// Sees the same sites as the float observer, on the site's output grid.
  using Observer = std::function<void(const std::string& site, const MatrixI& values, std::int32_t zero_point)>;

  explicit IntOps(const IntegerModel& model, int workers = 1) : model_(model), workers_(workers) {}

  void set_observer(Observer obs) { observer_ = std::move(obs); }

  Map seed(TreeView& view, const std::string& site, int level);
  Map embed(TreeView& view, const std::string& site, int level);
  Map conv(TreeView& view, const std::string& site, const Map& in, int in_level, int out_level, Kernel kernel);
  Map conv_prelu(TreeView& view, const std::string& site, const std::string& act, const Map& in, int level);
  Map add(const std::string& site, const Map& a, const Map& b);
  Map concat(const std::string& site, const Map& a, const Map& b);
  Map upsample(TreeView& view, const std::string& site, const Map& in, int in_level);
  Dist predict(const std::string& site, const Map& in);

 private:
  MatrixI linear(const IntLayer& layer, const Map& in) const;
  void observe(const std::string& site, const MatrixI& v, std::int32_t zp) {
    if (observer_) observer_(site, v, zp);
  }

  const IntegerModel& model_;
  int workers_;
  Observer observer_;
};

/// Q16 masses from float probabilities (weights round(p * 2^40), then the
/// same exact normalization the integer softmax uses).
MatrixI probabilities_to_masses(const MatrixD& probs, int workers = 1);

/// Sum over rows of -log2 p[row, truth-1]. Raises ProbabilityUnderflow when a
/// true symbol has zero probability.
double estimate_bitrate(const MatrixD& dist, const CodeList& truth);
double estimate_bitrate(const MatrixI& masses, const CodeList& truth);

/// Distributions for every coded level of a complete tree, indexed by
/// level - raw_level().
std::vector<MatrixD> float_forward(const FloatModel& model, const OctreeLevels& tree, int workers = 1);
std::vector<MatrixI> int_forward(const IntegerModel& model, const OctreeLevels& tree, int workers = 1);

}  // namespace spcc
