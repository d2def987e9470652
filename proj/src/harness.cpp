#include "spcc/harness.hpp"

#include "spcc/metrics.hpp"
#include "spcc/readout.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <random>

namespace spcc {
namespace {

constexpr double kGroundZ = -1.73;
constexpr double kRoomHalf = 90.0;
constexpr double kCeilingZ = 30.0;
constexpr double kRangeSigma = 0.02;

/// Uniform [0, 1) from raw generator bits (portable, unlike std distributions).
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - unit(rng);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

struct Box {
  Eigen::Vector3d lo, hi;
};

/// Entry distance of a ray from the origin into `b`, if any.
std::optional<double> ray_box(const Eigen::Vector3d& d, const Box& b) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (b.lo[a] > 0.0 || b.hi[a] < 0.0) return std::nullopt;
      continue;
    }
    double ta = b.lo[a] / d[a], tb = b.hi[a] / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= 0.0) return std::nullopt;
  return t0;
}

/// Exit distance from the enclosing room (the origin is inside).
double room_exit(const Eigen::Vector3d& d) {
  double t = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 2; ++a)
    if (d[a] != 0.0) t = std::min(t, (d[a] > 0 ? kRoomHalf : -kRoomHalf) / d[a]);
  if (d.z() > 0.0) t = std::min(t, kCeilingZ / d.z());
  return t;
}

}  // namespace

RawCloud synth_scan(std::uint64_t seed, int rays, SceneKind scene) {
  require(rays >= 1, ErrorCode::InvalidArgument, "rays must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Box> boxes;
  if (scene == SceneKind::GroundBoxes) {
    const int n = 16 + static_cast<int>(rng() % 17);
    for (int i = 0; i < n; ++i) {
      const double r = 6.0 + 44.0 * unit(rng);
      const double az = 2.0 * std::numbers::pi * unit(rng);
      const double sx = 1.0 + 4.0 * unit(rng), sy = 1.0 + 4.0 * unit(rng), h = 0.5 + 3.5 * unit(rng);
      const Eigen::Vector3d c(r * std::cos(az), r * std::sin(az), 0.0);
      boxes.push_back({{c.x() - sx / 2, c.y() - sy / 2, kGroundZ}, {c.x() + sx / 2, c.y() + sy / 2, kGroundZ + h}});
    }
  }
  const int rows = std::min(64, rays);
  const int cols = (rays + rows - 1) / rows;
  constexpr double kElevLo = -24.8 * std::numbers::pi / 180.0;
  constexpr double kElevHi = 2.0 * std::numbers::pi / 180.0;
  RawCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(rays));
  for (int i = 0; i < rays; ++i) {
    const int row = i % rows, col = i / rows;
    const double el = rows == 1 ? -0.1 : kElevLo + (kElevHi - kElevLo) * row / (rows - 1);
    const double az = 2.0 * std::numbers::pi * col / cols;
    const Eigen::Vector3d d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    double t;
    if (scene == SceneKind::Sphere) {
      t = 20.0;
    } else {
      t = room_exit(d);
      if (d.z() < 0.0) t = std::min(t, kGroundZ / d.z());
      for (const auto& b : boxes)
        if (auto hit = ray_box(d, b)) t = std::min(t, *hit);
    }
    t = std::max(0.1, t + kRangeSigma * gaussian(rng));
    cloud.points.push_back(d * t);
  }
  return cloud;
}

QuantizedCloud synth_quantized(std::uint64_t seed, int rays, int depth, SceneKind scene) {
  QuantTransform t;
  t.mode = QuantMode::BboxNorm;
  t.precision = depth;
  return quantize_points(synth_scan(seed, rays, scene), t);
}

ModelConfig toy_config(int depth, int channels) {
  ModelConfig cfg;
  cfg.depth = depth;
  cfg.channels = channels;
  cfg.t_offset = depth <= 10 ? 2 : 4;
  cfg.validate();
  return cfg;
}

FloatModel toy_float_model(const ModelConfig& config, std::uint64_t seed,
                           const std::vector<QuantizedCloud>& fit_samples, int workers) {
  FloatModel model = generate_float_model(config, {.seed = seed});
  std::vector<OctreeLevels> trees;
  trees.reserve(fit_samples.size());
  for (const auto& s : fit_samples) trees.push_back(build_octree(s.keys, config.depth));
  fit_output_readout(model, trees, {}, workers);
  return model;
}

std::vector<QuantizedCloud> synth_set(std::uint64_t base_seed, int count, int rays, int depth) {
  std::vector<QuantizedCloud> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(synth_quantized(base_seed + static_cast<std::uint64_t>(i), rays, depth));
  return out;
}

void write_hrcs_csv(std::ostream& os, const HrcsStats& stats) {
  os << "level,nodes,mean_occupied_neighbors\n";
  for (const auto& s : stats) os << s.level << ',' << s.node_count << ',' << s.mean_occupied_neighbors << '\n';
}

PerturbationReport perturbation_experiment(const QuantizedCloud& cloud, const FloatModel& model, double epsilon,
                                           std::uint64_t seed, int workers) {
  const Bytes stream = encode(cloud, model, {.workers = workers});
  return perturbed_decode(stream, cloud, model, epsilon, seed, workers);
}

PerturbationReport perturbed_decode(std::span<const std::uint8_t> stream, const QuantizedCloud& cloud,
                                    const FloatModel& model, double epsilon, std::uint64_t seed, int workers) {
  const OctreeLevels truth = build_octree(cloud.keys, model.config.depth);
  DecodeReport rep;
  DecodeOptions opt;
  opt.workers = workers;
  opt.logit_epsilon = epsilon;
  opt.perturb_seed = seed;
  opt.lenient = true;
  opt.report = &rep;
  const QuantizedCloud decoded = decode(stream, model, opt);

  PerturbationReport r;
  r.aborted = rep.aborted;
  r.lossless = !rep.aborted && decoded.keys == cloud.keys;
  std::size_t total = 0, wrong = 0;
  const int raw = model.config.raw_level();
  for (int d = raw; d < model.config.depth; ++d) {
    const CodeList& want = truth.codes_of(d);
    total += want.size();
    const auto i = static_cast<std::size_t>(d - raw);
    if (i >= rep.codes.size()) {
      wrong += want.size();
      if (!r.first_divergence) r.first_divergence = d;
      continue;
    }
    const CodeList& got = rep.codes[i];
    std::size_t level_wrong = want.size() > got.size() ? want.size() - got.size() : 0;
    for (std::size_t k = 0; k < std::min(want.size(), got.size()); ++k) level_wrong += want[k] != got[k] ? 1 : 0;
    if (level_wrong > 0 && !r.first_divergence) r.first_divergence = d;
    wrong += level_wrong;
  }
  r.corrupted_fraction = total ? std::min(1.0, static_cast<double>(wrong) / static_cast<double>(total)) : 0.0;

  const int shift = model.config.depth - rep.deepest_level;
  PointList wreck;
  wreck.reserve(rep.deepest_keys.size());
  for (auto k : rep.deepest_keys) wreck.push_back((morton_decode(k).cast<double>() * std::ldexp(1.0, shift)));
  r.decoded_points = wreck.size();
  const double peak = std::ldexp(1.0, model.config.depth) - 1.0;
  r.d1_psnr = wreck.empty() ? 0.0 : d1_psnr(lattice_points(cloud), wreck, peak);
  return r;
}

bool integer_injection_invariant(const QuantizedCloud& cloud, const IntegerModel& model, double epsilon,
                                 std::uint64_t seed, int workers) {
  const Bytes stream = encode(cloud, model, {.workers = workers});
  const QuantizedCloud clean = decode(stream, model, {.workers = workers});
  return clean.keys == cloud.keys && integer_injection_invariant(stream, clean, model, epsilon, seed, workers);
}

bool integer_injection_invariant(std::span<const std::uint8_t> stream, const QuantizedCloud& clean,
                                 const IntegerModel& model, double epsilon, std::uint64_t seed, int workers) {
  DecodeOptions opt;
  opt.workers = workers;
  opt.logit_epsilon = epsilon;
  opt.perturb_seed = seed;
  return decode(stream, model, opt).keys == clean.keys;
}

std::string digest_hex(std::span<const std::uint8_t> bytes) {
  const ModelHash h = content_hash(bytes);
  return to_hex(h);
}

}  // namespace spcc
