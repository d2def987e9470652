#pragma once

#include "spcc/codec.hpp"
#include "spcc/io_quant.hpp"
#include "spcc/model.hpp"
#include "spcc/octree.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>

namespace spcc {

enum class SceneKind { GroundBoxes, Sphere };

/// Pseudo-LiDAR sweep from the origin over a 64-row elevation grid. Every ray
/// returns exactly one point (the ground-and-boxes scene is enclosed by far
/// walls and a ceiling). Same seed, same cloud.
RawCloud synth_scan(std::uint64_t seed, int rays, SceneKind scene = SceneKind::GroundBoxes);

/// synth_scan quantized under BboxNorm at `depth`.
QuantizedCloud synth_quantized(std::uint64_t seed, int rays, int depth, SceneKind scene = SceneKind::GroundBoxes);

/// Configuration of the generated test models. With the default l_min = 8 a
/// depth-10 tree would have no shallow level under t = L - 4, so depth 10 uses
/// t = L - 2.
ModelConfig toy_config(int depth, int channels = 32);

/// Generated weights with the predictor readout fitted on `fit_samples`.
FloatModel toy_float_model(const ModelConfig& config, std::uint64_t seed,
                           const std::vector<QuantizedCloud>& fit_samples, int workers = 1);

/// `count` synthetic scans with seeds base_seed, base_seed + 1, ...
std::vector<QuantizedCloud> synth_set(std::uint64_t base_seed, int count, int rays, int depth);

void write_hrcs_csv(std::ostream& os, const HrcsStats& stats);

struct PerturbationReport {
  bool lossless = false;
  bool aborted = false;
  /// Depth of the nodes whose codes first decoded wrongly.
  std::optional<int> first_divergence;
  /// Wrong or missing symbols over all coded symbols of the true tree.
  double corrupted_fraction = 0.0;
  /// D1 PSNR (lattice units, peak 2^L - 1) of the deepest decoded level
  /// against the original.
  double d1_psnr = 0.0;
  std::size_t decoded_points = 0;
};

/// Encodes with the float model, then decodes with +-epsilon logit noise.
PerturbationReport perturbation_experiment(const QuantizedCloud& cloud, const FloatModel& model, double epsilon,
                                           std::uint64_t seed, int workers = 1);
/// Decode half of the experiment on an existing float-path stream of `cloud`.
PerturbationReport perturbed_decode(std::span<const std::uint8_t> stream, const QuantizedCloud& cloud,
                                    const FloatModel& model, double epsilon, std::uint64_t seed, int workers = 1);

/// Integer path with the same injection settings: true when the perturbed
/// decode reproduces the clean decode and the original cloud.
bool integer_injection_invariant(const QuantizedCloud& cloud, const IntegerModel& model, double epsilon,
                                 std::uint64_t seed, int workers = 1);
/// Same check on an existing integer stream whose clean decode is `clean`.
bool integer_injection_invariant(std::span<const std::uint8_t> stream, const QuantizedCloud& clean,
                                 const IntegerModel& model, double epsilon, std::uint64_t seed, int workers = 1);

/// Hex digest (SHA-256 prefix) of a byte string.
std::string digest_hex(std::span<const std::uint8_t> bytes);

}  // namespace spcc
