#include "spcc/calibration.hpp"
#include "spcc/network.hpp"
#include "support.hpp"

#include <cmath>

using namespace spcc;

namespace {

/// Replaces the trailing content hash after editing the body of a model file.
Bytes rehash(Bytes bytes) {
  bytes.resize(bytes.size() - 8);
  const ModelHash h = content_hash(bytes);
  bytes.insert(bytes.end(), h.begin(), h.end());
  return bytes;
}

/// Raw per-site min/max seen by an observer over full forward passes.
std::map<std::string, std::pair<double, double>> observed_ranges(const FloatModel& model,
                                                                 const std::vector<QuantizedCloud>& samples) {
  std::map<std::string, std::pair<double, double>> seen;
  for (const auto& s : samples) {
    const OctreeLevels tree = build_octree(s);
    FloatOps ops(model);
    ops.set_observer([&](const std::string& site, const MatrixF& v) {
      if (v.size() == 0) return;
      auto [it, fresh] = seen.emplace(site, std::pair<double, double>{v.minCoeff(), v.maxCoeff()});
      if (!fresh) {
        it->second.first = std::min<double>(it->second.first, v.minCoeff());
        it->second.second = std::max<double>(it->second.second, v.maxCoeff());
      }
    });
    TreeView view(tree);
    Propagator<FloatOps> prop(model.config, ops, view);
    for (int d = model.config.raw_level(); d < model.config.depth; ++d) prop.step(d);
  }
  return seen;
}

}  // namespace

TEST_SUITE("model_calibration") {
  TEST_CASE("configuration validation") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.decision_level() == 8);
    CHECK(cfg.raw_level() == 8);
    CHECK_FALSE(cfg.is_deep(8));
    CHECK(cfg.is_deep(9));
    cfg.channels = 0;
    CHECK(test::error_of([&] { cfg.validate(); }) == ErrorCode::ConfigMismatch);
    cfg = {};
    cfg.t_offset = 5;
    CHECK(test::error_of([&] { cfg.validate(); }) == ErrorCode::ConfigMismatch);
    cfg = {};
    cfg.depth = 6;
    cfg.t_offset = 0;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.raw_level() == 6);
  }

  TEST_CASE("generated weights are seeded") {
    const ModelConfig cfg = test::small_models().fmodel.config;
    const FloatModel a = generate_float_model(cfg, {.seed = 5});
    const FloatModel b = generate_float_model(cfg, {.seed = 5});
    const FloatModel c = generate_float_model(cfg, {.seed = 6});
    CHECK(serialize_float_model(a) == serialize_float_model(b));
    CHECK(serialize_float_model(a) != serialize_float_model(c));
    for (int d = cfg.raw_level(); d < cfg.depth; ++d) {
      const std::string p = layer_names::level_prefix(d);
      CHECK(a.at(p + ".pred.lin2.w").cols() == kNumSymbols);
      CHECK(a.at(p + ".pred.lin2.b").cols() == kNumSymbols);
    }
    CHECK(test::error_of([&] { a.at("nope"); }) == ErrorCode::ShapeMismatch);
  }

  TEST_CASE("float model files") {
    const FloatModel& m = test::small_models().fmodel;
    const Bytes bytes = serialize_float_model(m);
    const FloatModel back = parse_float_model(bytes);
    CHECK(back.config == m.config);
    CHECK(back.tensors == m.tensors);
    CHECK(float_model_hash(back) == float_model_hash(m));

    Bytes flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK(test::error_of([&] { parse_float_model(flipped); }) == ErrorCode::CorruptStream);
    CHECK(test::error_of([&] { parse_float_model(std::span(bytes).first(bytes.size() - 3)); }) == ErrorCode::CorruptStream);
    CHECK(test::error_of([&] { parse_float_model(std::span(bytes).first(6)); }) == ErrorCode::TruncatedInput);
    Bytes magic = bytes;
    magic[0] = 'X';
    CHECK(test::error_of([&] { parse_float_model(rehash(magic)); }) == ErrorCode::BadMagic);
    Bytes version = bytes;
    version[4] = 99;
    CHECK(test::error_of([&] { parse_float_model(rehash(version)); }) == ErrorCode::UnsupportedVersion);

    test::TempDir dir("model");
    write_float_model(m, dir / "m.pcwf");
    CHECK(peek_magic(dir / "m.pcwf") == "PCWF");
    CHECK(read_float_model(dir / "m.pcwf").tensors == m.tensors);
    CHECK(test::error_of([&] { read_float_model(dir / "absent"); }) == ErrorCode::IoFailure);
  }

  TEST_CASE("integer model files") {
    const IntegerModel& m = test::small_models().imodel;
    const Bytes bytes = serialize_integer_model(m);
    CHECK(std::equal(m.hash.begin(), m.hash.end(), bytes.end() - 8));
    const IntegerModel back = parse_integer_model(bytes);
    CHECK(back.config == m.config);
    CHECK(back.layers == m.layers);
    CHECK(back.lut == m.lut);
    CHECK(back.hash == m.hash);

    Bytes flipped = bytes;
    flipped[bytes.size() / 3] ^= 0x01;
    CHECK(test::error_of([&] { parse_integer_model(flipped); }) == ErrorCode::CorruptStream);
    Bytes magic = bytes;
    magic[3] = 'F';
    CHECK(test::error_of([&] { parse_integer_model(rehash(magic)); }) == ErrorCode::BadMagic);
    Bytes lut = bytes;
    lut[lut.size() - 9] = 0x7f;  // top byte of the last Q24 table entry
    CHECK(test::error_of([&] { parse_integer_model(rehash(lut)); }) == ErrorCode::MalformedHeader);

    test::TempDir dir("imodel");
    write_integer_model(m, dir / "m.pcwq");
    CHECK(peek_magic(dir / "m.pcwq") == "PCWQ");
    CHECK(read_integer_model(dir / "m.pcwq").hash == m.hash);
  }

  TEST_CASE("quantization parameters") {
    const QuantParams sym = derive_qparams(-1.0, 1.0, true);
    CHECK(sym.scale == doctest::Approx(1.0 / 127));
    CHECK(sym.zero_point == 0);
    CHECK(derive_qparams(-2.0, 1.0, true).scale == doctest::Approx(2.0 / 127));

    // asymmetric grids map lo to -128 and real zero onto an integer
    const QuantParams pos = derive_qparams(0.0, 127.5, false);
    CHECK(pos.scale == doctest::Approx(0.5));
    CHECK(pos.zero_point == -128);
    const QuantParams mid = derive_qparams(-1.28, 1.27, false);
    CHECK(mid.scale == doctest::Approx(0.01));
    CHECK(mid.zero_point == 0);
    const QuantParams away = derive_qparams(0.5, 2.55, false);
    CHECK(away.scale == doctest::Approx(0.01));
    CHECK(away.zero_point == -128);
    for (const auto& p : {pos, mid, away}) CHECK(dequantize_tensor(MatrixI::Constant(1, 1, p.zero_point), p)(0, 0) == 0.0);

    const QuantParams flat = derive_qparams(0.0, 0.0, false);
    CHECK(flat.scale > 0.0);
    CHECK(derive_qparams(0.0, 0.0, true).scale == doctest::Approx(kRangeFloor / 127));
    CHECK(test::error_of([] { derive_qparams(1.0, 0.0, false); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("requantization multipliers") {
    CHECK(derive_requant(1.0, 1.0, 1.0) == RequantParams{1 << 30, 30, 0});
    CHECK(derive_requant(0.5, 1.0, 1.0) == RequantParams{1 << 30, 31, 0});
    CHECK(derive_requant(0.25, 1.0, 1.0, 7).zero_point == 7);

    std::mt19937_64 rng(7);
    for (int n = 0; n < 100000; ++n) {
      const double ratio = std::exp((test::unit(rng) - 0.5) * 40.0);
      const RequantParams p = derive_requant(ratio, 1.0, 1.0);
      REQUIRE(p.multiplier >= (std::int64_t{1} << 30));
      REQUIRE(p.multiplier < (std::int64_t{1} << 31));
      REQUIRE(std::abs(std::ldexp(static_cast<double>(p.multiplier), -p.shift) - ratio) <= ratio * std::ldexp(1.0, -31));
    }
    CHECK(test::error_of([] { derive_requant(std::ldexp(1.0, 40), 1.0, 1.0); }) == ErrorCode::CalibrationOverflow);
    CHECK(test::error_of([] { derive_requant(1e-25, 1.0, 1.0); }) == ErrorCode::CalibrationOverflow);
    CHECK(test::error_of([] { derive_requant(0.0, 1.0, 1.0); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("activation statistics are running min and max") {
    const auto& s = test::small_models();
    const ActivationStats stats = collect_activation_stats(s.fmodel, s.samples);
    const auto seen = observed_ranges(s.fmodel, s.samples);
    REQUIRE(stats.size() == seen.size());
    for (const auto& [site, range] : seen) {
      const ActivationRange& r = stats.at(site);
      if (r.symmetric) {
        const double m = std::max(std::abs(range.first), std::abs(range.second));
        CHECK(r.hi == doctest::Approx(m).epsilon(1e-12));
        CHECK(r.lo == -r.hi);
      } else {
        CHECK(r.lo == range.first);
        CHECK(r.hi == range.second);
      }
    }

    const ActivationStats one = collect_activation_stats(s.fmodel, {s.samples[0]});
    const ActivationStats two = collect_activation_stats(s.fmodel, {s.samples[1]});
    ActivationStats merged = one;
    merge_stats(merged, two);
    for (const auto& [site, r] : stats) {
      CHECK(merged.at(site).lo == r.lo);
      CHECK(merged.at(site).hi == r.hi);
      CHECK(one.at(site).lo >= r.lo);
      CHECK(one.at(site).hi <= r.hi);
    }
  }

  TEST_CASE("weights quantize within half a step") {
    const auto& s = test::small_models();
    std::size_t linear = 0;
    for (const auto& [name, layer] : s.imodel.layers) {
      if (layer.kind != LayerKind::Linear) continue;
      ++linear;
      const MatrixF& w = s.fmodel.at(name + ".w");
      const double step = w.cwiseAbs().maxCoeff() / 127.0;
      CHECK(layer.weights.cwiseAbs().maxCoeff() <= 127);
      CHECK((w.cast<double>() - layer.weights.cast<double>() * step).cwiseAbs().maxCoeff() <= step / 2 + 1e-9);
    }
    CHECK(linear > 0);
  }

  TEST_CASE("quantizing zero weights") {
    const auto& s = test::small_models();
    FloatModel m = s.fmodel;
    const std::string site = layer_names::level_prefix(10) + ".pred.lin2";
    m.at(site + ".w").setZero();
    m.at(site + ".b").setConstant(0.001f);
    const IntegerModel q = calibrate(m, s.samples);
    const IntLayer& layer = q.at(site);
    CHECK(layer.weights.cwiseAbs().maxCoeff() == 0);
    const double bias_scale = layer.input.scale * derive_qparams(0.0, 0.0, true).scale;
    for (Eigen::Index c = 0; c < layer.bias.cols(); ++c)
      CHECK(layer.bias[c] == static_cast<std::int32_t>(round_half_even(static_cast<double>(0.001f) / bias_scale)));
  }

  TEST_CASE("calibration is deterministic and complete") {
    const auto& s = test::small_models();
    CHECK(serialize_integer_model(calibrate(s.fmodel, s.samples)) == serialize_integer_model(s.imodel));
    CHECK(test::error_of([&] { quantize_model(s.fmodel, {}); }) == ErrorCode::MissingStats);
    CHECK(test::error_of([&] { calibrate(s.fmodel, {}); }) == ErrorCode::InvalidArgument);
    CHECK(test::error_of([&] { calibrate(s.fmodel, synth_set(1, 1, 500, 10)); }) == ErrorCode::ConfigMismatch);

    FloatModel negative = s.fmodel;
    negative.at(layer_names::level_prefix(9) + ".pred.act").setConstant(-0.5f);
    CHECK(test::error_of([&] { calibrate(negative, s.samples); }) == ErrorCode::ContractViolation);
  }
}
