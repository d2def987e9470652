#include "spcc/codec.hpp"
#include "spcc/network.hpp"
#include "support.hpp"

#include <cmath>
#include <set>

using namespace spcc;

namespace {

/// Small model with every predictor output layer zeroed.
FloatModel zero_readout(FloatModel m) {
  for (int d = m.config.raw_level(); d < m.config.depth; ++d) {
    m.at(layer_names::level_prefix(d) + ".pred.lin2.w").setZero();
    m.at(layer_names::level_prefix(d) + ".pred.lin2.b").setZero();
  }
  return m;
}

QuantizedCloud scan12(std::uint64_t seed, int rays) { return synth_quantized(seed, rays, 12); }

}  // namespace

TEST_SUITE("network_codec") {
  TEST_CASE("zero readout gives uniform distributions") {
    const auto& s = test::small_models();
    const FloatModel fz = zero_readout(s.fmodel);
    const IntegerModel iz = calibrate(fz, s.samples);
    const OctreeLevels tree = build_octree(scan12(41, 3000));
    for (const MatrixD& rows : float_forward(fz, tree)) CHECK((rows.array() - 1.0 / 255).abs().maxCoeff() <= 1e-12);
    for (const MatrixI& rows : int_forward(iz, tree)) {
      CHECK((rows.col(0).array() == 258).all());
      CHECK((rows.rightCols(254).array() == 257).all());
    }
    const CodeList& truth = tree.codes_of(9);
    CHECK(estimate_bitrate(float_forward(fz, tree)[1], truth) ==
          doctest::Approx(truth.size() * std::log2(255.0)).epsilon(1e-9));
  }

  TEST_CASE("forward passes are normalized and repeatable") {
    const auto& s = test::small_models();
    const OctreeLevels tree = build_octree(scan12(42, 5000));
    const auto f = float_forward(s.fmodel, tree);
    const auto q = int_forward(s.imodel, tree);
    REQUIRE(f.size() == 4);
    REQUIRE(q.size() == 4);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const int d = s.fmodel.config.raw_level() + static_cast<int>(i);
      CHECK(static_cast<std::size_t>(f[i].rows()) == tree.node_count(d));
      CHECK((f[i].rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-6);
      CHECK((q[i].rowwise().sum().array() == kProbTotal).all());
      CHECK(q[i].minCoeff() >= 1);
    }
    CHECK(int_forward(s.imodel, tree) == q);
    CHECK(int_forward(s.imodel, tree, 3) == q);
    CHECK(test::error_of([&] { float_forward(s.fmodel, build_octree(synth_quantized(1, 500, 11))); }) ==
          ErrorCode::ConfigMismatch);
  }

  TEST_CASE("bitrate estimates") {
    MatrixD one_hot = MatrixD::Zero(3, 255);
    one_hot(0, 4) = one_hot(1, 0) = one_hot(2, 254) = 1.0;
    CHECK(estimate_bitrate(one_hot, CodeList{5, 1, 255}) == 0.0);
    CHECK(test::error_of([&] { estimate_bitrate(one_hot, CodeList{6, 1, 255}); }) == ErrorCode::ProbabilityUnderflow);

    const MatrixI masses = probabilities_to_masses(MatrixD::Constant(4, 255, 1.0 / 255));
    CHECK((masses.rowwise().sum().array() == kProbTotal).all());
    const CodeList truth{1, 2, 200, 255};
    double want = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      want -= std::log2(masses(static_cast<Eigen::Index>(i), truth[i] - 1) / 65536.0);
    CHECK(estimate_bitrate(masses, truth) == doctest::Approx(want).epsilon(1e-12));
    CHECK(bpp(500, 1000) == 4.0);
  }

  TEST_CASE("predictions only read causal context") {
    const auto& s = test::small_models();
    const QuantizedCloud cloud = scan12(43, 3000);
    CausalityTrace trace;
    encode(cloud, s.imodel, {.trace = &trace});
    REQUIRE_FALSE(trace.empty());
    std::set<int> levels;
    for (const auto& e : trace) {
      levels.insert(e.coding_level);
      if (e.kind == TraceEvent::Kind::Keys)
        CHECK(e.level <= e.coding_level);
      else
        CHECK(e.level < e.coding_level);
    }
    CHECK(levels == std::set<int>{8, 9, 10, 11});
    CausalityTrace decode_trace;
    decode(encode(cloud, s.imodel), s.imodel, {.trace = &decode_trace});
    CHECK(decode_trace == trace);

    const OctreeLevels tree = build_octree(cloud);
    TreeView view(tree);
    view.set_frontier(9);
    CHECK(view.keys(9)->size() == tree.node_count(9));
    CHECK(test::error_of([&] { view.keys(10); }) == ErrorCode::CausalityViolation);
    CHECK(test::error_of([&] { view.codes_of(9); }) == ErrorCode::CausalityViolation);
    CHECK(view.codes_of(8) == tree.codes_of(8));
  }

  TEST_CASE("levels are labelled by regime") {
    const auto& s = test::small_models();
    std::vector<LevelStat> stats;
    const QuantizedCloud cloud = scan12(44, 4000);
    const OctreeLevels tree = build_octree(cloud);
    const Bytes stream = encode(cloud, s.imodel, {.level_stats = &stats});
    REQUIRE(stats.size() == 5);
    CHECK(stats[0].regime == Regime::Raw);
    CHECK(stats[0].level == 8);
    const Regime want[] = {Regime::Shallow, Regime::Shallow, Regime::Deep, Regime::Deep};
    std::size_t payload = 0;
    for (std::size_t i = 1; i < stats.size(); ++i) {
      CHECK(stats[i].level == 7 + static_cast<int>(i));
      CHECK(stats[i].regime == want[i - 1]);
      CHECK(stats[i].nodes == tree.node_count(stats[i].level));
      CHECK(8.0 * static_cast<double>(stats[i].payload_bytes) <= 1.001 * stats[i].estimated_bits + 256);
      payload += stats[i].payload_bytes;
    }
    CHECK(payload + stats[0].payload_bytes < stream.size());
  }

  TEST_CASE("streams round-trip on both paths") {
    const auto& s = test::small_models();
    for (std::uint64_t seed : {45, 46}) {
      const QuantizedCloud cloud = scan12(seed, 6000);
      const Bytes qs = encode(cloud, s.imodel);
      const QuantizedCloud qd = decode(qs, s.imodel);
      CHECK(qd.keys == cloud.keys);
      CHECK(qd.transform == cloud.transform);
      CHECK(decode(encode(cloud, s.fmodel), s.fmodel).keys == cloud.keys);
    }
    QuantTransform t;
    t.precision = 12;
    const QuantizedCloud single = make_quantized(CoordList{Coord(100, 2000, 4095)}, t);
    const Bytes one = encode(single, s.imodel);
    CHECK(decode(one, s.imodel).keys == single.keys);
    CHECK(one.size() < 120);
  }

  TEST_CASE("integer streams do not depend on the worker count") {
    const auto& s = test::small_models();
    const QuantizedCloud cloud = scan12(47, 30000);
    const Bytes a = encode(cloud, s.imodel, {.workers = 1});
    CHECK(encode(cloud, s.imodel, {.workers = 1}) == a);
    CHECK(encode(cloud, s.imodel, {.workers = 3}) == a);
    CHECK(decode(a, s.imodel, {.workers = 4}).keys == cloud.keys);
  }

  TEST_CASE("headers") {
    BitstreamHeader h;
    h.depth = 12;
    h.l_min = 8;
    h.decision_level = 9;
    h.float_path = true;
    h.transform.mode = QuantMode::ScalePosQ;
    h.transform.scale = 64.0;
    h.transform.offset = Coord(3, 0, 9);
    h.transform.precision = 12;
    h.model_hash = {1, 2, 3, 4, 5, 6, 7, 8};
    h.node_counts = {10, 20, 30, 40, 50};
    h.payload_lengths = {1, 2, 3, 4, 5};
    const Bytes bytes = write_header(h);
    std::size_t used = 0;
    CHECK(read_header(bytes, &used) == h);
    CHECK(used == bytes.size());

    Bytes magic = bytes;
    magic[0] = 'Q';
    CHECK(test::error_of([&] { read_header(magic); }) == ErrorCode::BadMagic);
    Bytes future = bytes;
    future[4] = 2;
    CHECK(test::error_of([&] { read_header(future); }) == ErrorCode::UnsupportedVersion);
    CHECK(test::error_of([&] { read_header(std::span(bytes).first(bytes.size() - 1)); }) == ErrorCode::TruncatedStream);
    h.node_counts.pop_back();
    CHECK(test::error_of([&] { write_header(h); }) == ErrorCode::MalformedHeader);
  }

  TEST_CASE("mismatched models and configurations are rejected") {
    const auto& s = test::small_models();
    const QuantizedCloud cloud = scan12(48, 3000);
    const Bytes stream = encode(cloud, s.imodel);
    IntegerModel other = calibrate(s.fmodel, {s.samples[0]});
    REQUIRE(other.hash != s.imodel.hash);
    CHECK(test::error_of([&] { decode(stream, other); }) == ErrorCode::ModelMismatch);
    CHECK(test::error_of([&] { decode(stream, s.fmodel); }) == ErrorCode::ModelMismatch);
    CHECK(test::error_of([&] { encode(synth_quantized(1, 500, 11), s.imodel); }) == ErrorCode::ConfigMismatch);
    CHECK(test::error_of([&] { encode(QuantizedCloud{.keys = {}, .transform = cloud.transform}, s.imodel); }) ==
          ErrorCode::EmptyCloud);
  }

  TEST_CASE("damaged streams raise errors instead of crashing") {
    const auto& s = test::small_models();
    const QuantizedCloud cloud = scan12(49, 3000);
    const Bytes stream = encode(cloud, s.imodel);
    CHECK(test::error_of([&] { decode(std::span(stream).first(stream.size() - 1), s.imodel); }) ==
          ErrorCode::CorruptStream);
    Bytes longer = stream;
    longer.push_back(0);
    CHECK(test::error_of([&] { decode(longer, s.imodel); }) == ErrorCode::CorruptStream);

    std::mt19937_64 rng(50);
    int raised = 0, wrong = 0;
    for (int n = 0; n < 60; ++n) {
      Bytes bad = stream;
      bad[rng() % bad.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
      try {
        if (decode(bad, s.imodel).keys != cloud.keys) ++wrong;
      } catch (const Error&) {
        ++raised;
      }
    }
    MESSAGE("bit flips: ", raised, " raised, ", wrong, " decoded to different geometry");
    CHECK(raised > 0);
    for (std::size_t cut = 0; cut < stream.size(); cut += 7)
      CHECK_THROWS_AS(decode(std::span(stream).first(cut), s.imodel), Error);
  }

  TEST_CASE("clouds shallower than the raw level are coded raw") {
    ModelConfig cfg;
    cfg.depth = 6;
    cfg.t_offset = 0;
    cfg.channels = 4;
    const auto samples = synth_set(60, 1, 2000, 6);
    const FloatModel f = generate_float_model(cfg, {.seed = 2});
    const IntegerModel q = calibrate(f, samples);
    std::vector<LevelStat> stats;
    const Bytes stream = encode(samples[0], q, {.level_stats = &stats});
    REQUIRE(stats.size() == 1);
    CHECK(stats[0].regime == Regime::Raw);
    CHECK(decode(stream, q).keys == samples[0].keys);
    CHECK(decode(encode(samples[0], f), f).keys == samples[0].keys);
  }
}
