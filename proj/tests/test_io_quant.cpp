#include "spcc/io_quant.hpp"
#include "support.hpp"

#include <cstring>
#include <fstream>

using namespace spcc;

namespace {

void write_raw(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string le_floats(std::initializer_list<float> vals) {
  std::string s;
  for (float v : vals) {
    char b[4];
    std::memcpy(b, &v, 4);
    s.append(b, 4);
  }
  return s;
}

QuantTransform bbox(int depth) {
  QuantTransform t;
  t.precision = depth;
  return t;
}

}  // namespace

TEST_SUITE("io_quant") {
  TEST_CASE("bounding-box quantization examples") {
    const QuantizedCloud q = quantize_points({{Point3(0, 0, 0)}}, bbox(16));
    REQUIRE(q.size() == 1);
    CHECK(q.coords()[0] == Coord(32768, 32768, 32768));

    for (int depth : {1, 7, 16, 21}) {
      const QuantizedCloud lo = quantize_points({{Point3(-200, -200, -200)}}, bbox(depth));
      CHECK(lo.coords()[0] == Coord(0, 0, 0));
      const QuantizedCloud hi = quantize_points({{Point3(200, 200, 200)}}, bbox(depth));
      const int top = (1 << depth) - 1;
      CHECK(hi.coords()[0] == Coord(top, top, top));
      CHECK(hi.clipped == 0);
    }
    const QuantizedCloud out = quantize_points({{Point3(250, 0, 0), Point3(1, 1, 1)}}, bbox(10));
    CHECK(out.clipped == 1);
    CHECK(out.size() == 2);

    CHECK(quantize_points({{Point3(1, 2, 3), Point3(1, 2, 3)}}, bbox(12)).size() == 1);
  }

  TEST_CASE("scale quantization and its inverse") {
    QuantTransform t;
    t.mode = QuantMode::ScalePosQ;
    t.scale = 10000.0;
    t.precision = 0;
    const QuantizedCloud q = quantize_points({{Point3(0.0001, 0, 0), Point3(0, 0, 0)}}, t);
    REQUIRE(q.size() == 2);
    CHECK(q.coords()[0] == Coord(0, 0, 0));
    CHECK(q.coords()[1] == Coord(1, 0, 0));
    CHECK(q.transform.offset == Coord(0, 0, 0));
    const RawCloud back = dequantize_points(q);
    CHECK(back.points[0] == Point3(0, 0, 0));
    CHECK(back.points[1].x() == doctest::Approx(0.0001).epsilon(1e-12));

    // offset shifts the minimum to zero
    t.scale = 1.0;
    const QuantizedCloud shifted = quantize_points({{Point3(-3.5, 2, 0), Point3(1, -1, 4)}}, t);
    CHECK(shifted.transform.offset == Coord(4, 1, 0));
    CoordList c = shifted.coords();
    CHECK(std::find(c.begin(), c.end(), Coord(0, 3, 0)) != c.end());
    CHECK(std::find(c.begin(), c.end(), Coord(5, 0, 4)) != c.end());

    t.precision = 2;
    CHECK(test::error_of([&] { quantize_points({{Point3(0, 0, 0), Point3(9, 0, 0)}}, t); }) ==
          ErrorCode::CoordinateOverflow);
    t.scale = 0.0;
    CHECK(test::error_of([&] { quantize_points({{Point3(0, 0, 0)}}, t); }) == ErrorCode::InvalidArgument);
    CHECK(test::error_of([] { quantize_points({}, bbox(4)); }) == ErrorCode::EmptyCloud);
  }

  TEST_CASE("lattice projection is idempotent") {
    const RawCloud raw = synth_scan(3, 3000);
    for (int depth : {8, 12, 16}) {
      const QuantizedCloud q = quantize_points(raw, bbox(depth));
      CHECK(quantize_points(dequantize_points(q), bbox(depth)).keys == q.keys);
    }
    QuantTransform s;
    s.mode = QuantMode::ScalePosQ;
    s.scale = 64.0;
    s.precision = 0;
    const QuantizedCloud q = quantize_points(raw, s);
    const QuantizedCloud again = quantize_points(dequantize_points(q), s);
    CHECK(again.keys == q.keys);
    CHECK(again.transform == q.transform);
  }

  TEST_CASE("KITTI binary parsing") {
    test::TempDir dir("io");
    write_raw(dir / "one.bin", le_floats({1.0f, 2.0f, 3.0f, 0.5f}));
    const RawCloud one = load_points(dir / "one.bin");
    REQUIRE(one.points.size() == 1);
    CHECK(one.points[0] == Point3(1, 2, 3));

    write_raw(dir / "empty.bin", "");
    CHECK(test::error_of([&] { load_points(dir / "empty.bin"); }) == ErrorCode::TruncatedInput);
    write_raw(dir / "short.bin", le_floats({1.0f, 2.0f, 3.0f}));
    CHECK(test::error_of([&] { load_points(dir / "short.bin"); }) == ErrorCode::TruncatedInput);
    CHECK(test::error_of([&] { load_points(dir / "cloud.xyz"); }) == ErrorCode::UnknownFormat);
    CHECK(test::error_of([&] { load_points(dir / "missing.bin"); }) == ErrorCode::IoFailure);
  }

  TEST_CASE("PLY parsing") {
    test::TempDir dir("ply");
    write_raw(dir / "a.ply",
              "ply\nformat ascii 1.0\ncomment x\nelement vertex 2\nproperty float x\nproperty float y\n"
              "property float z\nproperty uchar intensity\nend_header\n1 2 3 9\n-4.5 5 6.25 0\n");
    const RawCloud a = load_points(dir / "a.ply");
    REQUIRE(a.points.size() == 2);
    CHECK(a.points[1] == Point3(-4.5, 5, 6.25));

    write_raw(dir / "b.ply",
              "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float y\nproperty float x\n"
              "property float z\nend_header\n" +
                  le_floats({7.0f, 8.0f, 9.0f}));
    CHECK(load_points(dir / "b.ply").points == PointList{Point3(8, 7, 9)});

    write_raw(dir / "bad.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n");
    CHECK(test::error_of([&] { load_points(dir / "bad.ply"); }) == ErrorCode::MalformedHeader);
    write_raw(dir / "noxyz.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n");
    CHECK(test::error_of([&] { load_points(dir / "noxyz.ply"); }) == ErrorCode::MalformedHeader);
    write_raw(dir / "trunc.ply",
              "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
              "end_header\n1 2 3\n");
    CHECK(test::error_of([&] { load_points(dir / "trunc.ply"); }) == ErrorCode::TruncatedInput);
  }

  TEST_CASE("binary formats round-trip exactly") {
    test::TempDir dir("rt");
    RawCloud c;
    std::mt19937_64 rng(2);
    for (int i = 0; i < 500; ++i)
      c.points.emplace_back(static_cast<float>(test::unit(rng) * 100 - 50), static_cast<float>(test::unit(rng) * 7),
                            static_cast<float>(-test::unit(rng)));
    for (const char* name : {"c.bin", "c.ply"}) {
      save_points(c, dir / name);
      CHECK(load_points(dir / name).points == c.points);
    }
    CHECK(std::filesystem::file_size(dir / "c.bin") == 16 * c.points.size());
    save_points(c, dir / "ascii.ply", PointFormat::PlyAscii);
    CHECK(load_points(dir / "ascii.ply").points == c.points);

    save_points({}, dir / "empty.ply");
    CHECK(load_points(dir / "empty.ply").points.empty());
  }
}
