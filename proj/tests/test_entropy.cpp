#include "spcc/entropy.hpp"
#include "spcc/fixed_point.hpp"
#include "support.hpp"

#include <cmath>

using namespace spcc;
using spcc::test::uniform_int;

namespace {

std::vector<std::int32_t> uniform_masses() {
  std::vector<std::int32_t> m(255, 257);
  m[0] = 258;
  return m;
}

/// Random mass row: a few heavy symbols over a floor of 1.
std::vector<std::int32_t> random_masses(std::mt19937_64& rng) {
  std::vector<std::uint64_t> w(255);
  for (auto& v : w) v = rng() % 4 == 0 ? rng() % 100000 : rng() % 50;
  w[rng() % 255] += 1;
  std::vector<std::int32_t> m(255);
  normalize_masses(w, m);
  return m;
}

std::vector<std::uint8_t> draw(std::mt19937_64& rng, const FixedCdf& cdf, std::size_t n) {
  std::vector<std::uint8_t> s(n);
  for (auto& v : s) v = static_cast<std::uint8_t>(cdf.lookup(static_cast<std::uint32_t>(rng() & 0xFFFF)));
  return s;
}

std::vector<std::uint8_t> decode_all(std::span<const std::uint8_t> bytes, const std::vector<FixedCdf>& cdfs) {
  return range_decode(bytes, cdfs.size(),
                      [&](std::size_t i, std::span<const std::uint8_t>) -> const FixedCdf& { return cdfs[i]; });
}

}  // namespace

TEST_SUITE("entropy") {
  TEST_CASE("cdf construction") {
    const FixedCdf u = cdf_from_fixed_probs(uniform_masses());
    CHECK(u.bounds[0] == 0);
    CHECK(u.bounds[255] == 65536);
    for (int s = 1; s <= 255; ++s) CHECK(u.bounds[static_cast<std::size_t>(s)] > u.bounds[static_cast<std::size_t>(s - 1)]);
    CHECK(u.lookup(0) == 1);
    CHECK(u.lookup(257) == 1);
    CHECK(u.lookup(258) == 2);
    CHECK(u.lookup(65535) == 255);

    std::vector<std::int32_t> peaked(255, 1);
    peaked[6] = 65536 - 254;
    const FixedCdf p = cdf_from_fixed_probs(peaked);
    CHECK(p.mass(7) == 65536 - 254);
    CHECK(p.start(7) == 6);

    std::vector<std::int32_t> zero = uniform_masses();
    zero[3] = 0;
    zero[4] += 257;
    CHECK(test::error_of([&] { cdf_from_fixed_probs(zero); }) == ErrorCode::InvalidMass);
    std::vector<std::int32_t> short_total = uniform_masses();
    short_total[0] -= 1;
    CHECK(test::error_of([&] { cdf_from_fixed_probs(short_total); }) == ErrorCode::InvalidMass);
    CHECK(test::error_of([] { cdf_from_fixed_probs(std::vector<std::int32_t>(254, 258)); }) == ErrorCode::InvalidMass);
  }

  TEST_CASE("empty and uniform streams") {
    CHECK(range_encode({}, {}).size() == 4);
    CHECK(range_decode(Bytes{}, 0, [](std::size_t, std::span<const std::uint8_t>) -> const FixedCdf& {
            throw std::logic_error("provider called");
          }).empty());

    std::mt19937_64 rng(1);
    const std::vector<FixedCdf> cdfs(1000, cdf_from_fixed_probs(uniform_masses()));
    std::vector<std::uint8_t> symbols(1000);
    for (auto& s : symbols) s = static_cast<std::uint8_t>(1 + rng() % 255);
    const Bytes bytes = range_encode(symbols, cdfs);
    const auto floor_bytes = static_cast<std::size_t>(std::ceil(1000 * std::log2(255.0) / 8));
    CHECK(bytes.size() >= floor_bytes);
    CHECK(bytes.size() <= floor_bytes + 8);
    CHECK(decode_all(bytes, cdfs) == symbols);
  }

  TEST_CASE("random streams round-trip near the ideal length") {
    std::mt19937_64 rng(2);
    for (int n = 0; n < 20; ++n) {
      std::vector<FixedCdf> tables;
      for (int t = 0; t < 8; ++t) tables.push_back(cdf_from_fixed_probs(random_masses(rng)));
      const std::size_t count = 1 + rng() % 5000;
      std::vector<FixedCdf> cdfs;
      std::vector<std::uint8_t> symbols;
      for (std::size_t i = 0; i < count; ++i) {
        cdfs.push_back(tables[rng() % tables.size()]);
        // mostly likely symbols with occasional floor-mass ones
        symbols.push_back(rng() % 50 == 0 ? static_cast<std::uint8_t>(1 + rng() % 255) : draw(rng, cdfs.back(), 1)[0]);
      }
      const Bytes bytes = range_encode(symbols, cdfs);
      REQUIRE(decode_all(bytes, cdfs) == symbols);
      double ideal = 0.0;
      for (std::size_t i = 0; i < count; ++i) ideal -= std::log2(cdfs[i].mass(symbols[i]) / 65536.0);
      CHECK(fixed_cross_entropy_bits(symbols, cdfs) == doctest::Approx(ideal).epsilon(1e-12));
      CHECK(8.0 * static_cast<double>(bytes.size()) <= 1.001 * ideal + 256);
    }
  }

  TEST_CASE("extreme skew survives long runs") {
    std::vector<std::int32_t> peaked(255, 1);
    peaked[254] = 65536 - 254;
    const FixedCdf hot = cdf_from_fixed_probs(peaked);
    std::vector<std::uint8_t> symbols(200000, 255);
    for (std::size_t i = 777; i < symbols.size(); i += 9973) symbols[i] = static_cast<std::uint8_t>(1 + i % 254);
    const std::vector<FixedCdf> cdfs(symbols.size(), hot);
    const Bytes bytes = range_encode(symbols, cdfs);
    CHECK(decode_all(bytes, cdfs) == symbols);
  }

  TEST_CASE("causal provider sees the decoded prefix") {
    std::mt19937_64 rng(3);
    std::vector<FixedCdf> tables;
    for (int t = 0; t < 255; ++t) tables.push_back(cdf_from_fixed_probs(random_masses(rng)));
    std::vector<std::uint8_t> symbols{17};
    std::vector<FixedCdf> cdfs{tables[0]};
    for (int i = 1; i < 3000; ++i) {
      cdfs.push_back(tables[symbols.back() - 1]);
      symbols.push_back(draw(rng, cdfs.back(), 1)[0]);
    }
    const Bytes bytes = range_encode(symbols, cdfs);
    const auto out = range_decode(bytes, symbols.size(),
                                  [&](std::size_t i, std::span<const std::uint8_t> prefix) -> const FixedCdf& {
                                    REQUIRE(prefix.size() == i);
                                    return i == 0 ? tables[0] : tables[prefix.back() - 1];
                                  });
    CHECK(out == symbols);
  }

  TEST_CASE("truncated payloads") {
    std::mt19937_64 rng(4);
    const std::vector<FixedCdf> cdfs(500, cdf_from_fixed_probs(uniform_masses()));
    const auto symbols = draw(rng, cdfs[0], 500);
    Bytes bytes = range_encode(symbols, cdfs);
    bytes.resize(bytes.size() / 2);
    CHECK(test::error_of([&] { decode_all(bytes, cdfs); }) == ErrorCode::TruncatedStream);
    RangeDecoder lenient(bytes, true);
    for (int i = 0; i < 500; ++i) lenient.decode(cdfs[0]);
    CHECK(lenient.position() > bytes.size());
    CHECK(test::error_of([&] { range_encode(std::vector<std::uint8_t>{0}, std::span(cdfs).first(1)); }) ==
          ErrorCode::InvalidOccupancy);
  }

  TEST_CASE("adaptive byte model") {
    std::mt19937_64 rng(5);
    AdaptiveFreqModel enc_model;
    RangeEncoder enc;
    std::vector<int> symbols;
    for (int i = 0; i < 20000; ++i) symbols.push_back(rng() % 4 ? static_cast<int>(rng() % 8) : static_cast<int>(rng() % 256));
    for (int s : symbols) enc_model.encode(enc, s);
    CHECK(enc_model.total() <= AdaptiveFreqModel::kRescaleThreshold);
    std::uint32_t sum = 0;
    for (auto c : enc_model.counts()) {
      CHECK(c >= 1);
      sum += c;
    }
    CHECK(sum == enc_model.total());
    const Bytes bytes = enc.finish();
    AdaptiveFreqModel dec_model;
    RangeDecoder dec(bytes);
    for (int s : symbols) REQUIRE(dec_model.decode(dec) == s);
    CHECK(test::error_of([&] { enc_model.encode(enc, 256); }) == ErrorCode::OutOfRange);
  }

  TEST_CASE("raw coordinate payloads") {
    std::mt19937_64 rng(6);
    for (int bits = 1; bits <= kMaxDepth; ++bits) {
      KeyList keys;
      const std::int64_t top = (std::int64_t{1} << bits) - 1;
      for (int i = 0; i < 300; ++i)
        keys.push_back(morton_encode(static_cast<std::uint32_t>(uniform_int(rng, 0, top)),
                                     static_cast<std::uint32_t>(uniform_int(rng, 0, top)),
                                     static_cast<std::uint32_t>(uniform_int(rng, 0, top))));
      keys.push_back(morton_encode(static_cast<std::uint32_t>(top), 0, static_cast<std::uint32_t>(top)));
      CHECK(decode_raw_coords(encode_raw_coords(keys, bits), keys.size(), bits) == keys);
    }
    const KeyList one{morton_encode(5, 9, 200)};
    CHECK(decode_raw_coords(encode_raw_coords(one, 8), 1, 8) == one);
    CHECK(test::error_of([&] { encode_raw_coords(one, 7); }) == ErrorCode::OutOfRange);
    CHECK(test::error_of([&] { encode_raw_coords(one, 0); }) == ErrorCode::InvalidArgument);
  }
}
