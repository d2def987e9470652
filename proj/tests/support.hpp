#pragma once

#include "spcc/calibration.hpp"
#include "spcc/harness.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

namespace spcc::test {

inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::int64_t uniform_int(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("spcc_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Small generated model pair shared by the network and codec tests. Depth 12
/// with t = 9: raw level 8, shallow levels 8 and 9, deep levels 10 and 11.
struct SmallModels {
  FloatModel fmodel;
  IntegerModel imodel;
  std::vector<QuantizedCloud> samples;
};

inline const SmallModels& small_models() {
  static const SmallModels m = [] {
    SmallModels s;
    ModelConfig cfg;
    cfg.depth = 12;
    cfg.channels = 8;
    cfg.t_offset = 3;
    s.samples = synth_set(11, 2, 4000, cfg.depth);
    s.fmodel = toy_float_model(cfg, 3, s.samples);
    s.imodel = calibrate(s.fmodel, s.samples);
    return s;
  }();
  return m;
}

template <typename Fn>
ErrorCode error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected spcc::Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace spcc::test
