#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace spcc {

/// Error classes surfaced by the library. The CLI maps these onto exit codes.
enum class ErrorCode {
  TruncatedInput,
  MalformedHeader,
  UnknownFormat,
  EmptyCloud,
  CoordinateOverflow,
  IoFailure,
  InvalidOccupancy,
  CorruptTree,
  UnsortedCoords,
  ShapeMismatch,
  MisalignedMaps,
  NumericalFault,
  ProbabilityUnderflow,
  AccumulatorRisk,
  ContractViolation,
  CalibrationOverflow,
  MissingStats,
  InvalidMass,
  TruncatedStream,
  OutOfRange,
  BadMagic,
  UnsupportedVersion,
  ModelMismatch,
  ConfigMismatch,
  CorruptStream,
  CausalityViolation,
  NoOverlap,
  Insufficient,
  InvalidArgument,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const char* what) {
  if (!cond) [[unlikely]] fail(code, what);
}
inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) [[unlikely]] fail(code, what);
}

using Coord = Eigen::Vector3i;
using CoordList = std::vector<Coord>;
using Point3 = Eigen::Vector3d;
using PointList = std::vector<Point3>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixF = RowMatrix<float>;
using MatrixD = RowMatrix<double>;
using MatrixI = RowMatrix<std::int32_t>;

/// Number of distinct non-empty occupancy codes.
inline constexpr int kNumSymbols = 255;

/// Round-half-to-even of a real value. Assumes the default FE_TONEAREST mode.
double round_half_even(double x);

/// Round-half-to-even of num / 2^shift on a signed 64-bit value (arithmetic shift).
std::int64_t shift_round_half_even(std::int64_t num, int shift);

}  // namespace spcc
