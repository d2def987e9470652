#include "spcc/common.hpp"

#include <cmath>

namespace spcc {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::TruncatedInput: return "TruncatedInput";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnknownFormat: return "UnknownFormat";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::CoordinateOverflow: return "CoordinateOverflow";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InvalidOccupancy: return "InvalidOccupancy";
    case ErrorCode::CorruptTree: return "CorruptTree";
    case ErrorCode::UnsortedCoords: return "UnsortedCoords";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MisalignedMaps: return "MisalignedMaps";
    case ErrorCode::NumericalFault: return "NumericalFault";
    case ErrorCode::ProbabilityUnderflow: return "ProbabilityUnderflow";
    case ErrorCode::AccumulatorRisk: return "AccumulatorRisk";
    case ErrorCode::ContractViolation: return "ContractViolation";
    case ErrorCode::CalibrationOverflow: return "CalibrationOverflow";
    case ErrorCode::MissingStats: return "MissingStats";
    case ErrorCode::InvalidMass: return "InvalidMass";
    case ErrorCode::TruncatedStream: return "TruncatedStream";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::ModelMismatch: return "ModelMismatch";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::CorruptStream: return "CorruptStream";
    case ErrorCode::CausalityViolation: return "CausalityViolation";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::Insufficient: return "Insufficient";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

double round_half_even(double x) { return std::nearbyint(x); }

std::int64_t shift_round_half_even(std::int64_t num, int shift) {
  if (shift <= 0) return num;
  const std::int64_t floor_q = num >> shift;  // arithmetic shift floors
  const std::int64_t rem = num - (floor_q << shift);
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  if (rem > half) return floor_q + 1;
  if (rem < half) return floor_q;
  return floor_q + (floor_q & 1);
}

}  // namespace spcc
