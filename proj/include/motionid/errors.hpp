#pragma once
// Error taxonomy shared across the library. Every failure mode callers are
// expected to handle has its own type so tests can assert on the exact class.

#include <stdexcept>
#include <string>

namespace motionid {

#define MOTIONID_ERROR(Name)                                        \
  struct Name : std::runtime_error {                                \
    explicit Name(const std::string& w) : std::runtime_error(w) {}  \
  };

// feature files / manifests
MOTIONID_ERROR(FormatError)
MOTIONID_ERROR(DimensionError)
MOTIONID_ERROR(TruncationError)
MOTIONID_ERROR(EmptyInputError)
MOTIONID_ERROR(IdentityMismatchError)

// tensors / autodiff
MOTIONID_ERROR(ShapeError)
MOTIONID_ERROR(ConfigError)
MOTIONID_ERROR(AccumulationError)
MOTIONID_ERROR(MissingGradError)

// losses / evaluation
MOTIONID_ERROR(DomainError)
MOTIONID_ERROR(EvalError)
MOTIONID_ERROR(ProtocolError)

// training data
MOTIONID_ERROR(DataError)

// synthetic data generation
MOTIONID_ERROR(SelfSwapError)
MOTIONID_ERROR(SelfReenactError)

#undef MOTIONID_ERROR

}  // namespace motionid
