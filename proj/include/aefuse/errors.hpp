#pragma once

#include <stdexcept>
#include <string>

namespace aefuse {

// Root of every error thrown by the library. The CLI maps anything derived
// from this to the "data error" exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define AEFUSE_DEFINE_ERROR(Name)              \
  class Name : public Error {                  \
   public:                                     \
    using Error::Error;                        \
  };

AEFUSE_DEFINE_ERROR(ParseError)
AEFUSE_DEFINE_ERROR(TruncationError)
AEFUSE_DEFINE_ERROR(IoError)
AEFUSE_DEFINE_ERROR(FormatError)
AEFUSE_DEFINE_ERROR(DimensionError)
AEFUSE_DEFINE_ERROR(RangeError)
AEFUSE_DEFINE_ERROR(InsufficientDataError)
AEFUSE_DEFINE_ERROR(EmptyInputError)
AEFUSE_DEFINE_ERROR(UnknownAlgorithmError)
AEFUSE_DEFINE_ERROR(NotEvaluatedError)
AEFUSE_DEFINE_ERROR(SpecError)
AEFUSE_DEFINE_ERROR(BankMissError)
AEFUSE_DEFINE_ERROR(TaskMixError)

#undef AEFUSE_DEFINE_ERROR

}  // namespace aefuse
