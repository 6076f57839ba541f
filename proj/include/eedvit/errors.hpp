#pragma once

#include <stdexcept>
#include <string>

namespace eedvit {

/// Base for every error raised by the library. Callers that only need a
/// diagnostic can catch this; the derived types name the failure class.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define EEDVIT_DEFINE_ERROR(Name)                                              \
  class Name : public Error {                                                  \
  public:                                                                      \
    using Error::Error;                                                        \
  }

EEDVIT_DEFINE_ERROR(DegenerateInput);
EEDVIT_DEFINE_ERROR(ConvergenceFailure);
EEDVIT_DEFINE_ERROR(DegenerateSpectrum);
EEDVIT_DEFINE_ERROR(ShapeMismatch);
EEDVIT_DEFINE_ERROR(GraphNotRecorded);
EEDVIT_DEFINE_ERROR(NonFiniteLoss);
EEDVIT_DEFINE_ERROR(FormatError);
EEDVIT_DEFINE_ERROR(ChecksumMismatch);
EEDVIT_DEFINE_ERROR(IoError);
EEDVIT_DEFINE_ERROR(LayerCountMismatch);
EEDVIT_DEFINE_ERROR(ConfigError);

#undef EEDVIT_DEFINE_ERROR

} // namespace eedvit
