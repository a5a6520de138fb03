#pragma once

#include <stdexcept>
#include <string>

namespace planeloc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define PLANELOC_ERROR_TYPE(NAME) \
  struct NAME : Error {           \
    using Error::Error;           \
  }

PLANELOC_ERROR_TYPE(DegenerateNormal);
PLANELOC_ERROR_TYPE(DegenerateConfiguration);
PLANELOC_ERROR_TYPE(ShapeMismatch);
PLANELOC_ERROR_TYPE(FormatError);
PLANELOC_ERROR_TYPE(VersionError);
PLANELOC_ERROR_TYPE(IoError);
PLANELOC_ERROR_TYPE(InvalidTemperature);
PLANELOC_ERROR_TYPE(InvalidConfig);
PLANELOC_ERROR_TYPE(ConfigError);
PLANELOC_ERROR_TYPE(EmptyBuffer);
PLANELOC_ERROR_TYPE(EmptyBatch);
PLANELOC_ERROR_TYPE(EmptyHistory);
PLANELOC_ERROR_TYPE(TerminalStateStep);
PLANELOC_ERROR_TYPE(NameOrShapeMismatch);
PLANELOC_ERROR_TYPE(ImageTooSmall);
PLANELOC_ERROR_TYPE(MissingArtifact);
PLANELOC_ERROR_TYPE(VerificationFailure);

#undef PLANELOC_ERROR_TYPE

}  // namespace planeloc
