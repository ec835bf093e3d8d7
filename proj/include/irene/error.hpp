#pragma once

#include <stdexcept>
#include <string>

namespace irene {

/// Base of every error thrown by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "Error"; }
};

#define IRENE_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what) : Error(what) {}         \
    const char* kind() const noexcept override { return #Name; }    \
  }

IRENE_DEFINE_ERROR(LayoutInfeasible);
IRENE_DEFINE_ERROR(SchemaError);
IRENE_DEFINE_ERROR(ShapeMismatch);
IRENE_DEFINE_ERROR(NumericError);
IRENE_DEFINE_ERROR(GraphDisconnected);
IRENE_DEFINE_ERROR(MissingGrad);
IRENE_DEFINE_ERROR(EmptyTrial);
IRENE_DEFINE_ERROR(WrongTrialCount);
IRENE_DEFINE_ERROR(LengthMismatch);
IRENE_DEFINE_ERROR(TooFewEpisodes);
IRENE_DEFINE_ERROR(EmptyErrors);
IRENE_DEFINE_ERROR(MissingTask);
IRENE_DEFINE_ERROR(UsageError);
IRENE_DEFINE_ERROR(CheckpointError);

#undef IRENE_DEFINE_ERROR

}  // namespace irene
