#pragma once

#include <stdexcept>
#include <string>

namespace flowerase {

// Every failure raised by the library derives from Error. The category drives
// the CLI exit code.
enum class ErrorCategory { kConfig, kData, kTraining, kEval, kInternal };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define FLOWERASE_DEFINE_ERROR(Name, Category)                      \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what)                          \
        : Error(ErrorCategory::Category, #Name ": " + what) {}      \
  }

FLOWERASE_DEFINE_ERROR(DimensionError, kInternal);
FLOWERASE_DEFINE_ERROR(ContractError, kInternal);
FLOWERASE_DEFINE_ERROR(DomainError, kInternal);
FLOWERASE_DEFINE_ERROR(IndexError, kInternal);
FLOWERASE_DEFINE_ERROR(TargetingError, kConfig);
FLOWERASE_DEFINE_ERROR(CompositionError, kConfig);
FLOWERASE_DEFINE_ERROR(FormatError, kData);
FLOWERASE_DEFINE_ERROR(ChecksumError, kData);
FLOWERASE_DEFINE_ERROR(VersionError, kData);
FLOWERASE_DEFINE_ERROR(DigestMismatchError, kConfig);
FLOWERASE_DEFINE_ERROR(SpecError, kData);
FLOWERASE_DEFINE_ERROR(DataError, kData);
FLOWERASE_DEFINE_ERROR(CoverageError, kConfig);
FLOWERASE_DEFINE_ERROR(SamplingError, kConfig);
FLOWERASE_DEFINE_ERROR(ParseError, kData);
FLOWERASE_DEFINE_ERROR(ConfigError, kConfig);
FLOWERASE_DEFINE_ERROR(DegenerateFeatureError, kTraining);
FLOWERASE_DEFINE_ERROR(DivergenceError, kTraining);
FLOWERASE_DEFINE_ERROR(GateError, kEval);
FLOWERASE_DEFINE_ERROR(EvalError, kEval);
FLOWERASE_DEFINE_ERROR(AttackSpecError, kEval);

#undef FLOWERASE_DEFINE_ERROR

}  // namespace flowerase
