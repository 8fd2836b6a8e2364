#pragma once

#include <stdexcept>
#include <string>

namespace hofa {

// Failure taxonomy. Every condition a caller may want to catch by name gets
// its own type; all of them are runtime_errors so the CLI can map any of them
// to a sound-failure exit code.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define HOFA_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                          \
    explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
  }

HOFA_DEFINE_ERROR(ExactBudgetExceeded);
HOFA_DEFINE_ERROR(DensityTooLow);
HOFA_DEFINE_ERROR(NoAffineFound);
HOFA_DEFINE_ERROR(CertifierExhausted);
HOFA_DEFINE_ERROR(IterationCapExceeded);
HOFA_DEFINE_ERROR(CodimCapExceeded);
HOFA_DEFINE_ERROR(NoBohrSetPassed);
HOFA_DEFINE_ERROR(RejectionBudgetExceeded);
HOFA_DEFINE_ERROR(NoFullRankSlice);
HOFA_DEFINE_ERROR(BasisExtractionFailed);
HOFA_DEFINE_ERROR(CorrectionFailed);
HOFA_DEFINE_ERROR(NotNCSM);
HOFA_DEFINE_ERROR(PhaseCapExceeded);
HOFA_DEFINE_ERROR(BadCharacteristic);

#undef HOFA_DEFINE_ERROR

// Pipeline failures keep the name of the stage that gave up.
struct PipelineStageFailed : Error {
  std::string stage;
  PipelineStageFailed(const std::string& stage_, const std::string& msg)
      : Error("PipelineStageFailed[" + stage_ + "]: " + msg), stage(stage_) {}
};

}  // namespace hofa
