#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aspectcl {

// Base of every error this library throws. `kind()` is the stable,
// machine-readable name reported by the CLI error record.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ASPECTCL_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  };

ASPECTCL_DEFINE_ERROR(IOFailure)
ASPECTCL_DEFINE_ERROR(EmptyAspect)
ASPECTCL_DEFINE_ERROR(MissingField)
ASPECTCL_DEFINE_ERROR(NoMaskToken)
ASPECTCL_DEFINE_ERROR(MultipleMaskTokens)
ASPECTCL_DEFINE_ERROR(EmptyCorpus)
ASPECTCL_DEFINE_ERROR(EmptyTrainSet)
ASPECTCL_DEFINE_ERROR(TargetTooLong)
ASPECTCL_DEFINE_ERROR(AlignmentFailure)
ASPECTCL_DEFINE_ERROR(NonFiniteComponent)
ASPECTCL_DEFINE_ERROR(InvalidConfig)
ASPECTCL_DEFINE_ERROR(InvalidArgument)

#undef ASPECTCL_DEFINE_ERROR

// Corrupt ASTE-V2 record. Carries the 1-based line number once the loader
// has attached file context (0 while parsing a detached line).
class MalformedLine : public Error {
 public:
  MalformedLine(const std::string& message, std::size_t line = 0, std::string file = {})
      : Error("MalformedLine", Format(message, line, file)),
        detail_(message),
        line_(line),
        file_(std::move(file)) {}

  const std::string& detail() const noexcept { return detail_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& file() const noexcept { return file_; }

 private:
  static std::string Format(const std::string& message, std::size_t line, const std::string& file) {
    if (line == 0) return message;
    return (file.empty() ? std::string("line ") : file + ":") + std::to_string(line) + ": " + message;
  }

  std::string detail_;
  std::size_t line_;
  std::string file_;
};

// Raised by training loops; `batch()` identifies the offending batch.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& message, std::size_t epoch, std::size_t batch)
      : Error("NonFiniteLoss", message), epoch_(epoch), batch_(batch) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

}  // namespace aspectcl
