#pragma once

#include <stdexcept>
#include <string>

namespace zsseg {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag used by the command-line driver.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ZSSEG_DEFINE_ERROR(Name, tag) \
  class Name : public Error {         \
   public:                            \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  };

ZSSEG_DEFINE_ERROR(DimensionError, "dimension")
ZSSEG_DEFINE_ERROR(ParameterError, "parameter")
ZSSEG_DEFINE_ERROR(ContractError, "contract")
ZSSEG_DEFINE_ERROR(FormatError, "format")
ZSSEG_DEFINE_ERROR(LookupError, "lookup")
ZSSEG_DEFINE_ERROR(InputError, "input")
ZSSEG_DEFINE_ERROR(IoError, "io")
ZSSEG_DEFINE_ERROR(ShapeError, "shape")
ZSSEG_DEFINE_ERROR(NumericError, "numeric")

#undef ZSSEG_DEFINE_ERROR

}  // namespace zsseg
