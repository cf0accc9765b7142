#pragma once

#include <stdexcept>
#include <string>

namespace adu {

// Error taxonomy shared by the library and the CLI. The CLI maps category()
// to its one-line diagnostic and a nonzero exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& msg)
      : std::runtime_error(msg), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format", m) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};
struct SingularError : Error {
  explicit SingularError(const std::string& m) : Error("singular", m) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error("domain", m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& m) : Error("numerical", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

}  // namespace adu
