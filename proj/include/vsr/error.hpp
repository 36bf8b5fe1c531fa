#ifndef VSR_ERROR_HPP
#define VSR_ERROR_HPP

#include <stdexcept>
#include <string>

namespace vsr {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration: bad parameter values, inconsistent specs,
/// unknown config keys. Maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

/// Invalid data: malformed files, shape mismatches, non-finite values,
/// degenerate inputs. Maps to CLI exit code 3.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

}  // namespace vsr

#endif  // VSR_ERROR_HPP
