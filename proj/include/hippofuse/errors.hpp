#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace hippofuse {

// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer geometry violations (extent mismatches, bad axes, bad windows).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Configuration and schema violations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File format and filesystem problems.
class IoError : public Error {
 public:
  using Error::Error;
};

// Dataset/manifest inconsistencies (missing modality, bad class counts, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

namespace detail {
inline void concat_into(std::ostringstream&) {}
template <typename Head, typename... Tail>
void concat_into(std::ostringstream& os, Head&& head, Tail&&... tail) {
  os << std::forward<Head>(head);
  concat_into(os, std::forward<Tail>(tail)...);
}
}  // namespace detail

// Builds an error message from heterogeneous pieces: msg("axis ", i, " out of range").
template <typename... Args>
std::string msg(Args&&... args) {
  std::ostringstream os;
  detail::concat_into(os, std::forward<Args>(args)...);
  return os.str();
}

}  // namespace hippofuse
