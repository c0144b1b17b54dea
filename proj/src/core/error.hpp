#pragma once

#include <stdexcept>
#include <string>

namespace md {

// Base class for all errors raised by the core library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad caller input: shape mismatches, out-of-range indices, invalid options.
struct InvalidArgument : Error {
  using Error::Error;
};

// Filesystem and parse failures. Messages carry the offending path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace md
