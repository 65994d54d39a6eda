#pragma once

#include <stdexcept>
#include <string>

namespace ito {

// Bad shapes or configuration values. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Violated precondition of an otherwise well-formed call (e.g. non-unit rows).
class ContractError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// API misuse: non-scalar backward root, empty grid, degenerate loss.
class UsageError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Malformed samples: missing EOT, tokenization overflow.
class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace ito
