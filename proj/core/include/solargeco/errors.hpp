#pragma once

#include <stdexcept>
#include <string>

namespace solargeco {

// Error taxonomy. The CLI maps these onto process exit codes:
// ConfigError -> 2, DataError (and ParseError) -> 3, NumericError/DomainError -> 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad or missing configuration keys, inconsistent hyperparameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Problems with input datasets: missing files, unresolved references,
// duplicate ids.
class DataError : public Error {
public:
    using Error::Error;
};

// Malformed structured text (JSON records, CIF, CSV, vocab files).
class ParseError : public DataError {
public:
    using DataError::DataError;
};

// Tensor shape disagreements.
class DimensionError : public Error {
public:
    using Error::Error;
};

// API preconditions violated by the caller (wrong arity, empty input,
// degenerate masks, non-scalar loss).
class ContractError : public Error {
public:
    using Error::Error;
};

// Math domain violations (log of nonpositive input).
class DomainError : public Error {
public:
    using Error::Error;
};

// Degenerate geometry: coincident atomic sites, singular lattices.
class GeometryError : public Error {
public:
    using Error::Error;
};

// Numeric failure at runtime (NaN loss during training).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace solargeco
