#pragma once

#include <stdexcept>
#include <string>

namespace vchgcl {

/// Violated precondition or malformed configuration. CLI exit code 2.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Operand extents do not line up.
class ShapeError : public ContractError {
public:
    using ContractError::ContractError;
};

/// Non-finite values or a numerically undefined operation. CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input on which the operation is undefined (zero-norm vector for cosine).
class DegenerateInputError : public NumericError {
public:
    using NumericError::NumericError;
};

} // namespace vchgcl
