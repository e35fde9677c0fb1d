#pragma once

#include <stdexcept>
#include <string>

namespace saddlefield {

// Input outside the mathematical domain of an operation (e.g. a
// non-positive marginal utility or Pareto weight).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Evaluation would leave the representable floating point range.
class RangeError : public std::range_error {
public:
    using std::range_error::range_error;
};

// An iterative solver did not converge or met a singular Jacobian.
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed problem description.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace saddlefield
