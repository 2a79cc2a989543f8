#pragma once

#include <stdexcept>
#include <string>

namespace kronfit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parameter or distance outside the domain of a correlation function.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A factor correlation matrix failed the Cholesky pivot check.
class NotPositiveDefinite : public Error {
public:
    using Error::Error;
};

/// Every residual is (numerically) zero, so the profiled variance vanishes.
class DegenerateResiduals : public Error {
public:
    using Error::Error;
};

/// Malformed input data or configuration.
class InputError : public Error {
public:
    using Error::Error;
};

/// Design matrix or contrast does not have full rank.
class RankDeficient : public Error {
public:
    using Error::Error;
};

/// A dense materialization or exhaustive search would exceed its size cap.
class SizeGuardError : public Error {
public:
    using Error::Error;
};

}  // namespace kronfit
