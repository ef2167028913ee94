#pragma once

#include <stdexcept>
#include <string>

namespace eqf {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state produced by the micro integrator.
class BlowUpError : public Error {
public:
    BlowUpError(double time, const std::string& what) : Error(what), time_(time) {}
    double time() const { return time_; }

private:
    double time_;
};

/// Newton (or corrector) iteration failed to converge.
class DivergenceError : public Error {
public:
    DivergenceError(double residual, int iterations, const std::string& what)
        : Error(what), residual_(residual), iterations_(iterations) {}
    double residual() const { return residual_; }
    int iterations() const { return iterations_; }

private:
    double residual_;
    int iterations_;
};

/// A finite-difference Jacobian (or the B matrix of the generalized
/// eigenproblem) is numerically singular.
class SingularJacobianError : public Error {
public:
    SingularJacobianError(int column, const std::string& what) : Error(what), column_(column) {}
    int column() const { return column_; }

private:
    int column_;
};

/// A macro value cannot be lifted (e.g. a car headway would become negative).
class LiftingDomainError : public Error {
public:
    LiftingDomainError(long index, const std::string& what) : Error(what), index_(index) {}
    long index() const { return index_; }

private:
    long index_;
};

/// Malformed or incomplete experiment configuration.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, int line = 0) : Error(what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

}  // namespace eqf
