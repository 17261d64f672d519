#pragma once

#include <stdexcept>
#include <string>

namespace densfix {

// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

// Input outside the mathematical domain of an operation (log of a
// non-positive value, probability outside (0,1), ...).
class DomainError : public Error {
public:
    using Error::Error;
};

class NonFiniteError : public Error {
public:
    using Error::Error;
};

// q(i) = 0 while p(i) > eps0: the KL divergence D[p || q] is undefined.
class AbsoluteContinuityError : public DomainError {
public:
    using DomainError::DomainError;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// A training loop produced a non-finite loss or parameter.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class CsvError : public Error {
public:
    using Error::Error;
};

class CsvEmptyFile : public CsvError {
public:
    using CsvError::CsvError;
};

class CsvRaggedRow : public CsvError {
public:
    using CsvError::CsvError;
};

class CsvNonNumeric : public CsvError {
public:
    using CsvError::CsvError;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace densfix
