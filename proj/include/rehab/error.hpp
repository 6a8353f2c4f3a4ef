#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rehab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A field does not fit its wire or domain range.
class RangeError : public Error {
public:
    using Error::Error;
};

// Calibration was requested while a sensor was still moving.
class NotStill : public Error {
public:
    using Error::Error;
};

class NumericalDegeneracy : public Error {
public:
    using Error::Error;
};

// The session engine was stepped after its final repetition.
class SessionComplete : public Error {
public:
    using Error::Error;
};

// Metrics were requested for a repetition that did not complete.
class IncompleteRep : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

// Configuration problem; line/column are 1-based and zero when unknown.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
        : Error(what), m_line(line), m_column(column)
    {
    }

    std::size_t line() const noexcept { return m_line; }
    std::size_t column() const noexcept { return m_column; }

private:
    std::size_t m_line;
    std::size_t m_column;
};

} // namespace rehab
