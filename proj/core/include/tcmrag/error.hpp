#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tcmrag {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters, missing files or indexes, mismatched settings.
/// The command-line tool maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. `line()` is 1-based, 0 when not applicable.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A model answer (or cleaning response) that could not be decoded.
/// Keeps the raw text so a repair prompt can quote it.
class AnswerError : public Error {
public:
    enum class Kind { kNoJson, kSchema };

    AnswerError(Kind kind, const std::string& what, std::string raw)
        : Error(what), kind_(kind), raw_(std::move(raw)) {}

    Kind kind() const noexcept { return kind_; }
    const std::string& raw() const noexcept { return raw_; }

private:
    Kind kind_;
    std::string raw_;
};

/// Remote provider failure after the retry policy gave up, or a response
/// that violates the provider contract.
class ProviderError : public Error {
public:
    ProviderError(const std::string& what, int attempts = 1) : Error(what), attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

}  // namespace tcmrag
