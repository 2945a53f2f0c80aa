#ifndef SSMI_ERRORS_HPP
#define SSMI_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ssmi {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument outside its documented range (bad stride, degenerate quad, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Malformed input file. Carries the byte offset where parsing stopped.
class FormatError : public Error {
public:
    FormatError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte " + std::to_string(byte_offset) + ")"),
          offset_(byte_offset) {}
    explicit FormatError(const std::string& msg) : Error(msg), offset_(0) {}

    std::size_t byte_offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Structurally valid input that violates a cross-field contract
// (annotation pointing at a missing image, negative box dims, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Lookup that found nothing (target label absent from a mask).
class NotFoundError : public Error {
public:
    using Error::Error;
};

// Non-finite values at runtime.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace ssmi

#endif
