#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tmag {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numeric argument lies outside its valid domain (cutoff above Nyquist, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Shapes, channel counts or index spacing do not agree.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A sliding window was queried before it held enough frames.
class NotReadyError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Training data problems: unknown labels, missing classes.
class DataError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Text file parse failure. `line()` is 1-based; 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, const std::string& source = {})
      : Error(prefix(source, line) + what), line_(line), detail_(what) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& detail() const noexcept { return detail_; }

  /// The same error attributed to `source`.
  ParseError in(const std::string& source) const { return ParseError(detail_, line_, source); }

 private:
  static std::string prefix(const std::string& source, std::size_t line) {
    std::string p = source.empty() ? std::string() : source + ": ";
    if (line) p += "line " + std::to_string(line) + ": ";
    return p;
  }

  std::size_t line_;
  std::string detail_;
};

/// Model container failures.
class ModelFormatError : public Error {
 public:
  enum class Kind { BadMagic, UnsupportedVersion, Truncated, ShapeMismatch, Io };

  ModelFormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace tmag
