#pragma once

#include <stdexcept>
#include <string>

namespace tempo {

/// Argument outside the operation's mathematical domain (tau <= 0, empty input, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Tensor shapes incompatible for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Requested size or mode is outside what an implementation supports.
class UnsupportedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The temperature objective still descends at the upper search bracket.
class UnboundedDescentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint section failed validation.
class IntegrityError : public std::runtime_error {
 public:
  IntegrityError(const std::string& section, const std::string& what)
      : std::runtime_error("checkpoint section '" + section + "': " + what), section_(section) {}
  const std::string& section() const noexcept { return section_; }

 private:
  std::string section_;
};

/// File system failure, with the offending path in the message.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed user input (config, JSON Lines, CSV).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long step, const std::string& what)
      : std::runtime_error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace tempo
