#pragma once

#include <stdexcept>
#include <string>

namespace debias {

// Base of every error raised by the library. The CLI maps the subclasses
// onto exit codes (validation = 2, runtime = 3, I/O = 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

// No instance carries a sensitive label, so the association ratio is undefined.
class EmptySupportError : public Error {
 public:
  using Error::Error;
};

// No predictions of the queried label, so alpha is undefined.
class NoSupportError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, double learning_rate)
      : Error("training diverged at epoch " + std::to_string(epoch) +
              " (learning rate " + std::to_string(learning_rate) + ")"),
        epoch_(epoch),
        learning_rate_(learning_rate) {}
  std::size_t epoch() const noexcept { return epoch_; }
  double learning_rate() const noexcept { return learning_rate_; }

 private:
  std::size_t epoch_;
  double learning_rate_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace debias
