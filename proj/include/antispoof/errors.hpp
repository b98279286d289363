#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace antispoof {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidAudio : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidDataset : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Raised when a training step produces a non-finite loss.
class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(std::size_t step)
      : Error("non-finite loss at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace antispoof
