#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace blendiff {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
  public:
    using Error::Error;
};

class ShapeMismatch : public Error {
  public:
    using Error::Error;
};

class DegenerateError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

class DecodeError : public Error {
  public:
    DecodeError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t offset_;
};

// A session or job operation that its current state does not allow.
class IllegalTransition : public Error {
  public:
    using Error::Error;
};

class NotFound : public Error {
  public:
    using Error::Error;
};

class UnknownPrompt : public Error {
  public:
    UnknownPrompt(const std::string& prompt, std::vector<std::string> available);
    const std::string& prompt() const noexcept { return prompt_; }
    const std::vector<std::string>& available() const noexcept { return available_; }

  private:
    std::string prompt_;
    std::vector<std::string> available_;
};

// Raised when a latent stops being finite mid-chain.
class SamplingError : public Error {
  public:
    SamplingError(const std::string& what, int step, double grad_norm)
        : Error(what + " at step " + std::to_string(step) + " (guidance gradient norm " + std::to_string(grad_norm) +
                ")"),
          step_(step),
          grad_norm_(grad_norm) {}
    int step() const noexcept { return step_; }
    double grad_norm() const noexcept { return grad_norm_; }

  private:
    int step_;
    double grad_norm_;
};

}  // namespace blendiff
