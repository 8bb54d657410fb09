// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace ulab {

/// Bad argument or precondition violation at an API boundary.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A loss or gradient evaluated to a non-finite value.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string term, double value)
      : std::runtime_error("non-finite value in " + term + ": " +
                           std::to_string(value)),
        term_(std::move(term)),
        value_(value) {}

  const std::string& term() const { return term_; }
  double value() const { return value_; }

 private:
  std::string term_;
  double value_;
};

/// Training diverged; carries the optimizer step at which it happened.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, long step)
      : std::runtime_error(what + " at step " + std::to_string(step)),
        step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plan-level failure in continual unlearning (e.g. an empty retain set).
class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure of an evaluation backend; the run is marked incomplete.
class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An external service could not be reached or kept failing.
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An external service answered 2xx with a body that breaks the wire contract.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The judge reply contains neither YES nor NO.
class JudgeParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ulab
