#pragma once

#include <stdexcept>
#include <string>

namespace prefpipe {

// Base of every error the pipeline raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A record failed its type invariants. field() names the offending field.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Uniqueness or single-use violations (duplicate id, double submit).
class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Illegal move in the triad stage machine.
class TransitionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Backend call failed in a way that may succeed later (timeout, 5xx).
class RetryableError : public Error {
 public:
  using Error::Error;
};

// Backend rejected the request outright (4xx, malformed reply).
class PermanentError : public Error {
 public:
  using Error::Error;
};

// Judge reply could not be turned into a 1-5 score. raw_reply() keeps the
// backend text for auditing.
class ScoringError : public Error {
 public:
  ScoringError(const std::string& what, std::string raw_reply)
      : Error(what), raw_reply_(std::move(raw_reply)) {}
  const std::string& raw_reply() const { return raw_reply_; }

 private:
  std::string raw_reply_;
};

// NaN/inf showed up where a finite value was required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// On-disk state is inconsistent (corrupt line, broken funnel chain).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Lease unknown or expired.
class LeaseError : public Error {
 public:
  LeaseError(const std::string& what, bool expired)
      : Error(what), expired_(expired) {}
  bool expired() const { return expired_; }

 private:
  bool expired_;
};

}  // namespace prefpipe
