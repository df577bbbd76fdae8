#pragma once

#include <stdexcept>
#include <string>

namespace riskprobe {

// Argument outside the mathematical domain of a model function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed input text (series files, CSV, JSON configs).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed input that breaks a documented invariant.
class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MultiSwitchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AllSameError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No grid point satisfies every switch inequality.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, int min_violations)
      : std::runtime_error(what), min_violations_(min_violations) {}
  int min_violations() const noexcept { return min_violations_; }

 private:
  int min_violations_;
};

class RankDeficientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace riskprobe
