// Copyright 2026 The epop Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EPOP_ERRORS_HPP
#define EPOP_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace epop {

/// Invalid parameters or a precondition violated by the caller.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Moment vector with non-positive variance.
class DegenerateMomentError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Importance-sampling estimate rejected by the effective sample size floor.
class DegenerateSampleError : public DomainError {
 public:
  DegenerateSampleError(const std::string& what, double ess) : DomainError(what), ess_{ess} {}
  [[nodiscard]] double ess() const noexcept { return ess_; }

 private:
  double ess_;
};

/// Mean/variance pair that no Beta distribution can match.
class InfeasibleBetaError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Quadrature rule did not converge under order doubling.
class QuadratureError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Linear algebra breakdown (failed factorization, non-finite values).
class NumericalError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Malformed input file: bad syntax, wrong version, failed integrity check.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace epop

#endif  // EPOP_ERRORS_HPP
