/*
 Copyright 2026 The spock-cpp Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace spock
{

  using Index = Eigen::Index;
  using Vector = Eigen::VectorXd;
  using Matrix = Eigen::MatrixXd;

  /// Raised when user-supplied data breaks a documented precondition.
  class ValidationError : public std::invalid_argument
  {
  public:
    explicit ValidationError(const std::string &what) : std::invalid_argument(what) {}
  };

  /// Raised when an internal invariant fails (a bug or a numerically broken setup).
  class InternalError : public std::runtime_error
  {
  public:
    explicit InternalError(const std::string &what) : std::runtime_error(what) {}
  };

} // namespace spock
