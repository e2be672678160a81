// Copyright (c) 2026, the geossl authors. All rights reserved.
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

#pragma once

#include <stdexcept>
#include <string>

namespace geossl {

/// Base class for all geossl exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad sizes, unsupported modes, incompatible dims).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem / parse failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Operation called in a state that does not permit it.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling exhausted its attempt budget.
class SamplingError : public Error {
 public:
  using Error::Error;
};

/// HTTP fetch failed after retries; carries the last status code (0 when the
/// transport itself failed).
class FetchError : public Error {
 public:
  FetchError(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_ = 0;
};

}  // namespace geossl
