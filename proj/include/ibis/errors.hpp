/*
 * Copyright 2026 The IBIS Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef IBIS_ERRORS_HPP_
#define IBIS_ERRORS_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ibis {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that cannot be combined by an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad caller-supplied data (labels out of range, empty sets, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// Input that is well-formed but has no meaningful answer, e.g. a single
// class where two are needed.
class DegenerateInputError : public InputError {
 public:
  using InputError::InputError;
};

class StratificationError : public InputError {
 public:
  using InputError::InputError;
};

// API misuse, e.g. backward() from a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Corrupt or truncated binary container. Carries the byte offset at which
// decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace ibis

#endif  // IBIS_ERRORS_HPP_
