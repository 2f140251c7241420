// Copyright 2026 The HyperKD Authors
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

namespace hyperkd {

/// Base of every error raised by the library. The message is prefixed with
/// the name of the component that raised it, e.g. "banddef: ...".
class Error : public std::runtime_error {
 public:
  Error(std::string component, const std::string& message)
      : std::runtime_error(component + ": " + message),
        component_(std::move(component)) {}

  const std::string& component() const noexcept { return component_; }

 private:
  std::string component_;
};

/// Bad input data, configuration, or I/O. Maps to CLI exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A broken internal contract (shape mismatch, non-finite value, misuse of
/// an API). Maps to CLI exit code 3.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// A target band whose spectral range contains no source band.
class EmptySubsetError : public DataError {
 public:
  explicit EmptySubsetError(int target_band_id)
      : DataError("banddef", "EmptySubset: target band " +
                                 std::to_string(target_band_id) +
                                 " contains no source band"),
        target_band_id_(target_band_id) {}

  int target_band_id() const noexcept { return target_band_id_; }

 private:
  int target_band_id_;
};

}  // namespace hyperkd
