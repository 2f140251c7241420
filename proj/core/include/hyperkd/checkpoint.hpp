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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hyperkd/numerics/tensor.hpp"

namespace hyperkd {

/// Checkpoint file layout:
///
///   "HKD1"                       4-byte magic
///   u64 little-endian            length of the header text in bytes
///   header text (UTF-8):
///     [config]   key=value lines
///     [state]    key=value lines
///     [manifest] one line per array: `<name> <d0>x<d1>x... <count>`
///     [end]
///   payload                      each array as little-endian IEEE-754
///                                doubles, in manifest order
struct NamedArray {
  std::string name;
  numerics::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> state;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace hyperkd
