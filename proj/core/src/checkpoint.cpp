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

#include "hyperkd/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "hyperkd/error.hpp"

namespace hyperkd {

namespace {

constexpr char kMagic[4] = {'H', 'K', 'D', '1'};

[[noreturn]] void corrupt(const std::string& msg) { throw DataError("checkpoint", msg); }

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const std::string& in, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

void check_key(const std::string& k) {
  if (k.empty() || k.find_first_of("=\n[") != std::string::npos) corrupt("invalid key '" + k + "'");
}

}  // namespace

const NamedArray& Checkpoint::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  corrupt("checkpoint has no array named '" + name + "'");
}

bool Checkpoint::has_array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream header;
  header << "[config]\n";
  for (const auto& [k, v] : ckpt.config) {
    check_key(k);
    header << k << '=' << v << '\n';
  }
  header << "[state]\n";
  for (const auto& [k, v] : ckpt.state) {
    check_key(k);
    header << k << '=' << v << '\n';
  }
  header << "[manifest]\n";
  for (const auto& a : ckpt.arrays) {
    if (a.name.empty() || a.name.find_first_of(" \n") != std::string::npos) corrupt("invalid array name '" + a.name + "'");
    if (numerics::shape_size(a.shape) != a.values.size()) corrupt("array '" + a.name + "' shape does not match its data");
    header << a.name << ' ';
    for (std::size_t i = 0; i < a.shape.size(); ++i) header << (i ? "x" : "") << a.shape[i];
    header << ' ' << a.values.size() << '\n';
  }
  header << "[end]\n";
  const std::string text = header.str();

  std::string out(kMagic, 4);
  put_u64(out, text.size());
  out += text;
  for (const auto& a : ckpt.arrays)
    for (double v : a.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, kMagic, 4) != 0) corrupt("missing HKD1 magic");
  const std::uint64_t header_len = get_u64(bytes, 4);
  if (header_len > bytes.size() - 12) corrupt("header length exceeds file size");
  std::istringstream header(bytes.substr(12, header_len));
  Checkpoint ckpt;
  std::string line, section;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t offset = 12 + header_len;
  bool ended = false;
  while (std::getline(header, line)) {
    if (line.size() > 2 && line.front() == '[' && line.back() == ']') {
      section = line;
      if (section == "[end]") {
        ended = true;
        break;
      }
      continue;
    }
    if (section == "[config]" || section == "[state]") {
      const auto eq = line.find('=');
      if (eq == std::string::npos) corrupt("malformed header line '" + line + "'");
      (section == "[config]" ? ckpt.config : ckpt.state)[line.substr(0, eq)] = line.substr(eq + 1);
    } else if (section == "[manifest]") {
      std::istringstream fields(line);
      NamedArray a;
      std::string dims;
      std::size_t count = 0;
      if (!(fields >> a.name >> dims >> count)) corrupt("malformed manifest line '" + line + "'");
      std::istringstream ds(dims);
      std::string d;
      while (std::getline(ds, d, 'x')) a.shape.push_back(static_cast<std::size_t>(std::stoull(d)));
      if (numerics::shape_size(a.shape) != count) corrupt("manifest count mismatch for '" + a.name + "'");
      if (offset + 8 * count > bytes.size()) corrupt("truncated payload for '" + a.name + "'");
      a.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) a.values[i] = std::bit_cast<double>(get_u64(bytes, offset + 8 * i));
      offset += 8 * count;
      ckpt.arrays.push_back(std::move(a));
    } else {
      corrupt("header line outside a section");
    }
  }
  if (!ended) corrupt("header is missing [end]");
  if (offset != bytes.size()) corrupt("trailing bytes after payload");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("checkpoint", "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint", "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace hyperkd
