// SPDX-License-Identifier: Apache-2.0
#include "learn/diff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <set>
#include <stdexcept>

namespace learn::diff {
namespace {

constexpr char kMagic[8] = {'L', 'E', 'A', 'R', 'N', 'C', 'K', '1'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& arrays) {
  nlohmann::json manifest;
  manifest["arrays"] = nlohmann::json::array();
  std::set<std::string> names;
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    if (!names.insert(a.name).second) {
      throw std::invalid_argument("checkpoint: duplicate array name '" + a.name + "'");
    }
    manifest["arrays"].push_back({{"name", a.name}, {"shape", a.value.shape()}, {"offset", offset}});
    offset += 8 * a.value.numel();
  }
  manifest["payload_bytes"] = offset;
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& a : arrays) {
    for (double v : a.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const std::uint64_t len = get_u64(bytes.data() + 8);
  if (16 + len > bytes.size()) throw std::runtime_error("checkpoint: truncated manifest");
  const auto manifest =
      nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  const std::size_t payload = 16 + len;
  const auto payload_bytes = manifest.at("payload_bytes").get<std::uint64_t>();
  if (payload + payload_bytes != bytes.size()) {
    throw std::runtime_error("checkpoint: payload size does not match manifest");
  }

  std::vector<NamedArray> arrays;
  for (const auto& entry : manifest.at("arrays")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (offset + 8 * n > payload_bytes) throw std::runtime_error("checkpoint: array out of range");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      data[i] = std::bit_cast<double>(get_u64(bytes.data() + payload + offset + 8 * i));
    }
    a.value = Tensor(shape, std::move(data));
    arrays.push_back(std::move(a));
  }
  return arrays;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  const auto bytes = encode_checkpoint(arrays);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace learn::diff
