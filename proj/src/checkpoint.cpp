#include "multipath/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace multipath {

namespace {

constexpr const char* kFormatTag = "multipath-checkpoint-v1";

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

void put_f32_le(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void save_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, Tensor>>& tensors,
    const nlohmann::json& meta) {
  nlohmann::json dir = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const nlohmann::json header{
      {"format", kFormatTag}, {"meta", meta}, {"tensors", dir}};
  const std::string header_bytes = header.dump();

  std::string blob;
  blob.reserve(8 + header_bytes.size() + static_cast<size_t>(offset) * 4);
  put_u64_le(blob, header_bytes.size());
  blob += header_bytes;
  for (const auto& [name, t] : tensors) {
    for (double v : t.data()) put_f32_le(blob, static_cast<float>(v));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

const Tensor* LoadedCheckpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw std::runtime_error("checkpoint: truncated file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = read_u64_le(p);
  if (8 + header_len > bytes.size()) {
    throw std::runtime_error("checkpoint: truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8,
                                   bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad header: ") +
                             e.what());
  }
  if (header.value("format", "") != kFormatTag) {
    throw std::runtime_error("checkpoint: unrecognized format tag");
  }

  LoadedCheckpoint result;
  result.meta = header.value("meta", nlohmann::json::object());
  const size_t payload = 8 + header_len;
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const std::int64_t offset = entry.at("offset").get<std::int64_t>();
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    const size_t start = payload + static_cast<size_t>(offset) * 4;
    if (start + static_cast<size_t>(n) * 4 > bytes.size()) {
      throw std::runtime_error("checkpoint: truncated payload");
    }
    std::vector<double> data(n);
    for (std::int64_t i = 0; i < n; ++i) {
      data[i] = static_cast<double>(read_f32_le(p + start + i * 4));
    }
    result.tensors.emplace_back(entry.at("name").get<std::string>(),
                                Tensor::from(shape, std::move(data)));
  }
  return result;
}

}  // namespace multipath
