#include "gaitlab/nn/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "gaitlab/errors.hpp"

namespace gaitlab::nn {

namespace {

constexpr std::array<char, 4> kMagic = {'G', 'L', 'C', 'K'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (!is) throw GaitError(ErrorKind::kFormatError, "truncated checkpoint");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
  const auto n = get_u32(is);
  if (n > (1u << 24)) throw GaitError(ErrorKind::kFormatError, "checkpoint string too long");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw GaitError(ErrorKind::kFormatError, "truncated checkpoint");
  return s;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw GaitError(ErrorKind::kIoError, "cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    put_str(os, k);
    put_str(os, v);
  }
  put_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
    for (float f : t.data) put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw GaitError(ErrorKind::kIoError, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw GaitError(ErrorKind::kIoError, "cannot open " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw GaitError(ErrorKind::kFormatError, path.string() + " is not a checkpoint");
  const auto version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw GaitError(ErrorKind::kCheckpointVersionMismatch,
                    "checkpoint version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));
  }
  Checkpoint ckpt;
  const auto n_meta = get_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = get_str(is);
    ckpt.meta[k] = get_str(is);
  }
  const auto n_tensors = get_u32(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = get_str(is);
    const auto rank = get_u32(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(is));
    Tensor t(shape);
    for (auto& f : t.data) f = std::bit_cast<float>(get_u32(is));
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace gaitlab::nn
