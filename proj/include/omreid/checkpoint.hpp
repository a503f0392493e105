#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "omreid/tensor.hpp"

namespace omreid {

// Binary checkpoint: magic "RID5", format version, config digest, a named
// tensor table (UTF-8 name, rank, dims, 32-bit little-endian floats) and an
// optional optimizer-state section. Training math stays 64-bit in memory;
// the 32-bit payload halves file size at a documented load tolerance of 1e-6.
struct CheckpointTensor {
  std::vector<std::size_t> dims;
  std::vector<float> data;
};

struct OptimizerSlotState {
  std::vector<float> m, v;
};

struct Checkpoint {
  static constexpr char kMagic[4] = {'R', 'I', 'D', '5'};
  static constexpr std::uint32_t kVersion = 1;

  std::string config_digest;
  std::map<std::string, CheckpointTensor> tensors;
  bool has_optimizer = false;
  std::uint64_t optimizer_step = 0;
  std::map<std::string, OptimizerSlotState> optimizer;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw data_error(std::string("truncated checkpoint while reading ") + what);
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const char* what) {
  const std::uint32_t len = read_pod<std::uint32_t>(in, what);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw data_error(std::string("truncated checkpoint while reading ") + what);
  return s;
}

inline void write_floats(std::ostream& out, const std::vector<float>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_floats(std::istream& in, std::size_t n, const char* what) {
  std::vector<float> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw data_error(std::string("truncated checkpoint while reading ") + what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot open checkpoint for write: " + path);
  out.write(Checkpoint::kMagic, 4);
  detail::write_pod<std::uint32_t>(out, Checkpoint::kVersion);
  detail::write_string(out, ckpt.config_digest);
  detail::write_pod<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    detail::write_string(out, name);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (std::size_t d : t.dims) detail::write_pod<std::uint64_t>(out, d);
    detail::write_floats(out, t.data);
  }
  detail::write_pod<std::uint8_t>(out, ckpt.has_optimizer ? 1 : 0);
  if (ckpt.has_optimizer) {
    detail::write_pod<std::uint64_t>(out, ckpt.optimizer_step);
    detail::write_pod<std::uint64_t>(out, ckpt.optimizer.size());
    for (const auto& [name, s] : ckpt.optimizer) {
      detail::write_string(out, name);
      detail::write_pod<std::uint64_t>(out, s.m.size());
      detail::write_floats(out, s.m);
      detail::write_floats(out, s.v);
    }
  }
  if (!out) throw data_error("short write: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, Checkpoint::kMagic, 4) != 0)
    throw data_error("not an omreid checkpoint: " + path);
  const auto version = detail::read_pod<std::uint32_t>(in, "version");
  if (version != Checkpoint::kVersion)
    throw data_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_digest = detail::read_string(in, "config digest");
  const auto n_tensors = detail::read_pod<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const std::string name = detail::read_string(in, "tensor name");
    const auto tensor_rank = detail::read_pod<std::uint32_t>(in, "tensor rank");
    CheckpointTensor t;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < tensor_rank; ++d) {
      t.dims.push_back(detail::read_pod<std::uint64_t>(in, "tensor dims"));
      numel *= t.dims.back();
    }
    t.data = detail::read_floats(in, numel, name.c_str());
    ckpt.tensors.emplace(name, std::move(t));
  }
  ckpt.has_optimizer = detail::read_pod<std::uint8_t>(in, "optimizer flag") != 0;
  if (ckpt.has_optimizer) {
    ckpt.optimizer_step = detail::read_pod<std::uint64_t>(in, "optimizer step");
    const auto n_slots = detail::read_pod<std::uint64_t>(in, "optimizer slot count");
    for (std::uint64_t i = 0; i < n_slots; ++i) {
      const std::string name = detail::read_string(in, "optimizer slot name");
      const auto numel = detail::read_pod<std::uint64_t>(in, "optimizer slot size");
      OptimizerSlotState s;
      s.m = detail::read_floats(in, numel, "optimizer m");
      s.v = detail::read_floats(in, numel, "optimizer v");
      ckpt.optimizer.emplace(name, std::move(s));
    }
  }
  return ckpt;
}

inline CheckpointTensor to_checkpoint_tensor(const Tensor& t) {
  CheckpointTensor ct;
  ct.dims = t.shape();
  ct.data.reserve(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) ct.data.push_back(static_cast<float>(t.at(i)));
  return ct;
}

inline void load_tensor_from(const CheckpointTensor& ct, Tensor& dst, const std::string& name) {
  if (ct.dims != dst.shape())
    throw data_error("checkpoint tensor '" + name + "' has shape " + detail::shape_str(ct.dims) +
                     ", model expects " + detail::shape_str(dst.shape()));
  for (std::size_t i = 0; i < dst.size(); ++i) dst.at(i) = static_cast<double>(ct.data[i]);
}

}  // namespace omreid
