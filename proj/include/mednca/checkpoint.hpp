#pragma once

// Binary checkpoint format:
//   magic "MEDNCA01" (8 bytes)
//   u32 format version (currently 1)
//   u32 n, h, img_channels, steps, scale_factor
//   f32 fire_rate
//   then for b1 and b2 in that order:
//     conv1_w, conv1_b, conv2_w, conv2_b, dense1_w, dense1_b, dense2_w
//   as little-endian f32 arrays, row-major.
// Loading validates magic, version and exact payload length.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "mednca/nca.hpp"
#include "mednca/pipeline.hpp"

namespace mednca {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'M', 'E', 'D', 'N', 'C', 'A', '0', '1'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw CheckpointError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_tensor(std::ostream& out, const Tensor<float>& t) {
  for (i64 i = 0; i < t.size(); ++i) put_f32(out, t[i]);
}

inline void get_tensor(std::istream& in, Tensor<float>& t) {
  for (i64 i = 0; i < t.size(); ++i) t[i] = get_f32(in);
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const MedNcaModel<float>& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot open for writing: " + path);
  out.write(ckpt_detail::kMagic, 8);
  ckpt_detail::put_u32(out, ckpt_detail::kVersion);
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(model.config.n));
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(model.config.h));
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(model.config.img_channels));
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(model.config.steps));
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(model.scale_factor));
  ckpt_detail::put_f32(out, static_cast<float>(model.config.fire_rate));
  model.b1.for_each([&](const Tensor<float>& t) { ckpt_detail::put_tensor(out, t); });
  model.b2.for_each([&](const Tensor<float>& t) { ckpt_detail::put_tensor(out, t); });
  if (!out) throw CheckpointError("checkpoint: write failed: " + path);
}

inline i64 checkpoint_file_size(i64 n, i64 h) {
  return 8 + 6 * 4 + 4 + 2 * param_count(n, h) * 4;
}

inline MedNcaModel<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CheckpointError("checkpoint: cannot open: " + path);
  const i64 file_size = static_cast<i64>(in.tellg());
  in.seekg(0);

  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, ckpt_detail::kMagic, 8) != 0)
    throw CheckpointError("bad checkpoint magic");
  const std::uint32_t version = ckpt_detail::get_u32(in);
  if (version != ckpt_detail::kVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));

  MedNcaModel<float> model;
  model.config.n = ckpt_detail::get_u32(in);
  model.config.h = ckpt_detail::get_u32(in);
  model.config.img_channels = ckpt_detail::get_u32(in);
  model.config.steps = ckpt_detail::get_u32(in);
  model.scale_factor = ckpt_detail::get_u32(in);
  model.config.fire_rate = ckpt_detail::get_f32(in);
  model.config.validate();

  if (file_size != checkpoint_file_size(model.config.n, model.config.h))
    throw CheckpointError("checkpoint length mismatch");

  auto alloc = [&](BackboneParams<float>& p) {
    const i64 n = model.config.n, h = model.config.h;
    p.conv1_w = Tensor<float>({n, n, 3, 3});
    p.conv1_b = Tensor<float>({n});
    p.conv2_w = Tensor<float>({n, n, 3, 3});
    p.conv2_b = Tensor<float>({n});
    p.dense1_w = Tensor<float>({h, 3 * n});
    p.dense1_b = Tensor<float>({h});
    p.dense2_w = Tensor<float>({n, h});
  };
  alloc(model.b1);
  alloc(model.b2);
  model.b1.for_each([&](Tensor<float>& t) { ckpt_detail::get_tensor(in, t); });
  model.b2.for_each([&](Tensor<float>& t) { ckpt_detail::get_tensor(in, t); });
  if (!in) throw CheckpointError("checkpoint truncated");
  return model;
}

}  // namespace mednca
