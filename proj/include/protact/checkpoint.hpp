#pragma once

// Binary checkpoint, little-endian:
//   "PTCK" u32 version
//   str config_json, str config_hash
//   u32 n_meta, n_meta x (str key, str value)
//   u32 n_tensors, n_tensors x (str name, u32 rows, u32 cols, f64[rows*cols] column-major)
// where str = u32 length + bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "layers.hpp"

namespace protact {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_json;
  std::string config_hash;
  std::map<std::string, std::string> meta;  // vocab hashes, feature hash, target, seed, ...
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

  const Eigen::MatrixXd& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw DataError("checkpoint has no tensor " + name);
  }
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError("truncated checkpoint");
  return v;
}
inline std::string get_str(std::istream& in) {
  const auto n = get_u32(in);
  if (n > (1u << 30)) throw DataError("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw DataError("truncated checkpoint");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write("PTCK", 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_str(out, ck.config_json);
  detail::put_str(out, ck.config_hash);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::put_str(out, k);
    detail::put_str(out, v);
  }
  detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    detail::put_str(out, name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "PTCK", 4) != 0) throw DataError("not a checkpoint: " + path.string());
  const auto version = detail::get_u32(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_json = detail::get_str(in);
  ck.config_hash = detail::get_str(in);
  const auto n_meta = detail::get_u32(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = detail::get_str(in);
    ck.meta[k] = detail::get_str(in);
  }
  const auto n = detail::get_u32(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = detail::get_str(in);
    const auto rows = detail::get_u32(in);
    const auto cols = detail::get_u32(in);
    Eigen::MatrixXd t(rows, cols);
    if (t.size() && !in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw DataError("truncated checkpoint tensor " + name);
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

inline void store_tensors(const ParamStore& store, Checkpoint& ck) {
  for (std::size_t i = 0; i < store.size(); ++i) ck.tensors.emplace_back(store.names()[i], store.params()[i].value());
}

// Copies every tensor of the checkpoint into the parameter with the same
// name; shapes and name sets must agree exactly. Tensors named "frozen.*"
// are not parameters and are skipped.
inline void restore_tensors(const Checkpoint& ck, ParamStore& store) {
  std::size_t n = 0;
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("frozen.", 0) == 0) continue;
    ++n;
    if (!store.contains(name)) throw DataError("checkpoint tensor " + name + " unknown to the model");
    auto p = store.get(name);
    if (p.rows() != t.rows() || p.cols() != t.cols()) throw DataError("checkpoint tensor " + name + " shape mismatch");
    p.mutable_value() = t;
  }
  if (n != store.size()) {
    throw DataError("checkpoint holds " + std::to_string(n) + " parameter tensors, model expects " +
                    std::to_string(store.size()));
  }
}

}  // namespace protact
