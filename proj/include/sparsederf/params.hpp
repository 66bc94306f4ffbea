// Copyright (c) 2026 sparsederf authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsederf/common.hpp"

namespace sderf {

// Flat parameter vector with named block views. The whole vector is recorded
// as the tape's leading Input nodes each step, so a block's offset doubles as
// its first tape node id.
class ParamStore {
 public:
  struct Block {
    std::string name;
    int32_t offset = 0;
    int32_t count = 0;
  };

  int32_t add_block(const std::string& name, int32_t count) {
    for (const Block& b : blocks_) {
      if (b.name == name)
        throw InvariantError("duplicate parameter block: " + name);
    }
    int32_t off = int32_t(values_.size());
    blocks_.push_back({name, off, count});
    values_.resize(values_.size() + size_t(count), 0.0);
    return off;
  }

  const Block& block(const std::string& name) const {
    for (const Block& b : blocks_) {
      if (b.name == name) return b;
    }
    throw InvariantError("unknown parameter block: " + name);
  }

  bool has_block(const std::string& name) const {
    for (const Block& b : blocks_)
      if (b.name == name) return true;
    return false;
  }

  int32_t size() const { return int32_t(values_.size()); }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](int32_t i) { return values_[i]; }
  double operator[](int32_t i) const { return values_[i]; }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::vector<double> values_;
  std::vector<Block> blocks_;
};

// ============================================================================
// Checkpoints: 8-byte magic, u64 header length, JSON header, then raw
// little-endian float64 arrays in header order. Round-trips bit-exactly.
// ============================================================================

struct Checkpoint {
  int64_t step = 0;
  ParamStore params;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  nlohmann::json extra;
};

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

inline void write_f64_array(std::ostream& os, const std::vector<double>& a) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint writer assumes a little-endian host");
  os.write(reinterpret_cast<const char*>(a.data()),
           std::streamsize(a.size() * sizeof(double)));
}

inline void read_f64_array(std::istream& is, std::vector<double>& a,
                           size_t n) {
  a.resize(n);
  is.read(reinterpret_cast<char*>(a.data()), std::streamsize(n * 8));
}

}  // namespace detail

inline constexpr char kCheckpointMagic[9] = "SDRF0001";

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json hdr;
  hdr["version"] = 1;
  hdr["step"] = ck.step;
  hdr["blocks"] = nlohmann::json::array();
  for (const auto& b : ck.params.blocks()) {
    hdr["blocks"].push_back(
        {{"name", b.name}, {"offset", b.offset}, {"count", b.count}});
  }
  hdr["arrays"] = nlohmann::json::array();
  hdr["arrays"].push_back(
      {{"name", "params"}, {"count", ck.params.values().size()}});
  hdr["arrays"].push_back({{"name", "adam_m"}, {"count", ck.adam_m.size()}});
  hdr["arrays"].push_back({{"name", "adam_v"}, {"count", ck.adam_v.size()}});
  hdr["extra"] = ck.extra;
  std::string hs = hdr.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IOError("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, 8);
  detail::write_u64(os, hs.size());
  os.write(hs.data(), std::streamsize(hs.size()));
  detail::write_f64_array(os, ck.params.values());
  detail::write_f64_array(os, ck.adam_m);
  detail::write_f64_array(os, ck.adam_v);
  if (!os) throw IOError("short write on checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("bad checkpoint magic in: " + path);
  uint64_t hlen = detail::read_u64(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  if (!is) throw DataError("truncated checkpoint header in: " + path);

  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unparseable checkpoint header: " + std::string(e.what()));
  }
  if (hdr.value("version", 0) != 1)
    throw DataError("unsupported checkpoint version in: " + path);

  Checkpoint ck;
  ck.step = hdr.value("step", int64_t(0));
  ck.extra = hdr.value("extra", nlohmann::json::object());

  size_t np = 0, nm = 0, nv = 0;
  for (const auto& a : hdr.at("arrays")) {
    std::string name = a.at("name");
    size_t count = a.at("count");
    if (name == "params") np = count;
    if (name == "adam_m") nm = count;
    if (name == "adam_v") nv = count;
  }
  for (const auto& b : hdr.at("blocks")) {
    int32_t off = ck.params.add_block(b.at("name"), b.at("count"));
    if (off != b.at("offset").get<int32_t>())
      throw DataError("inconsistent block offsets in checkpoint: " + path);
  }
  if (size_t(ck.params.size()) != np)
    throw DataError("parameter count mismatch in checkpoint: " + path);
  detail::read_f64_array(is, ck.params.values(), np);
  detail::read_f64_array(is, ck.adam_m, nm);
  detail::read_f64_array(is, ck.adam_v, nv);
  if (!is) throw DataError("truncated checkpoint data in: " + path);
  return ck;
}

}  // namespace sderf
