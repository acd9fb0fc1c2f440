#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "drivelab/diff/tensor.hpp"

namespace drivelab::pipeline {

inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'V', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, Corrupt, Version, Fingerprint, Missing };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class Dtype : std::uint8_t { F64, U64, U8 };

/// Named blocks in insertion order.
///
/// File layout: magic (8 bytes), u32 version, u64 config fingerprint,
/// u64 manifest length, manifest text (`name dtype rows cols offset nbytes`
/// per line), u64 data length, raw little-endian data, u64 FNV-1a checksum of
/// everything before it.
class Checkpoint {
 public:
  std::uint64_t fingerprint = 0;

  void put(const std::string& name, const diff::Tensor& t);
  void put_u64(const std::string& name, const std::vector<std::uint64_t>& v);
  void put_u8(const std::string& name, const std::vector<std::uint8_t>& v);
  void put_f64(const std::string& name, const std::vector<double>& v);

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  diff::Tensor tensor(const std::string& name) const;
  std::vector<std::uint64_t> u64(const std::string& name) const;
  std::vector<std::uint8_t> u8(const std::string& name) const;
  std::vector<double> f64(const std::string& name) const;
  std::vector<std::string> names() const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  struct Block {
    std::string name;
    Dtype dtype;
    std::size_t rows;
    std::size_t cols;
    std::vector<unsigned char> bytes;
  };
  const Block& block(const std::string& name, Dtype dtype) const;
  void add(Block b);

  std::vector<Block> blocks_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace drivelab::pipeline
