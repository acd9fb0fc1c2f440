#include "drivelab/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "drivelab/pipeline/config.hpp"

namespace drivelab::pipeline {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

const char* dtype_name(Dtype d) {
  switch (d) {
    case Dtype::F64: return "f64";
    case Dtype::U64: return "u64";
    case Dtype::U8: return "u8";
  }
  return "?";
}

std::size_t dtype_size(Dtype d) { return d == Dtype::U8 ? 1 : 8; }

template <class T>
void append_pod(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T read_pod(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

template <class T>
std::vector<unsigned char> to_bytes(const T* data, std::size_t n) {
  std::vector<unsigned char> b(n * sizeof(T));
  if (n != 0) std::memcpy(b.data(), data, b.size());
  return b;
}

template <class T>
std::vector<T> from_bytes(const std::vector<unsigned char>& b) {
  std::vector<T> v(b.size() / sizeof(T));
  if (!v.empty()) std::memcpy(v.data(), b.data(), b.size());
  return v;
}

}  // namespace

void Checkpoint::add(Block b) {
  if (b.name.empty() || b.name.find_first_of(" \t\n") != std::string::npos) {
    throw std::invalid_argument("checkpoint: block name '" + b.name + "' must be non-empty without whitespace");
  }
  if (has(b.name)) throw std::invalid_argument("checkpoint: duplicate block '" + b.name + "'");
  index_[b.name] = blocks_.size();
  blocks_.push_back(std::move(b));
}

void Checkpoint::put(const std::string& name, const diff::Tensor& t) {
  add({name, Dtype::F64, t.rows(), t.cols(), to_bytes(t.data(), t.size())});
}

void Checkpoint::put_f64(const std::string& name, const std::vector<double>& v) {
  add({name, Dtype::F64, 1, v.size(), to_bytes(v.data(), v.size())});
}

void Checkpoint::put_u64(const std::string& name, const std::vector<std::uint64_t>& v) {
  add({name, Dtype::U64, 1, v.size(), to_bytes(v.data(), v.size())});
}

void Checkpoint::put_u8(const std::string& name, const std::vector<std::uint8_t>& v) {
  add({name, Dtype::U8, 1, v.size(), to_bytes(v.data(), v.size())});
}

const Checkpoint::Block& Checkpoint::block(const std::string& name, Dtype dtype) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw CheckpointError(CheckpointError::Kind::Missing, "checkpoint: missing block '" + name + "'");
  const Block& b = blocks_[it->second];
  if (b.dtype != dtype) {
    throw CheckpointError(CheckpointError::Kind::Corrupt, "checkpoint: block '" + name + "' has dtype " +
                                                              dtype_name(b.dtype) + ", expected " + dtype_name(dtype));
  }
  return b;
}

diff::Tensor Checkpoint::tensor(const std::string& name) const {
  const Block& b = block(name, Dtype::F64);
  return diff::Tensor(b.rows, b.cols, from_bytes<double>(b.bytes));
}

std::vector<double> Checkpoint::f64(const std::string& name) const { return from_bytes<double>(block(name, Dtype::F64).bytes); }

std::vector<std::uint64_t> Checkpoint::u64(const std::string& name) const {
  return from_bytes<std::uint64_t>(block(name, Dtype::U64).bytes);
}

std::vector<std::uint8_t> Checkpoint::u8(const std::string& name) const {
  return from_bytes<std::uint8_t>(block(name, Dtype::U8).bytes);
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& b : blocks_) out.push_back(b.name);
  return out;
}

std::string Checkpoint::serialize() const {
  std::string manifest;
  std::size_t offset = 0;
  for (const auto& b : blocks_) {
    manifest += b.name + " " + dtype_name(b.dtype) + " " + std::to_string(b.rows) + " " + std::to_string(b.cols) + " " +
                std::to_string(offset) + " " + std::to_string(b.bytes.size()) + "\n";
    offset += b.bytes.size();
  }
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  append_pod(out, kCheckpointVersion);
  append_pod(out, fingerprint);
  append_pod(out, static_cast<std::uint64_t>(manifest.size()));
  out += manifest;
  append_pod(out, static_cast<std::uint64_t>(offset));
  out.reserve(out.size() + offset + 8);
  for (const auto& b : blocks_) out.append(reinterpret_cast<const char*>(b.bytes.data()), b.bytes.size());
  append_pod(out, fnv1a(out.data(), out.size()));
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& in) {
  using K = CheckpointError::Kind;
  if (in.size() < sizeof kCheckpointMagic + 4 + 8 + 8 + 8 + 8) throw CheckpointError(K::Corrupt, "checkpoint truncated");
  if (std::memcmp(in.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError(K::Corrupt, "checkpoint: bad magic bytes");
  }
  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = read_pod<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError(K::Version, "checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.fingerprint = read_pod<std::uint64_t>(in, pos);
  const auto mlen = read_pod<std::uint64_t>(in, pos);
  if (mlen > in.size() - pos) throw CheckpointError(K::Corrupt, "checkpoint truncated");
  const std::string manifest = in.substr(pos, mlen);
  pos += mlen;
  const auto dlen = read_pod<std::uint64_t>(in, pos);
  if (dlen > in.size() - pos || in.size() - pos - dlen != 8) throw CheckpointError(K::Corrupt, "checkpoint truncated");
  const std::size_t data_start = pos;
  std::size_t cpos = data_start + dlen;
  const auto checksum = read_pod<std::uint64_t>(in, cpos);
  if (checksum != fnv1a(in.data(), data_start + dlen)) throw CheckpointError(K::Corrupt, "checkpoint: checksum mismatch");

  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    std::istringstream ls(line);
    std::string name, dt;
    std::size_t rows = 0, cols = 0, offset = 0, nbytes = 0;
    if (!(ls >> name >> dt >> rows >> cols >> offset >> nbytes)) {
      throw CheckpointError(K::Corrupt, "checkpoint: malformed manifest line '" + line + "'");
    }
    Dtype d;
    if (dt == "f64") d = Dtype::F64;
    else if (dt == "u64") d = Dtype::U64;
    else if (dt == "u8") d = Dtype::U8;
    else throw CheckpointError(K::Corrupt, "checkpoint: unknown dtype '" + dt + "'");
    if (offset + nbytes > dlen || nbytes != rows * cols * dtype_size(d)) {
      throw CheckpointError(K::Corrupt, "checkpoint: block '" + name + "' does not fit the data section");
    }
    Block b{name, d, rows, cols, std::vector<unsigned char>(in.begin() + static_cast<std::ptrdiff_t>(data_start + offset),
                                                            in.begin() + static_cast<std::ptrdiff_t>(data_start + offset + nbytes))};
    try {
      ck.add(std::move(b));
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(K::Corrupt, e.what());
    }
  }
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::Io, "checkpoint: cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace drivelab::pipeline
