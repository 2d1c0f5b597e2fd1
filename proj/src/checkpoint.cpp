#include "memeface/checkpoint.hpp"

#include <openssl/sha.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace memeface {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic{'M', 'F', 'C', 'K'};
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::size_t kDigestSize = SHA256_DIGEST_LENGTH;

std::array<std::uint8_t, kDigestSize> sha256(std::span<const std::uint8_t> bytes) {
  std::array<std::uint8_t, kDigestSize> out{};
  SHA256(bytes.data(), bytes.size(), out.data());
  return out;
}

std::string hex(std::span<const std::uint8_t> digest) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(digest.size() * 2);
  for (std::uint8_t b : digest) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - offset_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what, offset_);
    }
  }
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.subspan(offset_, n);
    offset_ += n;
    return out;
  }
  std::string get_string(const char* what) {
    const auto len = get<std::uint32_t>(what);
    auto raw = get_bytes(len, what);
    return std::string(raw.begin(), raw.end());
  }
  std::size_t offset() const { return offset_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

CheckpointHeader read_header(Reader& in) {
  auto magic = in.get_bytes(kMagic.size(), "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw CheckpointError("not a checkpoint file (bad magic)", 0);
  CheckpointHeader header;
  const std::size_t version_at = in.offset();
  header.version = in.get<std::uint32_t>("version");
  if (header.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(header.version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")",
                          version_at);
  }
  header.epoch = in.get<std::int64_t>("epoch");
  header.kind = in.get_string("kind");
  return header;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  Writer out;
  out.put_bytes(kMagic.data(), kMagic.size());
  out.put(checkpoint.version);
  out.put(checkpoint.epoch);
  out.put_string(checkpoint.kind);
  const std::string config = checkpoint.config.dump();
  const auto config_digest = sha256(std::span(reinterpret_cast<const std::uint8_t*>(config.data()), config.size()));
  out.put_bytes(config_digest.data(), config_digest.size());
  out.put_string(config);
  out.put(static_cast<std::uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    out.put_string(name);
    out.put(kDtypeF64);
    out.put(static_cast<std::uint32_t>(tensor.rank()));
    for (int d : tensor.shape()) out.put(static_cast<std::uint32_t>(d));
    out.put_bytes(tensor.data(), tensor.size() * sizeof(double));
  }
  const auto digest = sha256(out.bytes());
  out.put_bytes(digest.data(), digest.size());
  return std::move(out.bytes());
}

CheckpointHeader parse_checkpoint_header(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  return read_header(in);
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const CheckpointHeader header = read_header(in);
  Checkpoint ck;
  ck.version = header.version;
  ck.epoch = header.epoch;
  ck.kind = header.kind;

  auto stored_config_digest = in.get_bytes(kDigestSize, "config digest");
  const std::size_t config_at = in.offset();
  const std::string config = in.get_string("config");
  const auto config_digest = sha256(std::span(reinterpret_cast<const std::uint8_t*>(config.data()), config.size()));
  if (!std::equal(config_digest.begin(), config_digest.end(), stored_config_digest.begin())) {
    throw CheckpointError("config digest mismatch", config_at);
  }
  try {
    ck.config = nlohmann::json::parse(config);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("config is not valid JSON: ") + e.what(), config_at);
  }

  const auto count = in.get<std::uint32_t>("tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t tensor_at = in.offset();
    std::string name = in.get_string("tensor name");
    const auto dtype = in.get<std::uint8_t>("tensor dtype");
    if (dtype != kDtypeF64) throw CheckpointError("unknown dtype " + std::to_string(dtype) + " for " + name, tensor_at);
    const auto rank = in.get<std::uint32_t>("tensor rank");
    if (rank > 8) throw CheckpointError("implausible rank for " + name, tensor_at);
    Shape shape;
    std::uint64_t elements = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = in.get<std::uint32_t>("tensor dims");
      shape.push_back(static_cast<int>(dim));
      elements *= dim;
    }
    if (elements > (bytes.size() - in.offset()) / sizeof(double)) {
      throw CheckpointError("checkpoint truncated while reading values of " + name, in.offset());
    }
    auto raw = in.get_bytes(static_cast<std::size_t>(elements) * sizeof(double), "tensor values");
    std::vector<double> values(static_cast<std::size_t>(elements));
    std::memcpy(values.data(), raw.data(), raw.size());
    ck.tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }

  const std::size_t body_end = in.offset();
  auto stored = in.get_bytes(kDigestSize, "checksum");
  const auto actual = sha256(bytes.first(body_end));
  if (!std::equal(actual.begin(), actual.end(), stored.begin())) {
    throw CheckpointError("checksum mismatch, file is corrupt", body_end);
  }
  if (in.offset() != bytes.size()) throw CheckpointError("trailing bytes after checksum", in.offset());
  return ck;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what(), e.offset());
  }
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> head(4096);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  return parse_checkpoint_header(head);
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) { return hex(sha256(bytes)); }

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

std::string parameter_digest(const ParameterList& params) {
  Writer out;
  for (const auto& p : params) {
    out.put_string(p.name);
    for (int d : p.var.shape()) out.put(static_cast<std::uint32_t>(d));
    out.put_bytes(p.var.value().data(), p.var.size() * sizeof(double));
  }
  return sha256_hex(out.bytes());
}

}  // namespace memeface
