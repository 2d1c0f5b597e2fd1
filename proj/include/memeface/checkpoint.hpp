#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "memeface/layers.hpp"

namespace memeface {

// Versioned binary container, little-endian:
//
//   "MFCK" | u32 version | i64 epoch | u32 len + kind | 32-byte SHA-256 of the
//   config JSON | u32 len + config JSON | u32 tensor count |
//   per tensor: u32 len + name, u8 dtype (1 = f64), u32 rank, u32 dims[rank],
//   raw values | 32-byte SHA-256 of every preceding byte.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::int64_t epoch = 0;
  std::string kind;  // "gan" or "damsm"
  nlohmann::json config;
  StateDict tensors;
};

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::int64_t epoch = 0;
  std::string kind;
};

// Raised for malformed input; `offset` is the byte position where parsing stopped.
class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
CheckpointHeader parse_checkpoint_header(std::span<const std::uint8_t> bytes);

// Written to a temporary sibling and renamed into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);
std::string file_sha256(const std::filesystem::path& path);
// Digest over names, shapes and raw values of every parameter.
std::string parameter_digest(const ParameterList& params);

}  // namespace memeface
