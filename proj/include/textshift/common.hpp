#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace textshift {

/// Broad failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  InvalidInput,     // malformed data or arguments
  Config,           // bad or unresolvable configuration
  MissingArtifact,  // a prior-stage artifact is absent
  Unavailable,      // a model/weights file that must be provisioned offline
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(const std::string& what) {
  throw Error(ErrorKind::InvalidInput, what);
}

// 64-bit FNV-1a. Used for provenance hashes and derived seeds; it is not a
// cryptographic digest.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes);
  Fnv1a& update(const void* data, std::size_t size);
  template <typename T>
  Fnv1a& update_pod(const T& value) {
    return update(&value, sizeof(T));
  }
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_hex(std::string_view bytes);
std::string hash_file(const std::filesystem::path& path);

/// Seed for a named sub-stage, derived from the global seed.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage);

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temporary and rename, so readers never observe a
/// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace textshift
