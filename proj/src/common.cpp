#include "textshift/common.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace textshift {

Fnv1a& Fnv1a::update(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= p[i];
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

Fnv1a& Fnv1a::update(std::string_view bytes) {
  return update(bytes.data(), bytes.size());
}

std::string Fnv1a::hex() const {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << state_;
  return os.str();
}

std::string hash_hex(std::string_view bytes) { return Fnv1a().update(bytes).hex(); }

std::string hash_file(const std::filesystem::path& path) { return hash_hex(read_file(path)); }

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view stage) {
  Fnv1a h;
  h.update_pod(global_seed);
  h.update(stage);
  return h.digest();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::MissingArtifact, "cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Config, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::Config, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace textshift
