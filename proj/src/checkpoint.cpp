#include "ragtrack/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace ragtrack {

namespace {

constexpr char kMagic[4] = {'R', 'G', 'T', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("truncated checkpoint");
  return s;
}

std::ifstream open_and_check(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  return is;
}

}  // namespace

void save_checkpoint(const std::string& path, const RagTrackModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_string(os, config_to_json(model.config()));

  const auto& entries = model.store().entries();
  write_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    write_string(os, e.name);
    write_u32(os, static_cast<std::uint32_t>(e.tensor.ndim()));
    for (int d = 0; d < e.tensor.ndim(); ++d) {
      write_u32(os, static_cast<std::uint32_t>(e.tensor.dim(d)));
    }
    os.write(reinterpret_cast<const char*>(e.tensor.data()),
             static_cast<std::streamsize>(e.tensor.numel() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("short write to checkpoint: " + path);
}

TrackerConfig checkpoint_config(const std::string& path) {
  std::ifstream is = open_and_check(path);
  return config_from_json(read_string(is));
}

void load_checkpoint(const std::string& path, RagTrackModel& model) {
  std::ifstream is = open_and_check(path);
  (void)read_string(is);  // configuration, already consumed by the caller

  const auto& entries = model.store().entries();
  std::uint32_t count = read_u32(is);
  if (count != entries.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                             std::to_string(entries.size()));
  }
  for (const auto& e : entries) {
    std::string name = read_string(is);
    if (name != e.name) {
      throw std::runtime_error("checkpoint tensor order mismatch at " + name);
    }
    std::uint32_t nd = read_u32(is);
    if (static_cast<int>(nd) != e.tensor.ndim()) {
      throw std::runtime_error("rank mismatch for " + name);
    }
    for (std::uint32_t d = 0; d < nd; ++d) {
      if (static_cast<int>(read_u32(is)) != e.tensor.dim(static_cast<int>(d))) {
        throw std::runtime_error("shape mismatch for " + name);
      }
    }
    Tensor t = e.tensor;
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated tensor data for " + name);
  }
}

}  // namespace ragtrack
