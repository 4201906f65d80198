#include "hippofuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "hippofuse/config.hpp"

namespace hippofuse {

namespace {

constexpr char kMagic[4] = {'H', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  out.write(reinterpret_cast<const char*>(&v), 4);
}
void put_u64(std::ofstream& out, std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  out.write(reinterpret_cast<const char*>(&v), 8);
}
void put_floats(std::ofstream& out, const std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * 4));
  } else {
    for (float f : v) {
      const std::uint32_t le = __builtin_bswap32(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&le), 4);
    }
  }
}

std::uint32_t get_u32(std::ifstream& in, const std::string& what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (in.gcount() != 4) throw IoError(msg("checkpoint truncated reading ", what));
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  return v;
}
std::uint64_t get_u64(std::ifstream& in, const std::string& what) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (in.gcount() != 8) throw IoError(msg("checkpoint truncated reading ", what));
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  return v;
}
std::vector<float> get_floats(std::ifstream& in, std::uint64_t n,
                              const std::string& what) {
  std::vector<float> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
  if (in.gcount() != static_cast<std::streamsize>(n * 4))
    throw IoError(msg("checkpoint truncated reading ", what));
  if constexpr (std::endian::native == std::endian::big)
    for (auto& f : v)
      f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const FusionNetwork<float>& net) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(msg("cannot write checkpoint '", path.string(), "'"));
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  const std::string cfg = network_config_to_json(net.config()).dump();
  put_u64(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = net.gather_params();
  put_u64(out, params.size());
  put_floats(out, params);
  const auto stats = net.gather_running_stats();
  put_u64(out, stats.size());
  put_floats(out, stats);
  if (!out) throw IoError(msg("short write to checkpoint '", path.string(), "'"));
}

FusionNetwork<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(msg("cannot open checkpoint '", path.string(), "'"));
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(msg("'", path.string(), "' is not a checkpoint (bad magic)"));
  const auto version = get_u32(in, "version");
  if (version != kVersion)
    throw IoError(msg("checkpoint version ", version, " unsupported (expected ",
                      kVersion, ")"));
  const auto cfg_len = get_u64(in, "config length");
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (in.gcount() != static_cast<std::streamsize>(cfg_len))
    throw IoError("checkpoint truncated reading config");
  NetworkConfig cfg = network_config_from_json(nlohmann::json::parse(cfg_text));

  auto net = FusionNetwork<float>::build(cfg, 0);
  const auto n_params = get_u64(in, "parameter count");
  auto params = get_floats(in, n_params, "parameters");
  net.scatter_params(params);
  const auto n_stats = get_u64(in, "running-stat count");
  auto stats = get_floats(in, n_stats, "running statistics");
  net.scatter_running_stats(stats);
  return net;
}

}  // namespace hippofuse
