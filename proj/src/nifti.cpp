#include "hippofuse/nifti.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "hippofuse/errors.hpp"

namespace hippofuse {

namespace {

std::uint16_t bswap16(std::uint16_t v) { return __builtin_bswap16(v); }
std::uint32_t bswap32(std::uint32_t v) { return __builtin_bswap32(v); }

std::int16_t swap(std::int16_t v) {
  return static_cast<std::int16_t>(bswap16(static_cast<std::uint16_t>(v)));
}
std::int32_t swap(std::int32_t v) {
  return static_cast<std::int32_t>(bswap32(static_cast<std::uint32_t>(v)));
}
float swap(float v) {
  return std::bit_cast<float>(bswap32(std::bit_cast<std::uint32_t>(v)));
}

void swap_header(Nifti1Header& h) {
  h.sizeof_hdr = swap(h.sizeof_hdr);
  h.extents = swap(h.extents);
  h.session_error = swap(h.session_error);
  for (auto& d : h.dim) d = swap(d);
  h.intent_p1 = swap(h.intent_p1);
  h.intent_p2 = swap(h.intent_p2);
  h.intent_p3 = swap(h.intent_p3);
  h.intent_code = swap(h.intent_code);
  h.datatype = swap(h.datatype);
  h.bitpix = swap(h.bitpix);
  h.slice_start = swap(h.slice_start);
  for (auto& p : h.pixdim) p = swap(p);
  h.vox_offset = swap(h.vox_offset);
  h.scl_slope = swap(h.scl_slope);
  h.scl_inter = swap(h.scl_inter);
  h.slice_end = swap(h.slice_end);
  h.cal_max = swap(h.cal_max);
  h.cal_min = swap(h.cal_min);
  h.slice_duration = swap(h.slice_duration);
  h.toffset = swap(h.toffset);
  h.glmax = swap(h.glmax);
  h.glmin = swap(h.glmin);
  h.qform_code = swap(h.qform_code);
  h.sform_code = swap(h.sform_code);
  h.quatern_b = swap(h.quatern_b);
  h.quatern_c = swap(h.quatern_c);
  h.quatern_d = swap(h.quatern_d);
  h.qoffset_x = swap(h.qoffset_x);
  h.qoffset_y = swap(h.qoffset_y);
  h.qoffset_z = swap(h.qoffset_z);
  for (auto& v : h.srow_x) v = swap(v);
  for (auto& v : h.srow_y) v = swap(v);
  for (auto& v : h.srow_z) v = swap(v);
}

constexpr std::int32_t kHeaderSize = 348;

}  // namespace

NiftiVolume read_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(msg("cannot open '", path.string(), "'"));

  Nifti1Header h{};
  in.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(h)))
    throw IoError(msg("'", path.string(), "': truncated header (", in.gcount(),
                      " of 348 bytes)"));

  bool swapped = false;
  if (h.sizeof_hdr != kHeaderSize) {
    if (swap(h.sizeof_hdr) == kHeaderSize) {
      swapped = true;
      swap_header(h);
    } else {
      throw IoError(msg("'", path.string(), "': sizeof_hdr is ", h.sizeof_hdr,
                        ", expected 348 in either byte order"));
    }
  }
  if (std::strncmp(h.magic, "n+1", 4) != 0)
    throw IoError(msg("'", path.string(), "': magic is not 'n+1' (single-file .nii)"));
  if (h.datatype != kNiftiInt16 && h.datatype != kNiftiFloat32)
    throw IoError(msg("'", path.string(), "': unsupported datatype ", h.datatype,
                      " (supported: 4 = int16, 16 = float32)"));
  if (h.dim[0] < 3 || h.dim[0] > 7)
    throw IoError(msg("'", path.string(), "': dim[0] = ", h.dim[0], ", expected >= 3"));
  for (int d = 4; d <= h.dim[0]; ++d)
    if (h.dim[d] > 1)
      throw IoError(msg("'", path.string(), "': dim[", d, "] = ", h.dim[d],
                        ", only 3-D volumes are supported"));
  const std::size_t nx = static_cast<std::size_t>(h.dim[1]);
  const std::size_t ny = static_cast<std::size_t>(h.dim[2]);
  const std::size_t nz = static_cast<std::size_t>(h.dim[3]);
  if (nx < 1 || ny < 1 || nz < 1)
    throw IoError(msg("'", path.string(), "': degenerate dims ", nx, "x", ny, "x", nz));
  const std::size_t count = nx * ny * nz;

  if (h.vox_offset < kHeaderSize)
    throw IoError(msg("'", path.string(), "': vox_offset ", h.vox_offset, " < 348"));
  in.seekg(static_cast<std::streamoff>(h.vox_offset), std::ios::beg);

  const std::size_t elem = h.datatype == kNiftiInt16 ? 2 : 4;
  std::vector<char> raw(count * elem);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError(msg("'", path.string(), "': truncated payload (", in.gcount(), " of ",
                      raw.size(), " bytes)"));

  NiftiVolume vol;
  vol.datatype = h.datatype;
  vol.byte_swapped = swapped;
  vol.scl_slope = h.scl_slope;
  vol.scl_inter = h.scl_inter;
  vol.grid = Tensor({nz, ny, nx});
  const bool apply_scale = h.scl_slope != 0.0f;
  float* out = vol.grid.data();
  if (h.datatype == kNiftiFloat32) {
    const auto* src = reinterpret_cast<const std::uint32_t*>(raw.data());
    for (std::size_t i = 0; i < count; ++i) {
      float v = std::bit_cast<float>(swapped ? bswap32(src[i]) : src[i]);
      out[i] = apply_scale ? h.scl_slope * v + h.scl_inter : v;
    }
  } else {
    const auto* src = reinterpret_cast<const std::uint16_t*>(raw.data());
    for (std::size_t i = 0; i < count; ++i) {
      const auto v = static_cast<std::int16_t>(swapped ? bswap16(src[i]) : src[i]);
      const float f = static_cast<float>(v);
      out[i] = apply_scale ? h.scl_slope * f + h.scl_inter : f;
    }
  }
  return vol;
}

void write_nifti(const std::filesystem::path& path, const Tensor& grid) {
  if (grid.rank() != 3)
    throw ShapeError(msg("write_nifti expects a [D,H,W] grid, got ",
                         shape_string(grid.shape())));
  Nifti1Header h{};
  h.sizeof_hdr = kHeaderSize;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(grid.extent(2));  // x fastest
  h.dim[2] = static_cast<std::int16_t>(grid.extent(1));
  h.dim[3] = static_cast<std::int16_t>(grid.extent(0));
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = kNiftiFloat32;
  h.bitpix = 32;
  for (auto& p : h.pixdim) p = 1.0f;
  h.vox_offset = 352.0f;  // header + 4-byte extension flag
  h.scl_slope = 0.0f;
  h.scl_inter = 0.0f;
  std::memcpy(h.magic, "n+1", 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(msg("cannot write '", path.string(), "'"));
  if constexpr (std::endian::native == std::endian::big) swap_header(h);
  out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  const char ext[4] = {0, 0, 0, 0};
  out.write(ext, 4);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(grid.data()),
              static_cast<std::streamsize>(grid.size() * sizeof(float)));
  } else {
    std::vector<std::uint32_t> le(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
      le[i] = bswap32(std::bit_cast<std::uint32_t>(grid[i]));
    out.write(reinterpret_cast<const char*>(le.data()),
              static_cast<std::streamsize>(le.size() * 4));
  }
  if (!out) throw IoError(msg("short write to '", path.string(), "'"));
}

}  // namespace hippofuse
