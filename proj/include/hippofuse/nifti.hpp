#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "hippofuse/tensor.hpp"

namespace hippofuse {

// The 348-byte NIfTI-1 header, field for field.
#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;   // must be 348
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;     // 4 = int16, 16 = float32
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];             // "n+1\0" for single-file .nii
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348 bytes");

inline constexpr std::int16_t kNiftiInt16 = 4;
inline constexpr std::int16_t kNiftiFloat32 = 16;

struct NiftiVolume {
  Tensor grid;  // [D, H, W]: z slowest, x fastest, matching file order
  std::int16_t datatype = kNiftiFloat32;
  bool byte_swapped = false;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
};

// Reads an uncompressed single-file NIfTI-1 volume (float32 or int16, either
// endianness). scl_slope/scl_inter are applied when scl_slope is nonzero.
NiftiVolume read_nifti(const std::filesystem::path& path);

// Writes a float32 little-endian single-file NIfTI-1 volume.
void write_nifti(const std::filesystem::path& path, const Tensor& grid);

}  // namespace hippofuse
