#include "triseg/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <type_traits>

#include "triseg/error.hpp"

namespace triseg {
namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1;
  float intent_p2;
  float intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max;
  float cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax;
  std::int32_t glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b;
  float quatern_c;
  float quatern_d;
  float qoffset_x;
  float qoffset_y;
  float qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

enum : std::int16_t {
  kUInt8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
  kInt8 = 256,
  kUInt16 = 512,
  kUInt32 = 768,
};

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

GzHandle open_gz(const std::filesystem::path& path, const char* mode) {
  GzHandle handle(gzopen(path.string().c_str(), mode));
  if (!handle) fail(ErrorCode::IoError, "cannot open " + path.string());
  return handle;
}

void read_exact(gzFile_s* f, void* dst, std::size_t bytes, const std::filesystem::path& path) {
  auto* out = static_cast<char*>(dst);
  while (bytes > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
    const int got = gzread(f, out, chunk);
    if (got <= 0) fail(ErrorCode::CorruptVolume, "truncated NIfTI data in " + path.string());
    out += got;
    bytes -= static_cast<std::size_t>(got);
  }
}

void write_exact(gzFile_s* f, const void* src, std::size_t bytes, const std::filesystem::path& path) {
  const auto* in = static_cast<const char*>(src);
  while (bytes > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes, 1u << 30));
    const int put = gzwrite(f, in, chunk);
    if (put <= 0) fail(ErrorCode::IoError, "write failed for " + path.string());
    in += put;
    bytes -= static_cast<std::size_t>(put);
  }
}

template <class T>
void decode(const std::vector<char>& raw, std::vector<double>& out) {
  const std::size_t n = raw.size() / sizeof(T);
  out.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

Nifti1Header header_for(const VolumeGeometry& geometry, std::int16_t datatype, std::int16_t bitpix) {
  Nifti1Header hdr{};
  if (geometry.header) {
    std::memcpy(&hdr, geometry.header->data(), sizeof(hdr));
  } else {
    hdr.qform_code = 0;
    hdr.sform_code = 0;
    hdr.xyzt_units = 2;  // millimetres
    hdr.pixdim[0] = 1.0f;
  }
  hdr.sizeof_hdr = 348;
  hdr.dim[0] = 3;
  hdr.dim[1] = static_cast<std::int16_t>(geometry.dims.x);
  hdr.dim[2] = static_cast<std::int16_t>(geometry.dims.y);
  hdr.dim[3] = static_cast<std::int16_t>(geometry.dims.z);
  for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
  for (int i = 0; i < 3; ++i) hdr.pixdim[i + 1] = geometry.spacing[static_cast<std::size_t>(i)];
  hdr.datatype = datatype;
  hdr.bitpix = bitpix;
  hdr.vox_offset = 352.0f;
  hdr.scl_slope = 1.0f;
  hdr.scl_inter = 0.0f;
  hdr.cal_min = 0.0f;
  hdr.cal_max = 0.0f;
  std::memcpy(hdr.magic, "n+1\0", 4);
  return hdr;
}

template <class T>
void write_volume(const std::filesystem::path& path, const Volume<T>& volume, const VolumeGeometry& geometry,
                  std::int16_t datatype) {
  if (!(volume.dims() == geometry.dims)) {
    fail(ErrorCode::GeometryMismatch,
         "volume " + volume.dims().str() + " does not match geometry " + geometry.dims.str());
  }
  const Nifti1Header hdr = header_for(geometry, datatype, static_cast<std::int16_t>(8 * sizeof(T)));
  const bool compress = path.extension() == ".gz";
  GzHandle f(gzopen(path.string().c_str(), compress ? "wb6" : "wbT"));
  if (!f) fail(ErrorCode::IoError, "cannot write " + path.string());
  write_exact(f.get(), &hdr, sizeof(hdr), path);
  const char extension[4] = {0, 0, 0, 0};
  write_exact(f.get(), extension, sizeof(extension), path);
  write_exact(f.get(), volume.storage().data(), volume.size() * sizeof(T), path);
  if (gzclose(f.release()) != Z_OK) fail(ErrorCode::IoError, "close failed for " + path.string());
}

}  // namespace

NiftiImage read_nifti(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::IoError, "no such file " + path.string());
  auto f = open_gz(path, "rb");
  Nifti1Header hdr{};
  read_exact(f.get(), &hdr, sizeof(hdr), path);
  if (hdr.sizeof_hdr != 348) {
    fail(ErrorCode::CorruptVolume, path.string() + " is not a little-endian NIfTI-1 file");
  }
  if (hdr.dim[0] < 3 || hdr.dim[1] < 1 || hdr.dim[2] < 1 || hdr.dim[3] < 1) {
    fail(ErrorCode::CorruptVolume, path.string() + " is not a 3D volume");
  }
  for (int i = 4; i <= hdr.dim[0] && i < 8; ++i) {
    if (hdr.dim[i] > 1) fail(ErrorCode::CorruptVolume, path.string() + " has more than one volume");
  }

  NiftiImage image;
  image.geometry.dims = {hdr.dim[1], hdr.dim[2], hdr.dim[3]};
  for (int i = 0; i < 3; ++i) {
    const float s = hdr.pixdim[i + 1];
    image.geometry.spacing[static_cast<std::size_t>(i)] = s > 0.0f ? s : 1.0f;
  }
  NiftiHeaderBytes bytes{};
  std::memcpy(bytes.data(), &hdr, sizeof(hdr));
  image.geometry.header = bytes;

  const long offset = static_cast<long>(hdr.vox_offset);
  if (offset > 348) {
    std::vector<char> skip(static_cast<std::size_t>(offset - 348));
    read_exact(f.get(), skip.data(), skip.size(), path);
  }

  std::size_t element = 0;
  switch (hdr.datatype) {
    case kUInt8: case kInt8: element = 1; break;
    case kInt16: case kUInt16: element = 2; break;
    case kInt32: case kUInt32: case kFloat32: element = 4; break;
    case kFloat64: element = 8; break;
    default: fail(ErrorCode::CorruptVolume, "unsupported NIfTI datatype " + std::to_string(hdr.datatype));
  }
  std::vector<char> raw(image.geometry.dims.count() * element);
  read_exact(f.get(), raw.data(), raw.size(), path);

  switch (hdr.datatype) {
    case kUInt8: decode<std::uint8_t>(raw, image.voxels); break;
    case kInt8: decode<std::int8_t>(raw, image.voxels); break;
    case kInt16: decode<std::int16_t>(raw, image.voxels); break;
    case kUInt16: decode<std::uint16_t>(raw, image.voxels); break;
    case kInt32: decode<std::int32_t>(raw, image.voxels); break;
    case kUInt32: decode<std::uint32_t>(raw, image.voxels); break;
    case kFloat32: decode<float>(raw, image.voxels); break;
    case kFloat64: decode<double>(raw, image.voxels); break;
    default: break;
  }

  if (hdr.scl_slope != 0.0f && std::isfinite(hdr.scl_slope) && !(hdr.scl_slope == 1.0f && hdr.scl_inter == 0.0f)) {
    for (double& v : image.voxels) v = v * hdr.scl_slope + hdr.scl_inter;
  }
  return image;
}

void write_nifti(const std::filesystem::path& path, const Volume<float>& volume, const VolumeGeometry& geometry) {
  write_volume(path, volume, geometry, kFloat32);
}

void write_nifti(const std::filesystem::path& path, const Volume<std::uint8_t>& volume,
                 const VolumeGeometry& geometry) {
  write_volume(path, volume, geometry, kUInt8);
}

}  // namespace triseg
