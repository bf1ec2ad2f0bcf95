#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "hcmt/data.hpp"
#include "hcmt/errors.hpp"

namespace hcmt {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::vector<unsigned char> gzip_read_file(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open gzip file: " + path.string());
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool bad = n < 0;
  gzclose(f);
  if (bad) throw IoError("corrupt gzip stream: " + path.string());
  return out;
}

void gzip_write_file(const std::filesystem::path& path, const void* data, std::size_t size) {
  gzFile f = gzopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot open gzip file for writing: " + path.string());
  const char* p = static_cast<const char*>(data);
  std::size_t left = size;
  while (left > 0) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(left, 1u << 26));
    if (gzwrite(f, p, chunk) != static_cast<int>(chunk)) {
      gzclose(f);
      throw IoError("short gzip write: " + path.string());
    }
    p += chunk;
    left -= chunk;
  }
  gzclose(f);
}

std::vector<unsigned char> zlib_inflate_bytes(const unsigned char* p, std::size_t n,
                                              const std::string& context) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK)  // accepts zlib and gzip wrappers
    throw IoError("inflate init failed: " + context);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  zs.next_in = const_cast<unsigned char*>(p);
  zs.avail_in = static_cast<uInt>(n);
  int rc;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IoError("corrupt compressed data: " + context);
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  } while (rc != Z_STREAM_END && zs.avail_in > 0);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) throw IoError("truncated compressed data: " + context);
  return out;
}

// ---------------------------------------------------------------------------
// NIfTI-1

#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
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
  float cal_max, cal_min;
  float slice_duration, toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtUint16 = 512;

std::uint16_t bswap16(std::uint16_t v) { return static_cast<std::uint16_t>((v >> 8) | (v << 8)); }
std::uint32_t bswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}
std::uint64_t bswap64(std::uint64_t v) {
  return (static_cast<std::uint64_t>(bswap32(static_cast<std::uint32_t>(v))) << 32) |
         bswap32(static_cast<std::uint32_t>(v >> 32));
}

void swap_header(NiftiHeader& h) {
  auto s16 = [](std::int16_t& v) {
    v = static_cast<std::int16_t>(bswap16(static_cast<std::uint16_t>(v)));
  };
  auto s32 = [](std::int32_t& v) {
    v = static_cast<std::int32_t>(bswap32(static_cast<std::uint32_t>(v)));
  };
  auto sf = [](float& v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u = bswap32(u);
    std::memcpy(&v, &u, 4);
  };
  s32(h.sizeof_hdr);
  for (auto& d : h.dim) s16(d);
  s16(h.intent_code);
  s16(h.datatype);
  s16(h.bitpix);
  s16(h.slice_start);
  for (auto& p : h.pixdim) sf(p);
  sf(h.vox_offset);
  sf(h.scl_slope);
  sf(h.scl_inter);
}

// Converts raw on-disk samples into doubles, honoring byte order and scaling.
std::vector<double> decode_samples(const unsigned char* p, std::size_t count, std::int16_t dtype,
                                   bool swapped, float slope, float inter,
                                   const std::string& context) {
  std::vector<double> out(count);
  const double a = (slope == 0.0f) ? 1.0 : static_cast<double>(slope);
  const double b = (slope == 0.0f) ? 0.0 : static_cast<double>(inter);
  auto get16 = [&](std::size_t i) {
    std::uint16_t v;
    std::memcpy(&v, p + 2 * i, 2);
    return swapped ? bswap16(v) : v;
  };
  auto get32 = [&](std::size_t i) {
    std::uint32_t v;
    std::memcpy(&v, p + 4 * i, 4);
    return swapped ? bswap32(v) : v;
  };
  switch (dtype) {
    case kDtUint8:
      for (std::size_t i = 0; i < count; ++i) out[i] = a * p[i] + b;
      break;
    case kDtInt16:
      for (std::size_t i = 0; i < count; ++i)
        out[i] = a * static_cast<std::int16_t>(get16(i)) + b;
      break;
    case kDtUint16:
      for (std::size_t i = 0; i < count; ++i) out[i] = a * get16(i) + b;
      break;
    case kDtInt32:
      for (std::size_t i = 0; i < count; ++i)
        out[i] = a * static_cast<std::int32_t>(get32(i)) + b;
      break;
    case kDtFloat32:
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t u = get32(i);
        float f;
        std::memcpy(&f, &u, 4);
        out[i] = a * f + b;
      }
      break;
    case kDtFloat64:
      for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t u;
        std::memcpy(&u, p + 8 * i, 8);
        if (swapped) u = bswap64(u);
        double d;
        std::memcpy(&d, &u, 8);
        out[i] = a * d + b;
      }
      break;
    default:
      throw IoError("unsupported voxel datatype " + std::to_string(dtype) + " in " + context);
  }
  return out;
}

Volume load_nifti(const std::filesystem::path& path) {
  const bool gz = ends_with(lower(path.string()), ".nii.gz") || ends_with(lower(path.string()), ".gz");
  std::vector<unsigned char> bytes = gz ? gzip_read_file(path) : read_file_bytes(path);
  if (bytes.size() < sizeof(NiftiHeader)) throw IoError("truncated NIfTI file: " + path.string());
  NiftiHeader h;
  std::memcpy(&h, bytes.data(), sizeof(h));
  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swapped = true;
    if (h.sizeof_hdr != 348) throw IoError("not a NIfTI-1 file: " + path.string());
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
    throw IoError("missing NIfTI magic in " + path.string());
  if (h.dim[0] < 3) throw IoError("NIfTI file is not 3D: " + path.string());
  for (int a = 4; a <= h.dim[0] && a < 8; ++a)
    if (h.dim[a] > 1) throw IoError("NIfTI file has non-trivial dim " + std::to_string(a) +
                                    " (only 3D volumes are supported): " + path.string());
  const std::int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
  if (nx <= 0 || ny <= 0 || nz <= 0) throw IoError("bad NIfTI dims in " + path.string());
  const std::size_t count = static_cast<std::size_t>(nx) * ny * nz;
  const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t bpv = static_cast<std::size_t>(h.bitpix) / 8;
  if (offset + count * bpv > bytes.size())
    throw IoError("NIfTI voxel data truncated: " + path.string());

  Volume v;
  // On-disk order is x-fastest; we store (H,W,D) = (z,y,x) with x fastest, so
  // the raw sample order carries over unchanged.
  v.grid = Tensor({nz, ny, nx});
  auto samples = decode_samples(bytes.data() + offset, count, h.datatype, swapped, h.scl_slope,
                                h.scl_inter, path.string());
  std::copy(samples.begin(), samples.end(), v.grid.data());
  v.spacing = {static_cast<double>(h.pixdim[3]), static_cast<double>(h.pixdim[2]),
               static_cast<double>(h.pixdim[1])};
  for (auto& s : v.spacing)
    if (!(s > 0.0)) s = 1.0;
  v.id = path.stem().string();
  return v;
}

void save_nifti(const std::filesystem::path& path, const Volume& v, bool as_uint8) {
  NiftiHeader h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(v.grid.dim(2));
  h.dim[2] = static_cast<std::int16_t>(v.grid.dim(1));
  h.dim[3] = static_cast<std::int16_t>(v.grid.dim(0));
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = as_uint8 ? kDtUint8 : kDtFloat64;
  h.bitpix = as_uint8 ? 8 : 64;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(v.spacing[2]);
  h.pixdim[2] = static_cast<float>(v.spacing[1]);
  h.pixdim[3] = static_cast<float>(v.spacing[0]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(v.spacing[2]);
  h.srow_y[1] = static_cast<float>(v.spacing[1]);
  h.srow_z[2] = static_cast<float>(v.spacing[0]);
  std::memcpy(h.magic, "n+1", 4);

  std::vector<unsigned char> bytes(352, 0);
  std::memcpy(bytes.data(), &h, sizeof(h));
  if (as_uint8) {
    bytes.reserve(352 + v.grid.size());
    for (std::size_t i = 0; i < v.grid.size(); ++i)
      bytes.push_back(static_cast<unsigned char>(v.grid[i]));
  } else {
    const auto* p = reinterpret_cast<const unsigned char*>(v.grid.data());
    bytes.insert(bytes.end(), p, p + v.grid.size() * sizeof(double));
  }
  if (ends_with(lower(path.string()), ".gz")) {
    gzip_write_file(path, bytes.data(), bytes.size());
  } else {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + path.string());
  }
}

// ---------------------------------------------------------------------------
// NRRD

Volume load_nrrd(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  // Header is text up to the first blank line.
  std::size_t header_end = 0;
  for (std::size_t i = 0; i + 1 < bytes.size(); ++i) {
    if (bytes[i] == '\n' && (bytes[i + 1] == '\n' ||
                             (bytes[i + 1] == '\r' && i + 2 < bytes.size() && bytes[i + 2] == '\n'))) {
      header_end = i + (bytes[i + 1] == '\n' ? 2 : 3);
      break;
    }
  }
  if (header_end == 0) throw IoError("no NRRD header terminator in " + path.string());
  std::string header(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header_end));
  if (header.rfind("NRRD", 0) != 0) throw IoError("not an NRRD file: " + path.string());

  std::string type, encoding = "raw", endian = "little";
  std::vector<std::int64_t> sizes;
  std::vector<double> spacings;
  std::istringstream hs(header);
  std::string line;
  std::getline(hs, line);  // magic
  while (std::getline(hs, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = lower(line.substr(0, colon));
    std::string val = line.substr(colon + 1);
    if (!val.empty() && val[0] == '=') val.erase(0, 1);  // "key:=value" form
    while (!val.empty() && val.front() == ' ') val.erase(0, 1);
    if (key == "type") {
      type = lower(val);
    } else if (key == "encoding") {
      encoding = lower(val);
    } else if (key == "endian") {
      endian = lower(val);
    } else if (key == "dimension") {
      if (std::stoi(val) != 3) throw IoError("only 3D NRRD supported: " + path.string());
    } else if (key == "sizes") {
      std::istringstream vs(val);
      std::int64_t x;
      while (vs >> x) sizes.push_back(x);
    } else if (key == "spacings") {
      std::istringstream vs(val);
      double x;
      while (vs >> x) spacings.push_back(x);
    } else if (key == "space directions") {
      // diagonal directions only: norm of each row vector
      std::string cleaned = val;
      for (char& c : cleaned)
        if (c == '(' || c == ')' || c == ',') c = ' ';
      std::istringstream vs(cleaned);
      std::vector<double> nums;
      double x;
      while (vs >> x) nums.push_back(x);
      if (nums.size() == 9) {
        spacings = {std::sqrt(nums[0] * nums[0] + nums[1] * nums[1] + nums[2] * nums[2]),
                    std::sqrt(nums[3] * nums[3] + nums[4] * nums[4] + nums[5] * nums[5]),
                    std::sqrt(nums[6] * nums[6] + nums[7] * nums[7] + nums[8] * nums[8])};
      }
    }
  }
  if (sizes.size() != 3) throw IoError("NRRD sizes field missing/invalid in " + path.string());
  if (endian != "little") throw IoError("big-endian NRRD not supported: " + path.string());

  std::int16_t dtype;
  if (type == "uchar" || type == "unsigned char" || type == "uint8" || type == "uint8_t")
    dtype = kDtUint8;
  else if (type == "short" || type == "int16" || type == "int16_t" || type == "signed short")
    dtype = kDtInt16;
  else if (type == "ushort" || type == "uint16" || type == "unsigned short")
    dtype = kDtUint16;
  else if (type == "int" || type == "int32" || type == "int32_t")
    dtype = kDtInt32;
  else if (type == "float")
    dtype = kDtFloat32;
  else if (type == "double")
    dtype = kDtFloat64;
  else
    throw IoError("unsupported NRRD type '" + type + "' in " + path.string());

  std::vector<unsigned char> payload(bytes.begin() + static_cast<std::ptrdiff_t>(header_end),
                                     bytes.end());
  if (encoding == "gzip" || encoding == "gz")
    payload = zlib_inflate_bytes(payload.data(), payload.size(), path.string());
  else if (encoding != "raw")
    throw IoError("unsupported NRRD encoding '" + encoding + "' in " + path.string());

  const std::size_t count = static_cast<std::size_t>(sizes[0] * sizes[1] * sizes[2]);
  const std::size_t bpv = dtype == kDtUint8 ? 1 : dtype == kDtFloat64 ? 8
                          : (dtype == kDtInt16 || dtype == kDtUint16) ? 2 : 4;
  if (payload.size() < count * bpv) throw IoError("NRRD voxel data truncated: " + path.string());

  Volume v;
  v.grid = Tensor({sizes[2], sizes[1], sizes[0]});  // sizes are fastest-first
  auto samples = decode_samples(payload.data(), count, dtype, false, 1.0f, 0.0f, path.string());
  std::copy(samples.begin(), samples.end(), v.grid.data());
  if (spacings.size() == 3) v.spacing = {spacings[2], spacings[1], spacings[0]};
  v.id = path.stem().string();
  return v;
}

void save_nrrd(const std::filesystem::path& path, const Volume& v) {
  std::ostringstream os;
  os.precision(17);
  os << "NRRD0004\n";
  os << "type: double\n";
  os << "dimension: 3\n";
  os << "sizes: " << v.grid.dim(2) << " " << v.grid.dim(1) << " " << v.grid.dim(0) << "\n";
  os << "spacings: " << v.spacing[2] << " " << v.spacing[1] << " " << v.spacing[0] << "\n";
  os << "encoding: raw\n";
  os << "endian: little\n\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::string header = os.str();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(v.grid.data()),
            static_cast<std::streamsize>(v.grid.size() * sizeof(double)));
  if (!out) throw IoError("short write: " + path.string());
}

// ---------------------------------------------------------------------------
// Raw array container: <file>.rawvol (doubles) + <file>.rawvol.json sidecar.

Volume load_rawvol(const std::filesystem::path& path) {
  const std::filesystem::path sidecar = path.string() + ".json";
  std::ifstream meta(sidecar);
  if (!meta) throw IoError("missing sidecar metadata: " + sidecar.string());
  nlohmann::json j;
  try {
    meta >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt sidecar " + sidecar.string() + ": " + e.what());
  }
  const Shape shape = j.at("shape").get<Shape>();
  if (shape.size() != 3) throw IoError("rawvol shape must be 3D: " + sidecar.string());
  Volume v;
  v.grid = Tensor(shape);
  auto spacing = j.value("spacing", std::vector<double>{1, 1, 1});
  if (spacing.size() == 3) v.spacing = {spacing[0], spacing[1], spacing[2]};
  auto bytes = read_file_bytes(path);
  if (bytes.size() != v.grid.size() * sizeof(double))
    throw IoError("rawvol payload size mismatch: " + path.string());
  std::memcpy(v.grid.data(), bytes.data(), bytes.size());
  v.id = path.stem().string();
  return v;
}

void save_rawvol(const std::filesystem::path& path, const Volume& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(v.grid.data()),
            static_cast<std::streamsize>(v.grid.size() * sizeof(double)));
  if (!out) throw IoError("short write: " + path.string());
  nlohmann::json j = {{"shape", v.grid.shape()},
                      {"spacing", std::vector<double>{v.spacing[0], v.spacing[1], v.spacing[2]}}};
  std::ofstream meta(path.string() + ".json");
  meta << j.dump(2) << "\n";
  if (!meta) throw IoError("cannot write sidecar for " + path.string());
}

enum class VolumeFormat { kNifti, kNrrd, kRawvol };

VolumeFormat format_of(const std::filesystem::path& path) {
  const std::string p = lower(path.string());
  if (ends_with(p, ".nii") || ends_with(p, ".nii.gz")) return VolumeFormat::kNifti;
  if (ends_with(p, ".nrrd")) return VolumeFormat::kNrrd;
  if (ends_with(p, ".rawvol")) return VolumeFormat::kRawvol;
  throw IoError("unsupported volume format: " + path.string() +
                " (expected .nii, .nii.gz, .nrrd or .rawvol)");
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
  switch (format_of(path)) {
    case VolumeFormat::kNifti: return load_nifti(path);
    case VolumeFormat::kNrrd: return load_nrrd(path);
    default: return load_rawvol(path);
  }
}

LabelMask load_mask(const std::filesystem::path& path) {
  Volume v = load_volume(path);
  validate_binary(v.grid, path.string());
  LabelMask m;
  m.labels = std::move(v.grid);
  m.id = std::move(v.id);
  return m;
}

void save_volume(const std::filesystem::path& path, const Volume& v) {
  switch (format_of(path)) {
    case VolumeFormat::kNifti: save_nifti(path, v, /*as_uint8=*/false); break;
    case VolumeFormat::kNrrd: save_nrrd(path, v); break;
    default: save_rawvol(path, v); break;
  }
}

void save_mask(const std::filesystem::path& path, const LabelMask& m) {
  validate_binary(m.labels, path.string());
  Volume v;
  v.grid = m.labels;
  v.id = m.id;
  switch (format_of(path)) {
    case VolumeFormat::kNifti: save_nifti(path, v, /*as_uint8=*/true); break;
    case VolumeFormat::kNrrd: save_nrrd(path, v); break;
    default: save_rawvol(path, v); break;
  }
}

std::pair<Volume, LabelMask> load_case(const std::filesystem::path& image_path,
                                       const std::filesystem::path& mask_path) {
  Volume v = load_volume(image_path);
  LabelMask m = load_mask(mask_path);
  if (v.grid.shape() != m.labels.shape())
    throw DataError("image/mask shape mismatch: " + image_path.string() + " is " +
                    shape_str(v.grid.shape()) + ", " + mask_path.string() + " is " +
                    shape_str(m.labels.shape()));
  return {std::move(v), std::move(m)};
}

}  // namespace hcmt
