#ifndef VSR_IO_HPP
#define VSR_IO_HPP

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vsr/error.hpp"
#include "vsr/volume.hpp"

// On-disk formats are little-endian; this toolkit targets little-endian hosts.
static_assert(std::endian::native == std::endian::little,
              "big-endian hosts are not supported");

namespace vsr {

using json = nlohmann::json;

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw DataError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

inline void save_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline void write_bytes(const std::string& path, const void* data,
                        std::size_t len) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw DataError("short write to " + path);
}

inline std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open " + path);
  const auto len = in.tellg();
  in.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(len));
  in.read(buf.data(), len);
  if (!in) throw DataError("short read from " + path);
  return buf;
}

/// "name", "name.json" and "name.raw" all address the same VV1 pair.
inline std::string vv1_base(const std::string& path) {
  if (path.ends_with(".json")) return path.substr(0, path.size() - 5);
  if (path.ends_with(".raw")) return path.substr(0, path.size() - 4);
  return path;
}

// Volume file format VV1: JSON sidecar <name>.json plus raw payload
// <name>.raw of nx*ny*nz little-endian f32 in x-fastest order. The pipeline
// computes in f64; the f32 payload halves file size at a documented
// precision cost on write.
template <class Scalar>
void write_volume(const Volume3D<Scalar>& volume, const std::string& path) {
  volume.validate();
  const std::string base = vv1_base(path);
  json sidecar = {
      {"format", "VV1"},
      {"dims", {volume.dims[0], volume.dims[1], volume.dims[2]}},
      {"voxel_size_nm",
       {volume.voxel_size_nm[0], volume.voxel_size_nm[1], volume.voxel_size_nm[2]}},
      {"dtype", "f32"},
      {"byte_order", "little"},
  };
  save_json(base + ".json", sidecar);
  std::vector<float> payload(static_cast<std::size_t>(volume.size()));
  for (Eigen::Index i = 0; i < volume.size(); ++i)
    payload[static_cast<std::size_t>(i)] = static_cast<float>(volume.data[i]);
  write_bytes(base + ".raw", payload.data(), payload.size() * sizeof(float));
}

template <class Scalar = double>
Volume3D<Scalar> read_volume(const std::string& path) {
  const std::string base = vv1_base(path);
  const json sidecar = load_json(base + ".json");
  if (!sidecar.contains("format") || sidecar["format"] != "VV1")
    throw DataError(base + ".json: not a VV1 sidecar");
  for (const char* key : {"dims", "dtype", "byte_order"})
    if (!sidecar.contains(key))
      throw DataError(base + ".json: missing required field '" +
                      std::string(key) + "'");
  if (sidecar["dtype"] != "f32" || sidecar["byte_order"] != "little")
    throw DataError(base + ".json: unsupported dtype/byte_order");
  const auto dims_j = sidecar["dims"];
  if (!dims_j.is_array() || dims_j.size() != 3)
    throw DataError(base + ".json: dims must be a 3-element array");

  Volume3D<Scalar> volume;
  for (int a = 0; a < 3; ++a) volume.dims[a] = dims_j[a].get<int>();
  if (volume.dims.minCoeff() < 1)
    throw DataError(base + ".json: dims must all be >= 1");
  if (sidecar.contains("voxel_size_nm")) {
    const auto vs = sidecar["voxel_size_nm"];
    if (!vs.is_array() || vs.size() != 3)
      throw DataError(base + ".json: voxel_size_nm must be a 3-element array");
    for (int a = 0; a < 3; ++a) volume.voxel_size_nm[a] = vs[a].get<double>();
  }

  const auto payload = read_bytes(base + ".raw");
  const Eigen::Index n =
      Eigen::Index(volume.dims[0]) * volume.dims[1] * volume.dims[2];
  if (payload.size() != static_cast<std::size_t>(n) * sizeof(float))
    throw DataError(base + ".raw: payload holds " +
                    std::to_string(payload.size() / sizeof(float)) +
                    " values, header expects " + std::to_string(n));
  volume.data.resize(n);
  const float* f = reinterpret_cast<const float*>(payload.data());
  for (Eigen::Index i = 0; i < n; ++i) volume.data[i] = Scalar(f[i]);
  volume.validate();  // rejects non-finite payloads
  return volume;
}

/// Bare raw image payload (f32 little-endian, x-fastest); dims live in the
/// owning manifest. Matrices are stored with x as the row index so Eigen's
/// column-major layout matches the x-fastest file order.
template <class Scalar>
void write_image_raw(const MatX<Scalar>& image, const std::string& path) {
  std::vector<float> payload(static_cast<std::size_t>(image.size()));
  Eigen::Index i = 0;
  for (Eigen::Index y = 0; y < image.cols(); ++y)
    for (Eigen::Index x = 0; x < image.rows(); ++x)
      payload[static_cast<std::size_t>(i++)] = static_cast<float>(image(x, y));
  write_bytes(path, payload.data(), payload.size() * sizeof(float));
}

template <class Scalar = double>
MatX<Scalar> read_image_raw(const std::string& path, int nx, int ny) {
  const auto payload = read_bytes(path);
  const std::size_t n = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  if (payload.size() != n * sizeof(float))
    throw DataError(path + ": expected " + std::to_string(n) + " f32 values");
  MatX<Scalar> image(nx, ny);
  const float* f = reinterpret_cast<const float*>(payload.data());
  std::size_t i = 0;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) image(x, y) = Scalar(f[i++]);
  if (!image.allFinite()) throw DataError(path + ": non-finite values");
  return image;
}

using MaskImage = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// 1-bit bitmap payload: x-fastest, LSB-first within each byte, padded to a
/// whole number of bytes per image.
inline void write_bitmask(const MaskImage& mask, const std::string& path) {
  const std::size_t n = static_cast<std::size_t>(mask.size());
  std::vector<std::uint8_t> bytes((n + 7) / 8, 0);
  std::size_t i = 0;
  for (Eigen::Index y = 0; y < mask.cols(); ++y)
    for (Eigen::Index x = 0; x < mask.rows(); ++x, ++i)
      if (mask(x, y)) bytes[i >> 3] |= std::uint8_t(1u << (i & 7));
  write_bytes(path, bytes.data(), bytes.size());
}

inline MaskImage read_bitmask(const std::string& path, int nx, int ny) {
  const auto payload = read_bytes(path);
  const std::size_t n = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  if (payload.size() != (n + 7) / 8)
    throw DataError(path + ": bitmask payload size mismatch");
  MaskImage mask(nx, ny);
  std::size_t i = 0;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x, ++i)
      mask(x, y) = (static_cast<std::uint8_t>(payload[i >> 3]) >> (i & 7)) & 1u;
  return mask;
}

}  // namespace vsr

#endif  // VSR_IO_HPP
