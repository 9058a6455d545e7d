// File formats: the CDSPT01 binary tensor container, binary PGM (P5) for
// 8-bit label/distance rasters, and binary PPM (P6) for images.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cdsp/tensor.hpp"

namespace cdsp {

// Binary tensor layout: magic "CDSPT01" (7 bytes), u8 dtype (0=f32, 1=f64),
// u8 rank, rank x u32 little-endian dims, row-major little-endian payload.
inline constexpr char kTensorMagic[8] = "CDSPT01";

template <class T>
constexpr uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

void write_tensor_raw(const std::string& path, uint8_t dtype, const Shape& shape,
                      const void* payload, size_t bytes);
// Reads header+payload; payload returned as raw bytes of the stored dtype.
void read_tensor_raw(const std::string& path, uint8_t& dtype, Shape& shape,
                     std::vector<uint8_t>& payload);

template <class T>
void save_tensor(const std::string& path, const TensorData<T>& t) {
  write_tensor_raw(path, dtype_code<T>(), t.shape, t.data.data(), t.data.size() * sizeof(T));
}

// Loads a tensor, converting between f32/f64 when the stored dtype differs.
template <class T>
TensorData<T> load_tensor(const std::string& path) {
  uint8_t dtype;
  Shape shape;
  std::vector<uint8_t> payload;
  read_tensor_raw(path, dtype, shape, payload);
  TensorData<T> out(shape);
  const int64_t n = out.numel();
  if (dtype == 0) {
    const float* p = reinterpret_cast<const float*>(payload.data());
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
  } else {
    const double* p = reinterpret_cast<const double*>(payload.data());
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(p[i]);
  }
  return out;
}

// 8-bit binary PGM. `comment`, when nonempty, is written as a single
// '#'-prefixed header line and returned verbatim on load.
void save_pgm(const std::string& path, int height, int width,
              const std::vector<uint8_t>& pixels, const std::string& comment = "");
void load_pgm(const std::string& path, int& height, int& width,
              std::vector<uint8_t>& pixels, std::string* comment = nullptr);

// 8-bit binary PPM, interleaved RGB rows.
void save_ppm(const std::string& path, int height, int width,
              const std::vector<uint8_t>& rgb);
void load_ppm(const std::string& path, int& height, int& width, std::vector<uint8_t>& rgb);

// Image tensor conversion: 3xHxW floats in [0,1] <-> 8-bit PPM pixels.
// Generator output is already quantized to /255 steps, so this is lossless
// for dataset files.
std::vector<uint8_t> image_to_rgb8(const TensorData<float>& img);
TensorData<float> rgb8_to_image(int height, int width, const std::vector<uint8_t>& rgb);

}  // namespace cdsp
