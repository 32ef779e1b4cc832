#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortcut/dataset.hpp"
#include "shortcut/synth.hpp"

namespace shortcut {
namespace detail {

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) {
  const std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("cannot read " + path);
  return bytes;
}

inline void write_file(const std::string& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path);
}

}  // namespace detail

// Perturbation file layout (all fields little-endian):
//   "SPRT" | version u32 | n u32 | c u32 | h u32 | w u32 | norm_radius f32
//   labels u16[n] | data f32[n*c*h*w]
inline constexpr std::uint32_t kPertFileVersion = 1;
inline constexpr std::size_t kPertFileHeaderBytes = 28;

inline void save_perts(const PerturbationSet& perts, const std::string& path) {
  const std::size_t n = perts.n();
  std::vector<unsigned char> bytes;
  bytes.reserve(kPertFileHeaderBytes + 2 * n + 4 * perts.data.size());
  bytes.insert(bytes.end(), {'S', 'P', 'R', 'T'});
  detail::put_u32(bytes, kPertFileVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(n));
  detail::put_u32(bytes, static_cast<std::uint32_t>(perts.c));
  detail::put_u32(bytes, static_cast<std::uint32_t>(perts.h));
  detail::put_u32(bytes, static_cast<std::uint32_t>(perts.w));
  detail::put_f32(bytes, static_cast<float>(perts.norm_radius));
  for (std::uint16_t label : perts.labels) detail::put_u16(bytes, label);
  for (float v : perts.data) detail::put_f32(bytes, v);
  detail::write_file(path, bytes);
}

inline PerturbationSet load_perts(const std::string& path) {
  const std::vector<unsigned char> bytes = detail::read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SPRT", 4) != 0) {
    throw std::runtime_error("not a perturbation file: " + path);
  }
  if (bytes.size() < kPertFileHeaderBytes) {
    throw std::runtime_error("perturbation file truncated: " + path);
  }
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kPertFileVersion) {
    throw std::runtime_error("unsupported perturbation file version " +
                             std::to_string(version) + " (supported: " +
                             std::to_string(kPertFileVersion) + ")");
  }
  PerturbationSet perts;
  const std::size_t n = detail::get_u32(bytes.data() + 8);
  perts.c = static_cast<int>(detail::get_u32(bytes.data() + 12));
  perts.h = static_cast<int>(detail::get_u32(bytes.data() + 16));
  perts.w = static_cast<int>(detail::get_u32(bytes.data() + 20));
  perts.norm_radius = static_cast<double>(detail::get_f32(bytes.data() + 24));
  const std::size_t dim = static_cast<std::size_t>(perts.c) * perts.h * perts.w;
  const std::size_t expected = kPertFileHeaderBytes + 2 * n + 4 * n * dim;
  if (bytes.size() != expected) {
    throw std::runtime_error("perturbation file length mismatch: expected " +
                             std::to_string(expected) + " bytes, got " +
                             std::to_string(bytes.size()));
  }
  perts.labels.resize(n);
  perts.data.resize(n * dim);
  const unsigned char* p = bytes.data() + kPertFileHeaderBytes;
  for (std::size_t i = 0; i < n; ++i, p += 2) perts.labels[i] = detail::get_u16(p);
  for (std::size_t i = 0; i < perts.data.size(); ++i, p += 4) perts.data[i] = detail::get_f32(p);
  return perts;
}

// Wraps a raw little-endian float32 tensor dump plus a uint16 label file as a
// perturbation set. Sample count is inferred from the tensor file size; no
// normalization is applied and norm_radius is recorded as 0 (unknown).
inline PerturbationSet import_external_perturbations(const std::string& data_path, int c,
                                                     int h, int w,
                                                     const std::string& labels_path) {
  if (c < 1 || h < 1 || w < 1) {
    throw std::invalid_argument("import: sample shape must be positive");
  }
  const std::vector<unsigned char> raw = detail::read_file(data_path);
  const std::size_t dim = static_cast<std::size_t>(c) * h * w;
  const std::size_t sample_bytes = 4 * dim;
  if (raw.empty() || raw.size() % sample_bytes != 0) {
    throw std::runtime_error(
        data_path + ": size " + std::to_string(raw.size()) +
        " bytes is not a positive multiple of " + std::to_string(sample_bytes) +
        " (4 bytes x " + std::to_string(dim) + " values per sample)");
  }
  const std::size_t n = raw.size() / sample_bytes;
  const std::vector<unsigned char> raw_labels = detail::read_file(labels_path);
  if (raw_labels.size() != 2 * n) {
    throw std::runtime_error(labels_path + ": expected " + std::to_string(2 * n) +
                             " bytes for " + std::to_string(n) + " labels, got " +
                             std::to_string(raw_labels.size()));
  }
  PerturbationSet perts;
  perts.c = c;
  perts.h = h;
  perts.w = w;
  perts.norm_radius = 0.0;
  perts.labels.resize(n);
  perts.data.resize(n * dim);
  for (std::size_t i = 0; i < n; ++i) perts.labels[i] = detail::get_u16(raw_labels.data() + 2 * i);
  for (std::size_t i = 0; i < perts.data.size(); ++i) {
    perts.data[i] = detail::get_f32(raw.data() + 4 * i);
  }
  return perts;
}

// Byte-record dataset dump: each record is one label byte followed by
// c*h*w pixel bytes (round(v*255)). With shape (3,32,32) this is exactly the
// CIFAR-10 batch layout, so poisoned sets can feed any CIFAR reader.
inline void save_labeled_bytes(const LabeledImageSet& data, const std::string& path) {
  if (data.k > 256) throw std::invalid_argument("save_labeled_bytes: labels exceed one byte");
  const std::size_t dim = data.image_dim();
  std::vector<unsigned char> bytes;
  bytes.reserve(data.n() * (1 + dim));
  for (std::size_t i = 0; i < data.n(); ++i) {
    bytes.push_back(static_cast<unsigned char>(data.labels[i]));
    const auto img = data.image(i);
    for (float v : img) {
      const double b = std::lround(static_cast<double>(v) * 255.0);
      bytes.push_back(static_cast<unsigned char>(std::clamp(b, 0.0, 255.0)));
    }
  }
  detail::write_file(path, bytes);
}

inline LabeledImageSet load_labeled_bytes(const std::string& path, int c, int h, int w,
                                          int k) {
  const std::vector<unsigned char> bytes = detail::read_file(path);
  const std::size_t dim = static_cast<std::size_t>(c) * h * w;
  const std::size_t record = 1 + dim;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw std::runtime_error(path + ": size " + std::to_string(bytes.size()) +
                             " bytes is not a positive multiple of record size " +
                             std::to_string(record));
  }
  LabeledImageSet data;
  data.c = c;
  data.h = h;
  data.w = w;
  data.k = k;
  data.source = path;
  const std::size_t n = bytes.size() / record;
  data.labels.resize(n);
  data.pixels.resize(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    if (rec[0] >= k) {
      throw std::runtime_error(path + ": label " + std::to_string(rec[0]) +
                               " out of range in record " + std::to_string(i));
    }
    data.labels[i] = rec[0];
    for (std::size_t j = 0; j < dim; ++j) {
      data.pixels[i * dim + j] = static_cast<float>(rec[1 + j]) / 255.0f;
    }
  }
  return data;
}

// Binary PPM (P6) snapshot of a plane-major RGB image with values in [0,1].
inline void export_ppm(std::span<const float> img, int c, int h, int w,
                       const std::string& path) {
  if (c != 3) throw std::invalid_argument("export_ppm: need 3 channels, got " + std::to_string(c));
  if (img.size() != static_cast<std::size_t>(3) * h * w) {
    throw std::invalid_argument("export_ppm: image size mismatch");
  }
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::lround(static_cast<double>(img[ch * plane + i]) * 255.0);
      bytes.push_back(static_cast<unsigned char>(std::clamp(v, 0.0, 255.0)));
    }
  }
  detail::write_file(path, bytes);
}

}  // namespace shortcut
