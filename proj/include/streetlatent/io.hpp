#pragma once

// File helpers shared by the dataset, boundary and pipeline code: text and
// binary writes, little-endian latent matrices, SHA-256 content hashes.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "streetlatent/error.hpp"
#include "streetlatent/latent.hpp"

namespace streetlatent::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline std::string to_hex(const unsigned char* data, std::size_t n) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(2 * n, '0');
  for (std::size_t i = 0; i < n; ++i) {
    s[2 * i] = kDigits[data[i] >> 4];
    s[2 * i + 1] = kDigits[data[i] & 0xf];
  }
  return s;
}

inline std::string sha256(const void* data, std::size_t size) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  return to_hex(md.data(), len);
}

inline std::string sha256(const std::string& s) { return sha256(s.data(), s.size()); }
inline std::string sha256(const std::vector<std::uint8_t>& b) { return sha256(b.data(), b.size()); }

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string sha256_file(const fs::path& path) { return sha256(read_text(path)); }

inline void ensure_parent(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

// Shortest round-trip decimal for a double, so JSON artifacts are stable.
inline std::string format_real(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

// Row-major matrix of 64-bit floats, little-endian, no header.
inline void write_latents(const fs::path& path, const std::vector<LatentCode>& codes) {
  ensure_parent(path);
  std::string bytes;
  for (const auto& z : codes)
    for (double v : z.values()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
    }
  write_text(path, bytes);
}

inline std::vector<LatentCode> read_latents(const fs::path& path, std::size_t dim) {
  const std::string bytes = read_text(path);
  if (dim == 0 || bytes.size() % (8 * dim) != 0)
    throw IoError(path.string() + " is not a whole number of " + std::to_string(dim) + "-d latents");
  const std::size_t n = bytes.size() / (8 * dim);
  std::vector<LatentCode> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k)
        bits |= std::uint64_t{static_cast<unsigned char>(bytes[(i * dim + j) * 8 + k])} << (8 * k);
      v[j] = std::bit_cast<double>(bits);
    }
    out.emplace_back(std::move(v));
  }
  return out;
}

inline json to_json(const LatentCode& z) { return json(z.vector()); }

inline LatentCode latent_from_json(const json& j) { return LatentCode(j.get<std::vector<double>>()); }

/// sha256 of every regular file under `root`, keyed by relative path.
/// Paths containing any of `exclude` as a substring are skipped.
inline std::map<std::string, std::string> tree_hashes(const fs::path& root,
                                                      const std::vector<std::string>& exclude = {}) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    if (std::any_of(exclude.begin(), exclude.end(),
                    [&](const std::string& x) { return rel.find(x) != std::string::npos; }))
      continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

}  // namespace streetlatent::io
