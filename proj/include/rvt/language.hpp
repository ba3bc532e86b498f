#pragma once

// Language token sources.  The stub encoder hashes whitespace-separated words
// into rows of a seeded random table; the file source reads precomputed
// per-token embeddings written by an external text encoder.
//
// Embedding file layout (text header, then raw little-endian values):
//
//   rvt-lang-embedding 1
//   text <the exact string>
//   shape <L> <D>
//   dtype float32|float64
//   end_header
//   <L * D values, row-major>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvt {

enum class LanguageSource { Stub, File };

struct LanguageTokens {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<double> embeddings;  // count x dim, row-major
  LanguageSource source = LanguageSource::Stub;
  std::string text;
};

inline std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Training-free stand-in for a pretrained text encoder.
class StubLanguageEncoder {
 public:
  explicit StubLanguageEncoder(std::size_t dim = 64, std::size_t table_rows = 4096, std::uint64_t seed = 7)
      : dim_(dim), rows_(table_rows), seed_(seed) {
    if (dim == 0 || table_rows == 0) throw std::invalid_argument("StubLanguageEncoder: empty table");
  }

  std::size_t dim() const { return dim_; }

  std::size_t row_of(const std::string& word) const { return fnv1a64(word.data(), word.size()) % rows_; }

  /// Row r of the fixed table, N(0, 1) entries.
  std::vector<double> table_row(std::size_t r) const {
    std::mt19937_64 rng(splitmix64(seed_ ^ splitmix64(r)));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> out(dim_);
    for (auto& x : out) x = dist(rng);
    return out;
  }

  LanguageTokens encode(const std::string& text) const {
    LanguageTokens t;
    t.dim = dim_;
    t.source = LanguageSource::Stub;
    t.text = text;
    for (const auto& w : split_words(text)) {
      const auto row = table_row(row_of(w));
      t.embeddings.insert(t.embeddings.end(), row.begin(), row.end());
      ++t.count;
    }
    return t;
  }

 private:
  std::size_t dim_;
  std::size_t rows_;
  std::uint64_t seed_;
};

inline void save_language_embedding(const LanguageTokens& t, const std::string& path, bool float32 = true) {
  if (t.text.find('\n') != std::string::npos) throw std::invalid_argument("language text may not contain newlines");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << "rvt-lang-embedding 1\n"
     << "text " << t.text << "\n"
     << "shape " << t.count << " " << t.dim << "\n"
     << "dtype " << (float32 ? "float32" : "float64") << "\n"
     << "end_header\n";
  for (double v : t.embeddings) {
    if (float32) {
      const float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), sizeof f);
    } else {
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  if (!os) throw std::runtime_error("short write to '" + path + "'");
}

/// Load precomputed embeddings; the header string must equal `expected_text`.
inline LanguageTokens load_language_embedding(const std::string& path, const std::string& expected_text) {
  static_assert(std::endian::native == std::endian::little);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open language embedding '" + path + "'");
  std::string line;
  std::getline(is, line);
  if (line != "rvt-lang-embedding 1") throw std::runtime_error("'" + path + "': not a language embedding file");

  LanguageTokens t;
  t.source = LanguageSource::File;
  std::string dtype;
  bool have_text = false, have_shape = false;
  while (std::getline(is, line) && line != "end_header") {
    if (line.rfind("text ", 0) == 0 || line == "text") {
      t.text = line.size() > 5 ? line.substr(5) : "";
      have_text = true;
    } else if (line.rfind("shape ", 0) == 0) {
      std::istringstream ss(line.substr(6));
      ss >> t.count >> t.dim;
      have_shape = static_cast<bool>(ss);
    } else if (line.rfind("dtype ", 0) == 0) {
      dtype = line.substr(6);
    }
  }
  if (line != "end_header" || !have_text || !have_shape || (dtype != "float32" && dtype != "float64")) {
    throw std::runtime_error("'" + path + "': malformed header");
  }
  if (t.text != expected_text) {
    throw std::invalid_argument("language embedding '" + path + "' encodes \"" + t.text + "\", expected \"" +
                                expected_text + "\"");
  }
  t.embeddings.resize(t.count * t.dim);
  for (auto& v : t.embeddings) {
    if (dtype == "float32") {
      float f;
      is.read(reinterpret_cast<char*>(&f), sizeof f);
      v = f;
    } else {
      is.read(reinterpret_cast<char*>(&v), sizeof v);
    }
  }
  if (!is) throw std::runtime_error("'" + path + "': truncated embedding data");
  return t;
}

}  // namespace rvt
