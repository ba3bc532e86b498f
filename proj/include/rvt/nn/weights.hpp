#pragma once

// Named parameter store with optimizer moments, per-forward parameter
// binding, and the checkpoint file format:
//
//   bytes 0..7    "RVTCKPT1"
//   bytes 8..15   manifest length M, uint64 little-endian
//   next M bytes  JSON manifest {"format", "step", "tensors": [{name, role,
//                 shape, dtype, offset, bytes}]}
//   remainder     blob; each tensor's raw little-endian values at `offset`

#include "rvt/nn/tensor.hpp"

#include "json.hpp"  // vendored nlohmann/json

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace rvt::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
struct Parameter {
  Shape shape;
  std::vector<T> value;
  std::vector<T> m;  // first moment
  std::vector<T> v;  // second moment

  bool operator==(const Parameter&) const = default;
};

template <class T>
struct Weights {
  std::map<std::string, Parameter<T>> params;
  std::int64_t step = 0;  // optimizer steps taken

  Parameter<T>& add(const std::string& name, Shape shape, std::vector<T> value) {
    if (params.count(name)) throw std::invalid_argument("Weights: duplicate parameter '" + name + "'");
    if (numel(shape) != value.size()) throw std::invalid_argument("Weights: bad initializer for '" + name + "'");
    const std::size_t n = value.size();
    return params[name] = Parameter<T>{std::move(shape), std::move(value), std::vector<T>(n, T{0}), std::vector<T>(n, T{0})};
  }

  const Parameter<T>& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("Weights: no parameter '" + name + "'");
    return it->second;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params) n += p.value.size();
    return n;
  }

  template <class U>
  Weights<U> cast() const {
    Weights<U> out;
    out.step = step;
    for (const auto& [name, p] : params) {
      out.params[name] = Parameter<U>{p.shape, std::vector<U>(p.value.begin(), p.value.end()),
                                      std::vector<U>(p.m.begin(), p.m.end()), std::vector<U>(p.v.begin(), p.v.end())};
    }
    return out;
  }

  bool operator==(const Weights&) const = default;
};

/// Gradient per parameter name.
template <class T>
using Gradients = std::map<std::string, std::vector<T>>;

/// Binds Weights into one forward pass: each parameter becomes a fresh leaf
/// so concurrent forwards over the same Weights never share gradient state.
template <class T>
class ParamScope {
 public:
  explicit ParamScope(const Weights<T>& w, bool track_grad = true) : weights_(&w), track_(track_grad) {}

  Tensor<T> operator()(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    const Parameter<T>& p = weights_->at(name);
    Tensor<T> t = track_ ? Tensor<T>::variable(p.shape, p.value) : Tensor<T>::constant(p.shape, p.value);
    leaves_.emplace(name, t);
    return t;
  }

  bool has(const std::string& name) const { return weights_->params.count(name) > 0; }

  /// Gradients for every parameter in the store (zeros for unused ones).
  Gradients<T> gradients() const {
    Gradients<T> out;
    for (const auto& [name, p] : weights_->params) {
      auto it = leaves_.find(name);
      out[name] = it == leaves_.end() ? std::vector<T>(p.value.size(), T{0}) : it->second.grad();
    }
    return out;
  }

 private:
  const Weights<T>* weights_;
  bool track_;
  std::map<std::string, Tensor<T>> leaves_;
};

// ----------------------------------------------------------- initialization

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <class T>
std::vector<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<T> out(fan_in * fan_out);
  for (auto& x : out) x = static_cast<T>(dist(rng));
  return out;
}

template <class T>
std::vector<T> normal_init(std::size_t n, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<T> out(n);
  for (auto& x : out) x = static_cast<T>(dist(rng));
  return out;
}

// --------------------------------------------------------------- checkpoints

template <class T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else if constexpr (std::is_same_v<T, double>) return "float64";
  else static_assert(sizeof(T) == 0, "unsupported dtype");
}

template <class T>
void save_checkpoint(const Weights<T>& w, const std::string& path) {
  nlohmann::json manifest;
  manifest["format"] = "rvt-checkpoint";
  manifest["version"] = 1;
  manifest["step"] = w.step;
  manifest["tensors"] = nlohmann::json::array();
  std::vector<char> blob;
  auto append = [&](const std::string& name, const char* role, const Shape& shape, const std::vector<T>& data) {
    const std::size_t bytes = data.size() * sizeof(T);
    manifest["tensors"].push_back({{"name", name}, {"role", role}, {"shape", shape}, {"dtype", dtype_name<T>()},
                                   {"offset", blob.size()}, {"bytes", bytes}});
    const auto* p = reinterpret_cast<const char*>(data.data());
    blob.insert(blob.end(), p, p + bytes);
  };
  for (const auto& [name, p] : w.params) {
    append(name, "value", p.shape, p.value);
    append(name, "m", p.shape, p.m);
    append(name, "v", p.shape, p.v);
  }
  const std::string text = manifest.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  const std::uint64_t len = text.size();
  os.write("RVTCKPT1", 8);
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!os) throw std::runtime_error("short write to checkpoint '" + path + "'");
}

template <class T>
Weights<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "RVTCKPT1", 8) != 0) {
    throw std::runtime_error("'" + path + "' is not an rvt checkpoint");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (16 + len > bytes.size()) throw std::runtime_error("checkpoint manifest truncated");
  const auto manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  const char* blob = bytes.data() + 16 + len;
  const std::size_t blob_size = bytes.size() - 16 - len;

  Weights<T> w;
  w.step = manifest.at("step").get<std::int64_t>();
  for (const auto& e : manifest.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    const auto role = e.at("role").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto nbytes = e.at("bytes").get<std::size_t>();
    if (e.at("dtype").get<std::string>() != dtype_name<T>()) {
      throw std::runtime_error("checkpoint dtype " + e.at("dtype").get<std::string>() + " does not match " + dtype_name<T>());
    }
    if (offset + nbytes > blob_size || nbytes != numel(shape) * sizeof(T)) {
      throw std::runtime_error("checkpoint entry '" + name + "' out of range");
    }
    std::vector<T> data(numel(shape));
    std::memcpy(data.data(), blob + offset, nbytes);
    Parameter<T>& p = w.params[name];
    p.shape = shape;
    if (role == "value") p.value = std::move(data);
    else if (role == "m") p.m = std::move(data);
    else if (role == "v") p.v = std::move(data);
    else throw std::runtime_error("checkpoint entry '" + name + "' has unknown role '" + role + "'");
  }
  for (const auto& [name, p] : w.params) {
    const std::size_t n = numel(p.shape);
    if (p.value.size() != n || p.m.size() != n || p.v.size() != n) {
      throw std::runtime_error("checkpoint parameter '" + name + "' is incomplete");
    }
  }
  return w;
}

}  // namespace rvt::nn
