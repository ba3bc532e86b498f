#pragma once

// Named layers.  `add_*` registers parameters under a prefix, `apply_*`
// runs the layer against a ParamScope bound to the same Weights.

#include "rvt/nn/ops.hpp"
#include "rvt/nn/weights.hpp"

#include <random>
#include <string>

namespace rvt::nn {

template <class T>
void add_linear(Weights<T>& w, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  w.add(name + ".weight", {in, out}, xavier_uniform<T>(in, out, rng));
  w.add(name + ".bias", {out}, std::vector<T>(out, T{0}));
}

template <class T>
Tensor<T> apply_linear(ParamScope<T>& p, const std::string& name, const Tensor<T>& x) {
  return linear(x, p(name + ".weight"), p(name + ".bias"));
}

template <class T>
void add_layer_norm(Weights<T>& w, const std::string& name, std::size_t dim) {
  w.add(name + ".gamma", {dim}, std::vector<T>(dim, T{1}));
  w.add(name + ".beta", {dim}, std::vector<T>(dim, T{0}));
}

template <class T>
Tensor<T> apply_layer_norm(ParamScope<T>& p, const std::string& name, const Tensor<T>& x) {
  return layer_norm(x, p(name + ".gamma"), p(name + ".beta"));
}

/// Two-layer perceptron with a GELU in between.
template <class T>
void add_mlp(Weights<T>& w, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
             std::mt19937_64& rng) {
  add_linear(w, name + ".fc1", in, hidden, rng);
  add_linear(w, name + ".fc2", hidden, out, rng);
}

template <class T>
Tensor<T> apply_mlp(ParamScope<T>& p, const std::string& name, const Tensor<T>& x) {
  return apply_linear(p, name + ".fc2", gelu(apply_linear(p, name + ".fc1", x)));
}

template <class T>
void add_attention(Weights<T>& w, const std::string& name, std::size_t dim, std::mt19937_64& rng) {
  for (const char* proj : {".q", ".k", ".v", ".out"}) add_linear(w, name + proj, dim, dim, rng);
}

/// Multi-head self-attention: q/k/v projections, masked scaled dot-product
/// attention, output projection.
template <class T>
Tensor<T> apply_attention(ParamScope<T>& p, const std::string& name, const Tensor<T>& x, std::size_t heads,
                          const AttentionMask* mask) {
  Tensor<T> q = apply_linear(p, name + ".q", x);
  Tensor<T> k = apply_linear(p, name + ".k", x);
  Tensor<T> v = apply_linear(p, name + ".v", x);
  return apply_linear(p, name + ".out", scaled_dot_product_attention(q, k, v, heads, mask));
}

/// Pre-norm transformer block: x + attn(ln(x)), then + mlp(ln(.)).
template <class T>
void add_block(Weights<T>& w, const std::string& name, std::size_t dim, std::size_t mlp_hidden, std::mt19937_64& rng) {
  add_layer_norm(w, name + ".ln1", dim);
  add_attention(w, name + ".attn", dim, rng);
  add_layer_norm(w, name + ".ln2", dim);
  add_mlp(w, name + ".mlp", dim, mlp_hidden, dim, rng);
}

template <class T>
Tensor<T> apply_block(ParamScope<T>& p, const std::string& name, const Tensor<T>& x, std::size_t heads,
                      const AttentionMask* mask) {
  Tensor<T> h = add(x, apply_attention(p, name + ".attn", apply_layer_norm(p, name + ".ln1", x), heads, mask));
  return add(h, apply_mlp(p, name + ".mlp", apply_layer_norm(p, name + ".ln2", h)));
}

}  // namespace rvt::nn
