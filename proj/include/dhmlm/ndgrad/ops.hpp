#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dhmlm/common/rng.hpp"
#include "dhmlm/ndgrad/tape.hpp"

namespace dhmlm::ndgrad {

// Every op checks shapes (invalid-argument) and that its output is finite
// (numerical-error).

/// [m,k] x [k,n] -> [m,n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b);

/// x [m,k] * w [k,n] + bias [n]
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

template <class T>
Var<T> add(Var<T> a, Var<T> b);

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b);

template <class T>
Var<T> scale(Var<T> a, double factor);

/// Sum of all elements, shape [1].
template <class T>
Var<T> sum(Var<T> a);

template <class T>
Var<T> mean(Var<T> a);

/// Rows of a [V,d] table -> [ids.size(), d].
template <class T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);

/// Selected rows of [m,d] -> [rows.size(), d].
template <class T>
Var<T> take_rows(Var<T> x, std::span<const std::size_t> rows);

/// Row-wise softmax over the last dimension.
template <class T>
Var<T> softmax(Var<T> x);

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5);

/// tanh approximation.
template <class T>
Var<T> gelu(Var<T> x);

template <class T>
Var<T> relu(Var<T> x);

/// Inverted dropout: kept units are scaled by 1/(1-rate).
template <class T>
Var<T> dropout(Var<T> x, double rate, Rng& rng);

/// Mean over rows of -log softmax(logits)[target], computed in one fused pass.
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets);

/// Mean over rows of -log probs[target]; the unfused reference path.
template <class T>
Var<T> nll_from_probs(Var<T> probs, std::span<const std::int32_t> targets);

/// Multi-head scaled dot-product self-attention. q, k, v are [batch*seq, d]
/// with heads laid out as contiguous column blocks. key_valid has batch*seq
/// entries; invalid keys receive zero attention.
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t seq, std::size_t heads,
                 std::span<const std::uint8_t> key_valid);

/// Row-wise softmax of a plain tensor, outside any tape.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x);

}  // namespace dhmlm::ndgrad
