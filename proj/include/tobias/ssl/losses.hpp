#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "tobias/errors.hpp"
#include "tobias/tensor.hpp"

// In-batch contrastive losses. For anchor i with embeddings z1 (first
// views) and z2 (second views), both (N,D):
//
//   L = -sum_i log[ exp(z1_i.z2_i / tau) /
//         ( sum_{j!=i} exp(z1_i.z1_j / tau) + sum_j exp(z1_i.z2_j / tau) ) ]
//
// computed with max-subtraction. The denominator contains the numerator
// term, so every summand is >= 0, and N = 1 gives exactly 0. The value is
// the literal sum over anchors; trainers that want a per-anchor mean
// divide by N themselves.
namespace tobias::ssl {

namespace detail {

template <class T>
void check_pair(const TensorT<T>& z1, const TensorT<T>& z2, T tau) {
  if (z1.order() != 2 || z2.order() != 2)
    throw DimensionError("contrastive loss: embeddings must be (N,D) matrices");
  if (z1.dims() != z2.dims())
    throw DimensionError("contrastive loss: view shapes differ, " + z1.shape_string() + " vs " +
                         z2.shape_string());
  if (!(tau > T(0))) throw ConfigError("contrastive loss: tau must be > 0");
}

}  // namespace detail

// Returns the loss; when g1/g2 are given they receive d loss / d z1 and
// d loss / d z2 for the un-scaled sum.
template <class T>
T in_batch_contrastive(const TensorT<T>& z1, const TensorT<T>& z2, T tau,
                       TensorT<T>* g1 = nullptr, TensorT<T>* g2 = nullptr) {
  detail::check_pair(z1, z2, tau);
  const int64_t n = z1.dim(0), d = z1.dim(1);
  if (g1) *g1 = TensorT<T>(z1.dims());
  if (g2) *g2 = TensorT<T>(z2.dims());

  auto dot = [&](const TensorT<T>& a, int64_t i, const TensorT<T>& b, int64_t j) {
    T acc = T(0);
    for (int64_t k = 0; k < d; ++k) acc += a[i * d + k] * b[j * d + k];
    return acc;
  };

  std::vector<T> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
  T loss = T(0);
  for (int64_t i = 0; i < n; ++i) {
    T m = -std::numeric_limits<T>::infinity();
    for (int64_t j = 0; j < n; ++j) {
      a[static_cast<size_t>(j)] = dot(z1, i, z1, j) / tau;
      b[static_cast<size_t>(j)] = dot(z1, i, z2, j) / tau;
      if (j != i) m = std::max(m, a[static_cast<size_t>(j)]);
      m = std::max(m, b[static_cast<size_t>(j)]);
    }
    T denom = T(0);
    for (int64_t j = 0; j < n; ++j) {
      if (j != i) denom += std::exp(a[static_cast<size_t>(j)] - m);
      denom += std::exp(b[static_cast<size_t>(j)] - m);
    }
    loss += -b[static_cast<size_t>(i)] + m + std::log(denom);

    if (g1) {
      for (int64_t j = 0; j < n; ++j) {
        // d L_i / d score, then chain through the two bilinear forms.
        const T pa = (j != i) ? std::exp(a[static_cast<size_t>(j)] - m) / denom : T(0);
        const T pb = std::exp(b[static_cast<size_t>(j)] - m) / denom - (j == i ? T(1) : T(0));
        for (int64_t k = 0; k < d; ++k) {
          if (j != i) {
            (*g1)[i * d + k] += pa / tau * z1[j * d + k];
            (*g1)[j * d + k] += pa / tau * z1[i * d + k];
          }
          (*g1)[i * d + k] += pb / tau * z2[j * d + k];
          (*g2)[j * d + k] += pb / tau * z1[i * d + k];
        }
      }
    }
  }
  return loss;
}

// The plain two-view objective: both batches come from the baseline
// augmentation pipeline.
template <class T>
T l_self(const TensorT<T>& zprime, const TensorT<T>& zdprime, T tau, TensorT<T>* g1 = nullptr,
         TensorT<T>* g2 = nullptr) {
  return in_batch_contrastive(zprime, zdprime, tau, g1, g2);
}

// The background-swap objective: identical functional form, but the
// second batch holds embeddings of probabilistically merged views. With
// p = 0 the views coincide with the plain pipeline's, so the two losses
// agree bit for bit under coupled streams.
template <class T>
T l_tobias(const TensorT<T>& zprime, const TensorT<T>& zp, T tau, TensorT<T>* g1 = nullptr,
           TensorT<T>* g2 = nullptr) {
  return in_batch_contrastive(zprime, zp, tau, g1, g2);
}

// Mean positive-pair softmax weight: how much of anchor i's denominator
// its own numerator claims, averaged over anchors. Used as a temperature
// probe; for identical views it decreases as tau grows.
template <class T>
T numerator_share(const TensorT<T>& z1, const TensorT<T>& z2, T tau) {
  detail::check_pair(z1, z2, tau);
  const int64_t n = z1.dim(0), d = z1.dim(1);
  auto dot = [&](const TensorT<T>& a, int64_t i, const TensorT<T>& b, int64_t j) {
    T acc = T(0);
    for (int64_t k = 0; k < d; ++k) acc += a[i * d + k] * b[j * d + k];
    return acc;
  };
  T share = T(0);
  for (int64_t i = 0; i < n; ++i) {
    T m = -std::numeric_limits<T>::infinity();
    std::vector<T> s;
    s.reserve(static_cast<size_t>(2 * n));
    for (int64_t j = 0; j < n; ++j) {
      if (j != i) s.push_back(dot(z1, i, z1, j) / tau);
      s.push_back(dot(z1, i, z2, j) / tau);
    }
    const T num = dot(z1, i, z2, i) / tau;
    for (T v : s) m = std::max(m, v);
    T denom = T(0);
    for (T v : s) denom += std::exp(v - m);
    share += std::exp(num - m) / denom;
  }
  return share / static_cast<T>(n);
}

// Softmax cross-entropy with soft targets, mean over the batch. glogits,
// when requested, is (softmax - target) / N.
template <class T>
T cross_entropy(const TensorT<T>& logits, const TensorT<T>& targets,
                TensorT<T>* glogits = nullptr) {
  if (logits.order() != 2 || targets.dims() != logits.dims())
    throw DimensionError("cross_entropy: logits and targets must share an (N,C) shape");
  const int64_t n = logits.dim(0), c = logits.dim(1);
  if (glogits) *glogits = TensorT<T>(logits.dims());
  T loss = T(0);
  std::vector<T> prob(static_cast<size_t>(c));
  for (int64_t i = 0; i < n; ++i) {
    T m = logits[i * c];
    for (int64_t k = 1; k < c; ++k) m = std::max(m, logits[i * c + k]);
    T denom = T(0);
    for (int64_t k = 0; k < c; ++k) {
      prob[static_cast<size_t>(k)] = std::exp(logits[i * c + k] - m);
      denom += prob[static_cast<size_t>(k)];
    }
    for (int64_t k = 0; k < c; ++k) {
      const T p = prob[static_cast<size_t>(k)] / denom;
      const T t = targets[i * c + k];
      if (t != T(0)) loss -= t * (logits[i * c + k] - m - std::log(denom));
      if (glogits) (*glogits)[i * c + k] = (p - t) / static_cast<T>(n);
    }
  }
  return loss / static_cast<T>(n);
}

template <class T>
T cross_entropy_labels(const TensorT<T>& logits, const std::vector<int64_t>& labels,
                       TensorT<T>* glogits = nullptr) {
  if (logits.order() != 2 || static_cast<int64_t>(labels.size()) != logits.dim(0))
    throw DimensionError("cross_entropy: need one label per logits row");
  TensorT<T> targets(logits.dims());
  for (int64_t i = 0; i < logits.dim(0); ++i) {
    const int64_t y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= logits.dim(1))
      throw InvariantError("cross_entropy: label " + std::to_string(y) + " outside " +
                           std::to_string(logits.dim(1)) + " classes");
    targets[i * logits.dim(1) + y] = T(1);
  }
  return cross_entropy(logits, targets, glogits);
}

}  // namespace tobias::ssl
