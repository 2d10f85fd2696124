#pragma once

#include <cmath>
#include <string>

#include "tobias/errors.hpp"
#include "tobias/rng.hpp"
#include "tobias/tensor.hpp"

namespace tobias {

// Weight initialization schemes. Normal is N(0, 0.1) and Uniform is
// U(-0.1, 0.1), matching the ablation variants; Kaiming uses fan-in with
// gain sqrt(2).
enum class InitScheme { KaimingNormal, Xavier, Normal, Uniform };

inline const char* init_name(InitScheme s) {
  switch (s) {
    case InitScheme::KaimingNormal: return "kaiming";
    case InitScheme::Xavier: return "xavier";
    case InitScheme::Normal: return "normal";
    case InitScheme::Uniform: return "uniform";
  }
  return "?";
}

inline InitScheme init_from_name(const std::string& s) {
  if (s == "kaiming") return InitScheme::KaimingNormal;
  if (s == "xavier") return InitScheme::Xavier;
  if (s == "normal") return InitScheme::Normal;
  if (s == "uniform") return InitScheme::Uniform;
  throw ConfigError("unknown init scheme: " + s);
}

// fan_in/fan_out of a weight tensor: (out, in, kh, kw) for conv,
// (out, in) for linear.
inline void fan_in_out(const std::vector<int64_t>& dims, int64_t* fan_in, int64_t* fan_out) {
  if (dims.size() < 2) throw DimensionError("fan computation needs order >= 2 weights");
  int64_t receptive = 1;
  for (size_t i = 2; i < dims.size(); ++i) receptive *= dims[i];
  *fan_in = dims[1] * receptive;
  *fan_out = dims[0] * receptive;
}

// Fills a fresh tensor of the given shape, consuming rng deterministically.
template <class T>
TensorT<T> init_weights(const std::vector<int64_t>& dims, InitScheme scheme, RngState& rng) {
  TensorT<T> w(dims);
  int64_t fan_in = 1, fan_out = 1;
  if (dims.size() >= 2) fan_in_out(dims, &fan_in, &fan_out);
  switch (scheme) {
    case InitScheme::KaimingNormal: {
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal(0.0, sd));
      break;
    }
    case InitScheme::Xavier: {
      // Glorot uniform: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-a, a));
      break;
    }
    case InitScheme::Normal:
      for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal(0.0, 0.1));
      break;
    case InitScheme::Uniform:
      for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-0.1, 0.1));
      break;
  }
  return w;
}

}  // namespace tobias
