#pragma once

#include <cmath>
#include <string>

#include "tobias/errors.hpp"
#include "tobias/tensor.hpp"

namespace tobias {

enum class ActivationKind { ReLU, Sigmoid, Arctan, ELU, SELU, Softplus };

// Fixed published constants; the ablations name the activations without
// parameters.
inline constexpr double kEluAlpha = 1.0;
inline constexpr double kSeluAlpha = 1.6732632423543772;
inline constexpr double kSeluLambda = 1.0507009873554805;

inline const char* activation_name(ActivationKind k) {
  switch (k) {
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Sigmoid: return "sigmoid";
    case ActivationKind::Arctan: return "arctan";
    case ActivationKind::ELU: return "elu";
    case ActivationKind::SELU: return "selu";
    case ActivationKind::Softplus: return "softplus";
  }
  return "?";
}

inline ActivationKind activation_from_name(const std::string& s) {
  if (s == "relu") return ActivationKind::ReLU;
  if (s == "sigmoid") return ActivationKind::Sigmoid;
  if (s == "arctan") return ActivationKind::Arctan;
  if (s == "elu") return ActivationKind::ELU;
  if (s == "selu") return ActivationKind::SELU;
  if (s == "softplus") return ActivationKind::Softplus;
  throw ConfigError("unknown activation: " + s);
}

template <class T>
T activate_scalar(T x, ActivationKind k) {
  switch (k) {
    case ActivationKind::ReLU:
      return x > T(0) ? x : T(0);
    case ActivationKind::Sigmoid:
      return T(1) / (T(1) + std::exp(-x));
    case ActivationKind::Arctan:
      return std::atan(x);
    case ActivationKind::ELU:
      return x > T(0) ? x : T(kEluAlpha) * (std::exp(x) - T(1));
    case ActivationKind::SELU:
      return x > T(0) ? T(kSeluLambda) * x
                      : T(kSeluLambda) * T(kSeluAlpha) * (std::exp(x) - T(1));
    case ActivationKind::Softplus:
      // log(1+e^x), overflow-safe for large x.
      return x > T(30) ? x : std::log1p(std::exp(x));
  }
  return x;
}

// d/dx of the activation, expressed in terms of the input x.
template <class T>
T activate_grad_scalar(T x, ActivationKind k) {
  switch (k) {
    case ActivationKind::ReLU:
      return x > T(0) ? T(1) : T(0);
    case ActivationKind::Sigmoid: {
      T s = T(1) / (T(1) + std::exp(-x));
      return s * (T(1) - s);
    }
    case ActivationKind::Arctan:
      return T(1) / (T(1) + x * x);
    case ActivationKind::ELU:
      return x > T(0) ? T(1) : T(kEluAlpha) * std::exp(x);
    case ActivationKind::SELU:
      return x > T(0) ? T(kSeluLambda) : T(kSeluLambda) * T(kSeluAlpha) * std::exp(x);
    case ActivationKind::Softplus:
      return T(1) / (T(1) + std::exp(-x));
  }
  return T(1);
}

// Elementwise application; shape preserved.
template <class T>
TensorT<T> activate(const TensorT<T>& x, ActivationKind k) {
  TensorT<T> out(x.dims());
  for (int64_t i = 0; i < x.size(); ++i) out[i] = activate_scalar(x[i], k);
  return out;
}

}  // namespace tobias
