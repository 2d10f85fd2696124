#pragma once

#include <memory>
#include <vector>

#include "tobias/layers.hpp"
#include "tobias/net/network.hpp"

namespace tobias::ssl {

// Encoder backbone plus projection head: features -> global average pool
// -> linear(hidden = feature width) -> ReLU -> linear(proj_dim)
// [-> row-wise L2 normalization]. Parameters are drawn encoder-first so
// an encoder checkpoint prefix stays valid for downstream fine-tuning.
template <class T>
class EncoderProjectorT {
 public:
  EncoderProjectorT(net::ArchSpec spec, int64_t proj_dim, bool normalize, RngState& rng)
      : proj_dim_(proj_dim), normalized_(normalize) {
    if (proj_dim < 1) throw ConfigError("projector: output dimension must be >= 1");
    spec.num_classes = 0;  // the projector replaces any classifier head
    encoder_ = net::NetworkT<T>::build(spec, rng);
    const int64_t width = encoder_.feature_channels();
    projector_.add(std::make_unique<GlobalAvgPoolT<T>>());
    projector_.add(std::make_unique<FlattenT<T>>());
    projector_.add(std::make_unique<LinearT<T>>(width, width, spec.init, rng));
    projector_.add(std::make_unique<ActivationT<T>>(ActivationKind::ReLU));
    projector_.add(std::make_unique<LinearT<T>>(width, proj_dim, spec.init, rng));
    if (normalize) projector_.add(std::make_unique<L2NormalizeT<T>>());
  }

  const net::NetworkT<T>& encoder() const { return encoder_; }
  net::NetworkT<T>& encoder() { return encoder_; }
  int64_t projection_dim() const { return proj_dim_; }
  bool normalized() const { return normalized_; }

  // (N,3,H,W) -> (N,proj_dim)
  TensorT<T> embed(const TensorT<T>& x) const {
    return projector_.forward(encoder_.forward_features(x));
  }

  TensorT<T> embed_train(const TensorT<T>& x) {
    return projector_.forward_train(encoder_.forward_train_features(x));
  }

  void backward(const TensorT<T>& gz) { encoder_.backward_features(projector_.backward(gz)); }

  void collect_params(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads) {
    encoder_.collect_params(params, grads);
    projector_.collect_params(params, grads);
  }

  int64_t param_count() const {
    std::vector<TensorT<T>*> params, grads;
    const_cast<EncoderProjectorT<T>*>(this)->collect_params(params, grads);
    int64_t n = 0;
    for (const auto* p : params) n += p->size();
    return n;
  }

  int64_t encoder_param_count() const { return encoder_.param_count(); }

 private:
  net::NetworkT<T> encoder_;
  SequentialT<T> projector_;
  int64_t proj_dim_ = 0;
  bool normalized_ = true;
};

using EncoderProjector = EncoderProjectorT<float>;

}  // namespace tobias::ssl
