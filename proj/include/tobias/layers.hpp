#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tobias/activations.hpp"
#include "tobias/init.hpp"
#include "tobias/ops.hpp"

namespace tobias {

// A network layer. forward() is a pure function and safe to call from
// several threads on one shared layer; forward_train() records what
// backward() needs, so a training network must be privately owned by its
// trainer. backward() before forward_train() is a state error.
template <class T>
class LayerT {
public:
  virtual ~LayerT() = default;

  virtual TensorT<T> forward(const TensorT<T>& x) const = 0;
  virtual TensorT<T> forward_train(const TensorT<T>& x) = 0;
  virtual TensorT<T> backward(const TensorT<T>& gout) = 0;

  virtual void collect_params(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads) {}
  virtual std::string name() const = 0;

protected:
  void require_recorded(bool recorded) const {
    if (!recorded) throw StateError(name() + ": backward without a recorded forward pass");
  }
};

template <class T>
using LayerPtr = std::unique_ptr<LayerT<T>>;

template <class T>
class Conv2dT : public LayerT<T> {
public:
  Conv2dT(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t pad,
          bool has_bias, InitScheme scheme, RngState& rng)
      : stride_(stride), pad_(pad) {
    weight_ = init_weights<T>({out_ch, in_ch, kernel, kernel}, scheme, rng);
    if (has_bias) bias_ = TensorT<T>({out_ch});
    gweight_ = TensorT<T>(weight_.dims());
    if (has_bias) gbias_ = TensorT<T>(bias_.dims());
  }

  TensorT<T> forward(const TensorT<T>& x) const override {
    return conv2d_forward(x, weight_, bias_, stride_, pad_);
  }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    input_ = x;
    recorded_ = true;
    return conv2d_forward(x, weight_, bias_, stride_, pad_);
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    this->require_recorded(recorded_);
    TensorT<T> gx, gw, gb;
    conv2d_backward(input_, weight_, gout, stride_, pad_, &gx, &gw,
                    bias_.empty() ? nullptr : &gb);
    accumulate(gweight_, gw);
    if (!bias_.empty()) accumulate(gbias_, gb);
    return gx;
  }

  void collect_params(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads) override {
    params.push_back(&weight_);
    grads.push_back(&gweight_);
    if (!bias_.empty()) {
      params.push_back(&bias_);
      grads.push_back(&gbias_);
    }
  }

  std::string name() const override { return "conv2d"; }

  TensorT<T>& weight() { return weight_; }
  const TensorT<T>& weight() const { return weight_; }
  TensorT<T>& bias() { return bias_; }
  int64_t stride() const { return stride_; }

private:
  static void accumulate(TensorT<T>& dst, const TensorT<T>& src) {
    for (int64_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  TensorT<T> weight_, bias_, gweight_, gbias_;
  TensorT<T> input_;
  int64_t stride_, pad_;
  bool recorded_ = false;
};

template <class T>
class BatchNormT : public LayerT<T> {
public:
  // identity_mode bypasses normalization entirely (sensitivity toggle).
  BatchNormT(int64_t channels, T eps = T(1e-5), bool identity_mode = false)
      : eps_(eps), identity_(identity_mode) {
    gamma_ = TensorT<T>({channels}, T(1));
    beta_ = TensorT<T>({channels}, T(0));
    ggamma_ = TensorT<T>({channels});
    gbeta_ = TensorT<T>({channels});
  }

  TensorT<T> forward(const TensorT<T>& x) const override {
    if (identity_) return x;
    return batchnorm_forward<T>(x, gamma_, beta_, eps_);
  }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    recorded_ = true;
    if (identity_) return x;
    return batchnorm_forward<T>(x, gamma_, beta_, eps_, &cache_);
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    this->require_recorded(recorded_);
    if (identity_) return gout;
    TensorT<T> gx, gg, gb;
    batchnorm_backward(gout, gamma_, cache_, &gx, &gg, &gb);
    for (int64_t i = 0; i < gg.size(); ++i) {
      ggamma_[i] += gg[i];
      gbeta_[i] += gb[i];
    }
    return gx;
  }

  void collect_params(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads) override {
    if (identity_) return;
    params.push_back(&gamma_);
    grads.push_back(&ggamma_);
    params.push_back(&beta_);
    grads.push_back(&gbeta_);
  }

  std::string name() const override { return "batchnorm"; }

private:
  TensorT<T> gamma_, beta_, ggamma_, gbeta_;
  BnCache<T> cache_;
  T eps_;
  bool identity_;
  bool recorded_ = false;
};

template <class T>
class ActivationT : public LayerT<T> {
public:
  explicit ActivationT(ActivationKind kind) : kind_(kind) {}

  TensorT<T> forward(const TensorT<T>& x) const override { return activate(x, kind_); }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    input_ = x;
    recorded_ = true;
    return activate(x, kind_);
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    this->require_recorded(recorded_);
    TensorT<T> gx(input_.dims());
    for (int64_t i = 0; i < gx.size(); ++i)
      gx[i] = gout[i] * activate_grad_scalar(input_[i], kind_);
    return gx;
  }

  std::string name() const override { return std::string("act:") + activation_name(kind_); }

  ActivationKind kind() const { return kind_; }

private:
  ActivationKind kind_;
  TensorT<T> input_;
  bool recorded_ = false;
};

template <class T>
class MaxPoolT : public LayerT<T> {
public:
  MaxPoolT(int64_t kernel, int64_t stride, bool ceil_mode)
      : kernel_(kernel), stride_(stride), ceil_(ceil_mode) {}

  TensorT<T> forward(const TensorT<T>& x) const override {
    return maxpool2d(x, kernel_, stride_, ceil_);
  }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    x_dims_ = x.dims();
    recorded_ = true;
    return maxpool2d(x, kernel_, stride_, ceil_, &argmax_);
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    this->require_recorded(recorded_);
    return maxpool2d_backward(gout, argmax_, x_dims_);
  }

  std::string name() const override { return "maxpool"; }

private:
  int64_t kernel_, stride_;
  bool ceil_;
  std::vector<int32_t> argmax_;
  std::vector<int64_t> x_dims_;
  bool recorded_ = false;
};

template <class T>
class GlobalAvgPoolT : public LayerT<T> {
public:
  TensorT<T> forward(const TensorT<T>& x) const override { return global_avg_pool(x); }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    x_dims_ = x.dims();
    recorded_ = true;
    return global_avg_pool(x);
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    this->require_recorded(recorded_);
    return global_avg_pool_backward(gout, x_dims_);
  }

  std::string name() const override { return "gap"; }

private:
  std::vector<int64_t> x_dims_;
  bool recorded_ = false;
};

// (N,C,1,1) <-> (N,C) view change between the pooled trunk and a linear head.
template <class T>
class FlattenT : public LayerT<T> {
public:
  TensorT<T> forward(const TensorT<T>& x) const override { return flatten(x); }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    x_dims_ = x.dims();
    recorded_ = true;
    return flatten(x);
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    this->require_recorded(recorded_);
    TensorT<T> gx(x_dims_);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] = gout[i];
    return gx;
  }

  std::string name() const override { return "flatten"; }

private:
  static TensorT<T> flatten(const TensorT<T>& x) {
    const int64_t n = x.dim(0);
    TensorT<T> out({n, x.size() / n});
    for (int64_t i = 0; i < x.size(); ++i) out[i] = x[i];
    return out;
  }

  std::vector<int64_t> x_dims_;
  bool recorded_ = false;
};

template <class T>
class LinearT : public LayerT<T> {
public:
  LinearT(int64_t in_dim, int64_t out_dim, InitScheme scheme, RngState& rng, bool zero_init = false) {
    if (zero_init) {
      weight_ = TensorT<T>({out_dim, in_dim});
    } else {
      weight_ = init_weights<T>({out_dim, in_dim}, scheme, rng);
    }
    bias_ = TensorT<T>({out_dim});
    gweight_ = TensorT<T>(weight_.dims());
    gbias_ = TensorT<T>(bias_.dims());
  }

  TensorT<T> forward(const TensorT<T>& x) const override {
    return linear_forward(x, weight_, bias_);
  }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    input_ = x;
    recorded_ = true;
    return linear_forward(x, weight_, bias_);
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    this->require_recorded(recorded_);
    TensorT<T> gx, gw, gb;
    linear_backward(input_, weight_, gout, &gx, &gw, &gb);
    for (int64_t i = 0; i < gw.size(); ++i) gweight_[i] += gw[i];
    for (int64_t i = 0; i < gb.size(); ++i) gbias_[i] += gb[i];
    return gx;
  }

  void collect_params(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads) override {
    params.push_back(&weight_);
    grads.push_back(&gweight_);
    params.push_back(&bias_);
    grads.push_back(&gbias_);
  }

  std::string name() const override { return "linear"; }

  TensorT<T>& weight() { return weight_; }
  const TensorT<T>& weight() const { return weight_; }
  TensorT<T>& bias() { return bias_; }

private:
  TensorT<T> weight_, bias_, gweight_, gbias_;
  TensorT<T> input_;
  bool recorded_ = false;
};

template <class T>
class L2NormalizeT : public LayerT<T> {
public:
  TensorT<T> forward(const TensorT<T>& x) const override { return l2normalize_rows(x); }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    recorded_ = true;
    z_ = l2normalize_rows(x, &norms_);
    return z_;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    this->require_recorded(recorded_);
    return l2normalize_rows_backward(z_, norms_, gout);
  }

  std::string name() const override { return "l2norm"; }

private:
  TensorT<T> z_;
  std::vector<T> norms_;
  bool recorded_ = false;
};

// An ordered stack of layers.
template <class T>
class SequentialT : public LayerT<T> {
public:
  SequentialT() = default;

  void add(LayerPtr<T> layer) { layers_.push_back(std::move(layer)); }
  size_t size() const { return layers_.size(); }
  LayerT<T>& layer(size_t i) { return *layers_[i]; }
  const LayerT<T>& layer(size_t i) const { return *layers_[i]; }

  TensorT<T> forward(const TensorT<T>& x) const override {
    TensorT<T> cur = x;
    for (const auto& l : layers_) cur = l->forward(cur);
    return cur;
  }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    TensorT<T> cur = x;
    for (auto& l : layers_) cur = l->forward_train(cur);
    return cur;
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    TensorT<T> cur = gout;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
  }

  void collect_params(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads) override {
    for (auto& l : layers_) l->collect_params(params, grads);
  }

  std::string name() const override { return "sequential"; }

private:
  std::vector<LayerPtr<T>> layers_;
};

}  // namespace tobias
