#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tobias/layers.hpp"
#include "tobias/net/arch.hpp"

namespace tobias::net {

// Residual bottleneck block (1x1 reduce, 3x3, 1x1 expand). With skips
// enabled the input joins the main path through an identity or projection
// shortcut before the final activation. With skips disabled the same convs
// run serially: the projection (which carries the stride) is hoisted in
// front of the main path, so layer count and output shape are unchanged and
// only the additive bypass disappears.
template <class T>
class BottleneckT : public LayerT<T> {
public:
  BottleneckT(int64_t in_ch, int64_t out_ch, int64_t stride, const ArchSpec& spec, RngState& rng)
      : use_skip_(spec.use_skip), final_act_(spec.activation) {
    const int64_t mid = out_ch / 4;
    const bool bias = !spec.use_bn;
    has_proj_ = (in_ch != out_ch) || (stride != 1);
    auto conv = [&](tobias::SequentialT<T>& seq, int64_t ci, int64_t co, int64_t k, int64_t s,
                    int64_t p) {
      seq.add(std::make_unique<Conv2dT<T>>(ci, co, k, s, p, bias, spec.init, rng));
      if (spec.use_bn)
        seq.add(std::make_unique<BatchNormT<T>>(co, T(1e-5), spec.bn_identity));
    };
    const bool hoist = !use_skip_ && has_proj_;
    if (hoist) conv(proj_, in_ch, out_ch, 1, stride, 0);
    const int64_t main_in = hoist ? out_ch : in_ch;
    const int64_t main_stride = hoist ? 1 : stride;
    conv(main_, main_in, mid, 1, 1, 0);
    main_.add(std::make_unique<ActivationT<T>>(spec.activation));
    conv(main_, mid, mid, 3, main_stride, 1);
    main_.add(std::make_unique<ActivationT<T>>(spec.activation));
    conv(main_, mid, out_ch, 1, 1, 0);
    if (use_skip_ && has_proj_) conv(proj_, in_ch, out_ch, 1, stride, 0);
  }

  TensorT<T> forward(const TensorT<T>& x) const override {
    if (!use_skip_) {
      TensorT<T> h = has_proj_ ? main_.forward(proj_.forward(x)) : main_.forward(x);
      return final_act_.forward(h);
    }
    TensorT<T> h = main_.forward(x);
    const TensorT<T> s = has_proj_ ? proj_.forward(x) : x;
    for (int64_t i = 0; i < h.size(); ++i) h[i] += s[i];
    return final_act_.forward(h);
  }

  TensorT<T> forward_train(const TensorT<T>& x) override {
    if (!use_skip_) {
      TensorT<T> h = has_proj_ ? main_.forward_train(proj_.forward_train(x)) : main_.forward_train(x);
      return final_act_.forward_train(h);
    }
    TensorT<T> h = main_.forward_train(x);
    const TensorT<T> s = has_proj_ ? proj_.forward_train(x) : x;
    for (int64_t i = 0; i < h.size(); ++i) h[i] += s[i];
    return final_act_.forward_train(h);
  }

  TensorT<T> backward(const TensorT<T>& gout) override {
    TensorT<T> g = final_act_.backward(gout);
    if (!use_skip_) {
      g = main_.backward(g);
      if (has_proj_) g = proj_.backward(g);
      return g;
    }
    TensorT<T> gm = main_.backward(g);
    if (has_proj_) {
      const TensorT<T> gs = proj_.backward(g);
      for (int64_t i = 0; i < gm.size(); ++i) gm[i] += gs[i];
    } else {
      for (int64_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
    }
    return gm;
  }

  void collect_params(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads) override {
    // Same order the weights were drawn in, so checkpoints stay stable.
    if (!use_skip_ && has_proj_) proj_.collect_params(params, grads);
    main_.collect_params(params, grads);
    if (use_skip_ && has_proj_) proj_.collect_params(params, grads);
  }

  std::string name() const override { return "bottleneck"; }

  int64_t conv_count() const { return has_proj_ ? 4 : 3; }

private:
  tobias::SequentialT<T> main_, proj_;
  bool use_skip_;
  bool has_proj_ = false;
  ActivationT<T> final_act_;
};

// A built CNN: a feature trunk with recorded stage boundaries plus an
// optional avg-pool classifier head. forward_* const methods are pure and
// safe to share across threads; the *_train / backward methods mutate
// per-layer records and require exclusive ownership.
template <class T>
class NetworkT {
public:
  NetworkT() = default;

  static NetworkT<T> build(const ArchSpec& spec, RngState& rng) {
    spec.validate();
    NetworkT<T> net;
    net.spec_ = spec;
    const bool bias = !spec.use_bn;
    auto add_conv = [&](int64_t ci, int64_t co, int64_t k, int64_t s, int64_t p) {
      net.features_.add(std::make_unique<Conv2dT<T>>(ci, co, k, s, p, bias, spec.init, rng));
      ++net.conv_count_;
      if (spec.use_bn)
        net.features_.add(std::make_unique<BatchNormT<T>>(co, T(1e-5), spec.bn_identity));
      net.features_.add(std::make_unique<ActivationT<T>>(spec.activation));
    };

    const StemSpec& stem = spec.stem;
    add_conv(3, stem.out_channels, stem.kernel, stem.stride, stem.padding);
    if (stem.pool)
      net.features_.add(
          std::make_unique<MaxPoolT<T>>(stem.pool_kernel, stem.pool_stride, stem.pool_ceil));
    net.stage_end_.push_back(net.features_.size());

    int64_t ch = stem.out_channels;
    const int keep = spec.retained_stages();
    for (int si = 0; si < keep; ++si) {
      const StageSpec& st = spec.stages[static_cast<size_t>(si)];
      for (int64_t b = 0; b < st.blocks; ++b) {
        const int64_t stride =
            (b == 0 && st.downsample == Downsample::StrideConv) ? st.pool_stride : 1;
        if (st.kind == BlockKind::Bottleneck) {
          auto blk = std::make_unique<BottleneckT<T>>(ch, st.out_channels, stride, spec, rng);
          net.conv_count_ += blk->conv_count();
          net.features_.add(std::move(blk));
        } else {
          add_conv(ch, st.out_channels, st.kernel, stride, st.kernel / 2);
        }
        ch = st.out_channels;
      }
      if (st.downsample == Downsample::PoolEnd)
        net.features_.add(std::make_unique<MaxPoolT<T>>(st.pool_kernel, st.pool_stride, false));
      net.stage_end_.push_back(net.features_.size());
    }
    net.feature_channels_ = ch;

    if (spec.num_classes > 0) {
      net.head_.add(std::make_unique<GlobalAvgPoolT<T>>());
      net.head_.add(std::make_unique<FlattenT<T>>());
      net.head_.add(std::make_unique<LinearT<T>>(ch, spec.num_classes, spec.init, rng));
      net.has_head_ = true;
    }
    return net;
  }

  const ArchSpec& spec() const { return spec_; }
  int64_t conv_layer_count() const { return conv_count_; }
  int64_t feature_channels() const { return feature_channels_; }
  bool has_head() const { return has_head_; }
  size_t num_stages() const { return stage_end_.size() - 1; }

  TensorT<T> forward_features(const TensorT<T>& x) const {
    check_input(x);
    return features_.forward(x);
  }

  // Runs the stem plus the first `stage` stages (stage 0 = stem only).
  TensorT<T> forward_to_stage(const TensorT<T>& x, size_t stage) const {
    if (stage >= stage_end_.size())
      throw ConfigError("forward_to_stage: stage " + std::to_string(stage) + " out of range (" +
                        std::to_string(stage_end_.size() - 1) + " stages)");
    check_input(x);
    TensorT<T> cur = x;
    for (size_t i = 0; i < stage_end_[stage]; ++i) cur = features_.layer(i).forward(cur);
    return cur;
  }

  TensorT<T> forward_logits(const TensorT<T>& x) const {
    require_head();
    return head_.forward(forward_features(x));
  }

  TensorT<T> forward_train_features(const TensorT<T>& x) {
    check_input(x);
    return features_.forward_train(x);
  }

  TensorT<T> forward_train_logits(const TensorT<T>& x) {
    require_head();
    return head_.forward_train(forward_train_features(x));
  }

  TensorT<T> backward_features(const TensorT<T>& gfeat) { return features_.backward(gfeat); }

  TensorT<T> backward_logits(const TensorT<T>& glogits) {
    require_head();
    return features_.backward(head_.backward(glogits));
  }

  void collect_params(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads) {
    features_.collect_params(params, grads);
    head_.collect_params(params, grads);
  }

  // Order-independent fingerprint of all parameters, for determinism checks.
  double param_checksum() const {
    std::vector<TensorT<T>*> params, grads;
    const_cast<NetworkT<T>*>(this)->collect_params(params, grads);
    double sum = 0.0;
    for (const auto* p : params)
      for (int64_t i = 0; i < p->size(); ++i) sum += static_cast<double>((*p)[i]);
    return sum;
  }

  int64_t param_count() const {
    std::vector<TensorT<T>*> params, grads;
    const_cast<NetworkT<T>*>(this)->collect_params(params, grads);
    int64_t n = 0;
    for (const auto* p : params) n += p->size();
    return n;
  }

private:
  void check_input(const TensorT<T>& x) const {
    if (x.order() != 4 || x.dim(1) != 3)
      throw DimensionError("network input must be (N,3,H,W), got " + x.shape_string());
    if (x.dim(2) < spec_.min_input || x.dim(3) < spec_.min_input)
      throw DimensionError("network input " + x.shape_string() + " is below the minimum edge " +
                           std::to_string(spec_.min_input) + " for '" + spec_.name + "'");
  }

  void require_head() const {
    if (!has_head_)
      throw ConfigError("network '" + spec_.name + "' was built without a classifier head");
  }

  ArchSpec spec_;
  tobias::SequentialT<T> features_, head_;
  std::vector<size_t> stage_end_;
  int64_t conv_count_ = 0;
  int64_t feature_channels_ = 0;
  bool has_head_ = false;
};

template <class T>
NetworkT<T> build_network(const ArchSpec& spec, RngState& rng) {
  return NetworkT<T>::build(spec, rng);
}

using Network = NetworkT<float>;

}  // namespace tobias::net
