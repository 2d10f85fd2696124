#pragma once

#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "tobias/augmenter.hpp"
#include "tobias/imageio.hpp"
#include "tobias/ssl/losses.hpp"
#include "tobias/ssl/model.hpp"

namespace tobias::ssl {

// Contrastive pretraining configuration. All randomness (weight init,
// batch composition, view pipelines, merge choices) fans out of `seed`
// through named streams keyed by step, so a checkpoint needs no generator
// state: resuming at step s re-derives the exact remaining draw sequence.
struct SslConfig {
  net::ArchSpec arch = net::preset("tinynet");
  int64_t proj_dim = 32;
  bool normalize_embeddings = true;
  double tau = 0.2;
  double p = 0.3;                  // probability that the second view is merged
  bool allow_self_merge = true;    // the literal sampling distribution includes self
  int64_t batch = 32;
  int64_t steps = 200;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  int64_t input_edge = 64;         // pool images and views are this size
  aug::PipelineConfig pipeline{64};

  void validate() const;
};

std::string ssl_config_to_json_text(const SslConfig& config);
SslConfig ssl_config_from_json_text(const std::string& text);
SslConfig load_ssl_config(const std::string& path_or_json);

struct LossEntry {
  int64_t step = 0;
  double loss = 0.0;  // per-anchor mean for the step
  double lr = 0.0;
};

void write_loss_log(const std::string& path, const std::vector<LossEntry>& history);
std::vector<LossEntry> read_loss_log(const std::string& path);

// Cosine decay from `base` to 0 over `total` steps, evaluated at `step`.
inline double cosine_lr(double base, int64_t step, int64_t total) {
  if (total <= 0) return base;
  const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return 0.5 * base * (1.0 + std::cos(3.14159265358979323846 * t));
}

template <class T>
struct TrainStateT {
  SslConfig config;
  int64_t step = 0;
  EncoderProjectorT<T> model;
  std::vector<TensorT<T>> momenta;  // parallel to collect_params order
  std::vector<LossEntry> history;

  TrainStateT(const SslConfig& cfg, RngState init_rng)
      : config(cfg), model(cfg.arch, cfg.proj_dim, cfg.normalize_embeddings, init_rng) {}
};

using TrainState = TrainStateT<float>;

template <class T>
TrainStateT<T> make_train_state_t(const SslConfig& config) {
  config.validate();
  RngState init_rng = RngState(config.seed).stream("model-init");
  return TrainStateT<T>(config, init_rng);
}

inline TrainState make_train_state(const SslConfig& config) {
  return make_train_state_t<float>(config);
}

namespace detail {

template <class T>
TensorT<T> to_precision(const Tensor& x) {
  if constexpr (std::is_same_v<T, float>)
    return x;
  else
    return x.template cast<T>();
}

// v <- momentum * v + (g + wd * w); w <- w - lr * v; g <- 0.
template <class T>
void sgd_step(std::vector<TensorT<T>*>& params, std::vector<TensorT<T>*>& grads,
              std::vector<TensorT<T>>& momenta, double lr, double momentum,
              double weight_decay) {
  if (momenta.empty())
    for (const auto* p : params) momenta.emplace_back(p->dims());
  if (momenta.size() != params.size())
    throw InvariantError("optimizer state does not match the parameter list");
  for (size_t t = 0; t < params.size(); ++t) {
    TensorT<T>& w = *params[t];
    TensorT<T>& g = *grads[t];
    TensorT<T>& v = momenta[t];
    if (v.dims() != w.dims()) throw InvariantError("momentum shape drifted from its parameter");
    for (int64_t i = 0; i < w.size(); ++i) {
      const T grad = g[i] + static_cast<T>(weight_decay) * w[i];
      v[i] = static_cast<T>(momentum) * v[i] + grad;
      w[i] -= static_cast<T>(lr) * v[i];
      g[i] = T(0);
    }
  }
}

inline void check_pool(const SslConfig& cfg, const std::vector<Tensor>& pool,
                       const std::vector<aug::PatchMask>& masks) {
  if (static_cast<int64_t>(pool.size()) < cfg.batch)
    throw ConfigError("pretrain: pool of " + std::to_string(pool.size()) +
                      " images cannot fill a batch of " + std::to_string(cfg.batch));
  for (const Tensor& im : pool)
    if (im.dims() != std::vector<int64_t>{3, cfg.input_edge, cfg.input_edge})
      throw ConfigError("pretrain: every pool image must be (3," +
                        std::to_string(cfg.input_edge) + "," + std::to_string(cfg.input_edge) +
                        "), got " + im.shape_string());
  if (cfg.p > 0.0 && masks.size() != pool.size())
    throw ConfigError(
        "pretrain: p > 0 needs one precomputed patch mask per pool image; run `tobias masks` "
        "over the manifest first (got " +
        std::to_string(masks.size()) + " masks for " + std::to_string(pool.size()) + " images)");
}

}  // namespace detail

// One optimization step. The second view goes through sample_view when
// tobias_views is true (the L^Tobias objective); otherwise it is a plain
// pipeline draw from the same "pipeline" child stream, which is the
// L^self baseline. With p = 0 both paths consume identical streams and
// produce identical batches, so the losses coincide bit for bit at equal
// precision. Returns the per-anchor loss.
template <class T>
double pretrain_step_t(TrainStateT<T>& st, const std::vector<Tensor>& pool,
                       const std::vector<aug::PatchMask>& masks, bool tobias_views = true) {
  const SslConfig& cfg = st.config;
  detail::check_pool(cfg, pool, masks);
  const int64_t n = cfg.batch;
  RngState root(cfg.seed);
  aug::AugmentationPipeline pipeline(cfg.pipeline);

  // Batch: the first n slots of a per-step partial shuffle of the pool.
  std::vector<int64_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  RngState batch_rng = root.stream("batch", static_cast<uint64_t>(st.step));
  for (int64_t k = 0; k < n; ++k) {
    const uint64_t j =
        static_cast<uint64_t>(k) + batch_rng.uniform_index(order.size() - static_cast<size_t>(k));
    std::swap(order[static_cast<size_t>(k)], order[j]);
  }

  std::vector<Tensor> views;
  views.reserve(static_cast<size_t>(2 * n));
  for (int64_t slot = 0; slot < n; ++slot) {
    const uint64_t g = static_cast<uint64_t>(st.step * n + slot);
    RngState v1 = root.stream("view1", g);
    RngState pipe_rng = v1.stream("pipeline");
    views.push_back(
        img::normalize(pipeline.apply(pool[static_cast<size_t>(order[slot])], pipe_rng)));
  }
  for (int64_t slot = 0; slot < n; ++slot) {
    const uint64_t g = static_cast<uint64_t>(st.step * n + slot);
    RngState v2 = root.stream("view2", g);
    Tensor view;
    if (tobias_views) {
      view = aug::sample_view(order[slot], pool, masks, cfg.p, v2, pipeline,
                              cfg.allow_self_merge)
                 .image;
    } else {
      RngState pipe_rng = v2.stream("pipeline");
      view = pipeline.apply(pool[static_cast<size_t>(order[slot])], pipe_rng);
    }
    views.push_back(img::normalize(view));
  }

  TensorT<T> batch = detail::to_precision<T>(img::to_batch(views));
  TensorT<T> z = st.model.embed_train(batch);

  TensorT<T> z1({n, st.config.proj_dim}), z2({n, st.config.proj_dim});
  const int64_t d = st.config.proj_dim;
  for (int64_t i = 0; i < n * d; ++i) {
    z1[i] = z[i];
    z2[i] = z[n * d + i];
  }
  TensorT<T> g1, g2;
  const T tau = static_cast<T>(cfg.tau);
  const double loss_sum = static_cast<double>(
      tobias_views ? l_tobias(z1, z2, tau, &g1, &g2) : l_self(z1, z2, tau, &g1, &g2));

  // Optimize the per-anchor mean: scale the sum's gradient by 1/N.
  TensorT<T> gz({2 * n, d});
  const T scale = T(1) / static_cast<T>(n);
  for (int64_t i = 0; i < n * d; ++i) {
    gz[i] = g1[i] * scale;
    gz[n * d + i] = g2[i] * scale;
  }
  st.model.backward(gz);

  const double lr = cosine_lr(cfg.lr, st.step, cfg.steps);
  std::vector<TensorT<T>*> params, grads;
  st.model.collect_params(params, grads);
  detail::sgd_step(params, grads, st.momenta, lr, cfg.momentum, cfg.weight_decay);

  const double loss = loss_sum / static_cast<double>(n);
  st.history.push_back({st.step, loss, lr});
  ++st.step;
  return loss;
}

template <class T>
TrainStateT<T> pretrain_t(const SslConfig& config, const std::vector<Tensor>& pool,
                          const std::vector<aug::PatchMask>& masks,
                          const std::string& loss_log_path = "", bool tobias_views = true) {
  TrainStateT<T> state = make_train_state_t<T>(config);
  for (int64_t s = 0; s < config.steps; ++s) pretrain_step_t(state, pool, masks, tobias_views);
  if (!loss_log_path.empty()) write_loss_log(loss_log_path, state.history);
  return state;
}

inline double pretrain_step(TrainState& state, const std::vector<Tensor>& pool,
                            const std::vector<aug::PatchMask>& masks, bool tobias_views = true) {
  return pretrain_step_t<float>(state, pool, masks, tobias_views);
}

inline TrainState pretrain(const SslConfig& config, const std::vector<Tensor>& pool,
                           const std::vector<aug::PatchMask>& masks,
                           const std::string& loss_log_path = "", bool tobias_views = true) {
  return pretrain_t<float>(config, pool, masks, loss_log_path, tobias_views);
}

// Versioned binary checkpoint: config echo, step, parameters, optimizer
// momenta. Loading rebuilds the model from the echoed config and resumes
// bit-exactly in single-threaded mode.
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

struct LabeledSet {
  std::vector<Tensor> images;  // raw [0,1], any square size
  std::vector<int64_t> labels;
};

// Reads a manifest and its images; every record must carry a label.
LabeledSet load_labeled_set(const std::string& manifest_path);

struct HeadConfig {
  int64_t num_classes = 0;  // 0 = infer as max label + 1
  int64_t epochs = 30;
  int64_t batch = 32;
  double lr = 0.3;
  double momentum = 0.9;
  uint64_t seed = 1;
  int64_t input_edge = 0;  // 0 = encoder's nominal input size
};

// Frozen-encoder linear probe: features are computed once (global average
// pool over forward_features, one image per batch for batch-size
// independence), a linear head is trained with SGD + cosine decay, and
// top-1 accuracy on the held-out set is returned.
double linear_eval(const net::Network& encoder, const LabeledSet& train_set,
                   const LabeledSet& test_set, const HeadConfig& config);

struct FinetuneConfig {
  int64_t num_classes = 0;
  int64_t epochs = 10;
  int64_t batch = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool mixup = false;  // convexly mixes inputs and one-hot targets
  uint64_t seed = 2;
  int64_t input_edge = 0;
};

struct FinetuneResult {
  double accuracy = 0.0;
  std::vector<double> epoch_losses;  // mean cross-entropy per epoch
};

// Full-network supervised training from a pretrained encoder: the
// encoder's feature parameters seed a classifier network, the head starts
// fresh, and everything updates.
FinetuneResult finetune(const TrainState& state, const LabeledSet& train_set,
                        const LabeledSet& test_set, const FinetuneConfig& config);

}  // namespace tobias::ssl
