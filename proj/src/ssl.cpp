#include "tobias/ssl/train.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tobias/ops.hpp"

namespace tobias::ssl {

using nlohmann::json;

void SslConfig::validate() const {
  arch.validate();
  if (proj_dim < 1) throw ConfigError("ssl config: proj_dim must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("ssl config: tau must be > 0");
  if (p < 0.0 || p > 1.0) throw ConfigError("ssl config: p must be in [0,1]");
  if (batch < 1) throw ConfigError("ssl config: batch must be >= 1");
  if (steps < 0) throw ConfigError("ssl config: steps must be >= 0");
  if (lr < 0.0) throw ConfigError("ssl config: lr must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("ssl config: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("ssl config: weight_decay must be >= 0");
  if (input_edge < arch.min_input)
    throw ConfigError("ssl config: input_edge " + std::to_string(input_edge) +
                      " is below the encoder's minimum input " + std::to_string(arch.min_input));
  if (input_edge % 4 != 0)
    throw ConfigError("ssl config: input_edge must be divisible by 4 for patch merging");
  if (pipeline.out_edge != input_edge)
    throw ConfigError("ssl config: pipeline.out_edge must equal input_edge");
}

std::string ssl_config_to_json_text(const SslConfig& c) {
  json j;
  j["arch"] = json::parse(net::arch_to_json_text(c.arch));
  j["proj_dim"] = c.proj_dim;
  j["normalize_embeddings"] = c.normalize_embeddings;
  j["tau"] = c.tau;
  j["p"] = c.p;
  j["allow_self_merge"] = c.allow_self_merge;
  j["batch"] = c.batch;
  j["steps"] = c.steps;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["input_edge"] = c.input_edge;
  j["pipeline"] = {{"crop", c.pipeline.crop},
                   {"crop_area_min", c.pipeline.crop_area_min},
                   {"crop_area_max", c.pipeline.crop_area_max},
                   {"flip", c.pipeline.flip},
                   {"flip_prob", c.pipeline.flip_prob},
                   {"jitter", c.pipeline.jitter},
                   {"jitter_prob", c.pipeline.jitter_prob},
                   {"jitter_strength", c.pipeline.jitter_strength},
                   {"grayscale", c.pipeline.grayscale},
                   {"grayscale_prob", c.pipeline.grayscale_prob}};
  return j.dump(2);
}

SslConfig ssl_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("ssl config: ") + e.what());
  }
  SslConfig c;
  try {
    if (j.contains("arch")) {
      if (j["arch"].is_string())
        c.arch = net::load_arch(j["arch"].get<std::string>());
      else
        c.arch = net::arch_from_json_text(j["arch"].dump());
    }
    c.proj_dim = j.value("proj_dim", c.proj_dim);
    c.normalize_embeddings = j.value("normalize_embeddings", c.normalize_embeddings);
    c.tau = j.value("tau", c.tau);
    c.p = j.value("p", c.p);
    c.allow_self_merge = j.value("allow_self_merge", c.allow_self_merge);
    c.batch = j.value("batch", c.batch);
    c.steps = j.value("steps", c.steps);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.input_edge = j.value("input_edge", c.input_edge);
    c.pipeline.out_edge = c.input_edge;
    if (j.contains("pipeline")) {
      const json& p = j["pipeline"];
      c.pipeline.crop = p.value("crop", c.pipeline.crop);
      c.pipeline.crop_area_min = p.value("crop_area_min", c.pipeline.crop_area_min);
      c.pipeline.crop_area_max = p.value("crop_area_max", c.pipeline.crop_area_max);
      c.pipeline.flip = p.value("flip", c.pipeline.flip);
      c.pipeline.flip_prob = p.value("flip_prob", c.pipeline.flip_prob);
      c.pipeline.jitter = p.value("jitter", c.pipeline.jitter);
      c.pipeline.jitter_prob = p.value("jitter_prob", c.pipeline.jitter_prob);
      c.pipeline.jitter_strength = p.value("jitter_strength", c.pipeline.jitter_strength);
      c.pipeline.grayscale = p.value("grayscale", c.pipeline.grayscale);
      c.pipeline.grayscale_prob = p.value("grayscale_prob", c.pipeline.grayscale_prob);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ssl config: ") + e.what());
  }
  c.validate();
  return c;
}

SslConfig load_ssl_config(const std::string& path_or_json) {
  if (!path_or_json.empty() && path_or_json.front() == '{')
    return ssl_config_from_json_text(path_or_json);
  std::ifstream in(path_or_json);
  if (!in) throw IoError("cannot open ssl config " + path_or_json);
  std::ostringstream buf;
  buf << in.rdbuf();
  return ssl_config_from_json_text(buf.str());
}

void write_loss_log(const std::string& path, const std::vector<LossEntry>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss log " + path);
  for (const LossEntry& e : history) {
    json j = {{"step", e.step}, {"loss", e.loss}, {"lr", e.lr}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("short write to loss log " + path);
}

std::vector<LossEntry> read_loss_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loss log " + path);
  std::vector<LossEntry> history;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      history.push_back({j.at("step").get<int64_t>(), j.at("loss").get<double>(),
                         j.at("lr").get<double>()});
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return history;
}

namespace {

constexpr char kCheckpointMagic[4] = {'T', 'B', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("checkpoint truncated at " + what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("checkpoint truncated at " + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put_u32(out, static_cast<uint32_t>(t.order()));
  for (int i = 0; i < t.order(); ++i) put_u64(out, static_cast<uint64_t>(t.dim(i)));
  for (int64_t i = 0; i < t.size(); ++i) {
    uint32_t bits;
    const float v = t[i];
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
  }
}

Tensor get_tensor(std::istream& in, const std::string& what) {
  const uint32_t order = get_u32(in, what + " order");
  if (order < 1 || order > 4) throw ParseError("checkpoint: bad tensor order at " + what);
  std::vector<int64_t> dims(order);
  for (uint32_t i = 0; i < order; ++i) {
    dims[i] = static_cast<int64_t>(get_u64(in, what + " dims"));
    if (dims[i] < 1 || dims[i] > (int64_t(1) << 32))
      throw ParseError("checkpoint: bad tensor extent at " + what);
  }
  Tensor t(dims);
  for (int64_t i = 0; i < t.size(); ++i) {
    const uint32_t bits = get_u32(in, what + " data");
    float v;
    std::memcpy(&v, &bits, 4);
    t[i] = v;
  }
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  const std::string config = ssl_config_to_json_text(state.config);
  put_u64(out, config.size());
  out.write(config.data(), static_cast<std::streamsize>(config.size()));
  put_u64(out, static_cast<uint64_t>(state.step));

  std::vector<Tensor*> params, grads;
  const_cast<TrainState&>(state).model.collect_params(params, grads);
  put_u64(out, params.size());
  for (const Tensor* p : params) put_tensor(out, *p);
  put_u64(out, state.momenta.size());
  for (const Tensor& m : state.momenta) put_tensor(out, m);
  if (!out) throw IoError("short write to checkpoint " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw ParseError(path + ": not a checkpoint (bad magic)");
  const uint32_t version = get_u32(in, "version");
  if (version != kCheckpointVersion)
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
  const uint64_t config_len = get_u64(in, "config length");
  std::string config_text(config_len, '\0');
  if (!in.read(config_text.data(), static_cast<std::streamsize>(config_len)))
    throw ParseError(path + ": truncated config echo");

  TrainState state = make_train_state(ssl_config_from_json_text(config_text));
  state.step = static_cast<int64_t>(get_u64(in, "step"));

  std::vector<Tensor*> params, grads;
  state.model.collect_params(params, grads);
  const uint64_t n_params = get_u64(in, "parameter count");
  if (n_params != params.size())
    throw ParseError(path + ": holds " + std::to_string(n_params) + " parameter tensors, model has " +
                     std::to_string(params.size()));
  for (size_t t = 0; t < params.size(); ++t) {
    Tensor loaded = get_tensor(in, "parameter " + std::to_string(t));
    if (loaded.dims() != params[t]->dims())
      throw ParseError(path + ": parameter " + std::to_string(t) + " shape " +
                       loaded.shape_string() + " does not match model " +
                       params[t]->shape_string());
    *params[t] = std::move(loaded);
  }
  const uint64_t n_momenta = get_u64(in, "momentum count");
  if (n_momenta != 0 && n_momenta != params.size())
    throw ParseError(path + ": momentum tensor count mismatch");
  state.momenta.clear();
  for (uint64_t t = 0; t < n_momenta; ++t) {
    Tensor m = get_tensor(in, "momentum " + std::to_string(t));
    if (m.dims() != params[t]->dims())
      throw ParseError(path + ": momentum " + std::to_string(t) + " shape mismatch");
    state.momenta.push_back(std::move(m));
  }
  return state;
}

LabeledSet load_labeled_set(const std::string& manifest_path) {
  const auto records = img::read_manifest(manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  LabeledSet set;
  for (const auto& rec : records) {
    if (!rec.label)
      throw ConfigError(manifest_path + ": record '" + rec.image + "' has no label");
    const std::string path = std::filesystem::path(rec.image).is_absolute()
                                 ? rec.image
                                 : (base / rec.image).string();
    set.images.push_back(img::read_image(path));
    set.labels.push_back(*rec.label);
  }
  return set;
}

namespace {

int64_t checked_num_classes(int64_t configured, const LabeledSet& train, const LabeledSet& test) {
  int64_t max_label = -1;
  for (int64_t y : train.labels) max_label = std::max(max_label, y);
  for (int64_t y : test.labels) max_label = std::max(max_label, y);
  const int64_t classes = configured > 0 ? configured : max_label + 1;
  if (classes < 2) throw ConfigError("classification needs at least 2 classes");
  auto check = [&](const LabeledSet& s, const char* name) {
    if (s.images.size() != s.labels.size())
      throw InvariantError(std::string(name) + " set images and labels differ in count");
    for (int64_t y : s.labels)
      if (y < 0 || y >= classes)
        throw ConfigError("label " + std::to_string(y) + " outside " + std::to_string(classes) +
                          " classes");
  };
  check(train, "train");
  check(test, "test");
  if (train.images.empty()) throw ConfigError("training set is empty");
  return classes;
}

Tensor prepared_input(const Tensor& image, int64_t edge) {
  return img::normalize(img::resize_bilinear(image, edge, edge));
}

// One image per forward pass so results cannot depend on batch grouping.
Tensor feature_matrix(const net::Network& encoder, const std::vector<Tensor>& images,
                      int64_t edge) {
  const int64_t n = static_cast<int64_t>(images.size());
  const int64_t c = encoder.feature_channels();
  Tensor feats({n, c});
  for (int64_t i = 0; i < n; ++i) {
    Tensor f = encoder.forward_features(img::to_batch({prepared_input(images[i], edge)}));
    Tensor g = global_avg_pool(f);  // (1,C,1,1)
    for (int64_t k = 0; k < c; ++k) feats[i * c + k] = g[k];
  }
  return feats;
}

int64_t argmax_row(const Tensor& logits, int64_t row) {
  const int64_t c = logits.dim(1);
  int64_t best = 0;
  for (int64_t k = 1; k < c; ++k)
    if (logits[row * c + k] > logits[row * c + best]) best = k;  // ties keep the lowest index
  return best;
}

}  // namespace

double linear_eval(const net::Network& encoder, const LabeledSet& train_set,
                   const LabeledSet& test_set, const HeadConfig& config) {
  if (config.epochs < 0 || config.batch < 1)
    throw ConfigError("linear_eval: epochs must be >= 0 and batch >= 1");
  const int64_t classes = checked_num_classes(config.num_classes, train_set, test_set);
  const int64_t edge = config.input_edge > 0 ? config.input_edge : encoder.spec().input_size;

  Tensor train_feats = feature_matrix(encoder, train_set.images, edge);
  Tensor test_feats = feature_matrix(encoder, test_set.images, edge);
  const int64_t c_feat = train_feats.dim(1);
  const int64_t n_train = train_feats.dim(0);

  RngState root(config.seed);
  RngState init_rng = root.stream("head-init");
  Tensor w = init_weights<float>({classes, c_feat}, InitScheme::Xavier, init_rng);
  Tensor b({classes});
  Tensor vw(w.dims()), vb(b.dims());

  const int64_t batches = (n_train + config.batch - 1) / config.batch;
  const int64_t total_steps = config.epochs * batches;
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    RngState shuffle = root.stream("shuffle", static_cast<uint64_t>(epoch));
    for (int64_t k = n_train - 1; k > 0; --k) {
      const uint64_t j = shuffle.uniform_index(static_cast<uint64_t>(k) + 1);
      std::swap(order[static_cast<size_t>(k)], order[j]);
    }
    for (int64_t base = 0; base < n_train; base += config.batch) {
      const int64_t m = std::min<int64_t>(config.batch, n_train - base);
      Tensor x({m, c_feat});
      std::vector<int64_t> y(static_cast<size_t>(m));
      for (int64_t r = 0; r < m; ++r) {
        const int64_t src = order[static_cast<size_t>(base + r)];
        for (int64_t k = 0; k < c_feat; ++k) x[r * c_feat + k] = train_feats[src * c_feat + k];
        y[static_cast<size_t>(r)] = train_set.labels[static_cast<size_t>(src)];
      }
      Tensor logits = linear_forward(x, w, b);
      Tensor glogits;
      cross_entropy_labels(logits, y, &glogits);
      Tensor gx, gw, gb;
      linear_backward(x, w, glogits, &gx, &gw, &gb);
      const double lr = cosine_lr(config.lr, step, total_steps);
      for (int64_t i = 0; i < w.size(); ++i) {
        vw[i] = static_cast<float>(config.momentum) * vw[i] + gw[i];
        w[i] -= static_cast<float>(lr) * vw[i];
      }
      for (int64_t i = 0; i < b.size(); ++i) {
        vb[i] = static_cast<float>(config.momentum) * vb[i] + gb[i];
        b[i] -= static_cast<float>(lr) * vb[i];
      }
      ++step;
    }
  }

  if (test_set.images.empty()) return 0.0;
  Tensor logits = linear_forward(test_feats, w, b);
  int64_t hits = 0;
  for (int64_t i = 0; i < logits.dim(0); ++i)
    if (argmax_row(logits, i) == test_set.labels[static_cast<size_t>(i)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(logits.dim(0));
}

FinetuneResult finetune(const TrainState& state, const LabeledSet& train_set,
                        const LabeledSet& test_set, const FinetuneConfig& config) {
  if (config.epochs < 0 || config.batch < 1)
    throw ConfigError("finetune: epochs must be >= 0 and batch >= 1");
  const int64_t classes = checked_num_classes(config.num_classes, train_set, test_set);
  net::ArchSpec spec = state.config.arch;
  spec.num_classes = classes;
  const int64_t edge = config.input_edge > 0 ? config.input_edge : spec.input_size;

  RngState root(config.seed);
  RngState init_rng = root.stream("finetune-init");
  auto network = net::build_network<float>(spec, init_rng);

  // Transplant the pretrained feature parameters; the head stays fresh.
  std::vector<Tensor*> dst_p, dst_g, src_p, src_g;
  network.collect_params(dst_p, dst_g);
  const_cast<TrainState&>(state).model.encoder().collect_params(src_p, src_g);
  if (src_p.size() > dst_p.size())
    throw InvariantError("finetune: encoder has more parameter tensors than the classifier");
  for (size_t t = 0; t < src_p.size(); ++t) {
    if (src_p[t]->dims() != dst_p[t]->dims())
      throw InvariantError("finetune: feature parameter " + std::to_string(t) +
                           " shape mismatch between encoder and classifier");
    *dst_p[t] = *src_p[t];
  }

  const int64_t n_train = static_cast<int64_t>(train_set.images.size());
  std::vector<Tensor> prepared(static_cast<size_t>(n_train));
  for (int64_t i = 0; i < n_train; ++i)
    prepared[static_cast<size_t>(i)] = prepared_input(train_set.images[static_cast<size_t>(i)], edge);

  std::vector<Tensor> momenta;
  const int64_t batches = (n_train + config.batch - 1) / config.batch;
  const int64_t total_steps = config.epochs * batches;
  int64_t step = 0;
  FinetuneResult result;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n_train));
    std::iota(order.begin(), order.end(), 0);
    RngState shuffle = root.stream("shuffle", static_cast<uint64_t>(epoch));
    for (int64_t k = n_train - 1; k > 0; --k) {
      const uint64_t j = shuffle.uniform_index(static_cast<uint64_t>(k) + 1);
      std::swap(order[static_cast<size_t>(k)], order[j]);
    }
    double epoch_loss = 0.0;
    for (int64_t base = 0; base < n_train; base += config.batch) {
      const int64_t m = std::min<int64_t>(config.batch, n_train - base);
      std::vector<Tensor> batch_images;
      batch_images.reserve(static_cast<size_t>(m));
      std::vector<int64_t> y(static_cast<size_t>(m));
      for (int64_t r = 0; r < m; ++r) {
        const int64_t src = order[static_cast<size_t>(base + r)];
        batch_images.push_back(prepared[static_cast<size_t>(src)]);
        y[static_cast<size_t>(r)] = train_set.labels[static_cast<size_t>(src)];
      }
      Tensor x = img::to_batch(batch_images);
      Tensor targets({m, classes});
      for (int64_t r = 0; r < m; ++r) targets[r * classes + y[static_cast<size_t>(r)]] = 1.0f;

      if (config.mixup) {
        RngState lam_rng = root.stream("mixup", static_cast<uint64_t>(step));
        const double lambda = aug::draw_mixup_lambda(lam_rng);
        RngState perm_rng = root.stream("mixup-perm", static_cast<uint64_t>(step));
        std::vector<int64_t> perm(static_cast<size_t>(m));
        std::iota(perm.begin(), perm.end(), 0);
        for (int64_t k = m - 1; k > 0; --k) {
          const uint64_t j = perm_rng.uniform_index(static_cast<uint64_t>(k) + 1);
          std::swap(perm[static_cast<size_t>(k)], perm[j]);
        }
        Tensor x2(x.dims()), t2(targets.dims());
        const int64_t img_size = x.size() / m;
        for (int64_t r = 0; r < m; ++r) {
          const int64_t s = perm[static_cast<size_t>(r)];
          for (int64_t i = 0; i < img_size; ++i) x2[r * img_size + i] = x[s * img_size + i];
          for (int64_t k = 0; k < classes; ++k) t2[r * classes + k] = targets[s * classes + k];
        }
        x = aug::mixup(x, x2, lambda);
        targets = aug::mixup(targets, t2, lambda);
      }

      Tensor logits = network.forward_train_logits(x);
      Tensor glogits;
      epoch_loss += static_cast<double>(cross_entropy(logits, targets, &glogits)) *
                    static_cast<double>(m);
      network.backward_logits(glogits);

      std::vector<Tensor*> params, grads;
      network.collect_params(params, grads);
      const double lr = cosine_lr(config.lr, step, total_steps);
      detail::sgd_step(params, grads, momenta, lr, config.momentum, config.weight_decay);
      ++step;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(n_train));
  }

  if (!test_set.images.empty()) {
    int64_t hits = 0;
    for (size_t i = 0; i < test_set.images.size(); ++i) {
      Tensor logits =
          network.forward_logits(img::to_batch({prepared_input(test_set.images[i], edge)}));
      if (argmax_row(logits, 0) == test_set.labels[i]) ++hits;
    }
    result.accuracy = static_cast<double>(hits) / static_cast<double>(test_set.images.size());
  }
  return result;
}

}  // namespace tobias::ssl
