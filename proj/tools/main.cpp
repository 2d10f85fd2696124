// tobias: command-line front end for the random-CNN localization and
// background-swap pretraining toolkit. One binary, subcommand style; all
// randomness in a run fans out of a single --seed through named streams,
// and every run writes a config echo next to its outputs so it can be
// reproduced exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tobias/augmenter.hpp"
#include "tobias/imageio.hpp"
#include "tobias/localizer.hpp"
#include "tobias/ssl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace tobias;

namespace {

std::string resolve_relative(const std::string& manifest_path, const std::string& image) {
  fs::path p(image);
  if (p.is_absolute()) return image;
  return (fs::path(manifest_path).parent_path() / p).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void write_echo(const std::string& dir, const ordered_json& config) {
  ensure_dir(dir);
  const fs::path path = fs::path(dir) / "config.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config echo " + path.string());
  out << config.dump(2) << '\n';
}

void write_json_file(const fs::path& path, const ordered_json& value) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << value.dump(2) << '\n';
}

net::ArchSpec resolve_arch(const std::string& arch, const std::string& activation) {
  net::ArchSpec spec = net::load_arch(arch);
  if (!activation.empty()) spec.activation = activation_from_name(activation);
  return spec;
}

net::Network build_for_seed(const net::ArchSpec& spec, uint64_t seed) {
  RngState rng = RngState(seed).stream("model-init");
  return net::build_network<float>(spec, rng);
}

// Reads every manifest image, resized to a square edge, values kept in [0,1].
std::vector<Tensor> load_pool(const std::string& manifest_path, int64_t edge,
                              std::vector<img::ManifestRecord>* out_records = nullptr) {
  const auto records = img::read_manifest(manifest_path);
  std::vector<Tensor> pool;
  pool.reserve(records.size());
  for (const auto& rec : records) {
    Tensor image = img::read_image(resolve_relative(manifest_path, rec.image));
    pool.push_back(img::resize_bilinear(image, edge, edge));
  }
  if (out_records) *out_records = records;
  return pool;
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * fraction);
  return buf;
}

// ---------------------------------------------------------------------------
// localize

struct LocalizeArgs {
  std::string image, manifest;
  std::string arch = "tinynet-deep";
  std::string activation;
  uint64_t seed = 0;
  int64_t input_edge = 0;
  std::string out = "localize-out";
  bool no_heatmap = false;
};

void cmd_localize(const LocalizeArgs& a) {
  if (a.image.empty() == a.manifest.empty())
    throw ConfigError("localize: pass exactly one of --image or --manifest");

  std::vector<std::string> paths;
  if (!a.image.empty()) {
    paths.push_back(a.image);
  } else {
    for (const auto& rec : img::read_manifest(a.manifest))
      paths.push_back(resolve_relative(a.manifest, rec.image));
  }

  const net::ArchSpec spec = resolve_arch(a.arch, a.activation);
  net::Network network = build_for_seed(spec, a.seed);
  ensure_dir(a.out);

  std::ofstream boxes(fs::path(a.out) / "boxes.jsonl");
  if (!boxes) throw IoError("cannot write boxes.jsonl under " + a.out);
  for (size_t i = 0; i < paths.size(); ++i) {
    const Tensor image = img::read_image(paths[i]);
    const loc::LocalizeResult res = loc::localize(network, image, a.input_edge);
    ordered_json line{{"image", paths[i]},
                      {"box", {res.box.x0, res.box.y0, res.box.x1, res.box.y1}},
                      {"empty_fallback", res.empty_fallback}};
    boxes << line.dump() << '\n';
    std::string heatmap_file;
    if (!a.no_heatmap) {
      char name[32];
      std::snprintf(name, sizeof(name), "heatmap_%04zu.ppm", i);
      heatmap_file = (fs::path(a.out) / name).string();
      img::write_ppm(heatmap_file, img::render_heatmap(image, res.amap));
    }
    std::cout << paths[i] << "  box [" << res.box.x0 << "," << res.box.y0 << "," << res.box.x1
              << "," << res.box.y1 << "]" << (res.empty_fallback ? "  (empty fallback)" : "")
              << (heatmap_file.empty() ? "" : "  -> " + heatmap_file) << '\n';
  }

  write_echo(a.out, ordered_json{{"command", "localize"},
                                 {"image", a.image},
                                 {"manifest", a.manifest},
                                 {"arch", a.arch},
                                 {"activation", a.activation},
                                 {"seed", a.seed},
                                 {"input_edge", a.input_edge},
                                 {"heatmaps", !a.no_heatmap},
                                 {"out", a.out}});
  std::cout << "localized " << paths.size() << " image(s); boxes in " << a.out << "/boxes.jsonl\n";
}

// ---------------------------------------------------------------------------
// eval-loc

struct EvalLocArgs {
  std::string manifest;
  std::string arch = "tinynet-deep";
  std::string activation;
  std::vector<uint64_t> seeds{0, 1, 2};
  int64_t input_edge = 0;
  double iou_threshold = 0.5;
  int workers = 1;
  std::string out = "eval-out";
};

void cmd_eval_loc(const EvalLocArgs& a) {
  if (a.seeds.empty()) throw ConfigError("eval-loc: --seeds must name at least one seed");
  const net::ArchSpec spec = resolve_arch(a.arch, a.activation);
  ensure_dir(a.out);

  loc::EvalOptions options;
  options.input_edge = a.input_edge;
  options.workers = a.workers;
  options.iou_threshold = a.iou_threshold;

  std::vector<double> accuracies;
  loc::EvalReport first;
  for (size_t i = 0; i < a.seeds.size(); ++i) {
    net::Network network = build_for_seed(spec, a.seeds[i]);
    loc::EvalReport report = loc::evaluate_localization(network, a.manifest, options);
    if (i == 0) first = report;
    char name[32];
    std::snprintf(name, sizeof(name), "report_seed%llu.jsonl",
                  static_cast<unsigned long long>(a.seeds[i]));
    loc::write_report_jsonl((fs::path(a.out) / name).string(), report);
    accuracies.push_back(report.accuracy);
    std::cout << "seed " << a.seeds[i] << ": accuracy " << percent(report.accuracy)
              << "  mean IoU " << report.mean_iou << "  (evaluated " << report.evaluated << "/"
              << report.total << ", failed " << report.failed << ")\n";
  }

  const loc::SeedStats stats = loc::seed_stats(accuracies);
  std::cout << a.arch << (a.activation.empty() ? "" : "/" + a.activation) << " over "
            << a.seeds.size() << " seed(s): accuracy " << percent(stats.mean) << " +/- "
            << percent(stats.stddev) << '\n';
  std::cout << "whole-image baseline: accuracy " << percent(first.whole_image_accuracy)
            << "  mean IoU " << first.whole_image_mean_iou << '\n';

  ordered_json summary{{"arch", spec.name},
                       {"activation", activation_name(spec.activation)},
                       {"seeds", a.seeds},
                       {"accuracies", accuracies},
                       {"accuracy_mean", stats.mean},
                       {"accuracy_stddev", stats.stddev},
                       {"whole_image_accuracy", first.whole_image_accuracy},
                       {"whole_image_mean_iou", first.whole_image_mean_iou},
                       {"iou_threshold", a.iou_threshold},
                       {"evaluated", first.evaluated},
                       {"failed", first.failed}};
  write_json_file(fs::path(a.out) / "summary.json", summary);

  write_echo(a.out, ordered_json{{"command", "eval-loc"},
                                 {"manifest", a.manifest},
                                 {"arch", a.arch},
                                 {"activation", a.activation},
                                 {"seeds", a.seeds},
                                 {"input_edge", a.input_edge},
                                 {"iou_threshold", a.iou_threshold},
                                 {"workers", a.workers},
                                 {"out", a.out}});
}

// ---------------------------------------------------------------------------
// masks

struct MasksArgs {
  std::string manifest;
  std::string arch = "tinynet-deep";
  std::string activation;
  uint64_t seed = 0;
  int64_t input_edge = 0;
  int workers = 1;
  std::string out = "masks-out";
};

void cmd_masks(const MasksArgs& a) {
  const net::ArchSpec spec = resolve_arch(a.arch, a.activation);
  net::Network network = build_for_seed(spec, a.seed);
  std::vector<aug::PatchMask> masks =
      aug::compute_mask_table(network, a.manifest, a.input_edge, a.workers);
  ensure_dir(a.out);
  const std::string cache_path = (fs::path(a.out) / "masks.tbmk").string();
  aug::write_mask_cache(cache_path, aug::MaskCache{a.seed, masks});
  write_echo(a.out, ordered_json{{"command", "masks"},
                                 {"manifest", a.manifest},
                                 {"arch", a.arch},
                                 {"activation", a.activation},
                                 {"seed", a.seed},
                                 {"input_edge", a.input_edge},
                                 {"workers", a.workers},
                                 {"out", a.out}});
  std::cout << "wrote " << masks.size() << " patch masks to " << cache_path << '\n';
}

// ---------------------------------------------------------------------------
// augment

struct AugmentArgs {
  std::string manifest, mask_cache;
  double p = 0.3;
  int64_t count = 16;
  uint64_t seed = 0;
  int64_t input_edge = 64;
  std::string out = "augment-out";
};

void cmd_augment(const AugmentArgs& a) {
  if (a.p < 0.0 || a.p > 1.0) throw ConfigError("augment: --p must lie in [0,1]");
  if (a.count < 0) throw ConfigError("augment: --count must be >= 0");
  if (a.input_edge < 4 || a.input_edge % 4 != 0)
    throw ConfigError("augment: --input-edge must be a positive multiple of 4");

  std::vector<img::ManifestRecord> records;
  const std::vector<Tensor> pool = load_pool(a.manifest, a.input_edge, &records);
  if (pool.empty()) throw ConfigError("augment: manifest lists no images");
  const aug::MaskCache cache = aug::read_mask_cache(a.mask_cache);
  if (cache.masks.size() != pool.size())
    throw ConfigError("augment: mask cache holds " + std::to_string(cache.masks.size()) +
                      " masks for " + std::to_string(pool.size()) + " manifest images");

  ensure_dir(a.out);
  std::ofstream provenance(fs::path(a.out) / "provenance.jsonl");
  if (!provenance) throw IoError("cannot write provenance.jsonl under " + a.out);

  RngState root(a.seed);
  int64_t written = 0;
  for (int64_t i = 0; i < a.count && a.p > 0.0; ++i) {
    RngState draw = root.stream("augment", static_cast<uint64_t>(i));
    const size_t k = draw.uniform_index(pool.size());
    RngState gate = draw.stream("gate");
    if (!gate.bernoulli(a.p)) continue;
    RngState partner_rng = draw.stream("partner");
    const size_t partner = partner_rng.uniform_index(pool.size());
    RngState sigma_rng = draw.stream("sigma");
    const aug::MergedView view =
        aug::merge(pool[k], cache.masks[k], pool[partner], cache.masks[partner], sigma_rng);

    char name[32];
    std::snprintf(name, sizeof(name), "merged_%04lld.ppm", static_cast<long long>(i));
    const std::string file = (fs::path(a.out) / name).string();
    img::write_ppm(file, view.image);
    provenance << ordered_json{{"file", name},
                               {"draw_index", i},
                               {"fg", records[k].image},
                               {"fg_index", k},
                               {"bg", records[partner].image},
                               {"bg_index", partner},
                               {"sigma", view.sigma}}
                      .dump()
               << '\n';
    ++written;
  }

  write_echo(a.out, ordered_json{{"command", "augment"},
                                 {"manifest", a.manifest},
                                 {"mask_cache", a.mask_cache},
                                 {"p", a.p},
                                 {"count", a.count},
                                 {"seed", a.seed},
                                 {"input_edge", a.input_edge},
                                 {"out", a.out}});
  if (a.p == 0.0)
    std::cout << "p = 0: the merge gate never opens, so no merged views were drawn\n";
  std::cout << "wrote " << written << " merged view(s) from " << a.count << " draw(s) to " << a.out
            << '\n';
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainArgs {
  std::string config;
  std::string manifest, mask_cache;
  std::optional<uint64_t> seed;
  std::optional<int64_t> steps, batch;
  std::optional<double> p, lr, tau;
  bool plain_views = false;
  std::string out = "pretrain-out";
};

void cmd_pretrain(const PretrainArgs& a) {
  ssl::SslConfig cfg = a.config.empty() ? ssl::SslConfig{} : ssl::load_ssl_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.steps) cfg.steps = *a.steps;
  if (a.batch) cfg.batch = *a.batch;
  if (a.p) cfg.p = *a.p;
  if (a.lr) cfg.lr = *a.lr;
  if (a.tau) cfg.tau = *a.tau;
  cfg.pipeline.out_edge = cfg.input_edge;
  cfg.validate();

  const std::vector<Tensor> pool = load_pool(a.manifest, cfg.input_edge);
  std::vector<aug::PatchMask> masks;
  if (cfg.p > 0.0) {
    if (a.mask_cache.empty())
      throw ConfigError("pretrain: p > 0 needs --mask-cache (run `tobias masks` first)");
    masks = aug::read_mask_cache(a.mask_cache).masks;
  }

  ssl::TrainState state = ssl::make_train_state(cfg);
  const int64_t report_every = std::max<int64_t>(1, cfg.steps / 10);
  for (int64_t s = 0; s < cfg.steps; ++s) {
    const double loss = ssl::pretrain_step(state, pool, masks, !a.plain_views);
    if (s % report_every == 0 || s + 1 == cfg.steps)
      std::cout << "step " << s << "/" << cfg.steps << "  loss " << loss << "  lr "
                << state.history.back().lr << '\n';
  }

  ensure_dir(a.out);
  ssl::write_loss_log((fs::path(a.out) / "loss.jsonl").string(), state.history);
  const std::string ck = (fs::path(a.out) / "checkpoint.tbck").string();
  ssl::save_checkpoint(ck, state);

  ordered_json echo{{"command", "pretrain"},
                    {"manifest", a.manifest},
                    {"mask_cache", a.mask_cache},
                    {"plain_views", a.plain_views},
                    {"out", a.out},
                    {"resolved", ordered_json::parse(ssl::ssl_config_to_json_text(cfg))}};
  write_echo(a.out, echo);
  std::cout << "wrote " << ck << " and loss.jsonl (" << state.history.size() << " steps)\n";
}

// ---------------------------------------------------------------------------
// linear-eval / finetune

struct HeadArgs {
  std::string checkpoint, train_manifest, test_manifest;
  int64_t num_classes = 0;
  int64_t epochs = 30;
  int64_t batch = 32;
  double lr = 0.3;
  double momentum = 0.9;
  uint64_t seed = 1;
  int64_t input_edge = 0;
  std::string out = "linear-eval-out";
};

void cmd_linear_eval(const HeadArgs& a) {
  ssl::TrainState state = ssl::load_checkpoint(a.checkpoint);
  const ssl::LabeledSet train = ssl::load_labeled_set(a.train_manifest);
  const ssl::LabeledSet test = ssl::load_labeled_set(a.test_manifest);

  ssl::HeadConfig head;
  head.num_classes = a.num_classes;
  head.epochs = a.epochs;
  head.batch = a.batch;
  head.lr = a.lr;
  head.momentum = a.momentum;
  head.seed = a.seed;
  head.input_edge = a.input_edge;
  const double accuracy = ssl::linear_eval(state.model.encoder(), train, test, head);

  ensure_dir(a.out);
  write_json_file(fs::path(a.out) / "report.json",
                  ordered_json{{"accuracy", accuracy},
                               {"train_size", train.images.size()},
                               {"test_size", test.images.size()}});
  write_echo(a.out, ordered_json{{"command", "linear-eval"},
                                 {"checkpoint", a.checkpoint},
                                 {"train_manifest", a.train_manifest},
                                 {"test_manifest", a.test_manifest},
                                 {"num_classes", a.num_classes},
                                 {"epochs", a.epochs},
                                 {"batch", a.batch},
                                 {"lr", a.lr},
                                 {"momentum", a.momentum},
                                 {"seed", a.seed},
                                 {"input_edge", a.input_edge},
                                 {"out", a.out}});
  std::cout << "linear probe top-1 accuracy: " << percent(accuracy) << " ("
            << test.images.size() << " test images)\n";
}

struct FinetuneArgs {
  std::string checkpoint, train_manifest, test_manifest;
  int64_t num_classes = 0;
  int64_t epochs = 10;
  int64_t batch = 32;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool mixup = false;
  uint64_t seed = 2;
  int64_t input_edge = 0;
  std::string out = "finetune-out";
};

void cmd_finetune(const FinetuneArgs& a) {
  ssl::TrainState state = ssl::load_checkpoint(a.checkpoint);
  const ssl::LabeledSet train = ssl::load_labeled_set(a.train_manifest);
  const ssl::LabeledSet test = ssl::load_labeled_set(a.test_manifest);

  ssl::FinetuneConfig cfg;
  cfg.num_classes = a.num_classes;
  cfg.epochs = a.epochs;
  cfg.batch = a.batch;
  cfg.lr = a.lr;
  cfg.momentum = a.momentum;
  cfg.weight_decay = a.weight_decay;
  cfg.mixup = a.mixup;
  cfg.seed = a.seed;
  cfg.input_edge = a.input_edge;
  const ssl::FinetuneResult result = ssl::finetune(state, train, test, cfg);

  ensure_dir(a.out);
  write_json_file(fs::path(a.out) / "report.json",
                  ordered_json{{"accuracy", result.accuracy},
                               {"epoch_losses", result.epoch_losses},
                               {"train_size", train.images.size()},
                               {"test_size", test.images.size()}});
  write_echo(a.out, ordered_json{{"command", "finetune"},
                                 {"checkpoint", a.checkpoint},
                                 {"train_manifest", a.train_manifest},
                                 {"test_manifest", a.test_manifest},
                                 {"num_classes", a.num_classes},
                                 {"epochs", a.epochs},
                                 {"batch", a.batch},
                                 {"lr", a.lr},
                                 {"momentum", a.momentum},
                                 {"weight_decay", a.weight_decay},
                                 {"mixup", a.mixup},
                                 {"seed", a.seed},
                                 {"input_edge", a.input_edge},
                                 {"out", a.out}});
  std::cout << "finetune top-1 accuracy: " << percent(result.accuracy) << "  (last epoch loss "
            << (result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back()) << ")\n";
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out = "synth-out";
  int64_t count = 200;
  int64_t edge = 64;
  int64_t min_object = 24;
  int64_t max_object = 40;
  int64_t classes = img::kNumTextureKinds;
  uint64_t seed = 0;
};

void cmd_synth(const SynthArgs& a) {
  img::SynthParams params;
  params.count = a.count;
  params.edge = a.edge;
  params.min_object = a.min_object;
  params.max_object = a.max_object;
  params.texture_kinds = a.classes;
  params.seed = a.seed;
  const auto records = img::generate_synthetic_dataset(a.out, params);
  write_echo(a.out, ordered_json{{"command", "synth"},
                                 {"count", a.count},
                                 {"edge", a.edge},
                                 {"min_object", a.min_object},
                                 {"max_object", a.max_object},
                                 {"classes", a.classes},
                                 {"seed", a.seed},
                                 {"out", a.out}});
  std::cout << "wrote " << records.size() << " scenes and manifest.jsonl to " << a.out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "tobias: random-CNN saliency localization and background-swap contrastive pretraining"};
  app.require_subcommand(1);

  LocalizeArgs loc_args;
  CLI::App* loc_cmd = app.add_subcommand("localize", "Predict object boxes with a random CNN");
  loc_cmd->add_option("--image", loc_args.image, "One image (PPM or PNG)");
  loc_cmd->add_option("--manifest", loc_args.manifest, "JSONL manifest of images");
  loc_cmd->add_option("--arch", loc_args.arch, "Preset name or arch JSON path")
      ->capture_default_str();
  loc_cmd->add_option("--activation", loc_args.activation,
                      "Override activation (relu|sigmoid|arctan|elu|selu|softplus)");
  loc_cmd->add_option("--seed", loc_args.seed, "Weight seed")->capture_default_str();
  loc_cmd->add_option("--input-edge", loc_args.input_edge, "Resize edge, 0 = arch default")
      ->capture_default_str();
  loc_cmd->add_option("--out", loc_args.out, "Output directory")->capture_default_str();
  loc_cmd->add_flag("--no-heatmap", loc_args.no_heatmap, "Skip heatmap overlays");
  loc_cmd->callback([&] { cmd_localize(loc_args); });

  EvalLocArgs eval_args;
  CLI::App* eval_cmd =
      app.add_subcommand("eval-loc", "Localization accuracy against manifest boxes");
  eval_cmd->add_option("--manifest", eval_args.manifest, "JSONL manifest with boxes")->required();
  eval_cmd->add_option("--arch", eval_args.arch, "Preset name or arch JSON path")
      ->capture_default_str();
  eval_cmd->add_option("--activation", eval_args.activation, "Override activation");
  eval_cmd->add_option("--seeds", eval_args.seeds, "Weight seeds (repeat or comma-separate)")
      ->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_option("--input-edge", eval_args.input_edge, "Resize edge, 0 = arch default")
      ->capture_default_str();
  eval_cmd->add_option("--iou-threshold", eval_args.iou_threshold, "Correctness threshold")
      ->capture_default_str();
  eval_cmd->add_option("--workers", eval_args.workers, "Evaluation threads")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_args.out, "Output directory")->capture_default_str();
  eval_cmd->callback([&] { cmd_eval_loc(eval_args); });

  MasksArgs masks_args;
  CLI::App* masks_cmd =
      app.add_subcommand("masks", "Precompute 4x4 foreground patch masks for a manifest");
  masks_cmd->add_option("--manifest", masks_args.manifest, "JSONL manifest")->required();
  masks_cmd->add_option("--arch", masks_args.arch, "Mask network preset or JSON path")
      ->capture_default_str();
  masks_cmd->add_option("--activation", masks_args.activation, "Override activation");
  masks_cmd->add_option("--seed", masks_args.seed, "Mask network weight seed")
      ->capture_default_str();
  masks_cmd->add_option("--input-edge", masks_args.input_edge, "Resize edge, 0 = arch default")
      ->capture_default_str();
  masks_cmd->add_option("--workers", masks_args.workers, "Precompute threads")
      ->capture_default_str();
  masks_cmd->add_option("--out", masks_args.out, "Output directory")->capture_default_str();
  masks_cmd->callback([&] { cmd_masks(masks_args); });

  AugmentArgs aug_args;
  CLI::App* aug_cmd =
      app.add_subcommand("augment", "Draw background-swapped merged views for inspection");
  aug_cmd->add_option("--manifest", aug_args.manifest, "JSONL manifest")->required();
  aug_cmd->add_option("--mask-cache", aug_args.mask_cache, "masks.tbmk from `tobias masks`")
      ->required();
  aug_cmd->add_option("--p", aug_args.p, "Merge probability per draw")->capture_default_str();
  aug_cmd->add_option("--count", aug_args.count, "Number of draws")->capture_default_str();
  aug_cmd->add_option("--seed", aug_args.seed, "Draw seed")->capture_default_str();
  aug_cmd->add_option("--input-edge", aug_args.input_edge, "Working resolution (multiple of 4)")
      ->capture_default_str();
  aug_cmd->add_option("--out", aug_args.out, "Output directory")->capture_default_str();
  aug_cmd->callback([&] { cmd_augment(aug_args); });

  PretrainArgs pre_args;
  CLI::App* pre_cmd = app.add_subcommand("pretrain", "Contrastive pretraining with merged views");
  pre_cmd->add_option("--config", pre_args.config, "Config JSON path or inline JSON");
  pre_cmd->add_option("--manifest", pre_args.manifest, "JSONL manifest of pool images")
      ->required();
  pre_cmd->add_option("--mask-cache", pre_args.mask_cache, "masks.tbmk (required when p > 0)");
  pre_cmd->add_option("--seed", pre_args.seed, "Override config seed");
  pre_cmd->add_option("--steps", pre_args.steps, "Override step count");
  pre_cmd->add_option("--batch", pre_args.batch, "Override batch size");
  pre_cmd->add_option("--p", pre_args.p, "Override merge probability");
  pre_cmd->add_option("--lr", pre_args.lr, "Override base learning rate");
  pre_cmd->add_option("--tau", pre_args.tau, "Override temperature");
  pre_cmd->add_flag("--plain-views", pre_args.plain_views,
                    "Both views from the plain pipeline (ablation baseline)");
  pre_cmd->add_option("--out", pre_args.out, "Output directory")->capture_default_str();
  pre_cmd->callback([&] { cmd_pretrain(pre_args); });

  HeadArgs head_args;
  CLI::App* head_cmd =
      app.add_subcommand("linear-eval", "Linear probe on a frozen pretrained encoder");
  head_cmd->add_option("--checkpoint", head_args.checkpoint, "checkpoint.tbck")->required();
  head_cmd->add_option("--train-manifest", head_args.train_manifest, "Labeled train manifest")
      ->required();
  head_cmd->add_option("--test-manifest", head_args.test_manifest, "Labeled test manifest")
      ->required();
  head_cmd->add_option("--num-classes", head_args.num_classes, "0 = infer from labels")
      ->capture_default_str();
  head_cmd->add_option("--epochs", head_args.epochs, "Head training epochs")
      ->capture_default_str();
  head_cmd->add_option("--batch", head_args.batch, "Head batch size")->capture_default_str();
  head_cmd->add_option("--lr", head_args.lr, "Head learning rate")->capture_default_str();
  head_cmd->add_option("--momentum", head_args.momentum, "SGD momentum")->capture_default_str();
  head_cmd->add_option("--seed", head_args.seed, "Head init/shuffle seed")
      ->capture_default_str();
  head_cmd->add_option("--input-edge", head_args.input_edge, "Resize edge, 0 = arch default")
      ->capture_default_str();
  head_cmd->add_option("--out", head_args.out, "Output directory")->capture_default_str();
  head_cmd->callback([&] { cmd_linear_eval(head_args); });

  FinetuneArgs ft_args;
  CLI::App* ft_cmd = app.add_subcommand("finetune", "Supervised training from a checkpoint");
  ft_cmd->add_option("--checkpoint", ft_args.checkpoint, "checkpoint.tbck")->required();
  ft_cmd->add_option("--train-manifest", ft_args.train_manifest, "Labeled train manifest")
      ->required();
  ft_cmd->add_option("--test-manifest", ft_args.test_manifest, "Labeled test manifest")
      ->required();
  ft_cmd->add_option("--num-classes", ft_args.num_classes, "0 = infer from labels")
      ->capture_default_str();
  ft_cmd->add_option("--epochs", ft_args.epochs, "Training epochs")->capture_default_str();
  ft_cmd->add_option("--batch", ft_args.batch, "Batch size")->capture_default_str();
  ft_cmd->add_option("--lr", ft_args.lr, "Learning rate")->capture_default_str();
  ft_cmd->add_option("--momentum", ft_args.momentum, "SGD momentum")->capture_default_str();
  ft_cmd->add_option("--weight-decay", ft_args.weight_decay, "L2 weight decay")
      ->capture_default_str();
  ft_cmd->add_flag("--mixup", ft_args.mixup, "Convexly mix inputs and one-hot targets");
  ft_cmd->add_option("--seed", ft_args.seed, "Init/shuffle seed")->capture_default_str();
  ft_cmd->add_option("--input-edge", ft_args.input_edge, "Resize edge, 0 = arch default")
      ->capture_default_str();
  ft_cmd->add_option("--out", ft_args.out, "Output directory")->capture_default_str();
  ft_cmd->callback([&] { cmd_finetune(ft_args); });

  SynthArgs synth_args;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "Generate a synthetic textured-object corpus");
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->capture_default_str();
  synth_cmd->add_option("--count", synth_args.count, "Number of scenes")->capture_default_str();
  synth_cmd->add_option("--edge", synth_args.edge, "Scene edge in pixels")->capture_default_str();
  synth_cmd->add_option("--min-object", synth_args.min_object, "Smallest object edge")
      ->capture_default_str();
  synth_cmd->add_option("--max-object", synth_args.max_object, "Largest object edge")
      ->capture_default_str();
  synth_cmd->add_option("--classes", synth_args.classes, "Texture classes to draw from (1-3)")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth_args.seed, "Scene seed")->capture_default_str();
  synth_cmd->callback([&] { cmd_synth(synth_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the problem and points at --help
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
