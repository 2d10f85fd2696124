#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tobias/activations.hpp"
#include "tobias/init.hpp"

namespace tobias::net {

struct StemSpec {
  int64_t out_channels = 16;
  int64_t kernel = 3;
  int64_t stride = 1;
  int64_t padding = 1;
  bool pool = false;
  int64_t pool_kernel = 2;
  int64_t pool_stride = 2;
  bool pool_ceil = false;
};

enum class BlockKind { PlainConv, Bottleneck };

// How a stage reduces spatial extent: stride-2 on its first conv, a
// max-pool appended after its convs (VGG style), or not at all.
enum class Downsample { None, StrideConv, PoolEnd };

struct StageSpec {
  BlockKind kind = BlockKind::PlainConv;
  int64_t blocks = 1;
  int64_t out_channels = 64;
  int64_t kernel = 3;  // plain-conv kernel; bottlenecks are fixed 1-3-1
  Downsample downsample = Downsample::None;
  int64_t pool_kernel = 2;
  int64_t pool_stride = 2;
};

// Declarative CNN description. The ablation matrix (activation, skip, BN,
// init, depth, truncation) is realized entirely as toggles here.
struct ArchSpec {
  std::string name = "custom";
  int64_t input_size = 224;  // nominal input edge, used as the resize default
  int64_t min_input = 32;    // smallest accepted input edge
  StemSpec stem;
  std::vector<StageSpec> stages;
  ActivationKind activation = ActivationKind::ReLU;
  bool use_skip = true;
  bool use_bn = true;
  bool bn_identity = false;  // sensitivity toggle: keep BN layers but bypass them
  InitScheme init = InitScheme::KaimingNormal;
  // Number of leading stages to keep; the network then ends after that
  // stage (0 = stem only). Unset keeps everything.
  std::optional<int> truncate_after_stage;
  int64_t num_classes = 0;  // 0 = no classifier head

  int retained_stages() const {
    const int total = static_cast<int>(stages.size());
    return truncate_after_stage ? *truncate_after_stage : total;
  }
  void validate() const;
};

// Built-in presets: resnet50 (and its shallow/deep block variants),
// vgg11/vgg16/vgg19, alexnet, tinynet/tinynet-shallow/tinynet-deep.
ArchSpec preset(const std::string& name);
std::vector<std::string> preset_names();

// Loads an ArchSpec from a JSON config file, or falls back to a preset
// name when no such file exists.
ArchSpec load_arch(const std::string& path_or_preset);
ArchSpec arch_from_json_text(const std::string& text);
std::string arch_to_json_text(const ArchSpec& spec);

}  // namespace tobias::net
