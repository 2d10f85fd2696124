#include "tobias/net/arch.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tobias::net {

using nlohmann::json;

void ArchSpec::validate() const {
  if (stages.empty()) throw ConfigError("arch '" + name + "': no stages");
  if (stem.out_channels < 1 || stem.kernel < 1 || stem.stride < 1 || stem.padding < 0)
    throw ConfigError("arch '" + name + "': invalid stem");
  for (size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    if (s.blocks < 1) throw ConfigError("arch '" + name + "': stage " + std::to_string(i + 1) +
                                        " has non-positive block count");
    if (s.out_channels < 1)
      throw ConfigError("arch '" + name + "': stage " + std::to_string(i + 1) +
                        " has non-positive channel count");
    if (s.kind == BlockKind::Bottleneck && s.out_channels % 4 != 0)
      throw ConfigError("arch '" + name + "': bottleneck stage " + std::to_string(i + 1) +
                        " output channels must be divisible by the expansion factor 4");
  }
  if (truncate_after_stage) {
    const int k = *truncate_after_stage;
    if (k < 0 || k > static_cast<int>(stages.size()))
      throw ConfigError("arch '" + name + "': truncate_after_stage " + std::to_string(k) +
                        " is not a valid stage index (0.." + std::to_string(stages.size()) + ")");
  }
  if (num_classes < 0) throw ConfigError("arch '" + name + "': negative class count");
}

namespace {

StageSpec bottleneck_stage(int64_t blocks, int64_t out_channels, Downsample down) {
  StageSpec s;
  s.kind = BlockKind::Bottleneck;
  s.blocks = blocks;
  s.out_channels = out_channels;
  s.downsample = down;
  return s;
}

StageSpec plain_stage(int64_t blocks, int64_t out_channels, Downsample down, int64_t kernel = 3,
                      int64_t pool_kernel = 2, int64_t pool_stride = 2) {
  StageSpec s;
  s.kind = BlockKind::PlainConv;
  s.blocks = blocks;
  s.out_channels = out_channels;
  s.kernel = kernel;
  s.downsample = down;
  s.pool_kernel = pool_kernel;
  s.pool_stride = pool_stride;
  return s;
}

ArchSpec resnet50_with_blocks(const std::string& name, const std::vector<int64_t>& blocks) {
  ArchSpec a;
  a.name = name;
  a.input_size = 224;
  a.min_input = 64;
  a.stem = {64, 7, 2, 3, true, 3, 2, true};
  a.stages = {bottleneck_stage(blocks[0], 256, Downsample::None),
              bottleneck_stage(blocks[1], 512, Downsample::StrideConv),
              bottleneck_stage(blocks[2], 1024, Downsample::StrideConv),
              bottleneck_stage(blocks[3], 2048, Downsample::StrideConv)};
  a.use_skip = true;
  a.use_bn = true;
  return a;
}

ArchSpec vgg_with_blocks(const std::string& name, const std::vector<int64_t>& blocks) {
  // blocks lists convs per 64/128/256/512/512 group; the first 64-channel
  // conv becomes the stem. A single-conv first group (VGG-11) pools right
  // after the stem.
  ArchSpec a;
  a.name = name;
  a.input_size = 224;
  a.min_input = 64;
  a.stem = {64, 3, 1, 1, false, 2, 2, false};
  const int64_t channels[5] = {64, 128, 256, 512, 512};
  if (blocks[0] == 1) a.stem.pool = true;
  else a.stages.push_back(plain_stage(blocks[0] - 1, channels[0], Downsample::PoolEnd));
  for (size_t i = 1; i < 5; ++i)
    a.stages.push_back(plain_stage(blocks[i], channels[i], Downsample::PoolEnd));
  a.use_skip = false;
  a.use_bn = false;
  return a;
}

ArchSpec tinynet_with_blocks(const std::string& name, const std::vector<int64_t>& blocks) {
  ArchSpec a;
  a.name = name;
  a.input_size = 64;
  a.min_input = 32;
  a.stem = {16, 3, 1, 1, false, 2, 2, false};
  a.stages = {plain_stage(blocks[0], 32, Downsample::StrideConv),
              plain_stage(blocks[1], 64, Downsample::StrideConv),
              plain_stage(blocks[2], 96, Downsample::StrideConv)};
  a.use_skip = false;
  a.use_bn = false;
  return a;
}

}  // namespace

ArchSpec preset(const std::string& name) {
  if (name == "resnet50") return resnet50_with_blocks(name, {3, 4, 6, 3});
  if (name == "resnet50-shallow-1231") return resnet50_with_blocks(name, {1, 2, 3, 1});
  if (name == "resnet50-shallow-1111") return resnet50_with_blocks(name, {1, 1, 1, 1});
  if (name == "resnet50-deep-68126") return resnet50_with_blocks(name, {6, 8, 12, 6});
  if (name == "vgg11") return vgg_with_blocks(name, {1, 1, 2, 2, 2});
  if (name == "vgg16") return vgg_with_blocks(name, {2, 2, 3, 3, 3});
  if (name == "vgg19") return vgg_with_blocks(name, {2, 2, 4, 4, 4});
  if (name == "alexnet") {
    ArchSpec a;
    a.name = name;
    a.input_size = 224;
    a.min_input = 64;
    a.stem = {96, 11, 4, 2, true, 3, 2, false};
    a.stages = {plain_stage(1, 256, Downsample::PoolEnd, 5, 3, 2),
                plain_stage(2, 384, Downsample::None),
                plain_stage(1, 256, Downsample::PoolEnd, 3, 3, 2)};
    a.use_skip = false;
    a.use_bn = false;
    return a;
  }
  if (name == "tinynet") return tinynet_with_blocks(name, {2, 3, 3});
  if (name == "tinynet-shallow") return tinynet_with_blocks(name, {2, 2, 3});
  if (name == "tinynet-deep") return tinynet_with_blocks(name, {4, 5, 6});
  std::ostringstream os;
  os << "unknown arch preset '" << name << "'; available:";
  for (const auto& p : preset_names()) os << " " << p;
  throw ConfigError(os.str());
}

std::vector<std::string> preset_names() {
  return {"resnet50", "resnet50-shallow-1231", "resnet50-shallow-1111", "resnet50-deep-68126",
          "vgg11",    "vgg16",                 "vgg19",                 "alexnet",
          "tinynet",  "tinynet-shallow",       "tinynet-deep"};
}

namespace {

Downsample downsample_from_name(const std::string& s) {
  if (s == "none") return Downsample::None;
  if (s == "stride") return Downsample::StrideConv;
  if (s == "pool") return Downsample::PoolEnd;
  throw ConfigError("unknown downsample mode: " + s);
}

std::string downsample_name(Downsample d) {
  switch (d) {
    case Downsample::None: return "none";
    case Downsample::StrideConv: return "stride";
    case Downsample::PoolEnd: return "pool";
  }
  return "?";
}

}  // namespace

ArchSpec arch_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("arch config: ") + e.what());
  }
  try {
    ArchSpec a;
    if (j.contains("preset")) a = preset(j.at("preset").get<std::string>());
    if (j.contains("name")) a.name = j.at("name").get<std::string>();
    if (j.contains("input_size")) a.input_size = j.at("input_size").get<int64_t>();
    if (j.contains("min_input")) a.min_input = j.at("min_input").get<int64_t>();
    if (j.contains("activation"))
      a.activation = activation_from_name(j.at("activation").get<std::string>());
    if (j.contains("use_skip")) a.use_skip = j.at("use_skip").get<bool>();
    if (j.contains("use_bn")) a.use_bn = j.at("use_bn").get<bool>();
    if (j.contains("bn_identity")) a.bn_identity = j.at("bn_identity").get<bool>();
    if (j.contains("init")) a.init = init_from_name(j.at("init").get<std::string>());
    if (j.contains("truncate_after_stage") && !j.at("truncate_after_stage").is_null())
      a.truncate_after_stage = j.at("truncate_after_stage").get<int>();
    if (j.contains("num_classes")) a.num_classes = j.at("num_classes").get<int64_t>();
    if (j.contains("stem")) {
      const json& s = j.at("stem");
      a.stem.out_channels = s.value("out_channels", a.stem.out_channels);
      a.stem.kernel = s.value("kernel", a.stem.kernel);
      a.stem.stride = s.value("stride", a.stem.stride);
      a.stem.padding = s.value("padding", a.stem.padding);
      a.stem.pool = s.value("pool", a.stem.pool);
      a.stem.pool_kernel = s.value("pool_kernel", a.stem.pool_kernel);
      a.stem.pool_stride = s.value("pool_stride", a.stem.pool_stride);
      a.stem.pool_ceil = s.value("pool_ceil", a.stem.pool_ceil);
    }
    if (j.contains("stages")) {
      a.stages.clear();
      for (const json& s : j.at("stages")) {
        StageSpec st;
        const std::string kind = s.value("kind", std::string("plain"));
        if (kind == "plain") st.kind = BlockKind::PlainConv;
        else if (kind == "bottleneck") st.kind = BlockKind::Bottleneck;
        else throw ConfigError("unknown block kind: " + kind);
        st.blocks = s.value("blocks", st.blocks);
        st.out_channels = s.value("out_channels", st.out_channels);
        st.kernel = s.value("kernel", st.kernel);
        st.downsample = downsample_from_name(s.value("downsample", std::string("none")));
        st.pool_kernel = s.value("pool_kernel", st.pool_kernel);
        st.pool_stride = s.value("pool_stride", st.pool_stride);
        a.stages.push_back(st);
      }
    }
    a.validate();
    return a;
  } catch (const json::exception& e) {
    throw ParseError(std::string("arch config: ") + e.what());
  }
}

std::string arch_to_json_text(const ArchSpec& a) {
  json j;
  j["name"] = a.name;
  j["input_size"] = a.input_size;
  j["min_input"] = a.min_input;
  j["activation"] = activation_name(a.activation);
  j["use_skip"] = a.use_skip;
  j["use_bn"] = a.use_bn;
  j["bn_identity"] = a.bn_identity;
  j["init"] = init_name(a.init);
  if (a.truncate_after_stage) j["truncate_after_stage"] = *a.truncate_after_stage;
  else j["truncate_after_stage"] = nullptr;
  j["num_classes"] = a.num_classes;
  j["stem"] = {{"out_channels", a.stem.out_channels}, {"kernel", a.stem.kernel},
               {"stride", a.stem.stride},             {"padding", a.stem.padding},
               {"pool", a.stem.pool},                 {"pool_kernel", a.stem.pool_kernel},
               {"pool_stride", a.stem.pool_stride},   {"pool_ceil", a.stem.pool_ceil}};
  j["stages"] = json::array();
  for (const StageSpec& s : a.stages) {
    j["stages"].push_back({{"kind", s.kind == BlockKind::Bottleneck ? "bottleneck" : "plain"},
                           {"blocks", s.blocks},
                           {"out_channels", s.out_channels},
                           {"kernel", s.kernel},
                           {"downsample", downsample_name(s.downsample)},
                           {"pool_kernel", s.pool_kernel},
                           {"pool_stride", s.pool_stride}});
  }
  return j.dump(2);
}

ArchSpec load_arch(const std::string& path_or_preset) {
  if (std::filesystem::exists(path_or_preset)) {
    std::ifstream in(path_or_preset);
    if (!in) throw IoError("cannot open arch config: " + path_or_preset);
    std::ostringstream buf;
    buf << in.rdbuf();
    return arch_from_json_text(buf.str());
  }
  return preset(path_or_preset);
}

}  // namespace tobias::net
