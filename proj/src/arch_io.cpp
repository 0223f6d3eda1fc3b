#include "sembg/arch_io.hpp"

#include <algorithm>

#include "sembg/errors.hpp"

namespace sembg {

void reject_unknown_fields(const json& j, std::initializer_list<std::string_view> allowed,
                           std::string_view context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(std::string(context) + ": unknown field '" + key + "'");
    }
  }
}

namespace {

template <typename T>
T field(const json& j, const char* name, std::string_view context) {
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(context) + " field '" + name + "': missing or wrong type");
  }
}

template <typename T>
T field_or(const json& j, const char* name, T fallback, std::string_view context) {
  if (!j.contains(name)) return fallback;
  return field<T>(j, name, context);
}

}  // namespace

ArchSpec arch_spec_from_json(const json& j) {
  constexpr std::string_view ctx = "arch spec";
  reject_unknown_fields(j,
                        {"family", "stage_widths", "stage_depths", "depth", "widen_factor",
                         "kernel", "num_classes", "input_channels", "stem", "block_style",
                         "downsample"},
                        ctx);
  const auto family = field<std::string>(j, "family", ctx);
  const int classes = field<int>(j, "num_classes", ctx);
  ArchSpec spec;
  if (family == "wideresnet") {
    spec.family = Family::wideresnet;
  } else if (family == "resnet") {
    spec.family = Family::resnet;
  } else {
    throw ConfigError("arch spec field 'family': unknown value '" + family + "'");
  }

  if (j.contains("stage_widths") || j.contains("stage_depths")) {
    if (j.contains("depth")) {
      throw ConfigError("arch spec field 'depth': give either depth or stage_widths/stage_depths");
    }
    spec.stage_widths = field<std::vector<int>>(j, "stage_widths", ctx);
    spec.stage_depths = field<std::vector<int>>(j, "stage_depths", ctx);
    spec.stem.out_channels = spec.family == Family::resnet ? 64 : 16;
  } else if (j.contains("depth")) {
    const int depth = field<int>(j, "depth", ctx);
    if (spec.family == Family::wideresnet) {
      spec = wide_resnet(depth, field<int>(j, "widen_factor", ctx), classes);
    } else {
      if (j.contains("widen_factor")) {
        throw ConfigError("arch spec field 'widen_factor': only valid for wideresnet");
      }
      spec = preact_resnet(depth, classes);
    }
  } else {
    throw ConfigError("arch spec field 'stage_widths': missing (or give 'depth')");
  }

  spec.num_classes = classes;
  spec.kernel = field_or<int>(j, "kernel", spec.kernel, ctx);
  spec.input_channels = field_or<int>(j, "input_channels", spec.input_channels, ctx);
  spec.block_style = field_or<std::string>(j, "block_style", spec.block_style, ctx);
  if (j.contains("stem")) {
    const json& s = j.at("stem");
    reject_unknown_fields(s, {"out_channels", "kernel", "stride", "padding"}, "arch spec stem");
    spec.stem.out_channels = field_or<int>(s, "out_channels", spec.stem.out_channels, "arch spec stem");
    spec.stem.kernel = field_or<int>(s, "kernel", spec.stem.kernel, "arch spec stem");
    spec.stem.stride = field_or<int>(s, "stride", spec.stem.stride, "arch spec stem");
    spec.stem.padding = field_or<int>(s, "padding", spec.stem.padding, "arch spec stem");
  }
  const auto down = field_or<std::string>(j, "downsample", "second_conv", ctx);
  if (down == "first_conv") {
    spec.downsample = Downsample::first_conv;
  } else if (down == "second_conv") {
    spec.downsample = Downsample::second_conv;
  } else {
    throw ConfigError("arch spec field 'downsample': unknown value '" + down + "'");
  }
  spec.validate();
  return spec;
}

json arch_spec_to_json(const ArchSpec& spec) {
  return json{{"family", to_string(spec.family)},
              {"stage_widths", spec.stage_widths},
              {"stage_depths", spec.stage_depths},
              {"kernel", spec.kernel},
              {"num_classes", spec.num_classes},
              {"input_channels", spec.input_channels},
              {"stem",
               {{"out_channels", spec.stem.out_channels},
                {"kernel", spec.stem.kernel},
                {"stride", spec.stem.stride},
                {"padding", spec.stem.padding}}},
              {"block_style", spec.block_style},
              {"downsample", to_string(spec.downsample)}};
}

ArchSpec parse_arch_spec(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("arch spec: malformed JSON: ") + e.what());
  }
  return arch_spec_from_json(j);
}

std::string emit_arch_spec(const ArchSpec& spec) { return arch_spec_to_json(spec).dump(2); }

ArchSpec arch_preset(std::string_view name, int num_classes) {
  if (name == "wrn28-10") return wide_resnet(28, 10, num_classes);
  if (name == "wrn16-4") return wide_resnet(16, 4, num_classes);
  if (name == "resnet18") return preact_resnet(18, num_classes);
  if (name == "resnet34") return preact_resnet(34, num_classes);
  if (name == "toy") {
    ArchSpec a;
    a.family = Family::resnet;
    a.stage_widths = {16, 32};
    a.stage_depths = {1, 1};
    a.num_classes = num_classes;
    a.stem = StemSpec{16, 3, 1, 1};
    return a;
  }
  throw ConfigError("unknown architecture preset '" + std::string(name) + "'");
}

BranchPlan branch_plan_from_json(const json& j, const ArchSpec& arch) {
  constexpr std::string_view ctx = "plan";
  reject_unknown_fields(j,
                        {"notation", "n_branches", "shared_stages", "shared_groups",
                         "branch_groups", "grouped_shortcuts"},
                        ctx);
  BranchPlan p = BranchPlan::default_for(arch);
  if (j.contains("notation")) {
    if (j.contains("branch_groups") || j.contains("shared_groups") || j.contains("n_branches")) {
      throw ConfigError("plan field 'notation': conflicts with explicit group fields");
    }
    p = parse_group_notation(field<std::string>(j, "notation", ctx), arch);
  }
  if (j.contains("branch_groups")) {
    p.branch_groups = field<std::vector<int>>(j, "branch_groups", ctx);
    p.n_branches = static_cast<int>(p.branch_groups.size());
  }
  p.n_branches = field_or<int>(j, "n_branches", p.n_branches, ctx);
  p.shared_stages = field_or<int>(j, "shared_stages", p.shared_stages, ctx);
  p.shared_groups = field_or<int>(j, "shared_groups", p.shared_groups, ctx);
  p.grouped_shortcuts = field_or<bool>(j, "grouped_shortcuts", p.grouped_shortcuts, ctx);
  p.validate(arch);
  return p;
}

json branch_plan_to_json(const BranchPlan& plan) {
  return json{{"n_branches", plan.n_branches},
              {"shared_stages", plan.shared_stages},
              {"shared_groups", plan.shared_groups},
              {"branch_groups", plan.branch_groups},
              {"grouped_shortcuts", plan.grouped_shortcuts}};
}

namespace {

json conv_to_json(const ConvSpec& c) {
  return json{{"in", c.in_channels},   {"used_in", c.used_in_channels}, {"out", c.out_channels},
              {"kernel", c.kernel},    {"stride", c.stride},           {"padding", c.padding},
              {"groups", c.groups},    {"bias", c.bias}};
}

json stage_to_json(const StageSpec& s) {
  json blocks = json::array();
  for (const auto& b : s.blocks) {
    json jb{{"in", b.in_channels}, {"out", b.out_channels}, {"stride", b.stride},
            {"groups", b.groups},  {"conv1", conv_to_json(b.conv1)},
            {"conv2", conv_to_json(b.conv2)}};
    jb["shortcut"] = b.shortcut ? conv_to_json(*b.shortcut) : json(nullptr);
    blocks.push_back(std::move(jb));
  }
  return json{{"stage", s.index + 1}, {"width", s.width}, {"groups", s.groups}, {"blocks", blocks}};
}

}  // namespace

json multibranch_to_json(const MultiBranchArch& arch) {
  json trunk = json::array();
  for (const auto& s : arch.trunk) trunk.push_back(stage_to_json(s));
  json branches = json::array();
  for (const auto& b : arch.branches) {
    json stages = json::array();
    for (const auto& s : b.stages) stages.push_back(stage_to_json(s));
    branches.push_back(json{{"groups", b.groups},
                            {"stages", stages},
                            {"head", {{"in", b.head.in_channels}, {"classes", b.head.num_classes}}}});
  }
  return json{{"source", arch_spec_to_json(arch.source)},
              {"plan", branch_plan_to_json(arch.plan)},
              {"stem", conv_to_json(arch.stem)},
              {"trunk", trunk},
              {"branches", branches}};
}

std::uint64_t arch_hash(const MultiBranchArch& arch) {
  const std::string text = multibranch_to_json(arch).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json emit_report(const MultiBranchArch& arch, int input_h, int input_w) {
  json stages = json::array();
  for (const auto& e : cost_breakdown(arch, input_h, input_w)) {
    stages.push_back(json{{"owner", e.owner},
                          {"part", e.part},
                          {"width", e.width},
                          {"groups", e.groups},
                          {"params", e.cost.params},
                          {"flops_mac", e.cost.flops_mac}});
  }
  const CostReport total = cost_report(arch, input_h, input_w);
  return json{{"plan", arch.plan.notation()},
              {"n_branches", arch.plan.n_branches},
              {"input_hw", {input_h, input_w}},
              {"branch_channel_widths", arch.branch_channel_widths()},
              {"layers", stages},
              {"params", total.params},
              {"flops_mac", total.flops_mac},
              {"table1_row",
               {{"acc", nullptr}, {"flops_gmac", total.flops_gmac()}, {"params_m", total.params_m()}}}};
}

}  // namespace sembg
