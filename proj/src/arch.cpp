#include "sembg/arch.hpp"

#include <cmath>
#include <regex>
#include <sstream>

#include "sembg/errors.hpp"
#include "sembg/ops.hpp"

namespace sembg {

std::string_view to_string(Family family) {
  return family == Family::resnet ? "resnet" : "wideresnet";
}

std::string_view to_string(Downsample downsample) {
  return downsample == Downsample::first_conv ? "first_conv" : "second_conv";
}

void ArchSpec::validate() const {
  if (stage_widths.size() < 2) throw ConfigError("arch: at least two stages are required");
  if (stage_depths.size() != stage_widths.size()) {
    throw ConfigError("arch: stage_widths and stage_depths differ in length");
  }
  for (int w : stage_widths) {
    if (w < 1) throw ConfigError("arch: stage_widths must be positive");
  }
  for (int d : stage_depths) {
    if (d < 1) throw ConfigError("arch: stage_depths must be positive");
  }
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("arch: kernel must be a positive odd size");
  if (num_classes < 2) throw ConfigError("arch: num_classes must be at least 2");
  if (input_channels < 1) throw ConfigError("arch: input_channels must be positive");
  if (stem.out_channels < 1 || stem.kernel < 1 || stem.stride < 1 || stem.padding < 0) {
    throw ConfigError("arch: invalid stem descriptor");
  }
  if (block_style != "pre_activation_residual") {
    throw ConfigError("arch: unsupported block_style '" + block_style + "'");
  }
}

ArchSpec wide_resnet(int depth, int widen_factor, int num_classes) {
  if (depth < 10 || (depth - 4) % 6 != 0) {
    throw ConfigError("arch: wide resnet depth must be 6n+4, got " + std::to_string(depth));
  }
  if (widen_factor < 1) throw ConfigError("arch: widen_factor must be positive");
  const int n = (depth - 4) / 6;
  ArchSpec a;
  a.family = Family::wideresnet;
  a.stage_widths = {16 * widen_factor, 32 * widen_factor, 64 * widen_factor};
  a.stage_depths = {n, n, n};
  a.num_classes = num_classes;
  a.stem = StemSpec{16, 3, 1, 1};
  return a;
}

ArchSpec preact_resnet(int depth, int num_classes) {
  ArchSpec a;
  a.family = Family::resnet;
  a.stage_widths = {64, 128, 256, 512};
  if (depth == 18) {
    a.stage_depths = {2, 2, 2, 2};
  } else if (depth == 34) {
    a.stage_depths = {3, 4, 6, 3};
  } else {
    throw ConfigError("arch: resnet depth must be 18 or 34, got " + std::to_string(depth));
  }
  a.num_classes = num_classes;
  a.stem = StemSpec{64, 3, 1, 1};
  return a;
}

int default_shared_stages(const ArchSpec& arch) { return arch.stage_count() == 4 ? 2 : 1; }

BranchPlan BranchPlan::default_for(const ArchSpec& arch) {
  BranchPlan p;
  p.shared_stages = default_shared_stages(arch);
  return p;
}

BranchPlan BranchPlan::identity(const ArchSpec& arch) {
  BranchPlan p;
  p.n_branches = 1;
  p.shared_stages = default_shared_stages(arch);
  p.shared_groups = 1;
  p.branch_groups = {1};
  return p;
}

void BranchPlan::validate(const ArchSpec& arch) const {
  if (n_branches < 1) throw ConfigError("plan: n_branches must be at least 1");
  if (static_cast<int>(branch_groups.size()) != n_branches) {
    throw ConfigError("plan: branch_groups has " + std::to_string(branch_groups.size()) +
                      " entries for " + std::to_string(n_branches) + " branches");
  }
  for (int g : branch_groups) {
    if (g < 1) throw ConfigError("plan: branch group counts must be at least 1");
  }
  if (shared_groups < 1) throw ConfigError("plan: shared_groups must be at least 1");
  if (shared_stages < 0 || shared_stages >= static_cast<int>(arch.stage_count())) {
    throw ConfigError("plan: shared_stages must be in [0, " + std::to_string(arch.stage_count()) +
                      ")");
  }
}

std::string BranchPlan::notation() const {
  std::ostringstream os;
  os << '[' << shared_groups << ",(";
  for (std::size_t i = 0; i < branch_groups.size(); ++i) os << (i ? "," : "") << branch_groups[i];
  os << ")]";
  return os.str();
}

BranchPlan parse_group_notation(std::string_view text, const ArchSpec& arch) {
  static const std::regex outer(R"(\s*\[\s*(\d+)\s*,\s*\(([\d\s,]+)\)\s*\]\s*)");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_match(text.begin(), text.end(), m, outer)) {
    throw ConfigError("plan: group notation must look like [a,(b,c,d)], got '" +
                      std::string(text) + "'");
  }
  BranchPlan p = BranchPlan::default_for(arch);
  p.shared_groups = std::stoi(m[1].str());
  p.branch_groups.clear();
  std::stringstream inner(m[2].str());
  std::string item;
  while (std::getline(inner, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) {
      throw ConfigError("plan: empty group count in '" + std::string(text) + "'");
    }
    p.branch_groups.push_back(std::stoi(item));
  }
  p.n_branches = static_cast<int>(p.branch_groups.size());
  p.validate(arch);
  return p;
}

int branch_channels(int c, int n, int g) {
  if (c < 1 || n < 1 || g < 1) throw ConfigError("branch_channels: arguments must be positive");
  if (c < n) {
    throw ChannelUnderflowError("branch_channels: " + std::to_string(c) + " channels cannot feed " +
                                std::to_string(n) + " branches");
  }
  // floor(c * sqrt(g / n)) is the largest v with v^2 * n <= c^2 * g.
  const std::int64_t target = static_cast<std::int64_t>(c) * c * g;
  auto v = static_cast<std::int64_t>(std::sqrt(static_cast<long double>(target) / n));
  while ((v + 1) * (v + 1) * n <= target) ++v;
  while (v > 0 && v * v * n > target) --v;
  const std::int64_t rounded = v - v % g;
  if (rounded < g) {
    throw ChannelUnderflowError("branch_channels: " + std::to_string(c) + " channels over " +
                                std::to_string(n) + " branches leave fewer than " +
                                std::to_string(g) + " channels for " + std::to_string(g) +
                                " groups");
  }
  return static_cast<int>(rounded);
}

std::int64_t ConvSpec::weight_count() const {
  return static_cast<std::int64_t>(used_in_channels / groups) * out_channels * kernel * kernel;
}

std::int64_t ConvSpec::param_count() const { return weight_count() + (bias ? out_channels : 0); }

namespace {

ConvSpec make_conv(int in, int out, int kernel, int stride, int groups) {
  ConvSpec c;
  c.in_channels = in;
  c.used_in_channels = in - in % groups;
  c.out_channels = out;
  c.kernel = kernel;
  c.stride = stride;
  c.padding = kernel / 2;
  c.groups = groups;
  if (c.used_in_channels < groups) {
    throw ChannelUnderflowError("transform: " + std::to_string(in) +
                                " input channels cannot feed " + std::to_string(groups) + " groups");
  }
  if (out % groups != 0) {
    throw ChannelUnderflowError("transform: " + std::to_string(out) +
                                " output channels not divisible by " + std::to_string(groups) +
                                " groups");
  }
  return c;
}

StageSpec make_stage(const ArchSpec& arch, const BranchPlan& plan, int index, int in_channels,
                     int width, int groups) {
  StageSpec stage;
  stage.index = index;
  stage.width = width;
  stage.groups = groups;
  int in = in_channels;
  for (int b = 0; b < arch.stage_depths[index]; ++b) {
    BlockSpec block;
    block.in_channels = in;
    block.out_channels = width;
    block.stride = (b == 0 && index > 0) ? 2 : 1;
    block.groups = groups;
    const bool first = arch.downsample == Downsample::first_conv;
    block.conv1 = make_conv(in, width, arch.kernel, first ? block.stride : 1, groups);
    block.conv2 = make_conv(width, width, arch.kernel, first ? 1 : block.stride, groups);
    if (block.stride != 1 || in != width) {
      const int sg = (plan.grouped_shortcuts && in % groups == 0) ? groups : 1;
      ConvSpec sc = make_conv(in, width, 1, block.stride, sg);
      sc.padding = 0;
      block.shortcut = sc;
    }
    stage.blocks.push_back(block);
    in = width;
  }
  return stage;
}

}  // namespace

int MultiBranchArch::trunk_out_channels() const {
  return trunk.empty() ? stem.out_channels : trunk.back().width;
}

std::vector<std::vector<int>> MultiBranchArch::branch_channel_widths() const {
  std::vector<std::vector<int>> out;
  for (const auto& b : branches) {
    std::vector<int> widths;
    for (const auto& s : b.stages) widths.push_back(s.width);
    out.push_back(std::move(widths));
  }
  return out;
}

MultiBranchArch transform(const ArchSpec& arch, const BranchPlan& plan) {
  arch.validate();
  plan.validate(arch);
  MultiBranchArch out;
  out.source = arch;
  out.plan = plan;
  out.stem = make_conv(arch.input_channels, arch.stem.out_channels, arch.stem.kernel,
                       arch.stem.stride, 1);
  out.stem.padding = arch.stem.padding;

  int channels = arch.stem.out_channels;
  for (int s = 0; s < plan.shared_stages; ++s) {
    const int width = branch_channels(arch.stage_widths[s], 1, plan.shared_groups);
    out.trunk.push_back(make_stage(arch, plan, s, channels, width, plan.shared_groups));
    channels = width;
  }
  for (int g : plan.branch_groups) {
    BranchSpec branch;
    branch.groups = g;
    int in = channels;
    for (int s = plan.shared_stages; s < static_cast<int>(arch.stage_count()); ++s) {
      const int width = branch_channels(arch.stage_widths[s], plan.n_branches, g);
      branch.stages.push_back(make_stage(arch, plan, s, in, width, g));
      in = width;
    }
    branch.head = HeadSpec{in, arch.num_classes};
    out.branches.push_back(std::move(branch));
  }
  return out;
}

MultiBranchArch single_path(const ArchSpec& arch) {
  return transform(arch, BranchPlan::identity(arch));
}

namespace {

struct Spatial {
  int h;
  int w;
};

Spatial conv_out(const ConvSpec& c, Spatial in) {
  return {static_cast<int>(conv_output_extent(in.h, c.kernel, c.stride, c.padding)),
          static_cast<int>(conv_output_extent(in.w, c.kernel, c.stride, c.padding))};
}

void add_conv(CostReport& r, const ConvSpec& c, Spatial out) {
  r.params += c.param_count();
  r.flops_mac += c.weight_count() * out.h * out.w;
}

CostReport stage_cost(const StageSpec& stage, Spatial& hw) {
  CostReport r;
  for (const auto& b : stage.blocks) {
    r.params += 2LL * b.in_channels;  // pre-activation norm
    const Spatial mid = conv_out(b.conv1, hw);
    add_conv(r, b.conv1, mid);
    r.params += 2LL * b.out_channels;
    const Spatial out = conv_out(b.conv2, mid);
    add_conv(r, b.conv2, out);
    if (b.shortcut) add_conv(r, *b.shortcut, conv_out(*b.shortcut, hw));
    hw = out;
  }
  return r;
}

}  // namespace

std::vector<CostEntry> cost_breakdown(const MultiBranchArch& arch, int input_h, int input_w) {
  std::vector<CostEntry> entries;
  Spatial hw{input_h, input_w};
  CostEntry stem{"stem", "stem", arch.stem.out_channels, 1, {}};
  hw = conv_out(arch.stem, hw);
  add_conv(stem.cost, arch.stem, hw);
  entries.push_back(stem);
  for (const auto& s : arch.trunk) {
    CostReport r = stage_cost(s, hw);
    entries.push_back({"trunk", "stage" + std::to_string(s.index + 1), s.width, s.groups, r});
  }
  const Spatial trunk_hw = hw;
  for (std::size_t i = 0; i < arch.branches.size(); ++i) {
    const auto& b = arch.branches[i];
    const std::string owner = "branch" + std::to_string(i);
    Spatial bhw = trunk_hw;
    for (const auto& s : b.stages) {
      CostReport r = stage_cost(s, bhw);
      entries.push_back({owner, "stage" + std::to_string(s.index + 1), s.width, s.groups, r});
    }
    CostReport head;
    head.params = 2LL * b.head.in_channels +
                  static_cast<std::int64_t>(b.head.in_channels) * b.head.num_classes +
                  b.head.num_classes;
    head.flops_mac = static_cast<std::int64_t>(b.head.in_channels) * b.head.num_classes;
    entries.push_back({owner, "head", b.head.in_channels, 1, head});
  }
  return entries;
}

CostReport cost_report(const MultiBranchArch& arch, int input_h, int input_w) {
  CostReport total;
  for (const auto& e : cost_breakdown(arch, input_h, input_w)) {
    total.params += e.cost.params;
    total.flops_mac += e.cost.flops_mac;
  }
  return total;
}

std::int64_t count_params(const MultiBranchArch& arch) {
  // Parameter counts do not depend on the input resolution.
  const int hw = 1 << 10;
  return cost_report(arch, hw, hw).params;
}

std::int64_t count_params(const ArchSpec& arch) { return count_params(single_path(arch)); }

std::int64_t count_flops(const MultiBranchArch& arch, int input_h, int input_w) {
  return cost_report(arch, input_h, input_w).flops_mac;
}

std::int64_t count_flops(const ArchSpec& arch, int input_h, int input_w) {
  return count_flops(single_path(arch), input_h, input_w);
}

}  // namespace sembg
