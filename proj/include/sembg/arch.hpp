#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sembg {

enum class Family { resnet, wideresnet };

// Which 3x3 conv of a downsampling block carries the stride.
enum class Downsample { first_conv, second_conv };

struct StemSpec {
  int out_channels = 16;
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  bool operator==(const StemSpec&) const = default;
};

// Single-path pre-activation residual network described stage by stage.
struct ArchSpec {
  Family family = Family::wideresnet;
  std::vector<int> stage_widths;
  std::vector<int> stage_depths;
  int kernel = 3;
  int num_classes = 10;
  int input_channels = 3;
  StemSpec stem;
  std::string block_style = "pre_activation_residual";
  Downsample downsample = Downsample::second_conv;

  std::size_t stage_count() const { return stage_widths.size(); }
  void validate() const;

  bool operator==(const ArchSpec&) const = default;
};

// WRN-depth-k: (depth - 4) / 6 blocks per stage, widths k * [16, 32, 64].
ArchSpec wide_resnet(int depth, int widen_factor, int num_classes);
// Pre-activation ResNet-18/34 for 32x32 inputs, widths [64, 128, 256, 512].
ArchSpec preact_resnet(int depth, int num_classes);

// Group assignment "[a,(g_1,...,g_N)]": `shared_groups` a for the shared
// trunk, one group count per branch.
struct BranchPlan {
  int n_branches = 3;
  int shared_stages = 1;
  int shared_groups = 1;
  std::vector<int> branch_groups{1, 2, 3};
  // Projection shortcuts inside a grouped stage use the stage's group count
  // when their input channels allow it; otherwise they are dense.
  bool grouped_shortcuts = true;

  void validate(const ArchSpec& arch) const;
  std::string notation() const;

  // Three branches with groups 1, 2, 3; four-stage nets share two stages,
  // others share one.
  static BranchPlan default_for(const ArchSpec& arch);
  // One branch, no grouping: transform() reproduces the source network.
  static BranchPlan identity(const ArchSpec& arch);

  bool operator==(const BranchPlan&) const = default;
};

int default_shared_stages(const ArchSpec& arch);

// Parses "[a,(b,c,d)]" into shared/branch group counts; shared_stages is taken
// from `arch`.
BranchPlan parse_group_notation(std::string_view text, const ArchSpec& arch);

// Width of one of N branches of a layer with c channels using g groups:
// floor(c * sqrt(g) / sqrt(N)) rounded down to a multiple of g.
int branch_channels(int c, int n, int g);

struct ConvSpec {
  int in_channels = 0;       // channels arriving at the layer
  int used_in_channels = 0;  // leading channels consumed, a multiple of groups
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int groups = 1;
  bool bias = false;

  std::int64_t weight_count() const;
  std::int64_t param_count() const;

  bool operator==(const ConvSpec&) const = default;
};

struct BlockSpec {
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  int groups = 1;
  ConvSpec conv1;
  ConvSpec conv2;
  std::optional<ConvSpec> shortcut;

  bool operator==(const BlockSpec&) const = default;
};

struct StageSpec {
  int index = 0;
  int width = 0;
  int groups = 1;
  std::vector<BlockSpec> blocks;

  bool operator==(const StageSpec&) const = default;
};

// Final norm + ReLU + global average pool + linear classifier.
struct HeadSpec {
  int in_channels = 0;
  int num_classes = 0;

  bool operator==(const HeadSpec&) const = default;
};

struct BranchSpec {
  int groups = 1;
  std::vector<StageSpec> stages;
  HeadSpec head;

  bool operator==(const BranchSpec&) const = default;
};

struct MultiBranchArch {
  ArchSpec source;
  BranchPlan plan;
  ConvSpec stem;
  std::vector<StageSpec> trunk;
  std::vector<BranchSpec> branches;

  int trunk_out_channels() const;
  // [branch][stage] widths over the branched stages.
  std::vector<std::vector<int>> branch_channel_widths() const;

  bool operator==(const MultiBranchArch&) const = default;
};

MultiBranchArch transform(const ArchSpec& arch, const BranchPlan& plan);
MultiBranchArch single_path(const ArchSpec& arch);

// ---------------------------------------------------------------------------
// Cost model. MACs count convolution and linear multiply-accumulates only;
// params count conv/linear weights and biases plus norm gamma/beta.

struct CostReport {
  std::int64_t params = 0;
  std::int64_t flops_mac = 0;

  double params_m() const { return static_cast<double>(params) / 1e6; }
  double flops_gmac() const { return static_cast<double>(flops_mac) / 1e9; }
};

struct CostEntry {
  std::string owner;  // "stem", "trunk", "branch0", ...
  std::string part;   // "stage1", "head", ...
  int width = 0;
  int groups = 1;
  CostReport cost;
};

std::vector<CostEntry> cost_breakdown(const MultiBranchArch& arch, int input_h, int input_w);
CostReport cost_report(const MultiBranchArch& arch, int input_h, int input_w);

std::int64_t count_params(const MultiBranchArch& arch);
std::int64_t count_params(const ArchSpec& arch);
std::int64_t count_flops(const MultiBranchArch& arch, int input_h, int input_w);
std::int64_t count_flops(const ArchSpec& arch, int input_h, int input_w);

std::string_view to_string(Family family);
std::string_view to_string(Downsample downsample);

}  // namespace sembg
