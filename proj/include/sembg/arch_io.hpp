#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "sembg/arch.hpp"

namespace sembg {

using json = nlohmann::json;

// Architecture specs are JSON objects. `family` and `num_classes` are
// required; widths/depths come either explicitly (`stage_widths`,
// `stage_depths`) or from `depth` (+ `widen_factor` for wideresnet).
ArchSpec arch_spec_from_json(const json& j);
json arch_spec_to_json(const ArchSpec& spec);
ArchSpec parse_arch_spec(std::string_view text);
std::string emit_arch_spec(const ArchSpec& spec);

// Named presets: "wrn28-10", "wrn16-4", "resnet18", "resnet34", "toy".
ArchSpec arch_preset(std::string_view name, int num_classes);

BranchPlan branch_plan_from_json(const json& j, const ArchSpec& arch);
json branch_plan_to_json(const BranchPlan& plan);

json multibranch_to_json(const MultiBranchArch& arch);
// FNV-1a over the canonical JSON description.
std::uint64_t arch_hash(const MultiBranchArch& arch);

// Per-stage widths/groups/params/MACs plus a `table1_row`
// {acc: null, flops_gmac, params_m}.
json emit_report(const MultiBranchArch& arch, int input_h, int input_w);

// Rejects keys of `j` not in `allowed`, naming `context`.
void reject_unknown_fields(const json& j, std::initializer_list<std::string_view> allowed,
                           std::string_view context);

}  // namespace sembg
