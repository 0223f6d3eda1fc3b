#include <doctest.h>

#include <random>

#include "sembg/arch_io.hpp"
#include "sembg/network.hpp"
#include "sembg/trainer.hpp"
#include "test_util.hpp"

using namespace sembg;
using namespace sembg::testing;

namespace {

ArchSpec small_toy() {
  ArchSpec arch = arch_preset("toy", 4);
  arch.stage_widths = {4, 8};
  arch.stem.out_channels = 4;
  return arch;
}

// Norm parameters come in (gamma, beta) pairs initialised to (1, 0). A large
// beta keeps every ReLU input positive so the loss is smooth in the weights.
void lift_norm_offsets(Network& net, std::mt19937_64& rng) {
  const auto params = net.parameters();
  for (std::size_t i = 1; i < params.size(); ++i) {
    Tensor& gamma = *params[i - 1];
    Tensor& beta = *params[i];
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma[0] != 1.0f || beta[0] != 0.0f) continue;
    for (auto& v : gamma.data()) v = 0.5f + static_cast<float>(rng() % 100) / 100.0f;
    beta.fill(6.0f);
  }
}

}  // namespace

TEST_CASE("parameters match the cost model count") {
  for (const char* preset : {"toy", "wrn16-4"}) {
    const ArchSpec arch = arch_preset(preset, 10);
    const MultiBranchArch mb = transform(arch, BranchPlan::default_for(arch));
    Network net(mb, 1);
    std::int64_t total = 0;
    for (const Tensor* p : net.parameters()) total += static_cast<std::int64_t>(p->numel());
    CHECK(total == count_params(mb));
  }
}

TEST_CASE("forward yields one logit block per branch and infer is repeatable") {
  std::mt19937_64 rng(3);
  const ArchSpec arch = small_toy();
  Network net(transform(arch, BranchPlan::default_for(arch)), 2);
  const Tensor x = random_tensor({5, 3, 6, 6}, rng);
  const auto logits = net.forward(x);
  REQUIRE(logits.size() == 3);
  for (const Tensor& z : logits) CHECK(z.shape() == Shape{5, 4});
  const auto a = net.infer(x);
  const auto b = net.infer(x);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same_values(a[i], b[i]));
}

TEST_CASE("network backward matches central differences") {
  // Whole-network float32 roundoff sets the floor here, so tensors whose
  // gradient is too small to rise above it are skipped.
  std::mt19937_64 rng(11);
  const ArchSpec arch = small_toy();
  int checked = 0;
  for (int trial = 0; trial < 4; ++trial) {
    Network net(transform(arch, BranchPlan::default_for(arch)), static_cast<std::uint64_t>(100 + trial));
    lift_norm_offsets(net, rng);
    const Tensor x = random_tensor({6, 3, 6, 6}, rng);
    const std::vector<int> y{0, 1, 2, 3, 0, 1};
    const auto loss = [&] { return total_loss(net.forward(x), y, 3.0, 1.0, false).total; };
    net.zero_grad();
    net.backward(total_loss(net.forward(x), y, 3.0, 1.0, false).grads);
    for (Tensor* p : net.parameters()) {
      const Tensor g(p->shape(), std::vector<float>(p->grad().begin(), p->grad().end()));
      double norm = 0.0;
      for (float v : g.data()) norm += static_cast<double>(v) * v;
      if (std::sqrt(norm) < 0.05) continue;
      ++checked;
      CHECK(gradient_error(*p, g, loss, rng, 2e-2, 16) <= 1e-2);
    }
  }
  CHECK(checked >= 40);
}
