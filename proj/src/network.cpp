#include "sembg/network.hpp"

#include <cmath>

#include "sembg/errors.hpp"

namespace sembg {

namespace {

void he_normal(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
  for (auto& v : t.data()) v = dist(rng);
}

void accumulate_grad(Tensor& param, const Tensor& grad) {
  auto g = param.grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

}  // namespace

// ---------------------------------------------------------------------------

Conv2d::Conv2d(const ConvSpec& spec, std::mt19937_64& rng) : spec_(spec) {
  const auto in_g = static_cast<std::size_t>(spec.used_in_channels / spec.groups);
  const auto k = static_cast<std::size_t>(spec.kernel);
  params_.weight = Tensor({static_cast<std::size_t>(spec.out_channels), in_g, k, k});
  he_normal(params_.weight, in_g * k * k, rng);
  params_.weight.enable_grad();
  if (spec.bias) {
    params_.bias = Tensor({static_cast<std::size_t>(spec.out_channels)});
    params_.bias->enable_grad();
  }
  params_.stride = spec.stride;
  params_.padding = spec.padding;
  params_.groups = spec.groups;
}

Tensor Conv2d::forward(const Tensor& x) {
  input_ = slice_channels(x, static_cast<std::size_t>(spec_.used_in_channels));
  return conv2d(input_, params_);
}

Tensor Conv2d::infer(const Tensor& x) const {
  return conv2d(slice_channels(x, static_cast<std::size_t>(spec_.used_in_channels)), params_);
}

Tensor Conv2d::backward(const Tensor& dy) {
  ConvGrads g = conv2d_backward(input_, params_, dy);
  accumulate_grad(params_.weight, g.dweight);
  if (params_.bias) accumulate_grad(*params_.bias, *g.dbias);
  return pad_channels(g.dx, static_cast<std::size_t>(spec_.in_channels));
}

void Conv2d::collect_parameters(std::vector<Tensor*>& out) {
  out.push_back(&params_.weight);
  if (params_.bias) out.push_back(&*params_.bias);
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels) : params_(static_cast<std::size_t>(channels)) {
  params_.gamma.enable_grad();
  params_.beta.enable_grad();
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  params_.mode = NormMode::train;
  return batchnorm2d(x, params_, &cache_);
}

Tensor BatchNorm2d::infer(const Tensor& x) const { return batchnorm2d_eval(x, params_); }

Tensor BatchNorm2d::backward(const Tensor& dy) {
  BatchNormGrads g = batchnorm2d_backward(dy, params_, cache_);
  accumulate_grad(params_.gamma, g.dgamma);
  accumulate_grad(params_.beta, g.dbeta);
  return std::move(g.dx);
}

void BatchNorm2d::collect_parameters(std::vector<Tensor*>& out) {
  out.push_back(&params_.gamma);
  out.push_back(&params_.beta);
}

void BatchNorm2d::collect_buffers(std::vector<Tensor*>& out) {
  out.push_back(&params_.running_mean);
  out.push_back(&params_.running_var);
}

// ---------------------------------------------------------------------------

PreActBlock::PreActBlock(const BlockSpec& spec, std::mt19937_64& rng)
    : spec_(spec),
      bn1_(spec.in_channels),
      conv1_(spec.conv1, rng),
      bn2_(spec.out_channels),
      conv2_(spec.conv2, rng) {
  if (spec.shortcut) shortcut_.emplace(*spec.shortcut, rng);
}

Tensor PreActBlock::forward(const Tensor& x) {
  pre1_ = bn1_.forward(x);
  const Tensor a = relu(pre1_);
  Tensor skip = shortcut_ ? shortcut_->forward(a) : x;
  pre2_ = bn2_.forward(conv1_.forward(a));
  return residual_add(conv2_.forward(relu(pre2_)), skip);
}

Tensor PreActBlock::infer(const Tensor& x) const {
  const Tensor a = relu(bn1_.infer(x));
  const Tensor h = conv2_.infer(relu(bn2_.infer(conv1_.infer(a))));
  return residual_add(h, shortcut_ ? shortcut_->infer(a) : x);
}

Tensor PreActBlock::backward(const Tensor& dy) {
  const Tensor dmid = bn2_.backward(relu_backward(pre2_, conv2_.backward(dy)));
  Tensor da = conv1_.backward(dmid);
  if (shortcut_) add_into(da, shortcut_->backward(dy));
  Tensor dx = bn1_.backward(relu_backward(pre1_, da));
  if (!shortcut_) add_into(dx, dy);
  return dx;
}

void PreActBlock::collect_parameters(std::vector<Tensor*>& out) {
  bn1_.collect_parameters(out);
  conv1_.collect_parameters(out);
  bn2_.collect_parameters(out);
  conv2_.collect_parameters(out);
  if (shortcut_) shortcut_->collect_parameters(out);
}

void PreActBlock::collect_buffers(std::vector<Tensor*>& out) {
  bn1_.collect_buffers(out);
  bn2_.collect_buffers(out);
}

// ---------------------------------------------------------------------------

ClassifierHead::ClassifierHead(const HeadSpec& spec, std::mt19937_64& rng)
    : bn_(spec.in_channels),
      weight_({static_cast<std::size_t>(spec.num_classes), static_cast<std::size_t>(spec.in_channels)}),
      bias_({static_cast<std::size_t>(spec.num_classes)}) {
  he_normal(weight_, static_cast<std::size_t>(spec.in_channels), rng);
  weight_.enable_grad();
  bias_.enable_grad();
}

Tensor ClassifierHead::forward(const Tensor& x) {
  normed_ = bn_.forward(x);
  const Tensor act = relu(normed_);
  pooled_from_ = act.shape();
  pooled_ = global_avg_pool(act);
  return linear(pooled_, weight_, bias_);
}

Tensor ClassifierHead::infer(const Tensor& x) const {
  return linear(global_avg_pool(relu(bn_.infer(x))), weight_, bias_);
}

Tensor ClassifierHead::backward(const Tensor& dy) {
  LinearGrads g = linear_backward(pooled_, weight_, dy);
  accumulate_grad(weight_, g.dw);
  accumulate_grad(bias_, g.db);
  const Tensor dact = global_avg_pool_backward(pooled_from_, g.dx);
  return bn_.backward(relu_backward(normed_, dact));
}

void ClassifierHead::collect_parameters(std::vector<Tensor*>& out) {
  bn_.collect_parameters(out);
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void ClassifierHead::collect_buffers(std::vector<Tensor*>& out) { bn_.collect_buffers(out); }

// ---------------------------------------------------------------------------

Network::Network(MultiBranchArch arch, std::uint64_t seed) : arch_(std::move(arch)) {
  std::mt19937_64 rng(seed);
  stem_.emplace(arch_.stem, rng);
  for (const auto& stage : arch_.trunk) {
    for (const auto& block : stage.blocks) trunk_.emplace_back(block, rng);
  }
  for (const auto& spec : arch_.branches) {
    Branch branch;
    for (const auto& stage : spec.stages) {
      for (const auto& block : stage.blocks) branch.blocks.emplace_back(block, rng);
    }
    branch.head.emplace(spec.head, rng);
    branches_.push_back(std::move(branch));
  }
}

std::vector<Tensor> Network::forward(const Tensor& x) {
  require_rank(x, 4, "network input");
  if (x.dim(1) != static_cast<std::size_t>(arch_.stem.in_channels)) {
    throw ShapeError("network input has " + std::to_string(x.dim(1)) + " channels, expected " +
                     std::to_string(arch_.stem.in_channels));
  }
  Tensor h = stem_->forward(x);
  for (auto& block : trunk_) h = block.forward(h);
  std::vector<Tensor> logits;
  logits.reserve(branches_.size());
  for (auto& branch : branches_) {
    Tensor b = h;
    for (auto& block : branch.blocks) b = block.forward(b);
    logits.push_back(branch.head->forward(b));
  }
  return logits;
}

std::vector<Tensor> Network::infer(const Tensor& x) const {
  require_rank(x, 4, "network input");
  if (x.dim(1) != static_cast<std::size_t>(arch_.stem.in_channels)) {
    throw ShapeError("network input has " + std::to_string(x.dim(1)) + " channels, expected " +
                     std::to_string(arch_.stem.in_channels));
  }
  Tensor h = stem_->infer(x);
  for (const auto& block : trunk_) h = block.infer(h);
  std::vector<Tensor> logits;
  logits.reserve(branches_.size());
  for (const auto& branch : branches_) {
    Tensor b = h;
    for (const auto& block : branch.blocks) b = block.infer(b);
    logits.push_back(branch.head->infer(b));
  }
  return logits;
}

void Network::backward(const std::vector<Tensor>& dlogits) {
  if (dlogits.size() != branches_.size()) {
    throw ShapeError("network backward: expected " + std::to_string(branches_.size()) +
                     " logit gradients, got " + std::to_string(dlogits.size()));
  }
  Tensor dtrunk;
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    auto& branch = branches_[i];
    Tensor d = branch.head->backward(dlogits[i]);
    for (auto it = branch.blocks.rbegin(); it != branch.blocks.rend(); ++it) d = it->backward(d);
    if (i == 0) {
      dtrunk = std::move(d);
    } else {
      add_into(dtrunk, d);
    }
  }
  for (auto it = trunk_.rbegin(); it != trunk_.rend(); ++it) dtrunk = it->backward(dtrunk);
  stem_->backward(dtrunk);
}

void Network::zero_grad() {
  for (Tensor* p : parameters()) p->zero_grad();
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  stem_->collect_parameters(out);
  for (auto& block : trunk_) block.collect_parameters(out);
  for (auto& branch : branches_) {
    for (auto& block : branch.blocks) block.collect_parameters(out);
    branch.head->collect_parameters(out);
  }
  return out;
}

std::vector<Tensor*> Network::buffers() {
  std::vector<Tensor*> out;
  for (auto& block : trunk_) block.collect_buffers(out);
  for (auto& branch : branches_) {
    for (auto& block : branch.blocks) block.collect_buffers(out);
    branch.head->collect_buffers(out);
  }
  return out;
}

}  // namespace sembg
