#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sembg/arch.hpp"
#include "sembg/ops.hpp"

namespace sembg {

// Trainable layers cache their forward inputs for the backward pass and
// accumulate parameter gradients into the parameters' grad buffers.
// `infer` is the const, cache-free evaluation path.

class Conv2d {
 public:
  Conv2d(const ConvSpec& spec, std::mt19937_64& rng);

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& dy);

  const ConvSpec& spec() const { return spec_; }
  void collect_parameters(std::vector<Tensor*>& out);

 private:
  ConvSpec spec_;
  ConvParams params_;
  Tensor input_;
};

class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels);

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& dy);

  void collect_parameters(std::vector<Tensor*>& out);
  void collect_buffers(std::vector<Tensor*>& out);

 private:
  BatchNormParams params_;
  BatchNormCache cache_;
};

// Pre-activation residual block:
//   a = relu(bn1(x)); y = conv2(relu(bn2(conv1(a)))) + (shortcut ? proj(a) : x)
class PreActBlock {
 public:
  PreActBlock(const BlockSpec& spec, std::mt19937_64& rng);

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& dy);

  void collect_parameters(std::vector<Tensor*>& out);
  void collect_buffers(std::vector<Tensor*>& out);

 private:
  BlockSpec spec_;
  BatchNorm2d bn1_;
  Conv2d conv1_;
  BatchNorm2d bn2_;
  Conv2d conv2_;
  std::optional<Conv2d> shortcut_;
  Tensor pre1_;  // bn1 output
  Tensor pre2_;  // bn2 output
};

// bn -> relu -> global average pool -> linear.
class ClassifierHead {
 public:
  ClassifierHead(const HeadSpec& spec, std::mt19937_64& rng);

  Tensor forward(const Tensor& x);
  Tensor infer(const Tensor& x) const;
  Tensor backward(const Tensor& dy);

  void collect_parameters(std::vector<Tensor*>& out);
  void collect_buffers(std::vector<Tensor*>& out);

 private:
  BatchNorm2d bn_;
  Tensor weight_;
  Tensor bias_;
  Tensor normed_;
  Shape pooled_from_;
  Tensor pooled_;
};

// Runtime for a MultiBranchArch: shared stem and trunk, then N independent
// branches each ending in its own classifier. One forward yields every
// branch's logits.
class Network {
 public:
  // He-normal conv/linear weights, zero biases, unit norm scales.
  Network(MultiBranchArch arch, std::uint64_t seed);

  std::vector<Tensor> forward(const Tensor& x);
  std::vector<Tensor> infer(const Tensor& x) const;
  void backward(const std::vector<Tensor>& dlogits);

  void zero_grad();
  // Declaration order: stem, trunk blocks, then each branch's blocks and head.
  std::vector<Tensor*> parameters();
  std::vector<Tensor*> buffers();

  const MultiBranchArch& arch() const { return arch_; }
  std::size_t branch_count() const { return branches_.size(); }

 private:
  struct Branch {
    std::vector<PreActBlock> blocks;
    std::optional<ClassifierHead> head;
  };

  MultiBranchArch arch_;
  std::optional<Conv2d> stem_;
  std::vector<PreActBlock> trunk_;
  std::vector<Branch> branches_;
};

}  // namespace sembg
