#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sembg/arch.hpp"
#include "sembg/data.hpp"
#include "sembg/metrics.hpp"
#include "sembg/network.hpp"
#include "sembg/optim.hpp"

namespace sembg {

struct TrainConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 200;
  std::size_t batch_size = 128;
  double temperature = 3.0;
  double alpha = 1.0;
  bool detach_teacher = true;
  std::uint64_t seed = 0;
  bool deterministic = true;
  int log_diversity_every = 1;  // 0 disables diversity logging
  bool augment = false;
  int augment_pad = 4;
  std::size_t eval_batch_size = 256;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Elementwise mean of the branch logits; also the inference-time output.
Tensor ensemble_logits(std::span<const Tensor> logits);
inline Tensor ensemble_logits(const std::vector<Tensor>& logits) {
  return ensemble_logits(std::span<const Tensor>(logits));
}

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;  // sum over branches of the batch-mean cross-entropy
  double kd = 0.0;  // sum over branches of t^2 * KL(p_E || p_i), before alpha
  std::vector<double> branch_ce;
  std::vector<double> branch_kd;
  std::vector<Tensor> grads;  // dL/dz_i per branch
};

// L = sum_i CE(softmax(z_i), y) + alpha * sum_i t^2 KL(p_E || p_i), with
// p_E = softmax(mean_i z_i / t) and p_i = softmax(z_i / t).
LossBreakdown total_loss(std::span<const Tensor> logits, const std::vector<int>& labels,
                         double temperature, double alpha, bool detach_teacher);
LossBreakdown total_loss(std::span<const Tensor> logits, const std::vector<int>& labels,
                         const TrainConfig& cfg);

struct TrainState {
  int epoch = 0;           // completed epochs
  std::uint64_t step = 0;  // completed optimizer steps
  std::vector<double> branch_ce;  // running means over the last epoch
  std::vector<double> branch_kd;
  OptimizerState optimizer;
  std::mt19937_64 rng;  // augmentation draws
};

TrainState make_train_state(Network& net, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_kd = 0.0;
  double train_ensemble_acc = 0.0;
  std::vector<double> val_branch_acc;
  double val_ensemble_acc = 0.0;
  bool has_diversity = false;
  Matrix pd_matrix;
  Matrix cs_matrix;
  double mean_pd = 0.0;
  double mean_cs = 0.0;
};

using History = std::vector<EpochRecord>;

std::string history_csv(const History& history);
nlohmann::json history_to_json(const History& history);
History history_from_json(const nlohmann::json& j);

struct EpochStats {
  double loss_ce = 0.0;
  double loss_kd = 0.0;
  double train_ensemble_acc = 0.0;
};

// One pass over `train` at the learning rate for state.epoch; advances
// state.epoch. A non-finite loss raises NumericError naming epoch and batch.
EpochStats train_epoch(Network& net, const Dataset& train, const TrainConfig& cfg, TrainState& state);

// Trains until state.epoch == cfg.epochs, appending one record per epoch.
// `on_epoch` runs after each record is appended.
void continue_training(Network& net, TrainState& state, History& history, const Dataset& train,
                       const Dataset& val, const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = {});

struct TrainResult {
  Network net;
  TrainState state;
  History history;
};

TrainResult train_run(const ArchSpec& arch, const BranchPlan& plan, const Dataset& train,
                      const Dataset& val, const TrainConfig& cfg,
                      const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace sembg
