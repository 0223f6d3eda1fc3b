#include "sembg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "sembg/errors.hpp"

namespace sembg {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train.lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("train.weight_decay must be non-negative");
  }
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("train.temperature must be positive");
  }
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("train.alpha must be non-negative");
  if (log_diversity_every < 0) throw ConfigError("train.log_diversity_every must be non-negative");
  if (augment_pad < 0) throw ConfigError("train.augment_pad must be non-negative");
  if (eval_batch_size < 1) throw ConfigError("train.eval_batch_size must be at least 1");
}

Tensor ensemble_logits(std::span<const Tensor> logits) {
  if (logits.empty()) throw ShapeError("ensemble_logits: no branch outputs");
  require_rank(logits[0], 2, "ensemble_logits");
  const std::size_t count = logits[0].numel();
  std::vector<double> acc(count, 0.0);
  for (const auto& z : logits) {
    require_shape(z, logits[0].shape(), "ensemble_logits branch");
    for (std::size_t k = 0; k < count; ++k) acc[k] += z[k];
  }
  Tensor out(logits[0].shape());
  const double inv = 1.0 / static_cast<double>(logits.size());
  for (std::size_t k = 0; k < count; ++k) out[k] = static_cast<float>(acc[k] * inv);
  return out;
}

LossBreakdown total_loss(std::span<const Tensor> logits, const std::vector<int>& labels,
                         double temperature, double alpha, bool detach_teacher) {
  if (!(alpha >= 0.0)) throw ConfigError("total_loss: alpha must be non-negative");
  const Tensor teacher = ensemble_logits(logits);
  const std::size_t n = logits.size();
  LossBreakdown out;
  Tensor dteacher(teacher.shape());
  for (const auto& z : logits) {
    CeLoss ce = softmax_cross_entropy(z, labels);
    KdLoss kd = kd_loss(z, teacher, temperature, detach_teacher);
    Tensor g = std::move(ce.dlogits);
    if (alpha != 0.0) {
      for (std::size_t k = 0; k < g.numel(); ++k) {
        g[k] += static_cast<float>(alpha * kd.dstudent[k]);
      }
      if (!detach_teacher) {
        for (std::size_t k = 0; k < g.numel(); ++k) dteacher[k] += static_cast<float>(alpha * kd.dteacher[k]);
      }
    }
    out.branch_ce.push_back(ce.loss);
    out.branch_kd.push_back(kd.loss);
    out.ce += ce.loss;
    out.kd += kd.loss;
    out.grads.push_back(std::move(g));
  }
  if (!detach_teacher && alpha != 0.0) {
    const float share = 1.0f / static_cast<float>(n);
    for (auto& g : out.grads) {
      for (std::size_t k = 0; k < g.numel(); ++k) g[k] += share * dteacher[k];
    }
  }
  out.total = out.ce + alpha * out.kd;
  if (!std::isfinite(out.total)) throw NumericError("total_loss: non-finite loss");
  return out;
}

LossBreakdown total_loss(std::span<const Tensor> logits, const std::vector<int>& labels,
                         const TrainConfig& cfg) {
  return total_loss(logits, labels, cfg.temperature, cfg.alpha, cfg.detach_teacher);
}

TrainState make_train_state(Network& net, const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  const auto params = net.parameters();
  s.optimizer = make_optimizer_state(params, cfg.momentum, cfg.weight_decay, cfg.lr0);
  s.rng.seed(epoch_seed(cfg.seed, 0x6175676dULL));
  s.branch_ce.assign(net.branch_count(), 0.0);
  s.branch_kd.assign(net.branch_count(), 0.0);
  return s;
}

EpochStats train_epoch(Network& net, const Dataset& train, const TrainConfig& cfg, TrainState& state) {
  cfg.validate();
  train.validate();
  if (state.epoch >= cfg.epochs) throw ConfigError("train_epoch: training already complete");
  const int epoch = state.epoch;
  state.optimizer.current_lr = lr_at(epoch, cfg.epochs, cfg.lr0);
  const auto params = net.parameters();
  const std::size_t nb = net.branch_count();
  std::vector<double> sum_ce(nb, 0.0), sum_kd(nb, 0.0);
  std::size_t seen = 0, correct = 0;

  const auto order = batches(train.size(), cfg.batch_size, cfg.seed, epoch);
  for (std::size_t bi = 0; bi < order.size(); ++bi) {
    const auto& idx = order[bi];
    Tensor x = gather_images(train, idx);
    if (cfg.augment) x = augment(x, cfg.augment_pad, true, state.rng);
    const auto y = gather_labels(train, idx);

    LossBreakdown loss;
    try {
      net.zero_grad();
      const auto logits = net.forward(x);
      loss = total_loss(logits, y, cfg);
      const auto pred = argmax_rows(ensemble_logits(logits));
      for (std::size_t k = 0; k < y.size(); ++k) correct += pred[k] == y[k] ? 1 : 0;
      net.backward(loss.grads);
      sgd_step(params, state.optimizer);
    } catch (const NumericError& e) {
      throw NumericError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(bi) + ": " + e.what());
    }
    for (std::size_t i = 0; i < nb; ++i) {
      sum_ce[i] += loss.branch_ce[i] * static_cast<double>(idx.size());
      sum_kd[i] += loss.branch_kd[i] * static_cast<double>(idx.size());
    }
    seen += idx.size();
    ++state.step;
  }

  EpochStats stats;
  for (std::size_t i = 0; i < nb; ++i) {
    state.branch_ce[i] = sum_ce[i] / static_cast<double>(seen);
    state.branch_kd[i] = sum_kd[i] / static_cast<double>(seen);
    stats.loss_ce += state.branch_ce[i];
    stats.loss_kd += state.branch_kd[i];
  }
  stats.train_ensemble_acc = static_cast<double>(correct) / static_cast<double>(seen);
  ++state.epoch;
  return stats;
}

void continue_training(Network& net, TrainState& state, History& history, const Dataset& train,
                       const Dataset& val, const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  val.validate();
  const auto cost = cost_report(net.arch(), static_cast<int>(val.images.dim(2)),
                                static_cast<int>(val.images.dim(3)));
  while (state.epoch < cfg.epochs) {
    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.lr = lr_at(state.epoch, cfg.epochs, cfg.lr0);
    const EpochStats stats = train_epoch(net, train, cfg, state);
    rec.loss_ce = stats.loss_ce;
    rec.loss_kd = stats.loss_kd;
    rec.train_ensemble_acc = stats.train_ensemble_acc;

    const EvalReport report = evaluate_outputs(collect_outputs(net, val, cfg.eval_batch_size), cost);
    rec.val_branch_acc = report.per_branch_acc;
    rec.val_ensemble_acc = report.ensemble_acc;
    const bool last = state.epoch == cfg.epochs;
    if (cfg.log_diversity_every > 0 && (state.epoch % cfg.log_diversity_every == 0 || last)) {
      rec.has_diversity = true;
      rec.pd_matrix = report.pd_matrix;
      rec.cs_matrix = report.cs_matrix;
      rec.mean_pd = report.mean_pd();
      rec.mean_cs = report.mean_cs();
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(history.back());
  }
}

TrainResult train_run(const ArchSpec& arch, const BranchPlan& plan, const Dataset& train,
                      const Dataset& val, const TrainConfig& cfg,
                      const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  train.validate();
  if (train.size() == 0) throw DataError("train_run: empty training set");
  if (arch.num_classes != train.num_classes) {
    throw ConfigError("train_run: architecture has " + std::to_string(arch.num_classes) +
                      " classes but the dataset has " + std::to_string(train.num_classes));
  }
  TrainResult result{Network(transform(arch, plan), cfg.seed), {}, {}};
  result.state = make_train_state(result.net, cfg);
  continue_training(result.net, result.state, result.history, train, val, cfg, on_epoch);
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string history_csv(const History& history) {
  std::ostringstream out;
  const std::size_t nb = history.empty() ? 0 : history.front().val_branch_acc.size();
  out << "epoch,lr,L_CE,L_KD";
  for (std::size_t i = 0; i < nb; ++i) out << ",val_acc_branch" << i;
  out << ",val_acc_ensemble,mean_pd,mean_cs\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << num(r.lr) << ',' << num(r.loss_ce) << ',' << num(r.loss_kd);
    for (double a : r.val_branch_acc) out << ',' << num(a);
    out << ',' << num(r.val_ensemble_acc) << ',';
    if (r.has_diversity) out << num(r.mean_pd) << ',' << num(r.mean_cs);
    else out << ',';
    out << '\n';
  }
  return out.str();
}

nlohmann::json history_to_json(const History& history) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : history) {
    nlohmann::json j{{"epoch", r.epoch},
                     {"lr", r.lr},
                     {"loss_ce", r.loss_ce},
                     {"loss_kd", r.loss_kd},
                     {"train_ensemble_acc", r.train_ensemble_acc},
                     {"val_branch_acc", r.val_branch_acc},
                     {"val_ensemble_acc", r.val_ensemble_acc}};
    if (r.has_diversity) {
      j["pd_matrix"] = r.pd_matrix;
      j["cs_matrix"] = r.cs_matrix;
      j["mean_pd"] = r.mean_pd;
      j["mean_cs"] = r.mean_cs;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

History history_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("history: expected an array");
  History h;
  for (const auto& e : j) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<int>();
    r.lr = e.at("lr").get<double>();
    r.loss_ce = e.at("loss_ce").get<double>();
    r.loss_kd = e.at("loss_kd").get<double>();
    r.train_ensemble_acc = e.at("train_ensemble_acc").get<double>();
    r.val_branch_acc = e.at("val_branch_acc").get<std::vector<double>>();
    r.val_ensemble_acc = e.at("val_ensemble_acc").get<double>();
    if (e.contains("pd_matrix")) {
      r.has_diversity = true;
      r.pd_matrix = e.at("pd_matrix").get<Matrix>();
      r.cs_matrix = e.at("cs_matrix").get<Matrix>();
      r.mean_pd = e.at("mean_pd").get<double>();
      r.mean_cs = e.at("mean_cs").get<double>();
    }
    h.push_back(std::move(r));
  }
  return h;
}

}  // namespace sembg
