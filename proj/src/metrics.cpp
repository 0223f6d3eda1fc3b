#include "sembg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "sembg/data.hpp"
#include "sembg/errors.hpp"
#include "sembg/network.hpp"
#include "sembg/ops.hpp"
#include "sembg/trainer.hpp"

namespace sembg {

namespace {

void check_scores(const Tensor& scores, const std::vector<int>& labels, const char* what) {
  require_rank(scores, 2, what);
  if (labels.empty()) throw ShapeError(std::string(what) + ": empty evaluation set");
  if (scores.dim(0) != labels.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(scores.dim(0)) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
}

}  // namespace

std::vector<int> argmax_rows(const Tensor& scores) {
  require_rank(scores, 2, "argmax_rows");
  const std::size_t n = scores.dim(0), m = scores.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (scores.at(r, j) > scores.at(r, best)) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Tensor& scores, const std::vector<int>& labels) {
  check_scores(scores, labels, "accuracy");
  const auto pred = argmax_rows(scores);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double nll(const Tensor& probs, const std::vector<int>& labels) {
  check_scores(probs, labels, "nll");
  const std::size_t m = probs.dim(1);
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) row += probs.at(i, j);
    double p = probs.at(i, static_cast<std::size_t>(labels[i]));
    if (row > 0.0) p /= row;
    s -= std::log(std::max(p, kLogFloor));
  }
  return s / static_cast<double>(labels.size());
}

std::size_t calibration_bin_index(double confidence, int n_bins) {
  if (n_bins < 1) throw ConfigError("ece: n_bins must be at least 1");
  const double n = n_bins;
  long idx = static_cast<long>(std::ceil(confidence * n)) - 1;
  idx = std::clamp(idx, 0L, static_cast<long>(n_bins - 1));
  // Settle on the boundary comparisons b/n < conf <= (b+1)/n exactly.
  while (idx > 0 && confidence <= static_cast<double>(idx) / n) --idx;
  while (idx < n_bins - 1 && confidence > static_cast<double>(idx + 1) / n) ++idx;
  return static_cast<std::size_t>(idx);
}

std::vector<CalibrationBin> calibration_bins(const Tensor& probs, const std::vector<int>& labels,
                                             int n_bins) {
  check_scores(probs, labels, "ece");
  if (n_bins < 1) throw ConfigError("ece: n_bins must be at least 1");
  std::vector<CalibrationBin> bins(static_cast<std::size_t>(n_bins));
  std::vector<double> conf_sum(bins.size(), 0.0);
  std::vector<std::size_t> correct(bins.size(), 0);
  const auto pred = argmax_rows(probs);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double conf = probs.at(i, static_cast<std::size_t>(pred[i]));
    const std::size_t b = calibration_bin_index(conf, n_bins);
    bins[b].count += 1;
    conf_sum[b] += conf;
    correct[b] += pred[i] == labels[i];
  }
  for (std::size_t b = 0; b < bins.size(); ++b) {
    bins[b].lower = static_cast<double>(b) / n_bins;
    bins[b].upper = static_cast<double>(b + 1) / n_bins;
    if (bins[b].count > 0) {
      bins[b].accuracy = static_cast<double>(correct[b]) / static_cast<double>(bins[b].count);
      bins[b].confidence = conf_sum[b] / static_cast<double>(bins[b].count);
    }
  }
  return bins;
}

double ece(const Tensor& probs, const std::vector<int>& labels, int n_bins) {
  const auto bins = calibration_bins(probs, labels, n_bins);
  const double total = static_cast<double>(labels.size());
  double e = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    e += (static_cast<double>(b.count) / total) * std::abs(b.accuracy - b.confidence);
  }
  return e;
}

double prediction_disagreement(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ShapeError("prediction_disagreement: length mismatch");
  if (a.empty()) throw ShapeError("prediction_disagreement: empty prediction set");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
  return static_cast<double>(diff) / static_cast<double>(a.size());
}

double cosine_similarity_outputs(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "cosine_similarity_outputs");
  require_shape(b, a.shape(), "cosine_similarity_outputs");
  const std::size_t n = a.dim(0), m = a.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double x = a.at(r, j), y = b.at(r, j);
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) {
      throw NumericError("cosine_similarity_outputs: zero-norm row " + std::to_string(r));
    }
    total += dot / (std::sqrt(na) * std::sqrt(nb));
  }
  return total / static_cast<double>(n);
}

double mean_pairwise(const Matrix& m) {
  double s = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = i + 1; j < m.size(); ++j) {
      s += m[i][j];
      ++pairs;
    }
  }
  return pairs ? s / static_cast<double>(pairs) : 0.0;
}

BranchOutputs collect_outputs(const Network& net, const Dataset& data, std::size_t batch_size) {
  data.validate();
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be positive");
  const std::size_t s = data.size();
  const std::size_t m = static_cast<std::size_t>(data.num_classes);
  BranchOutputs out;
  out.labels = data.labels;
  for (std::size_t i = 0; i < net.branch_count(); ++i) out.logits.emplace_back(Shape{s, m});
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < s; begin += batch_size) {
    const std::size_t end = std::min(s, begin + batch_size);
    idx.resize(end - begin);
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = begin + k;
    const auto logits = net.infer(gather_images(data, idx));
    for (std::size_t b = 0; b < logits.size(); ++b) {
      if (logits[b].dim(1) != m) throw ShapeError("evaluate: logit width differs from num_classes");
      std::copy(logits[b].data().begin(), logits[b].data().end(),
                out.logits[b].data().begin() + static_cast<std::ptrdiff_t>(begin * m));
    }
  }
  return out;
}

EvalReport evaluate_outputs(const BranchOutputs& outputs, const CostReport& cost, int n_bins) {
  if (outputs.logits.empty()) throw ShapeError("evaluate: no branch outputs");
  EvalReport r;
  r.cost = cost;
  const Tensor ens = ensemble_logits(outputs.logits);
  const Tensor probs = softmax_temp(ens, 1.0);
  r.ensemble_acc = accuracy(ens, outputs.labels);
  r.nll = nll(probs, outputs.labels);
  r.bins = calibration_bins(probs, outputs.labels, n_bins);
  r.ece = ece(probs, outputs.labels, n_bins);

  const std::size_t n = outputs.logits.size();
  std::vector<std::vector<int>> preds;
  std::vector<Tensor> branch_probs;
  for (const auto& z : outputs.logits) {
    preds.push_back(argmax_rows(z));
    branch_probs.push_back(softmax_temp(z, 1.0));
    r.per_branch_acc.push_back(accuracy(z, outputs.labels));
  }
  r.pd_matrix.assign(n, std::vector<double>(n, 0.0));
  r.cs_matrix.assign(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double pd = prediction_disagreement(preds[i], preds[j]);
      const double cs = cosine_similarity_outputs(branch_probs[i], branch_probs[j]);
      r.pd_matrix[i][j] = r.pd_matrix[j][i] = pd;
      r.cs_matrix[i][j] = r.cs_matrix[j][i] = cs;
    }
  }
  return r;
}

EvalReport evaluate(const Network& net, const Dataset& data, std::size_t batch_size) {
  const auto outputs = collect_outputs(net, data, batch_size);
  const auto cost = cost_report(net.arch(), static_cast<int>(data.images.dim(2)),
                                static_cast<int>(data.images.dim(3)));
  return evaluate_outputs(outputs, cost);
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.bins) {
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"accuracy", b.accuracy},
                    {"confidence", b.confidence}});
  }
  return nlohmann::json{
      {"ensemble_acc", r.ensemble_acc},
      {"per_branch_acc", r.per_branch_acc},
      {"nll", r.nll},
      {"ece", r.ece},
      {"pd_matrix", r.pd_matrix},
      {"cs_matrix", r.cs_matrix},
      {"mean_pd", r.mean_pd()},
      {"mean_cs", r.mean_cs()},
      {"cost", {{"params", r.cost.params}, {"flops_mac", r.cost.flops_mac}}},
      {"table1_row",
       {{"acc", 100.0 * r.ensemble_acc},
        {"nll", r.nll},
        {"ece", r.ece},
        {"flops_gmac", r.cost.flops_gmac()},
        {"params_m", r.cost.params_m()}}},
      {"calibration_bins", bins}};
}

std::string table1_csv_header() { return "acc_pct,nll,ece,flops_gmac,params_m\n"; }

std::string table1_csv_row(const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.2f,%.4f,%.4f,%.4f,%.4f\n", 100.0 * r.ensemble_acc, r.nll, r.ece,
                r.cost.flops_gmac(), r.cost.params_m());
  return buf;
}

std::string matrix_csv(const Matrix& m) {
  std::ostringstream os;
  char buf[32];
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", row[j]);
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string calibration_csv(const std::vector<CalibrationBin>& bins) {
  std::ostringstream os;
  os << "lower,upper,count,accuracy,confidence\n";
  char buf[160];
  for (const auto& b : bins) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%zu,%.6f,%.6f\n", b.lower, b.upper, b.count, b.accuracy,
                  b.confidence);
    os << buf;
  }
  return os.str();
}

}  // namespace sembg
