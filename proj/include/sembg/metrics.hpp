#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "sembg/arch.hpp"
#include "sembg/tensor.hpp"

namespace sembg {

class Network;
struct Dataset;

using Matrix = std::vector<std::vector<double>>;

// Row argmax; ties resolve to the lowest class index.
std::vector<int> argmax_rows(const Tensor& scores);

double accuracy(const Tensor& scores, const std::vector<int>& labels);
// Mean -log p[true], probabilities floored at 1e-12. Rows are renormalized in
// double so float32 storage rounding does not leak into the result.
double nll(const Tensor& probs, const std::vector<int>& labels);

// Equal-width, right-closed confidence bins on (0, 1]; bin b holds
// b/n < conf <= (b+1)/n (conf == 0 goes to bin 0).
struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;
};

std::size_t calibration_bin_index(double confidence, int n_bins);
std::vector<CalibrationBin> calibration_bins(const Tensor& probs, const std::vector<int>& labels,
                                             int n_bins = 15);
double ece(const Tensor& probs, const std::vector<int>& labels, int n_bins = 15);

double prediction_disagreement(const std::vector<int>& a, const std::vector<int>& b);
// Mean over samples of the cosine between two output rows.
double cosine_similarity_outputs(const Tensor& a, const Tensor& b);

// Mean of the off-diagonal upper triangle; 0 for a 1x1 matrix.
double mean_pairwise(const Matrix& m);

struct EvalReport {
  double ensemble_acc = 0.0;
  std::vector<double> per_branch_acc;
  double nll = 0.0;
  double ece = 0.0;
  Matrix pd_matrix;
  Matrix cs_matrix;
  CostReport cost;
  std::vector<CalibrationBin> bins;

  double mean_pd() const { return mean_pairwise(pd_matrix); }
  double mean_cs() const { return mean_pairwise(cs_matrix); }
};

// Branch outputs of a whole dataset gathered in one pass.
struct BranchOutputs {
  std::vector<Tensor> logits;  // one [S, M] per branch
  std::vector<int> labels;
};

BranchOutputs collect_outputs(const Network& net, const Dataset& data, std::size_t batch_size);
EvalReport evaluate_outputs(const BranchOutputs& outputs, const CostReport& cost, int n_bins = 15);
EvalReport evaluate(const Network& net, const Dataset& data, std::size_t batch_size = 256);

nlohmann::json eval_report_to_json(const EvalReport& report);
// Acc (%), NLL, ECE, FLOPs (GMac), Params (M).
std::string table1_csv_header();
std::string table1_csv_row(const EvalReport& report);
std::string matrix_csv(const Matrix& m);
std::string calibration_csv(const std::vector<CalibrationBin>& bins);

}  // namespace sembg
