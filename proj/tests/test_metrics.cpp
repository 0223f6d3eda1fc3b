#include <cmath>
#include <random>

#include <doctest.h>

#include "sembg/arch_io.hpp"
#include "sembg/data.hpp"
#include "sembg/errors.hpp"
#include "sembg/metrics.hpp"
#include "sembg/network.hpp"
#include "sembg/ops.hpp"
#include "sembg/trainer.hpp"
#include "test_util.hpp"

using namespace sembg;

namespace {

// Visits bins one at a time and collects the samples whose confidence lies in
// (b/n, (b+1)/n]; confidence 0 joins bin 0.
double ece_brute_force(const Tensor& probs, const std::vector<int>& labels, int n_bins) {
  const std::size_t s = labels.size(), m = probs.dim(1);
  double e = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const double lo = static_cast<double>(b) / n_bins;
    const double hi = static_cast<double>(b + 1) / n_bins;
    std::size_t count = 0, correct = 0;
    double conf_sum = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < m; ++j)
        if (probs.at(i, j) > probs.at(i, best)) best = j;
      const double conf = probs.at(i, best);
      const bool inside = (conf > lo && conf <= hi) || (b == 0 && conf == 0.0);
      if (!inside) continue;
      ++count;
      conf_sum += conf;
      correct += static_cast<int>(best) == labels[i];
    }
    if (count == 0) continue;
    const double acc = static_cast<double>(correct) / static_cast<double>(count);
    const double conf = conf_sum / static_cast<double>(count);
    e += (static_cast<double>(count) / static_cast<double>(s)) * std::abs(acc - conf);
  }
  return e;
}

Tensor rows(std::vector<std::vector<float>> r) {
  Tensor t(Shape{r.size(), r[0].size()});
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[i].size(); ++j) t.at(i, j) = r[i][j];
  return t;
}

Tensor random_probs(std::size_t s, std::size_t m, std::mt19937_64& rng, float scale) {
  return softmax_temp(testing::random_tensor({s, m}, rng, scale), 1.0);
}

std::vector<int> random_labels(std::size_t s, int m, std::mt19937_64& rng) {
  std::vector<int> y(s);
  for (auto& v : y) v = static_cast<int>(rng() % static_cast<unsigned>(m));
  return y;
}

}  // namespace

TEST_CASE("accuracy examples and ties") {
  const Tensor z = rows({{0.1f, 0.9f}, {0.8f, 0.2f}, {0.3f, 0.7f}, {0.6f, 0.4f}});
  CHECK(accuracy(z, {1, 0, 1, 0}) == 1.0);
  CHECK(accuracy(z, {0, 1, 0, 1}) == 0.0);
  CHECK(accuracy(z, {1, 0, 1, 1}) == 0.75);
  CHECK(argmax_rows(rows({{0.5f, 0.5f, 0.0f}, {0.2f, 0.4f, 0.4f}})) == std::vector<int>{0, 1});
  CHECK_THROWS_AS(accuracy(Tensor(Shape{0, 3}), {}), ShapeError);
}

TEST_CASE("nll examples") {
  CHECK(nll(rows({{1.0f, 0.0f}, {0.0f, 1.0f}}), {0, 1}) == 0.0);
  CHECK(nll(rows({{0.5f, 0.5f}, {0.75f, 0.25f}}), {1, 1}) ==
        doctest::Approx((std::log(2.0) + std::log(4.0)) / 2).epsilon(1e-12));
  CHECK(nll(rows({{0.0f, 1.0f}}), {0}) == doctest::Approx(-std::log(1e-12)));

  Tensor uniform(Shape{7, 100});
  for (std::size_t i = 0; i < uniform.numel(); ++i) uniform[i] = 0.01f;
  std::vector<int> y{0, 5, 17, 99, 42, 3, 64};
  CHECK(std::abs(nll(uniform, y) - std::log(100.0)) <= 1e-9);
}

TEST_CASE("ece examples") {
  CHECK(ece(rows({{1.0f, 0.0f}, {0.0f, 1.0f}}), {0, 1}) == 0.0);
  CHECK(ece(rows({{0.9f, 0.1f}}), {1}) == doctest::Approx(0.9).epsilon(1e-6));
  const Tensor p = rows({{0.6f, 0.4f}, {0.3f, 0.7f}, {0.9f, 0.1f}, {0.05f, 0.95f}});
  // {0.6, 0.7} share (0.5, 0.75] and {0.9, 0.95} share (0.75, 1].
  CHECK(ece(p, {0, 0, 0, 1}, 4) == doctest::Approx(0.1125).epsilon(1e-6));
  CHECK(ece(p, {0, 0, 0, 1}, 4) == ece_brute_force(p, {0, 0, 0, 1}, 4));
  CHECK(ece(p, {0, 0, 0, 1}, 2) == doctest::Approx(std::abs(0.75 - 0.7875)).epsilon(1e-6));
}

TEST_CASE("ece bin boundaries are right closed") {
  CHECK(calibration_bin_index(0.0, 15) == 0);
  CHECK(calibration_bin_index(1.0, 15) == 14);
  CHECK(calibration_bin_index(1.0 / 15, 15) == 0);
  CHECK(calibration_bin_index(std::nextafter(1.0 / 15, 1.0), 15) == 1);
  for (int n : {1, 2, 7, 15, 20}) {
    for (int b = 1; b <= n; ++b) {
      const double edge = static_cast<double>(b) / n;
      CHECK(calibration_bin_index(edge, n) == static_cast<std::size_t>(b - 1));
    }
  }
}

TEST_CASE("ece equals brute force bin enumeration") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t s = 1 + rng() % 200, m = 2 + rng() % 9;
    const int n_bins = 1 + static_cast<int>(rng() % 20);
    Tensor p = random_probs(s, m, rng, 0.5f + static_cast<float>(rng() % 8));
    if (trial % 4 == 0) {
      // Confidences landing exactly on bin edges.
      for (std::size_t i = 0; i < s; ++i) {
        const double edge = static_cast<double>(1 + rng() % n_bins) / n_bins;
        for (std::size_t j = 0; j < m; ++j) p.at(i, j) = 0.0f;
        p.at(i, rng() % m) = static_cast<float>(edge);
      }
    }
    const auto y = random_labels(s, static_cast<int>(m), rng);
    CHECK(ece(p, y, n_bins) == ece_brute_force(p, y, n_bins));
  }
}

TEST_CASE("calibration bins summarise counts") {
  std::mt19937_64 rng(8);
  const Tensor p = random_probs(300, 5, rng, 2.0f);
  const auto y = random_labels(300, 5, rng);
  const auto bins = calibration_bins(p, y);
  REQUIRE(bins.size() == 15);
  std::size_t total = 0;
  for (const auto& b : bins) {
    total += b.count;
    CHECK(b.accuracy >= 0.0);
    CHECK(b.accuracy <= 1.0);
    if (b.count) {
      CHECK(b.confidence > b.lower);
      CHECK(b.confidence <= b.upper + 1e-12);
    }
  }
  CHECK(total == 300);
}

TEST_CASE("prediction disagreement") {
  CHECK(prediction_disagreement({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(prediction_disagreement({1, 2, 3}, {1, 2, 4}) == doctest::Approx(1.0 / 3));
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_labels(40, 4, rng), b = random_labels(40, 4, rng);
    const double pd = prediction_disagreement(a, b);
    CHECK(pd == prediction_disagreement(b, a));
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
    CHECK(pd + static_cast<double>(agree) / 40.0 == doctest::Approx(1.0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(prediction_disagreement({1}, {1, 2}), ShapeError);
  CHECK_THROWS_AS(prediction_disagreement({}, {}), ShapeError);
}

TEST_CASE("cosine similarity of outputs") {
  const Tensor p = rows({{0.2f, 0.3f, 0.5f}});
  CHECK(cosine_similarity_outputs(p, p) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_similarity_outputs(rows({{1.0f, 0.0f}}), rows({{0.0f, 1.0f}})) == 0.0);
  CHECK(cosine_similarity_outputs(rows({{0.5f, 0.5f}}), rows({{1.0f, 0.0f}})) ==
        doctest::Approx(0.5 / std::sqrt(0.5)).epsilon(1e-7));
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_probs(20, 6, rng, 3.0f), b = random_probs(20, 6, rng, 3.0f);
    const double cs = cosine_similarity_outputs(a, b);
    CHECK(cs == cosine_similarity_outputs(b, a));
    CHECK(cs >= 0.0);
    CHECK(cs <= 1.0 + 1e-12);
  }
  CHECK_THROWS_AS(cosine_similarity_outputs(rows({{0.0f, 0.0f}}), rows({{1.0f, 0.0f}})),
                  NumericError);
}

TEST_CASE("mean pairwise") {
  CHECK(mean_pairwise({{0.0}}) == 0.0);
  CHECK(mean_pairwise({{0, 0.1, 0.2}, {0.1, 0, 0.3}, {0.2, 0.3, 0}}) == doctest::Approx(0.2));
}

TEST_CASE("evaluate_outputs invariants and consistency") {
  std::mt19937_64 rng(21);
  for (std::size_t n : {1u, 2u, 3u, 5u}) {
    BranchOutputs out;
    out.labels = random_labels(64, 10, rng);
    for (std::size_t b = 0; b < n; ++b) out.logits.push_back(testing::random_tensor({64, 10}, rng, 2.0f));
    const EvalReport r = evaluate_outputs(out, CostReport{10, 20});
    REQUIRE(r.pd_matrix.size() == n);
    REQUIRE(r.per_branch_acc.size() == n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(r.pd_matrix[i][i] == 0.0);
      CHECK(r.cs_matrix[i][i] == 1.0);
      CHECK(r.per_branch_acc[i] == accuracy(out.logits[i], out.labels));
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(r.pd_matrix[i][j] == r.pd_matrix[j][i]);
        CHECK(r.cs_matrix[i][j] == r.cs_matrix[j][i]);
        CHECK(r.pd_matrix[i][j] >= 0.0);
        CHECK(r.pd_matrix[i][j] <= 1.0);
        CHECK(r.cs_matrix[i][j] >= 0.0);
        CHECK(r.cs_matrix[i][j] <= 1.0 + 1e-12);
      }
    }
    const Tensor ens = ensemble_logits(out.logits);
    CHECK(std::abs(r.nll - softmax_cross_entropy(ens, out.labels).loss) <= 1e-6);
    CHECK(r.ensemble_acc == accuracy(ens, out.labels));
    if (n == 1) {
      CHECK(r.pd_matrix == Matrix{{0.0}});
      CHECK(r.cs_matrix == Matrix{{1.0}});
    }
  }
}

TEST_CASE("evaluate is pure and matches collected outputs") {
  const ArchSpec toy = arch_preset("toy", 4);
  const Network net(transform(toy, BranchPlan::default_for(toy)), 3);
  BlobsConfig cfg;
  cfg.per_class = 10;
  cfg.image_hw = 8;
  const Dataset data = synthetic_blobs(cfg);
  const EvalReport a = evaluate(net, data, 7);
  const EvalReport b = evaluate(net, data, 40);
  CHECK(eval_report_to_json(a) == eval_report_to_json(b));
  CHECK(a.cost.params == count_params(net.arch()));
  CHECK(a.cost.flops_mac == count_flops(net.arch(), 8, 8));
}

TEST_CASE("report serialisation") {
  EvalReport r;
  r.ensemble_acc = 0.843;
  r.per_branch_acc = {0.8, 0.81, 0.82};
  r.nll = 0.5;
  r.ece = 0.02;
  r.pd_matrix = {{0, 0.1, 0.2}, {0.1, 0, 0.3}, {0.2, 0.3, 0}};
  r.cs_matrix = {{1, 0.9, 0.8}, {0.9, 1, 0.7}, {0.8, 0.7, 1}};
  r.cost = CostReport{36840000, 6020000000};
  const auto j = eval_report_to_json(r);
  CHECK(j["mean_pd"].get<double>() == doctest::Approx(0.2));
  CHECK(j["mean_cs"].get<double>() == doctest::Approx(0.8));
  CHECK(j["table1_row"]["acc"].get<double>() == doctest::Approx(84.3));
  CHECK(table1_csv_header() == "acc_pct,nll,ece,flops_gmac,params_m\n");
  CHECK(table1_csv_row(r) == "84.30,0.5000,0.0200,6.0200,36.8400\n");
  CHECK(matrix_csv({{0, 0.5}, {0.5, 0}}) == "0.000000,0.500000\n0.500000,0.000000\n");
  const auto csv = calibration_csv(calibration_bins(rows({{0.9f, 0.1f}}), {0}, 2));
  CHECK(csv.rfind("lower,upper,count,accuracy,confidence\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
