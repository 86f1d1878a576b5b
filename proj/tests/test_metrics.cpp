#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "auc_oracle.hpp"
#include "doctest.h"
#include "nfuse/error.hpp"
#include "nfuse/metrics.hpp"

using namespace nfuse;
using namespace nfuse::metrics;
using nfuse::testing::pair_count_auc;

namespace {

PredictionSet make_set(std::vector<ProbabilityRow> rows, std::vector<int> truth) {
  return PredictionSet{std::move(rows), std::move(truth)};
}

PredictionSet random_set(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  std::uniform_int_distribution<int> cls(0, 2);
  PredictionSet s;
  for (std::size_t i = 0; i < n; ++i) {
    ProbabilityRow r{unit(rng), unit(rng), unit(rng)};
    const double sum = r[0] + r[1] + r[2];
    for (auto& v : r) v /= sum;
    s.rows.push_back(r);
    s.truth.push_back(i < 3 ? static_cast<int>(i) : cls(rng));
  }
  return s;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("auc_binary small cases") {
  const std::vector<std::uint8_t> labels{1, 1, 0, 0};
  CHECK(*auc_binary(std::vector<double>{0.9, 0.8, 0.7, 0.1}, labels) == 1.0);
  CHECK(*auc_binary(std::vector<double>{0.9, 0.4, 0.6, 0.2}, labels) == 0.75);
  CHECK(*auc_binary(std::vector<double>{0.3, 0.3, 0.3, 0.3}, labels) == 0.5);
  CHECK_FALSE(auc_binary(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}).has_value());
  CHECK_THROWS_AS(auc_binary(std::vector<double>{0.1}, labels), Error);
}

TEST_CASE("auc_binary matches pair counting with ties") {
  std::mt19937_64 rng(314);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto inst = nfuse::testing::random_binary_instance(rng);
    const auto fast = auc_binary(inst.scores, inst.positive);
    const auto slow = pair_count_auc(inst.scores, inst.positive);
    REQUIRE(fast.has_value());
    REQUIRE(std::abs(*fast - *slow) <= 1e-12);
  }
}

TEST_CASE("auc is invariant under increasing transforms") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = nfuse::testing::random_binary_instance(rng);
    const double before = *auc_binary(inst.scores, inst.positive);
    for (auto& s : inst.scores) s = std::exp(3 * s) - 7;
    CHECK(*auc_binary(inst.scores, inst.positive) == before);
  }
}

TEST_CASE("roc curve") {
  SUBCASE("two-point toy set") {
    const auto curve = *roc_curve(std::vector<double>{0.8, 0.3}, std::vector<std::uint8_t>{1, 0});
    REQUIRE(curve.size() == 3);
    CHECK(curve[0].fpr == 0.0);
    CHECK(curve[0].tpr == 0.0);
    CHECK(curve[1].fpr == 0.0);
    CHECK(curve[1].tpr == 1.0);
    CHECK(curve[2].fpr == 1.0);
    CHECK(curve[2].tpr == 1.0);
  }
  SUBCASE("tied scores collapse into one point") {
    const auto curve = *roc_curve(std::vector<double>{0.5, 0.5, 0.2}, std::vector<std::uint8_t>{1, 0, 0});
    REQUIRE(curve.size() == 3);
    CHECK(curve[1].fpr == 0.5);
    CHECK(curve[1].tpr == 1.0);
  }
  SUBCASE("trapezoid area equals auc") {
    std::mt19937_64 rng(55);
    for (int trial = 0; trial < 1000; ++trial) {
      const auto inst = nfuse::testing::random_binary_instance(rng);
      const auto curve = *roc_curve(inst.scores, inst.positive);
      CHECK(curve.front().fpr == 0.0);
      CHECK(curve.back().tpr == 1.0);
      REQUIRE(std::abs(trapezoid_area(curve) - *auc_binary(inst.scores, inst.positive)) <= 1e-9);
    }
  }
  CHECK_FALSE(roc_curve(std::vector<double>{0.1}, std::vector<std::uint8_t>{0}).has_value());
}

TEST_CASE("one-vs-rest, micro and macro") {
  const auto onehot = make_set({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}}, {0, 1, 2, 1});
  const auto ovr = auc_ovr(onehot);
  for (const auto& v : ovr) CHECK(*v == 1.0);
  CHECK(*auc_micro(onehot) == 1.0);

  const double third = 1.0 / 3.0;
  const auto flat = make_set({{third, third, third}, {third, third, third}, {third, third, third}}, {0, 1, 2});
  CHECK(*auc_micro(flat) == 0.5);

  SUBCASE("micro equals brute force over the pooled pairs") {
    const auto s = make_set({{0.7, 0.2, 0.1}, {0.3, 0.5, 0.2}, {0.25, 0.25, 0.5}}, {0, 2, 2});
    std::vector<double> scores;
    std::vector<std::uint8_t> pos;
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        scores.push_back(s.rows[i][c]);
        pos.push_back(s.truth[i] == static_cast<int>(c));
      }
    }
    // positives 0.7, 0.2, 0.5 against negatives 0.2,0.1,0.3,0.5,0.25,0.25:
    // 0.7 beats all 6; 0.2 beats 0.1 and ties 0.2; 0.5 beats 5 and ties 0.5
    CHECK(*pair_count_auc(scores, pos) == doctest::Approx((6 + 1.5 + 5.5) / 18.0));
    CHECK(std::abs(*auc_micro(s) - *pair_count_auc(scores, pos)) <= 1e-12);
  }
  SUBCASE("missing class leaves its entry and the macro absent") {
    const auto s = make_set({{0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}}, {0, 1});
    const auto r = auc_report(s);
    CHECK(r.cn_vs_all.has_value());
    CHECK_FALSE(r.ad_vs_all.has_value());
    CHECK_FALSE(r.macro.has_value());
  }
  SUBCASE("macro is the mean of the three one-vs-rest values") {
    std::mt19937_64 rng(21);
    const auto r = auc_report(random_set(40, rng));
    CHECK(std::abs(*r.macro - (*r.cn_vs_all + *r.mci_vs_all + *r.ad_vs_all) / 3) <= 1e-9);
    CHECK(*macro_of({0.89, 0.83, 0.85}) == doctest::Approx(0.856666666666).epsilon(1e-10));
  }
  SUBCASE("shuffled labels give chance-level auc") {
    std::mt19937_64 rng(77);
    auto s = random_set(3000, rng);
    std::shuffle(s.truth.begin(), s.truth.end(), rng);
    for (const auto& v : auc_ovr(s)) CHECK(std::abs(*v - 0.5) <= 0.1);
  }
  SUBCASE("report curves") {
    std::mt19937_64 rng(4);
    const auto r = auc_report(random_set(30, rng), true);
    REQUIRE(r.curves.size() == 4);
    CHECK(r.curves[3].name == "micro");
    CHECK(std::abs(trapezoid_area(r.curves[3].points) - *r.micro) <= 1e-9);
  }
}

TEST_CASE("prediction set validation") {
  CHECK_THROWS_AS(make_set({{0.5, 0.5, 0.5}}, {0}).validate(), Error);
  CHECK_THROWS_AS(make_set({{1, 0, 0}}, {3}).validate(), Error);
  CHECK_THROWS_AS(make_set({{1, 0, 0}}, {0, 1}).validate(), Error);
}

TEST_CASE("precision and recall") {
  const auto perfect = make_set({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {0, 1, 2});
  const auto pr = precision_recall(perfect);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(*pr.precision[c] == 1.0);
    CHECK(*pr.recall[c] == 1.0);
  }
  SUBCASE("hand-counted fixture") {
    // decisions: 0, 0 (tie 0/1 -> lowest), 1, 0; truth: 0, 1, 1, 2
    const auto s = make_set({{0.6, 0.3, 0.1}, {0.4, 0.4, 0.2}, {0.1, 0.8, 0.1}, {0.5, 0.1, 0.4}}, {0, 1, 1, 2});
    const auto h = precision_recall(s);
    CHECK(*h.precision[0] == doctest::Approx(1.0 / 3));
    CHECK(*h.precision[1] == 1.0);
    CHECK_FALSE(h.precision[2].has_value());
    CHECK(*h.recall[0] == 1.0);
    CHECK(*h.recall[1] == 0.5);
    CHECK(*h.recall[2] == 0.0);
    CHECK(accuracy(s) == 0.5);
  }
}

TEST_CASE("fuse") {
  const ProbabilityRow a{0.6, 0.3, 0.1};
  const ProbabilityRow b{0.2, 0.5, 0.3};
  CHECK(fuse(a, b, 1.0) == a);
  CHECK(fuse(a, b, 0.0) == b);
  const auto half = fuse(a, b, 0.5);
  CHECK(half[0] == doctest::Approx(0.4));
  CHECK(half[1] == doctest::Approx(0.4));
  CHECK(half[2] == doctest::Approx(0.2));
  CHECK_THROWS_AS(fuse(a, b, 1.01), Error);
  CHECK_THROWS_AS(fuse(a, b, -0.1), Error);
  CHECK_THROWS_AS(fuse(a, b, std::nan("")), Error);

  std::mt19937_64 rng(6);
  const auto t1 = random_set(25, rng);
  auto fl = random_set(25, rng);
  fl.truth = t1.truth;
  for (double alpha : {0.0, 0.13, 0.5, 0.77, 1.0}) {
    const auto f = fuse(t1, fl, alpha);
    for (const auto& r : f.rows) CHECK(std::abs(r[0] + r[1] + r[2] - 1.0) <= 1e-6);
  }
  auto misaligned = fl;
  misaligned.truth[3] = (misaligned.truth[3] + 1) % 3;
  CHECK_THROWS_AS(fuse(t1, misaligned, 0.5), Error);
}

TEST_CASE("optimal alpha") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t1 = random_set(30, rng);
    auto fl = random_set(30, rng);
    fl.truth = t1.truth;
    const auto sweep = alpha_sweep(t1, fl);
    REQUIRE(sweep.rows.size() == 101);
    CHECK(sweep.rows.front().alpha == 0.0);
    CHECK(sweep.rows.back().alpha == 1.0);
    for (auto m : kAllMetrics) {
      const auto best = *sweep.best(m);
      CHECK(best.value >= *metric_value(sweep.rows.front().report, m));
      CHECK(best.value >= *metric_value(sweep.rows.back().report, m));
      double max_in_table = 0;
      for (const auto& row : sweep.rows) max_in_table = std::max(max_in_table, *metric_value(row.report, m));
      CHECK(best.value == max_in_table);
      const auto search = optimal_alpha(t1, fl, m);
      CHECK(search.choice.alpha == best.alpha);
    }
  }

  SUBCASE("perfect T1 and uniform FLAIR pick the lowest separating alpha") {
    const double third = 1.0 / 3.0;
    const auto t1 = make_set({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, {0, 1, 2});
    const auto fl = make_set({{third, third, third}, {third, third, third}, {third, third, third}}, {0, 1, 2});
    const auto s = optimal_alpha(t1, fl, Metric::kMicro);
    CHECK(s.choice.value == 1.0);
    CHECK(s.choice.alpha == 0.01);
  }
  SUBCASE("sweep csv has a header and 101 rows") {
    const auto t1 = random_set(12, rng);
    auto fl = random_set(12, rng);
    fl.truth = t1.truth;
    const auto path = std::filesystem::temp_directory_path() / "nfuse_test_sweep.csv";
    write_sweep_csv(path, alpha_sweep(t1, fl));
    CHECK(count_lines(path) == 102);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "alpha,cn_vs_all,mci_vs_all,ad_vs_all,micro,macro");
    std::filesystem::remove(path);
  }
  CHECK_THROWS_AS(alpha_sweep(make_set({{1, 0, 0}}, {0}), make_set({{1, 0, 0}}, {0}), 0.3), Error);
}

TEST_CASE("roc csv") {
  const auto path = std::filesystem::temp_directory_path() / "nfuse_test_roc.csv";
  const std::vector<RocCurve> curves{{"micro", {{0, 0}, {0.5, 1}, {1, 1}}}};
  write_roc_csv(path, curves);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text == "curve_name,fpr,tpr\nmicro,0,0\nmicro,0.5,1\nmicro,1,1\n");
  std::filesystem::remove(path);
}
