#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nfuse::metrics {

inline constexpr std::size_t kClasses = 3;

using ProbabilityRow = std::array<double, kClasses>;

// Per-example class probabilities and the true class index (0 CN, 1 MCI, 2 AD).
struct PredictionSet {
  std::vector<ProbabilityRow> rows;
  std::vector<int> truth;

  std::size_t size() const { return rows.size(); }
  // Throws unless sizes agree, classes are in range and rows sum to 1 within 1e-6.
  void validate() const;
};

// Mann-Whitney AUC from midranks: P(pos > neg) + P(tie) / 2. Absent when
// either class is empty.
std::optional<double> auc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// One point per distinct score threshold, descending, from (0,0) to (1,1).
std::optional<std::vector<RocPoint>> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> positive);
double trapezoid_area(std::span<const RocPoint> curve);

struct RocCurve {
  std::string name;
  std::vector<RocPoint> points;
};

// The five Table-style columns; entries are absent when undefined.
struct AucReport {
  std::optional<double> cn_vs_all;
  std::optional<double> mci_vs_all;
  std::optional<double> ad_vs_all;
  std::optional<double> micro;
  std::optional<double> macro;
  std::vector<RocCurve> curves;  // "cn_vs_all", "mci_vs_all", "ad_vs_all", "micro" when defined
};

std::array<std::optional<double>, kClasses> auc_ovr(const PredictionSet& preds);
// One-hot pooling: every (probability, indicator) pair of every row and class.
std::optional<double> auc_micro(const PredictionSet& preds);
std::optional<double> macro_of(const std::array<std::optional<double>, kClasses>& ovr);
AucReport auc_report(const PredictionSet& preds, bool with_curves = false);

struct PrecisionRecall {
  std::array<std::optional<double>, kClasses> precision;  // absent when the class is never predicted
  std::array<std::optional<double>, kClasses> recall;     // absent when the class never occurs
};

// Argmax decisions, lowest class index on ties.
int argmax(const ProbabilityRow& row);
PrecisionRecall precision_recall(const PredictionSet& preds);
double accuracy(const PredictionSet& preds);

ProbabilityRow fuse(const ProbabilityRow& p_t1, const ProbabilityRow& p_fl, double alpha);
PredictionSet fuse(const PredictionSet& t1, const PredictionSet& fl, double alpha);

enum class Metric { kCnVsAll, kMciVsAll, kAdVsAll, kMicro, kMacro };

inline constexpr std::array<Metric, 5> kAllMetrics = {Metric::kCnVsAll, Metric::kMciVsAll, Metric::kAdVsAll,
                                                      Metric::kMicro, Metric::kMacro};

std::string to_string(Metric metric);
std::optional<double> metric_value(const AucReport& report, Metric metric);

struct SweepRow {
  double alpha = 0.0;
  AucReport report;
};

struct AlphaChoice {
  double alpha = 0.0;
  double value = 0.0;
};

struct AlphaSweep {
  std::vector<SweepRow> rows;  // alpha = i * step, i = 0..1/step

  // Maximizing alpha for `metric`, lowest alpha on ties. Absent when the
  // metric is undefined everywhere.
  std::optional<AlphaChoice> best(Metric metric) const;
};

// Evaluates every grid alpha once; per-metric optima come from best().
AlphaSweep alpha_sweep(const PredictionSet& t1, const PredictionSet& fl, double step = 0.01);

struct AlphaSearch {
  AlphaChoice choice;
  AlphaSweep sweep;
};

AlphaSearch optimal_alpha(const PredictionSet& t1, const PredictionSet& fl, Metric metric, double step = 0.01);

// CSV writers. Absent values are written as empty fields.
void write_roc_csv(const std::filesystem::path& path, std::span<const RocCurve> curves);
void write_sweep_csv(const std::filesystem::path& path, const AlphaSweep& sweep);

// Shortest round-trip text for a double, stable across runs.
std::string format_double(double v);

}  // namespace nfuse::metrics
