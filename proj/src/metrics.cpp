#include "nfuse/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "nfuse/error.hpp"

namespace nfuse::metrics {

namespace {

void require_aligned(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) {
    fail(ErrorCategory::kArgument, "scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                                       std::to_string(positive.size()) + ")");
  }
}

// Indices sorted by ascending score; ties in index order.
std::vector<std::size_t> ascending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::kIo, "cannot write " + path.string());
  return out;
}

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

void PredictionSet::validate() const {
  if (rows.size() != truth.size()) {
    fail(ErrorCategory::kArgument, "prediction set has " + std::to_string(rows.size()) + " rows but " +
                                       std::to_string(truth.size()) + " labels");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= static_cast<int>(kClasses)) {
      fail(ErrorCategory::kArgument, "class index " + std::to_string(truth[i]) + " out of range at row " + std::to_string(i));
    }
    double sum = 0;
    for (double p : rows[i]) {
      if (!std::isfinite(p)) fail(ErrorCategory::kArgument, "non-finite probability at row " + std::to_string(i));
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      fail(ErrorCategory::kArgument, "probability row " + std::to_string(i) + " sums to " + format_double(sum));
    }
  }
}

std::optional<double> auc_binary(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  require_aligned(scores, positive);
  const auto order = ascending_order(scores);
  double pos_rank_sum = 0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1 .. j share their average
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = order.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank_sum - np * (np + 1) / 2;
  return u / (np * static_cast<double>(n_neg));
}

std::optional<std::vector<RocPoint>> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  require_aligned(scores, positive);
  std::size_t n_pos = 0;
  for (auto p : positive) n_pos += p ? 1 : 0;
  const std::size_t n_neg = positive.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  auto order = ascending_order(scores);
  std::reverse(order.begin(), order.end());
  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (positive[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(n_neg), static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2;
  }
  return area;
}

namespace {

struct Binary {
  std::vector<double> scores;
  std::vector<std::uint8_t> positive;
};

Binary one_vs_rest(const PredictionSet& preds, std::size_t c) {
  Binary b;
  b.scores.reserve(preds.size());
  b.positive.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    b.scores.push_back(preds.rows[i][c]);
    b.positive.push_back(preds.truth[i] == static_cast<int>(c) ? 1 : 0);
  }
  return b;
}

Binary pooled(const PredictionSet& preds) {
  Binary b;
  b.scores.reserve(preds.size() * kClasses);
  b.positive.reserve(preds.size() * kClasses);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t c = 0; c < kClasses; ++c) {
      b.scores.push_back(preds.rows[i][c]);
      b.positive.push_back(preds.truth[i] == static_cast<int>(c) ? 1 : 0);
    }
  }
  return b;
}

constexpr const char* kCurveNames[kClasses] = {"cn_vs_all", "mci_vs_all", "ad_vs_all"};

}  // namespace

std::array<std::optional<double>, kClasses> auc_ovr(const PredictionSet& preds) {
  preds.validate();
  std::array<std::optional<double>, kClasses> out;
  for (std::size_t c = 0; c < kClasses; ++c) {
    const auto b = one_vs_rest(preds, c);
    out[c] = auc_binary(b.scores, b.positive);
  }
  return out;
}

std::optional<double> auc_micro(const PredictionSet& preds) {
  preds.validate();
  const auto b = pooled(preds);
  return auc_binary(b.scores, b.positive);
}

std::optional<double> macro_of(const std::array<std::optional<double>, kClasses>& ovr) {
  double sum = 0;
  for (const auto& v : ovr) {
    if (!v) return std::nullopt;
    sum += *v;
  }
  return sum / static_cast<double>(kClasses);
}

AucReport auc_report(const PredictionSet& preds, bool with_curves) {
  const auto ovr = auc_ovr(preds);
  AucReport r;
  r.cn_vs_all = ovr[0];
  r.mci_vs_all = ovr[1];
  r.ad_vs_all = ovr[2];
  r.micro = auc_micro(preds);
  r.macro = macro_of(ovr);
  if (with_curves) {
    for (std::size_t c = 0; c < kClasses; ++c) {
      const auto b = one_vs_rest(preds, c);
      if (auto curve = roc_curve(b.scores, b.positive)) r.curves.push_back({kCurveNames[c], std::move(*curve)});
    }
    const auto b = pooled(preds);
    if (auto curve = roc_curve(b.scores, b.positive)) r.curves.push_back({"micro", std::move(*curve)});
  }
  return r;
}

int argmax(const ProbabilityRow& row) {
  int best = 0;
  for (std::size_t c = 1; c < kClasses; ++c) {
    if (row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

PrecisionRecall precision_recall(const PredictionSet& preds) {
  preds.validate();
  std::array<std::size_t, kClasses> tp{}, predicted{}, actual{};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto d = static_cast<std::size_t>(argmax(preds.rows[i]));
    const auto t = static_cast<std::size_t>(preds.truth[i]);
    ++predicted[d];
    ++actual[t];
    if (d == t) ++tp[d];
  }
  PrecisionRecall pr;
  for (std::size_t c = 0; c < kClasses; ++c) {
    if (predicted[c] > 0) pr.precision[c] = static_cast<double>(tp[c]) / static_cast<double>(predicted[c]);
    if (actual[c] > 0) pr.recall[c] = static_cast<double>(tp[c]) / static_cast<double>(actual[c]);
  }
  return pr;
}

double accuracy(const PredictionSet& preds) {
  preds.validate();
  if (preds.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += argmax(preds.rows[i]) == preds.truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

ProbabilityRow fuse(const ProbabilityRow& p_t1, const ProbabilityRow& p_fl, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    fail(ErrorCategory::kArgument, "fusion weight must lie in [0,1], got " + format_double(alpha));
  }
  ProbabilityRow out;
  for (std::size_t c = 0; c < kClasses; ++c) out[c] = alpha * p_t1[c] + (1.0 - alpha) * p_fl[c];
  return out;
}

PredictionSet fuse(const PredictionSet& t1, const PredictionSet& fl, double alpha) {
  t1.validate();
  fl.validate();
  if (t1.size() != fl.size() || t1.truth != fl.truth) {
    fail(ErrorCategory::kArgument, "T1 and FLAIR predictions are not aligned over the same examples");
  }
  PredictionSet out;
  out.truth = t1.truth;
  out.rows.reserve(t1.size());
  for (std::size_t i = 0; i < t1.size(); ++i) out.rows.push_back(fuse(t1.rows[i], fl.rows[i], alpha));
  return out;
}

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::kCnVsAll: return "cn_vs_all";
    case Metric::kMciVsAll: return "mci_vs_all";
    case Metric::kAdVsAll: return "ad_vs_all";
    case Metric::kMicro: return "micro";
    case Metric::kMacro: return "macro";
  }
  return "unknown";
}

std::optional<double> metric_value(const AucReport& report, Metric metric) {
  switch (metric) {
    case Metric::kCnVsAll: return report.cn_vs_all;
    case Metric::kMciVsAll: return report.mci_vs_all;
    case Metric::kAdVsAll: return report.ad_vs_all;
    case Metric::kMicro: return report.micro;
    case Metric::kMacro: return report.macro;
  }
  return std::nullopt;
}

std::optional<AlphaChoice> AlphaSweep::best(Metric metric) const {
  std::optional<AlphaChoice> choice;
  for (const auto& row : rows) {
    const auto v = metric_value(row.report, metric);
    if (v && (!choice || *v > choice->value)) choice = AlphaChoice{row.alpha, *v};
  }
  return choice;
}

AlphaSweep alpha_sweep(const PredictionSet& t1, const PredictionSet& fl, double step) {
  if (!(step > 0.0 && step <= 1.0)) fail(ErrorCategory::kArgument, "alpha grid step must lie in (0,1]");
  const auto intervals = static_cast<std::size_t>(std::llround(1.0 / step));
  if (std::abs(static_cast<double>(intervals) * step - 1.0) > 1e-9) {
    fail(ErrorCategory::kArgument, "alpha grid step must divide 1");
  }
  AlphaSweep sweep;
  for (std::size_t i = 0; i <= intervals; ++i) {
    // i / intervals keeps both endpoints exact
    const double alpha = static_cast<double>(i) / static_cast<double>(intervals);
    sweep.rows.push_back({alpha, auc_report(fuse(t1, fl, alpha))});
  }
  return sweep;
}

AlphaSearch optimal_alpha(const PredictionSet& t1, const PredictionSet& fl, Metric metric, double step) {
  AlphaSearch search;
  search.sweep = alpha_sweep(t1, fl, step);
  const auto choice = search.sweep.best(metric);
  if (!choice) fail(ErrorCategory::kData, "metric " + to_string(metric) + " is undefined for these predictions");
  search.choice = *choice;
  return search;
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocCurve> curves) {
  auto out = open_for_write(path);
  out << "curve_name,fpr,tpr\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) out << c.name << ',' << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  }
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

void write_sweep_csv(const std::filesystem::path& path, const AlphaSweep& sweep) {
  auto out = open_for_write(path);
  out << "alpha,cn_vs_all,mci_vs_all,ad_vs_all,micro,macro\n";
  for (const auto& row : sweep.rows) {
    out << format_double(row.alpha);
    for (auto m : kAllMetrics) out << ',' << optional_field(metric_value(row.report, m));
    out << '\n';
  }
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace nfuse::metrics
