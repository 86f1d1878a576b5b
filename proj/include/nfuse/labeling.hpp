#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nfuse::labeling {

// Severity order CN < MCI < AD; the numeric value doubles as the class index.
enum class Label { kCN = 0, kMCI = 1, kAD = 2 };

std::string to_string(Label label);
std::optional<Label> parse_label(std::string_view text);
inline int class_index(Label label) { return static_cast<int>(label); }

using Date = std::chrono::year_month_day;

// Strict ISO-8601 calendar date, YYYY-MM-DD.
std::optional<Date> parse_date(std::string_view text);
std::string format_date(const Date& date);
// b - a in days.
long days_between(const Date& a, const Date& b);

struct EhrVisit {
  std::string patient_id;
  Date visit_date;
  double age_at_scan = 0.0;
  std::optional<Label> diagnosis;
};

struct Scan {
  std::string patient_id;
  std::string session_id;
  Date scan_date;
};

struct LabeledScan {
  std::string patient_id;
  std::string session_id;
  Date scan_date;
  Label label = Label::kCN;
};

struct Exclusion {
  std::string session_id;  // empty for malformed EHR rows
  std::string reason;
};

inline constexpr long kWindowDays = 180;
inline constexpr double kMinimumAge = 55.0;

// Keeps visits with age strictly over 55.
std::vector<EhrVisit> filter_age(std::span<const EhrVisit> visits);
// Keeps diagnosed visits with |visit_date - scan_date| <= 180 days.
std::vector<EhrVisit> filter_window(std::span<const EhrVisit> visits, const Date& scan_date);
// One patient's visits in ascending date order (equal dates keep input
// order). Each diagnosis becomes the running maximum severity so far;
// undiagnosed visits pass through. Throws when dates are out of order.
std::vector<EhrVisit> enforce_temporal_consistency(std::span<const EhrVisit> visits);
// Most frequent label, the most severe one among tied counts. Absent for no
// diagnosed visits.
std::optional<Label> mode_label(std::span<const Label> labels);
std::optional<Label> mode_label(std::span<const EhrVisit> visits);

inline constexpr std::string_view kNoDiagnosisReason = "no in-window diagnosis";

struct LabelingResult {
  std::vector<LabeledScan> labeled;
  std::vector<Exclusion> excluded;
};

// Age filter, then per-patient temporal consistency over the date-sorted
// history, then the per-scan window, then the mode. Scans keep input order;
// every scan ends up either labeled or excluded with a reason.
LabelingResult label_dataset(std::span<const EhrVisit> visits, std::span<const Scan> scans);

struct MalformedRow {
  std::size_t line = 0;
  std::string reason;
};

template <typename T>
struct Parsed {
  std::vector<T> records;
  std::vector<MalformedRow> malformed;
};

// EHR CSV: patient_id, visit_date, age_at_scan, diagnosis (CN, MCI, AD or empty).
Parsed<EhrVisit> read_ehr_csv(const std::filesystem::path& path);
// Any CSV with patient_id, session_id and scan_date columns, such as the dataset manifest.
Parsed<Scan> read_scans_csv(const std::filesystem::path& path);

void write_labeled_csv(const std::filesystem::path& path, std::span<const LabeledScan> labeled);
void write_exclusions_csv(const std::filesystem::path& path, std::span<const Exclusion> excluded);
std::vector<LabeledScan> read_labeled_csv(const std::filesystem::path& path);

}  // namespace nfuse::labeling
