#include "nfuse/labeling.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "nfuse/csv.hpp"
#include "nfuse/error.hpp"

namespace nfuse::labeling {

std::string to_string(Label label) {
  switch (label) {
    case Label::kCN: return "CN";
    case Label::kMCI: return "MCI";
    case Label::kAD: return "AD";
  }
  return "?";
}

std::optional<Label> parse_label(std::string_view text) {
  if (text == "CN") return Label::kCN;
  if (text == "MCI") return Label::kMCI;
  if (text == "AD") return Label::kAD;
  return std::nullopt;
}

std::optional<Date> parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  auto number = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    int v = 0;
    const char* first = text.data() + pos;
    const auto res = std::from_chars(first, first + len, v);
    if (res.ec != std::errc() || res.ptr != first + len) return std::nullopt;
    return v;
  };
  const auto y = number(0, 4);
  const auto m = number(5, 2);
  const auto d = number(8, 2);
  if (!y || !m || !d) return std::nullopt;
  const Date date{std::chrono::year(*y), std::chrono::month(static_cast<unsigned>(*m)),
                  std::chrono::day(static_cast<unsigned>(*d))};
  if (!date.ok()) return std::nullopt;
  return date;
}

std::string format_date(const Date& date) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

long days_between(const Date& a, const Date& b) {
  return static_cast<long>((std::chrono::sys_days(b) - std::chrono::sys_days(a)).count());
}

std::vector<EhrVisit> filter_age(std::span<const EhrVisit> visits) {
  std::vector<EhrVisit> out;
  for (const auto& v : visits) {
    if (v.age_at_scan > kMinimumAge) out.push_back(v);
  }
  return out;
}

std::vector<EhrVisit> filter_window(std::span<const EhrVisit> visits, const Date& scan_date) {
  std::vector<EhrVisit> out;
  for (const auto& v : visits) {
    if (v.diagnosis && std::labs(days_between(scan_date, v.visit_date)) <= kWindowDays) out.push_back(v);
  }
  return out;
}

std::vector<EhrVisit> enforce_temporal_consistency(std::span<const EhrVisit> visits) {
  std::vector<EhrVisit> out(visits.begin(), visits.end());
  std::optional<Label> worst;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i > 0 && out[i].visit_date < out[i - 1].visit_date) {
      fail(ErrorCategory::kArgument, "visits of patient " + out[i].patient_id + " are not in date order at " +
                                         format_date(out[i].visit_date));
    }
    if (!out[i].diagnosis) continue;
    if (!worst || *out[i].diagnosis > *worst) worst = out[i].diagnosis;
    out[i].diagnosis = worst;
  }
  return out;
}

std::optional<Label> mode_label(std::span<const Label> labels) {
  if (labels.empty()) return std::nullopt;
  std::array<std::size_t, 3> counts{};
  for (auto l : labels) ++counts[static_cast<std::size_t>(l)];
  // scan from most to least severe so ties keep the worst label
  std::size_t best = 2;
  for (std::size_t c = 2; c-- > 0;) {
    if (counts[c] > counts[best]) best = c;
  }
  return static_cast<Label>(best);
}

std::optional<Label> mode_label(std::span<const EhrVisit> visits) {
  std::vector<Label> labels;
  for (const auto& v : visits) {
    if (v.diagnosis) labels.push_back(*v.diagnosis);
  }
  return mode_label(labels);
}

LabelingResult label_dataset(std::span<const EhrVisit> visits, std::span<const Scan> scans) {
  std::map<std::string, std::vector<EhrVisit>> history;
  for (auto& v : filter_age(visits)) history[v.patient_id].push_back(std::move(v));
  for (auto& [id, hv] : history) {
    std::stable_sort(hv.begin(), hv.end(),
                     [](const EhrVisit& a, const EhrVisit& b) { return a.visit_date < b.visit_date; });
    hv = enforce_temporal_consistency(hv);
  }

  LabelingResult result;
  for (const auto& scan : scans) {
    std::optional<Label> label;
    if (const auto it = history.find(scan.patient_id); it != history.end()) {
      label = mode_label(filter_window(it->second, scan.scan_date));
    }
    if (label) {
      result.labeled.push_back({scan.patient_id, scan.session_id, scan.scan_date, *label});
    } else {
      result.excluded.push_back({scan.session_id, std::string(kNoDiagnosisReason)});
    }
  }
  return result;
}

namespace {

std::string field_or_empty(const csv::Row& row, std::size_t i) { return i < row.fields.size() ? row.fields[i] : ""; }

}  // namespace

Parsed<EhrVisit> read_ehr_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_patient = table.column("patient_id");
  const auto c_date = table.column("visit_date");
  const auto c_age = table.column("age_at_scan");
  const auto c_dx = table.column("diagnosis");
  Parsed<EhrVisit> out;
  for (const auto& row : table.rows) {
    auto bad = [&](std::string why) { out.malformed.push_back({row.line, std::move(why)}); };
    if (row.fields.size() != table.header.size()) {
      bad("expected " + std::to_string(table.header.size()) + " fields, got " + std::to_string(row.fields.size()));
      continue;
    }
    EhrVisit v;
    v.patient_id = row.fields[c_patient];
    if (v.patient_id.empty()) {
      bad("empty patient_id");
      continue;
    }
    const auto date = parse_date(row.fields[c_date]);
    if (!date) {
      bad("invalid visit_date '" + row.fields[c_date] + "'");
      continue;
    }
    v.visit_date = *date;
    const auto& age_text = row.fields[c_age];
    double age = 0;
    const auto res = std::from_chars(age_text.data(), age_text.data() + age_text.size(), age);
    if (age_text.empty() || res.ec != std::errc() || res.ptr != age_text.data() + age_text.size() ||
        !std::isfinite(age) || age < 0) {
      bad("invalid age_at_scan '" + age_text + "'");
      continue;
    }
    v.age_at_scan = age;
    const auto& dx = row.fields[c_dx];
    if (!dx.empty()) {
      v.diagnosis = parse_label(dx);
      if (!v.diagnosis) {
        bad("invalid diagnosis '" + dx + "'");
        continue;
      }
    }
    out.records.push_back(std::move(v));
  }
  return out;
}

Parsed<Scan> read_scans_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_patient = table.column("patient_id");
  const auto c_session = table.column("session_id");
  const auto c_date = table.column("scan_date");
  Parsed<Scan> out;
  for (const auto& row : table.rows) {
    const auto date = parse_date(field_or_empty(row, c_date));
    if (row.fields.size() != table.header.size() || row.fields[c_patient].empty() || row.fields[c_session].empty() ||
        !date) {
      out.malformed.push_back({row.line, "malformed scan row"});
      continue;
    }
    out.records.push_back({row.fields[c_patient], row.fields[c_session], *date});
  }
  return out;
}

void write_labeled_csv(const std::filesystem::path& path, std::span<const LabeledScan> labeled) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::kIo, "cannot write " + path.string());
  out << "patient_id,session_id,scan_date,label\n";
  for (const auto& s : labeled) {
    out << csv::join({s.patient_id, s.session_id, format_date(s.scan_date), to_string(s.label)}) << '\n';
  }
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

void write_exclusions_csv(const std::filesystem::path& path, std::span<const Exclusion> excluded) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::kIo, "cannot write " + path.string());
  out << "session_id,reason\n";
  for (const auto& e : excluded) out << csv::join({e.session_id, e.reason}) << '\n';
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

std::vector<LabeledScan> read_labeled_csv(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  const auto c_patient = table.column("patient_id");
  const auto c_session = table.column("session_id");
  const auto c_date = table.column("scan_date");
  const auto c_label = table.column("label");
  std::vector<LabeledScan> out;
  for (const auto& row : table.rows) {
    const auto where = path.string() + " line " + std::to_string(row.line);
    if (row.fields.size() != table.header.size()) fail(ErrorCategory::kFormat, where + ": wrong field count");
    const auto date = parse_date(row.fields[c_date]);
    const auto label = parse_label(row.fields[c_label]);
    if (!date) fail(ErrorCategory::kFormat, where + ": invalid scan_date");
    if (!label) fail(ErrorCategory::kFormat, where + ": invalid label '" + row.fields[c_label] + "'");
    out.push_back({row.fields[c_patient], row.fields[c_session], *date, *label});
  }
  return out;
}

}  // namespace nfuse::labeling
