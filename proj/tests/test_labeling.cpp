#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "nfuse/error.hpp"
#include "nfuse/labeling.hpp"

using namespace nfuse;
using namespace nfuse::labeling;

namespace {

Date date(const char* text) { return *parse_date(text); }

EhrVisit visit(const char* day, double age, std::optional<Label> dx, std::string patient = "P") {
  return EhrVisit{std::move(patient), date(day), age, dx};
}

std::vector<Label> labels_of(const std::vector<EhrVisit>& visits) {
  std::vector<Label> out;
  for (const auto& v : visits) out.push_back(*v.diagnosis);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr Label CN = Label::kCN;
constexpr Label MCI = Label::kMCI;
constexpr Label AD = Label::kAD;

}  // namespace

TEST_CASE("dates") {
  CHECK(parse_date("2020-02-29").has_value());
  CHECK_FALSE(parse_date("2021-02-29").has_value());
  CHECK_FALSE(parse_date("2020-13-01").has_value());
  CHECK_FALSE(parse_date("2020-1-01").has_value());
  CHECK_FALSE(parse_date("20200101xx").has_value());
  CHECK(format_date(date("2019-03-07")) == "2019-03-07");
  CHECK(days_between(date("2021-06-30"), date("2021-12-28")) == 181);
  CHECK(days_between(date("2021-06-30"), date("2021-01-01")) == -180);
}

TEST_CASE("age filter is strictly over 55") {
  const std::vector<EhrVisit> v{visit("2020-01-01", 55, CN), visit("2020-01-02", 56, CN), visit("2020-01-03", 55.5, AD)};
  const auto kept = filter_age(v);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].age_at_scan == 56);
  CHECK(kept[1].age_at_scan == 55.5);
  CHECK(filter_age(std::vector<EhrVisit>{}).empty());
}

TEST_CASE("window filter") {
  const auto scan = date("2021-06-30");
  CHECK(filter_window(std::vector<EhrVisit>{visit("2021-12-28", 70, AD)}, scan).empty());
  CHECK(filter_window(std::vector<EhrVisit>{visit("2021-12-27", 70, AD)}, scan).size() == 1);
  CHECK(filter_window(std::vector<EhrVisit>{visit("2021-01-01", 70, AD)}, scan).size() == 1);
  CHECK(filter_window(std::vector<EhrVisit>{visit("2020-12-31", 70, AD)}, scan).empty());
  CHECK(filter_window(std::vector<EhrVisit>{visit("2021-07-10", 70, std::nullopt)}, scan).empty());
}

TEST_CASE("temporal consistency") {
  auto seq = [](std::vector<Label> labels) {
    std::vector<EhrVisit> v;
    auto day = std::chrono::sys_days(date("2020-01-01"));
    for (auto l : labels) {
      v.push_back({"P", Date(day), 60, l});
      day += std::chrono::days(1);
    }
    return v;
  };
  CHECK(labels_of(enforce_temporal_consistency(seq({CN, AD, MCI, CN}))) == std::vector<Label>{CN, AD, AD, AD});
  CHECK(labels_of(enforce_temporal_consistency(seq({CN, CN, MCI}))) == std::vector<Label>{CN, CN, MCI});
  CHECK(labels_of(enforce_temporal_consistency(seq({MCI}))) == std::vector<Label>{MCI});

  SUBCASE("dates are preserved and undiagnosed visits pass through") {
    std::vector<EhrVisit> v{visit("2020-01-01", 60, MCI), visit("2020-01-02", 60, std::nullopt), visit("2020-01-02", 60, CN)};
    const auto out = enforce_temporal_consistency(v);
    CHECK_FALSE(out[1].diagnosis.has_value());
    CHECK(*out[2].diagnosis == MCI);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(out[i].visit_date == v[i].visit_date);
  }
  SUBCASE("unsorted input is rejected") {
    std::vector<EhrVisit> v{visit("2020-02-01", 60, CN), visit("2020-01-01", 60, AD)};
    CHECK_THROWS_AS(enforce_temporal_consistency(v), Error);
  }
}

TEST_CASE("temporal consistency properties on random sequences") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_int_distribution<int> cls(0, 3);  // 3 = undiagnosed
  std::uniform_int_distribution<int> gap(0, 40);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<EhrVisit> v;
    auto day = std::chrono::sys_days(date("2015-01-01"));
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      day += std::chrono::days(gap(rng));
      const int c = cls(rng);
      v.push_back({"P", Date(day), 70, c == 3 ? std::nullopt : std::optional<Label>(static_cast<Label>(c))});
    }
    const auto once = enforce_temporal_consistency(v);
    const auto twice = enforce_temporal_consistency(once);
    std::optional<Label> prev;
    for (std::size_t i = 0; i < once.size(); ++i) {
      REQUIRE(once[i].visit_date == v[i].visit_date);
      REQUIRE(once[i].diagnosis.has_value() == v[i].diagnosis.has_value());
      REQUIRE(twice[i].diagnosis == once[i].diagnosis);
      if (!once[i].diagnosis) continue;
      REQUIRE(*once[i].diagnosis >= *v[i].diagnosis);
      if (prev) REQUIRE(*once[i].diagnosis >= *prev);
      prev = once[i].diagnosis;
    }
  }
}

TEST_CASE("mode label") {
  CHECK(*mode_label(std::vector<Label>{CN, CN, MCI}) == CN);
  CHECK(*mode_label(std::vector<Label>{MCI, AD}) == AD);
  CHECK(*mode_label(std::vector<Label>{CN, CN, AD, AD, MCI}) == AD);
  CHECK(*mode_label(std::vector<Label>{CN, MCI}) == MCI);
  CHECK_FALSE(mode_label(std::vector<Label>{}).has_value());

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cls(0, 2);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Label> labels(1 + trial % 9);
    for (auto& l : labels) l = static_cast<Label>(cls(rng));
    const auto m = mode_label(labels);
    std::shuffle(labels.begin(), labels.end(), rng);
    REQUIRE(mode_label(labels) == m);
  }
}

TEST_CASE("golden fixture") {
  const auto ehr = read_ehr_csv("data/labeling/ehr.csv");
  const auto scans = read_scans_csv("data/labeling/scans.csv");
  REQUIRE(ehr.malformed.size() == 1);
  CHECK(ehr.malformed[0].line == 19);
  CHECK(ehr.malformed[0].reason.find("visit_date") != std::string::npos);
  REQUIRE(scans.malformed.empty());

  const auto result = label_dataset(ehr.records, scans.records);
  CHECK(result.labeled.size() + result.excluded.size() == scans.records.size());

  const auto dir = std::filesystem::temp_directory_path() / "nfuse_test_labeling";
  std::filesystem::create_directories(dir);
  write_labeled_csv(dir / "labeled.csv", result.labeled);
  write_exclusions_csv(dir / "excluded.csv", result.excluded);
  CHECK(slurp(dir / "labeled.csv") == slurp("data/labeling/expected_labeled.csv"));
  CHECK(slurp(dir / "excluded.csv") == slurp("data/labeling/expected_exclusions.csv"));

  const auto back = read_labeled_csv(dir / "labeled.csv");
  REQUIRE(back.size() == result.labeled.size());
  CHECK(back[3].label == AD);

  const auto again = label_dataset(ehr.records, scans.records);
  write_labeled_csv(dir / "again.csv", again.labeled);
  CHECK(slurp(dir / "again.csv") == slurp(dir / "labeled.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty EHR excludes every scan") {
  const auto scans = read_scans_csv("data/labeling/scans.csv");
  const auto result = label_dataset(std::vector<EhrVisit>{}, scans.records);
  CHECK(result.labeled.empty());
  CHECK(result.excluded.size() == scans.records.size());
}

TEST_CASE("malformed EHR rows are reported, not dropped") {
  const auto path = std::filesystem::temp_directory_path() / "nfuse_test_ehr.csv";
  {
    std::ofstream out(path);
    out << "patient_id,visit_date,age_at_scan,diagnosis\n"
        << "A,2020-01-01,60,CN\n"
        << "B,2020-01-01,sixty,CN\n"
        << "C,2020-01-01,60,XX\n"
        << "D,2020-01-01,60\n"
        << ",2020-01-01,60,CN\n"
        << "E,2020-01-01,-1,CN\n";
  }
  const auto parsed = read_ehr_csv(path);
  CHECK(parsed.records.size() == 1);
  CHECK(parsed.malformed.size() == 5);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_ehr_csv(path), Error);
}
