#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "nfuse/data.hpp"
#include "nfuse/error.hpp"
#include "nfuse/metrics.hpp"

using namespace nfuse;
using namespace nfuse::data;
using labeling::Label;

namespace {

Volume random_volume(Extents e, std::uint64_t seed) {
  Volume v(Modality::kT1, e);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& x : v.voxels()) x = u(rng);
  return v;
}

double sum_of(const Volume& v) {
  double s = 0;
  for (float x : v.voxels()) s += x;
  return s;
}

// Direct triple sum over the reflected neighbourhood.
double brute_blur_at(const Volume& v, double sigma, std::size_t i, std::size_t j, std::size_t k) {
  const long r = static_cast<long>(std::ceil(3 * sigma));
  auto refl = [](long x, long n) {
    while (x < 0 || x >= n) x = x < 0 ? -x - 1 : 2 * n - x - 1;
    return static_cast<std::size_t>(x);
  };
  std::vector<double> w(2 * r + 1);
  double ws = 0;
  for (long t = -r; t <= r; ++t) ws += w[t + r] = std::exp(-double(t * t) / (2 * sigma * sigma));
  double acc = 0;
  const auto& e = v.extents();
  for (long a = -r; a <= r; ++a)
    for (long b = -r; b <= r; ++b)
      for (long c = -r; c <= r; ++c)
        acc += w[a + r] * w[b + r] * w[c + r] / (ws * ws * ws) *
               v.at(refl(long(i) + a, long(e[0])), refl(long(j) + b, long(e[1])), refl(long(k) + c, long(e[2])));
  return acc;
}

std::filesystem::path temp_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("blur with sigma 0 is an exact copy") {
  const auto v = random_volume({7, 9, 5}, 1);
  CHECK(gaussian_blur(v, 0.0) == v);
  CHECK_THROWS_AS(gaussian_blur(v, -0.1), Error);
  CHECK_THROWS_AS(gaussian_blur(v, std::nan("")), Error);
}

TEST_CASE("blur matches a direct triple sum") {
  const auto v = random_volume({9, 11, 8}, 2);
  for (double sigma : {0.4, 1.0, 1.5}) {
    const auto b = gaussian_blur(v, sigma);
    double worst = 0;
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 11; ++j)
        for (std::size_t k = 0; k < 8; ++k) worst = std::max(worst, std::abs(b.at(i, j, k) - brute_blur_at(v, sigma, i, j, k)));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("blur preserves constants and mass") {
  const Volume c(Modality::kFlair, {10, 12, 9}, 0.37f);
  for (float x : gaussian_blur(c, 1.5).voxels()) REQUIRE(std::abs(x - 0.37f) < 1e-6);

  Volume impulse(Modality::kT1, {21, 21, 21});
  impulse.at(10, 10, 10) = 1.0f;
  const auto b = gaussian_blur(impulse, 1.0);
  CHECK(std::abs(sum_of(b) - 1.0) < 1e-5);
  CHECK(*std::max_element(b.voxels().begin(), b.voxels().end()) == b.at(10, 10, 10));
  CHECK(b.at(9, 10, 10) == doctest::Approx(b.at(11, 10, 10)).epsilon(1e-6));

  // mirrored borders keep the mean even when the support crosses the edge
  const auto v = random_volume({6, 8, 7}, 3);
  CHECK(std::abs(sum_of(gaussian_blur(v, 1.5)) - sum_of(v)) / sum_of(v) < 1e-5);
}

TEST_CASE("crops") {
  const auto v = random_volume(kPreprocessedExtents, 4);
  const auto c = center_crop(v);
  CHECK(c.extents() == Extents{96, 96, 96});
  CHECK(c.at(0, 0, 0) == v.at(12, 24, 12));
  CHECK(c.at(95, 95, 95) == v.at(107, 119, 107));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = draw_augmentation(v.extents(), seed);
    CHECK(a.sigma >= 0.0);
    CHECK(a.sigma <= 1.5);
    for (std::size_t ax = 0; ax < 3; ++ax) CHECK(a.offset[ax] <= v.extents()[ax] - 96);
    const auto r = random_crop(v, 96, seed);
    const auto o = draw_augmentation(v.extents(), seed, 0.0).offset;
    CHECK(r.at(5, 17, 90) == v.at(o[0] + 5, o[1] + 17, o[2] + 90));
  }

  const auto exact = random_volume({96, 96, 96}, 5);
  CHECK(center_crop(exact) == exact);
  CHECK(random_crop(exact, 96, 9) == exact);
  CHECK_THROWS_AS(center_crop(random_volume({95, 100, 100}, 6)), Error);
  CHECK_THROWS_AS(crop_at(exact, 10, {90, 0, 0}), Error);
}

TEST_CASE("prepare_input") {
  auto v = random_volume(kPreprocessedExtents, 7);
  for (auto& x : v.voxels()) x = 3 * x - 1;
  const auto t = prepare_input(v, std::nullopt);
  CHECK(t.shape() == Shape{1, 1, 96, 96, 96});
  const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
  CHECK(*lo >= 0.0f);
  CHECK(*hi <= 1.0f);
  const auto n = min_max_normalize(v);
  CHECK(t.data()[0] == n.at(12, 24, 12));

  const auto aug = draw_augmentation(v.extents(), 11);
  const auto a1 = prepare_input(v, aug);
  const auto a2 = prepare_input(v, aug);
  CHECK(std::equal(a1.data().begin(), a1.data().end(), a2.data().begin()));

  const Volume flat(Modality::kT1, {96, 96, 96}, 4.0f);
  for (float x : prepare_input(flat, std::nullopt).data()) REQUIRE(x == 0.0f);
}

TEST_CASE("split sizes and patient-level assignment") {
  CHECK(split_sizes(20, {0.7, 0.15, 0.15}) == std::array<std::size_t, 3>{14, 3, 3});
  CHECK(split_sizes(30, {0.7, 0.15, 0.15}) == std::array<std::size_t, 3>{21, 5, 4});
  CHECK(split_sizes(3, {0.7, 0.15, 0.15}) == std::array<std::size_t, 3>{1, 1, 1});
  CHECK_THROWS_AS(split_sizes(2, {0.7, 0.15, 0.15}), Error);

  std::vector<PatientRecord> patients;
  for (int i = 0; i < 20; ++i) patients.push_back({"p" + std::to_string(i), static_cast<Label>(i % 3)});
  const auto s = patient_split(patients, {0.7, 0.15, 0.15}, 42);
  REQUIRE(s.size() == 20);
  std::array<std::size_t, 3> count{};
  std::array<std::set<Label>, 3> classes;
  for (const auto& p : patients) {
    const auto which = static_cast<std::size_t>(s.at(p.patient_id));
    ++count[which];
    classes[which].insert(*p.worst_label);
  }
  CHECK(count == std::array<std::size_t, 3>{14, 3, 3});
  for (const auto& c : classes) CHECK(c.size() == 3);

  auto shuffled = patients;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(patient_split(shuffled, {0.7, 0.15, 0.15}, 42) == s);
  CHECK(patient_split(patients, {0.7, 0.15, 0.15}, 43) != s);

  patients.push_back(patients.front());
  CHECK_THROWS_AS(patient_split(patients, {0.7, 0.15, 0.15}, 42), Error);
}

TEST_CASE("sessions of a patient never straddle splits") {
  std::vector<Sample> samples;
  for (int p = 0; p < 12; ++p) {
    for (int s = 0; s < 3; ++s) {
      samples.push_back({"p" + std::to_string(p), "p" + std::to_string(p) + "_" + std::to_string(s),
                         *labeling::parse_date("2020-01-01"), static_cast<Label>((p + s) % 3), "a", "b"});
    }
  }
  const auto patients = patients_of(samples);
  REQUIRE(patients.size() == 12);
  CHECK(*patients[0].worst_label == Label::kAD);
  const auto split = patient_split(patients, {0.7, 0.15, 0.15}, 3);
  std::set<std::string> seen;
  std::size_t total = 0;
  for (auto which : {Split::kTrain, Split::kValidation, Split::kTest}) {
    std::set<std::string> mine;
    for (const auto& s : select(samples, split, which)) mine.insert(s.patient_id), ++total;
    for (const auto& id : mine) CHECK(seen.insert(id).second);
  }
  CHECK(total == samples.size());
}

TEST_CASE("volume and manifest files round trip") {
  const auto dir = temp_dir("nfuse_test_data_io");
  const auto v = random_volume({5, 6, 7}, 8);
  write_volume(dir / "v.nfv", v);
  CHECK(read_volume(dir / "v.nfv") == v);
  {
    std::ofstream(dir / "bad.nfv", std::ios::binary) << "NFVOL1";
  }
  CHECK_THROWS_AS(read_volume(dir / "bad.nfv"), Error);
  CHECK_THROWS_AS(read_volume(dir / "missing.nfv"), Error);

  const std::vector<ManifestRow> rows{{"a", "a_1", *labeling::parse_date("2020-05-06"), "vol/a_t1.nfv", "/abs/a_fl.nfv"}};
  write_manifest(dir / "manifest.csv", rows);
  const auto back = read_manifest(dir / "manifest.csv");
  REQUIRE(back.size() == 1);
  CHECK(back[0].t1_path == (dir / "vol/a_t1.nfv").string());
  CHECK(back[0].flair_path == "/abs/a_fl.nfv");

  const SplitAssignment split{{"a", Split::kTest}, {"b", Split::kTrain}};
  write_split_csv(dir / "split.csv", split);
  CHECK(read_split_csv(dir / "split.csv") == split);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic cohort") {
  SyntheticConfig config;
  const auto sessions = synthetic_sessions(config);
  REQUIRE(sessions.size() == 30);
  std::array<int, 3> per_class{};
  for (const auto& s : sessions) ++per_class[static_cast<std::size_t>(s.label)];
  CHECK(per_class == std::array<int, 3>{10, 10, 10});
  CHECK(sessions[0].session_id == "sub-001_ses-1");

  config.class_balance = {1, 0, 1};
  CHECK_THROWS_AS(synthetic_sessions(config), Error);
  config.require_all_classes = false;
  CHECK(synthetic_sessions(config).size() == 30);

  SUBCASE("EHR reproduces the ground truth through the labeling rules") {
    SyntheticConfig multi;
    multi.n_patients = 16;
    multi.sessions_per_patient = 2;
    const auto s2 = synthetic_sessions(multi);
    std::vector<labeling::Scan> scans;
    for (const auto& s : s2) scans.push_back({s.patient_id, s.session_id, s.scan_date});
    const auto result = labeling::label_dataset(synthetic_ehr(s2), scans);
    REQUIRE(result.excluded.empty());
    REQUIRE(result.labeled.size() == s2.size());
    for (std::size_t i = 0; i < s2.size(); ++i) CHECK(result.labeled[i].label == s2[i].label);

    // the decoy visits matter: without the age filter some labels change
    auto visits = synthetic_ehr(s2);
    for (auto& v : visits) v.age_at_scan = std::max(v.age_at_scan, 60.0);
    const auto unfiltered = labeling::label_dataset(visits, scans);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < s2.size(); ++i) changed += unfiltered.labeled[i].label != s2[i].label;
    CHECK(changed > 0);
  }
}

TEST_CASE("synthetic volumes are deterministic and learnable") {
  SyntheticConfig config;
  config.n_patients = 18;
  const auto sessions = synthetic_sessions(config);
  const auto a = synthesize_session(config, sessions[0]);
  const auto b = synthesize_session(config, sessions[0]);
  CHECK(a.t1 == b.t1);
  CHECK(a.flair == b.flair);
  CHECK(a.t1.extents() == kPreprocessedExtents);
  CHECK(a.flair.modality() == Modality::kFlair);
  CHECK_FALSE(a.t1.voxels()[0] == synthesize_session(config, sessions[1]).t1.voxels()[0]);

  // Two simple intensity features and a leave-one-out nearest-centroid
  // classifier: if this cannot separate the classes, no network will.
  std::vector<std::array<double, 2>> features;
  std::vector<int> truth;
  for (const auto& s : sessions) {
    const auto pair = synthesize_session(config, s);
    const auto t1 = center_crop(min_max_normalize(pair.t1), 32);
    const auto fl = min_max_normalize(pair.flair);
    double mean = 0;
    for (float x : t1.voxels()) mean += x;
    double bright = 0;
    for (float x : fl.voxels()) bright += x > 0.8f;
    features.push_back({mean / static_cast<double>(t1.size()), bright});
    truth.push_back(labeling::class_index(s.label));
  }
  std::array<double, 2> scale{};
  for (std::size_t f = 0; f < 2; ++f) {
    double m = 0, m2 = 0;
    for (const auto& x : features) m += x[f], m2 += x[f] * x[f];
    m /= features.size();
    scale[f] = std::sqrt(std::max(m2 / features.size() - m * m, 1e-12));
  }
  metrics::PredictionSet preds;
  for (std::size_t i = 0; i < features.size(); ++i) {
    std::array<std::array<double, 2>, 3> centroid{};
    std::array<int, 3> n{};
    for (std::size_t j = 0; j < features.size(); ++j) {
      if (j == i) continue;
      for (std::size_t f = 0; f < 2; ++f) centroid[truth[j]][f] += features[j][f];
      ++n[truth[j]];
    }
    metrics::ProbabilityRow row{};
    double z = 0;
    for (int c = 0; c < 3; ++c) {
      double d2 = 0;
      for (std::size_t f = 0; f < 2; ++f) d2 += std::pow((features[i][f] - centroid[c][f] / n[c]) / scale[f], 2);
      z += row[c] = std::exp(-d2);
    }
    for (auto& p : row) p /= z;
    preds.rows.push_back(row);
    preds.truth.push_back(truth[i]);
  }
  const auto micro = metrics::auc_micro(preds);
  REQUIRE(micro.has_value());
  MESSAGE("leave-one-out micro-AUC " << *micro);
  CHECK(*micro > 0.7);
}
