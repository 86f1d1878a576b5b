#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nfuse/labeling.hpp"
#include "nfuse/tensor.hpp"

namespace nfuse::data {

enum class Modality : std::uint8_t { kT1 = 0, kFlair = 1 };

std::string to_string(Modality m);  // "t1" / "flair"
std::optional<Modality> parse_modality(std::string_view text);

using Extents = std::array<std::size_t, 3>;  // sagittal, coronal, axial

inline constexpr Extents kPreprocessedExtents = {121, 145, 121};
inline constexpr std::size_t kCropSize = 96;

// Row-major voxel grid: index (i * e[1] + j) * e[2] + k.
class Volume {
 public:
  Volume() = default;
  Volume(Modality modality, Extents extents, float fill = 0.0f);
  Volume(Modality modality, Extents extents, std::vector<float> voxels);

  Modality modality() const { return modality_; }
  const Extents& extents() const { return extents_; }
  std::size_t size() const { return voxels_.size(); }
  std::span<const float> voxels() const { return voxels_; }
  std::span<float> voxels() { return voxels_; }

  float at(std::size_t i, std::size_t j, std::size_t k) const { return voxels_[(i * extents_[1] + j) * extents_[2] + k]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) { return voxels_[(i * extents_[1] + j) * extents_[2] + k]; }

  bool operator==(const Volume&) const = default;

 private:
  Modality modality_ = Modality::kT1;
  Extents extents_{0, 0, 0};
  std::vector<float> voxels_;
};

// Separable Gaussian, radius ceil(3 sigma), weights normalized to 1, borders
// mirrored with the edge voxel repeated (d c b a | a b c d), which keeps the
// volume's total mass. sigma = 0 returns an exact copy.
Volume gaussian_blur(const Volume& vol, double sigma);

// Offsets uniform in [0, extent - size] per axis.
Volume random_crop(const Volume& vol, std::size_t size, std::uint64_t seed);
Volume center_crop(const Volume& vol, std::size_t size = kCropSize);
Volume crop_at(const Volume& vol, std::size_t size, const Extents& offset);

// Affine map of the voxel range onto [0,1]; a constant volume becomes zeros.
Volume min_max_normalize(const Volume& vol);

// Network input [1,1,96,96,96] from a preprocessed volume: min-max normalize,
// then blur and random crop when augmenting, center crop otherwise.
struct Augmentation {
  double sigma = 0.0;
  Extents offset{0, 0, 0};
};
Augmentation draw_augmentation(const Extents& extents, std::uint64_t seed, double max_sigma = 1.5,
                               std::size_t crop = kCropSize);
Tensor prepare_input(const Volume& vol, const std::optional<Augmentation>& augmentation, std::size_t crop = kCropSize);

// Deterministic 64-bit mixing for derived seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// ---- synthetic data ----

struct SyntheticConfig {
  std::size_t n_patients = 30;
  std::size_t sessions_per_patient = 1;
  std::array<double, 3> class_balance = {1.0, 1.0, 1.0};  // relative CN / MCI / AD weights
  std::uint64_t seed = 1;
  Extents extents = kPreprocessedExtents;
  bool require_all_classes = true;
};

struct SessionInfo {
  std::string patient_id;
  std::string session_id;
  labeling::Date scan_date;
  double age = 0.0;
  labeling::Label label = labeling::Label::kCN;
  std::size_t patient_index = 0;
  std::size_t session_index = 0;
};

// Patients, sessions and ground-truth labels; per-class patient counts follow
// the balance by largest-remainder rounding.
std::vector<SessionInfo> synthetic_sessions(const SyntheticConfig& config);

struct VolumePair {
  Volume t1;
  Volume flair;
};

// Volumes of one session. Pure function of the config and the session; the
// two modalities share the same anatomy.
VolumePair synthesize_session(const SyntheticConfig& config, const SessionInfo& session);

// EHR visits consistent with the ground truth once the labeling rules are
// applied (includes rows the age filter must drop).
std::vector<labeling::EhrVisit> synthetic_ehr(const std::vector<SessionInfo>& sessions);

// ---- splits ----

enum class Split { kTrain = 0, kValidation = 1, kTest = 2 };

std::string to_string(Split s);  // "train" / "validation" / "test"
std::optional<Split> parse_split(std::string_view text);

struct PatientRecord {
  std::string patient_id;
  std::optional<labeling::Label> worst_label;
};

using SplitAssignment = std::map<std::string, Split>;

// Largest-remainder split sizes. With stratification, patients are shuffled
// within their worst-label group and interleaved across groups before being
// dealt into contiguous train / validation / test blocks, so every block gets
// a proportional class mix. Every split receives at least one patient.
SplitAssignment patient_split(std::span<const PatientRecord> patients, std::array<double, 3> fractions,
                              std::uint64_t seed, bool stratify_by_label = true);
std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> fractions);

// ---- files ----

// "NFVOL1", modality byte, three u32 extents, f32 voxels, little-endian.
void write_volume(const std::filesystem::path& path, const Volume& vol);
Volume read_volume(const std::filesystem::path& path);

struct ManifestRow {
  std::string patient_id;
  std::string session_id;
  labeling::Date scan_date;
  std::string t1_path;
  std::string flair_path;
};

// Paths are written as given; readers resolve relative paths against the
// manifest's directory.
void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

void write_split_csv(const std::filesystem::path& path, const SplitAssignment& split);
SplitAssignment read_split_csv(const std::filesystem::path& path);

// A labeled scan with resolved volume paths: the join of the labeling output
// and the dataset manifest.
struct Sample {
  std::string patient_id;
  std::string session_id;
  labeling::Date scan_date;
  labeling::Label label = labeling::Label::kCN;
  std::filesystem::path t1_path;
  std::filesystem::path flair_path;

  const std::filesystem::path& path(Modality m) const { return m == Modality::kT1 ? t1_path : flair_path; }
};

// Labeled manifest: patient_id, session_id, scan_date, label, t1_path, flair_path.
void write_labeled_manifest(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> read_labeled_manifest(const std::filesystem::path& path);

std::vector<PatientRecord> patients_of(std::span<const Sample> samples);
std::vector<Sample> select(std::span<const Sample> samples, const SplitAssignment& split, Split which);

}  // namespace nfuse::data
