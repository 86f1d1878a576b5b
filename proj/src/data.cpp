#include "nfuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "nfuse/binary_io.hpp"
#include "nfuse/csv.hpp"
#include "nfuse/error.hpp"

namespace nfuse::data {

using labeling::Label;

std::string to_string(Modality m) { return m == Modality::kT1 ? "t1" : "flair"; }

std::optional<Modality> parse_modality(std::string_view text) {
  if (text == "t1") return Modality::kT1;
  if (text == "flair") return Modality::kFlair;
  return std::nullopt;
}

namespace {

std::size_t extents_volume(const Extents& e) { return e[0] * e[1] * e[2]; }

std::string extents_text(const Extents& e) {
  return std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]);
}

}  // namespace

Volume::Volume(Modality modality, Extents extents, float fill)
    : Volume(modality, extents, std::vector<float>(extents_volume(extents), fill)) {}

Volume::Volume(Modality modality, Extents extents, std::vector<float> voxels)
    : modality_(modality), extents_(extents), voxels_(std::move(voxels)) {
  for (auto e : extents_) {
    if (e == 0) fail(ErrorCategory::kShape, "volume extents must be positive, got " + extents_text(extents_));
  }
  if (voxels_.size() != extents_volume(extents_)) {
    fail(ErrorCategory::kShape, "volume " + extents_text(extents_) + " needs " + std::to_string(extents_volume(extents_)) +
                                    " voxels, got " + std::to_string(voxels_.size()));
  }
}

// ---- augmentation ----

namespace {

// Half-sample symmetric reflection with period 2n.
std::size_t reflect(long idx, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = idx % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

std::vector<float> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> w(2 * radius + 1);
  double sum = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(radius);
    w[i] = std::exp(-x * x / (2 * sigma * sigma));
    sum += w[i];
  }
  std::vector<float> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i] / sum);
  return out;
}

// Convolves every line along `axis` in place.
void blur_axis(std::vector<float>& v, const Extents& e, std::size_t axis, const std::vector<float>& kernel) {
  const std::size_t n = e[axis];
  const long radius = static_cast<long>(kernel.size() / 2);
  std::size_t stride = 1;
  for (std::size_t a = axis + 1; a < 3; ++a) stride *= e[a];
  const std::size_t lines = v.size() / n;
  std::vector<float> line(n), out(n);
  std::vector<std::size_t> src(n * kernel.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < kernel.size(); ++t) {
      src[i * kernel.size() + t] = reflect(static_cast<long>(i) + static_cast<long>(t) - radius, n);
    }
  }
  for (std::size_t l = 0; l < lines; ++l) {
    // line l: outer index (above axis) and inner offset (below axis)
    const std::size_t outer = l / stride;
    const std::size_t inner = l % stride;
    const std::size_t base = outer * n * stride + inner;
    for (std::size_t i = 0; i < n; ++i) line[i] = v[base + i * stride];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t* s = src.data() + i * kernel.size();
      float acc = 0;
      for (std::size_t t = 0; t < kernel.size(); ++t) acc += kernel[t] * line[s[t]];
      out[i] = acc;
    }
    for (std::size_t i = 0; i < n; ++i) v[base + i * stride] = out[i];
  }
}

}  // namespace

Volume gaussian_blur(const Volume& vol, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    fail(ErrorCategory::kArgument, "blur sigma must be non-negative, got " + std::to_string(sigma));
  }
  if (sigma == 0.0) return vol;
  const auto kernel = gaussian_kernel(sigma);
  std::vector<float> v(vol.voxels().begin(), vol.voxels().end());
  for (std::size_t axis = 0; axis < 3; ++axis) blur_axis(v, vol.extents(), axis, kernel);
  return Volume(vol.modality(), vol.extents(), std::move(v));
}

Volume crop_at(const Volume& vol, std::size_t size, const Extents& offset) {
  const auto& e = vol.extents();
  for (std::size_t a = 0; a < 3; ++a) {
    if (e[a] < size) {
      fail(ErrorCategory::kShape, "cannot crop " + std::to_string(size) + "^3 from a " + extents_text(e) + " volume");
    }
    if (offset[a] > e[a] - size) fail(ErrorCategory::kArgument, "crop offset outside the volume");
  }
  Volume out(vol.modality(), {size, size, size});
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const auto& e_in = vol.extents();
      const float* src = vol.voxels().data() + ((offset[0] + i) * e_in[1] + offset[1] + j) * e_in[2] + offset[2];
      std::copy(src, src + size, &out.at(i, j, 0));
    }
  }
  return out;
}

Volume random_crop(const Volume& vol, std::size_t size, std::uint64_t seed) {
  return crop_at(vol, size, draw_augmentation(vol.extents(), seed, 0.0, size).offset);
}

Volume center_crop(const Volume& vol, std::size_t size) {
  Extents offset{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (vol.extents()[a] < size) {
      fail(ErrorCategory::kShape, "cannot crop " + std::to_string(size) + "^3 from a " + extents_text(vol.extents()) +
                                      " volume");
    }
    offset[a] = (vol.extents()[a] - size) / 2;
  }
  return crop_at(vol, size, offset);
}

Volume min_max_normalize(const Volume& vol) {
  const auto v = vol.voxels();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<float> out(v.size(), 0.0f);
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (range > 0) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - static_cast<double>(*lo)) / range);
  }
  return Volume(vol.modality(), vol.extents(), std::move(out));
}

Augmentation draw_augmentation(const Extents& extents, std::uint64_t seed, double max_sigma, std::size_t crop) {
  std::mt19937_64 rng(seed);
  Augmentation a;
  a.sigma = max_sigma > 0 ? std::uniform_real_distribution<double>(0.0, max_sigma)(rng) : 0.0;
  for (std::size_t axis = 0; axis < 3; ++axis) {
    if (extents[axis] < crop) {
      fail(ErrorCategory::kShape, "cannot crop " + std::to_string(crop) + "^3 from a " + extents_text(extents) + " volume");
    }
    a.offset[axis] = std::uniform_int_distribution<std::size_t>(0, extents[axis] - crop)(rng);
  }
  return a;
}

Tensor prepare_input(const Volume& vol, const std::optional<Augmentation>& augmentation, std::size_t crop) {
  auto v = min_max_normalize(vol);
  Volume cropped = augmentation ? crop_at(gaussian_blur(v, augmentation->sigma), crop, augmentation->offset)
                                : center_crop(v, crop);
  return Tensor(Shape{1, 1, crop, crop, crop}, std::vector<float>(cropped.voxels().begin(), cropped.voxels().end()));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

// ---- synthetic data ----

namespace {

std::array<std::size_t, 3> largest_remainder(std::size_t n, std::array<double, 3> weights) {
  const double total = weights[0] + weights[1] + weights[2];
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * weights[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b] + 1e-12; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

labeling::Date add_days(const labeling::Date& d, long days) {
  return labeling::Date(std::chrono::sys_days(d) + std::chrono::days(days));
}

enum Tissue : std::uint8_t { kBackground, kGray, kWhite, kCsf, kHippocampus, kLesion };

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;

  bool contains(double x, double y, double z) const {
    const double dx = (x - center[0]) / radii[0];
    const double dy = (y - center[1]) / radii[1];
    const double dz = (z - center[2]) / radii[2];
    return dx * dx + dy * dy + dz * dz <= 1.0;
  }
};

struct Anatomy {
  Ellipsoid brain, white;
  std::vector<Ellipsoid> ventricles, hippocampi, lesions;
};

Anatomy patient_anatomy(const SyntheticConfig& config, const SessionInfo& s) {
  std::mt19937_64 rng(derive_seed(config.seed, 0xA11A, s.patient_index));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const auto cls = static_cast<std::size_t>(s.label);
  // ventricle radius, brain shrinkage and hippocampal scale grow with severity
  constexpr double kVentricle[3] = {6.0, 8.0, 10.5};
  constexpr double kAtrophy[3] = {0.0, 0.03, 0.06};
  constexpr double kHippocampus[3] = {1.0, 0.85, 0.7};
  constexpr int kLesionsMin[3] = {0, 2, 5};
  constexpr int kLesionsMax[3] = {2, 5, 9};

  const auto& e = config.extents;
  const std::array<double, 3> c{(e[0] - 1) / 2.0 + 2 * unit(rng), (e[1] - 1) / 2.0 + 2 * unit(rng),
                                (e[2] - 1) / 2.0 + 2 * unit(rng)};
  const double shrink = 1.0 - kAtrophy[cls] - 0.015 * unit(rng);
  const double scale = std::min({e[0] / 121.0, e[1] / 145.0, e[2] / 121.0});
  Anatomy a;
  a.brain = {c, {50 * scale * shrink, 62 * scale * shrink, 48 * scale * shrink}};
  a.white = {c, {35 * scale * shrink, 45 * scale * shrink, 32 * scale * shrink}};
  const double rv = (kVentricle[cls] + 1.5 * unit(rng)) * scale;
  for (double side : {-1.0, 1.0}) {
    a.ventricles.push_back({{c[0] + side * 7 * scale, c[1], c[2] + 4 * scale}, {rv, 2.2 * rv, 1.3 * rv}});
    const double h = (kHippocampus[cls] + 0.08 * unit(rng)) * scale;
    a.hippocampi.push_back({{c[0] + side * 22 * scale, c[1] - 10 * scale, c[2] - 14 * scale}, {5 * h, 9 * h, 5 * h}});
  }
  const int n_lesions = std::uniform_int_distribution<int>(kLesionsMin[cls], kLesionsMax[cls])(rng);
  for (int i = 0; i < n_lesions; ++i) {
    const std::array<double, 3> p{c[0] + 0.6 * a.white.radii[0] * unit(rng), c[1] + 0.6 * a.white.radii[1] * unit(rng),
                                  c[2] + 0.6 * a.white.radii[2] * unit(rng)};
    const double r = (2.0 + 1.5 * (unit(rng) + 1) / 2) * scale;
    a.lesions.push_back({p, {r, r, r}});
  }
  return a;
}

Tissue tissue_at(const Anatomy& a, double x, double y, double z) {
  if (!a.brain.contains(x, y, z)) return kBackground;
  for (const auto& v : a.ventricles) {
    if (v.contains(x, y, z)) return kCsf;
  }
  for (const auto& h : a.hippocampi) {
    if (h.contains(x, y, z)) return kHippocampus;
  }
  for (const auto& l : a.lesions) {
    if (l.contains(x, y, z)) return kLesion;
  }
  return a.white.contains(x, y, z) ? kWhite : kGray;
}

// Approximately standard normal from the 64 bits of a hash (sum of four
// 16-bit uniforms, rescaled to unit variance).
float hashed_normal(std::uint64_t h) {
  double sum = 0;
  for (int i = 0; i < 4; ++i) sum += static_cast<double>((h >> (16 * i)) & 0xffff) / 65536.0;
  return static_cast<float>((sum - 2.0) * std::sqrt(3.0));
}

}  // namespace

std::vector<SessionInfo> synthetic_sessions(const SyntheticConfig& config) {
  if (config.n_patients < 3) fail(ErrorCategory::kArgument, "synthetic dataset needs at least 3 patients");
  if (config.sessions_per_patient == 0) fail(ErrorCategory::kArgument, "sessions per patient must be positive");
  double total = 0;
  for (double w : config.class_balance) {
    if (!(w >= 0) || !std::isfinite(w)) fail(ErrorCategory::kArgument, "class balance weights must be non-negative");
    total += w;
  }
  if (total <= 0) fail(ErrorCategory::kArgument, "class balance must have a positive weight");
  const auto counts = largest_remainder(config.n_patients, config.class_balance);
  if (config.require_all_classes) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (counts[c] == 0) {
        fail(ErrorCategory::kArgument, "class balance leaves class " + labeling::to_string(static_cast<Label>(c)) +
                                           " without patients");
      }
    }
  }
  std::vector<Label> labels;
  for (std::size_t c = 0; c < 3; ++c) labels.insert(labels.end(), counts[c], static_cast<Label>(c));
  std::mt19937_64 rng(derive_seed(config.seed, 0x1AB));
  std::shuffle(labels.begin(), labels.end(), rng);

  const auto base = *labeling::parse_date("2016-01-04");
  std::vector<SessionInfo> out;
  for (std::size_t p = 0; p < config.n_patients; ++p) {
    char pid[32];
    std::snprintf(pid, sizeof(pid), "sub-%03zu", p + 1);
    for (std::size_t s = 0; s < config.sessions_per_patient; ++s) {
      SessionInfo info;
      info.patient_id = pid;
      info.session_id = info.patient_id + "_ses-" + std::to_string(s + 1);
      info.scan_date = add_days(base, static_cast<long>(p * 23 + s * 365));
      info.age = 58.0 + static_cast<double>((p * 7) % 27 + s);
      info.label = labels[p];
      info.patient_index = p;
      info.session_index = s;
      out.push_back(std::move(info));
    }
  }
  return out;
}

VolumePair synthesize_session(const SyntheticConfig& config, const SessionInfo& session) {
  const auto anatomy = patient_anatomy(config, session);
  // T1: bright white matter, dark CSF. FLAIR: suppressed but less distinct
  // CSF, bright lesions, stronger noise.
  constexpr float kT1[] = {0.02f, 0.55f, 0.80f, 0.12f, 0.60f, 0.70f};
  constexpr float kFlair[] = {0.02f, 0.60f, 0.50f, 0.35f, 0.62f, 0.95f};
  constexpr float kT1Noise = 0.04f;
  constexpr float kFlairNoise = 0.08f;

  const auto& e = config.extents;
  const std::uint64_t noise_seed = derive_seed(config.seed, session.patient_index, session.session_index + 1);
  std::mt19937_64 rng(derive_seed(noise_seed, 0x5CA1E));
  std::uniform_real_distribution<double> gain(0.9, 1.1);
  const auto t1_gain = static_cast<float>(gain(rng));
  const auto fl_gain = static_cast<float>(gain(rng));

  VolumePair pair{Volume(Modality::kT1, e), Volume(Modality::kFlair, e)};
  auto t1 = pair.t1.voxels();
  auto fl = pair.flair.voxels();
  std::size_t idx = 0;
  for (std::size_t i = 0; i < e[0]; ++i) {
    for (std::size_t j = 0; j < e[1]; ++j) {
      for (std::size_t k = 0; k < e[2]; ++k, ++idx) {
        const Tissue t = tissue_at(anatomy, static_cast<double>(i), static_cast<double>(j), static_cast<double>(k));
        t1[idx] = t1_gain * (kT1[t] + kT1Noise * hashed_normal(splitmix64(noise_seed ^ (2 * idx))));
        fl[idx] = fl_gain * (kFlair[t] + kFlairNoise * hashed_normal(splitmix64(noise_seed ^ (2 * idx + 1))));
      }
    }
  }
  return pair;
}

std::vector<labeling::EhrVisit> synthetic_ehr(const std::vector<SessionInfo>& sessions) {
  std::vector<labeling::EhrVisit> visits;
  for (const auto& s : sessions) {
    visits.push_back({s.patient_id, add_days(s.scan_date, -30), s.age, s.label});
    visits.push_back({s.patient_id, add_days(s.scan_date, 45), s.age, s.label});
    if (s.patient_index % 3 == 0) visits.push_back({s.patient_id, add_days(s.scan_date, 5), s.age, std::nullopt});
    if (s.patient_index % 4 == 3 && s.label != Label::kAD) {
      // recorded at age 55, so the age filter must drop them
      visits.push_back({s.patient_id, add_days(s.scan_date, -10), 55.0, Label::kAD});
      visits.push_back({s.patient_id, add_days(s.scan_date, -5), 55.0, Label::kAD});
    }
  }
  return visits;
}

// ---- splits ----

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "validation") return Split::kValidation;
  if (text == "test") return Split::kTest;
  return std::nullopt;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> fractions) {
  if (n < 3) fail(ErrorCategory::kArgument, "patient split needs at least 3 patients, got " + std::to_string(n));
  for (double f : fractions) {
    if (!(f > 0) || !std::isfinite(f)) fail(ErrorCategory::kArgument, "split fractions must be positive");
  }
  auto sizes = largest_remainder(n, fractions);
  for (std::size_t s = 0; s < 3; ++s) {
    if (sizes[s] == 0) {
      --sizes[static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin())];
      sizes[s] = 1;
    }
  }
  return sizes;
}

SplitAssignment patient_split(std::span<const PatientRecord> patients, std::array<double, 3> fractions,
                              std::uint64_t seed, bool stratify_by_label) {
  std::set<std::string> seen;
  for (const auto& p : patients) {
    if (!seen.insert(p.patient_id).second) fail(ErrorCategory::kArgument, "duplicate patient " + p.patient_id);
  }
  const auto sizes = split_sizes(patients.size(), fractions);
  // sort by id first so the result does not depend on input order
  std::vector<PatientRecord> sorted(patients.begin(), patients.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.patient_id < b.patient_id; });
  std::mt19937_64 rng(derive_seed(seed, 0x5917));

  std::vector<std::string> order;
  if (stratify_by_label) {
    std::map<int, std::vector<std::string>> groups;  // -1 for unlabeled
    for (const auto& p : sorted) groups[p.worst_label ? static_cast<int>(*p.worst_label) : -1].push_back(p.patient_id);
    struct Slot {
      double position;
      int group;
      std::string id;
    };
    std::vector<Slot> slots;
    for (auto& [g, ids] : groups) {
      std::shuffle(ids.begin(), ids.end(), rng);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        slots.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(ids.size()), g, ids[r]});
      }
    }
    std::stable_sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
      return a.position != b.position ? a.position < b.position : a.group < b.group;
    });
    for (auto& s : slots) order.push_back(std::move(s.id));
  } else {
    for (const auto& p : sorted) order.push_back(p.patient_id);
    std::shuffle(order.begin(), order.end(), rng);
  }

  SplitAssignment out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out[order[i]] = i < sizes[0] ? Split::kTrain : i < sizes[0] + sizes[1] ? Split::kValidation : Split::kTest;
  }
  return out;
}

// ---- files ----

void write_volume(const std::filesystem::path& path, const Volume& vol) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::kIo, "cannot write " + path.string());
  io::write_bytes(out, "NFVOL1");
  const char modality = static_cast<char>(vol.modality());
  out.write(&modality, 1);
  for (auto e : vol.extents()) io::write_u32(out, static_cast<std::uint32_t>(e));
  io::write_f32s(out, vol.voxels());
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::kIo, "cannot open volume " + path.string());
  try {
    if (io::read_bytes(in, 6) != "NFVOL1") fail(ErrorCategory::kFormat, "bad magic");
    const auto modality = static_cast<unsigned char>(io::read_bytes(in, 1)[0]);
    if (modality > 1) fail(ErrorCategory::kFormat, "unknown modality byte " + std::to_string(modality));
    Extents e{};
    for (auto& x : e) x = io::read_u32(in);
    if (e[0] == 0 || e[1] == 0 || e[2] == 0 || extents_volume(e) > (std::size_t{1} << 32)) {
      fail(ErrorCategory::kFormat, "implausible extents " + extents_text(e));
    }
    std::vector<float> voxels(extents_volume(e));
    io::read_f32s(in, voxels);
    if (in.peek() != std::ifstream::traits_type::eof()) fail(ErrorCategory::kFormat, "trailing bytes");
    for (float v : voxels) {
      if (!std::isfinite(v)) fail(ErrorCategory::kFormat, "non-finite voxel");
    }
    return Volume(static_cast<Modality>(modality), e, std::move(voxels));
  } catch (const Error& err) {
    fail(err.category(), "volume " + path.string() + ": " + err.what());
  }
}

namespace {

std::filesystem::path resolve(const std::filesystem::path& manifest, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : manifest.parent_path() / path;
}

std::ofstream open_csv(const std::filesystem::path& path, std::string_view header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCategory::kIo, "cannot write " + path.string());
  out << header << '\n';
  return out;
}

labeling::Date require_date(const csv::Table& t, const csv::Row& row, std::size_t col) {
  const auto d = labeling::parse_date(row.fields[col]);
  if (!d) fail(ErrorCategory::kFormat, t.source + " line " + std::to_string(row.line) + ": invalid date '" + row.fields[col] + "'");
  return *d;
}

void require_width(const csv::Table& t, const csv::Row& row) {
  if (row.fields.size() != t.header.size()) {
    fail(ErrorCategory::kFormat, t.source + " line " + std::to_string(row.line) + ": expected " +
                                     std::to_string(t.header.size()) + " fields");
  }
}

}  // namespace

void write_manifest(const std::filesystem::path& path, std::span<const ManifestRow> rows) {
  auto out = open_csv(path, "patient_id,session_id,scan_date,t1_path,flair_path");
  for (const auto& r : rows) {
    out << csv::join({r.patient_id, r.session_id, labeling::format_date(r.scan_date), r.t1_path, r.flair_path}) << '\n';
  }
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto cp = t.column("patient_id"), cs = t.column("session_id"), cd = t.column("scan_date");
  const auto c1 = t.column("t1_path"), cf = t.column("flair_path");
  std::vector<ManifestRow> rows;
  for (const auto& row : t.rows) {
    require_width(t, row);
    rows.push_back({row.fields[cp], row.fields[cs], require_date(t, row, cd), resolve(path, row.fields[c1]).string(),
                    resolve(path, row.fields[cf]).string()});
  }
  return rows;
}

void write_split_csv(const std::filesystem::path& path, const SplitAssignment& split) {
  auto out = open_csv(path, "patient_id,split");
  for (const auto& [id, s] : split) out << csv::join({id, to_string(s)}) << '\n';
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

SplitAssignment read_split_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto cp = t.column("patient_id"), cs = t.column("split");
  SplitAssignment out;
  for (const auto& row : t.rows) {
    require_width(t, row);
    const auto s = parse_split(row.fields[cs]);
    if (!s) fail(ErrorCategory::kFormat, t.source + " line " + std::to_string(row.line) + ": unknown split '" + row.fields[cs] + "'");
    if (!out.emplace(row.fields[cp], *s).second) {
      fail(ErrorCategory::kFormat, t.source + ": patient " + row.fields[cp] + " listed twice");
    }
  }
  return out;
}

void write_labeled_manifest(const std::filesystem::path& path, std::span<const Sample> samples) {
  auto out = open_csv(path, "patient_id,session_id,scan_date,label,t1_path,flair_path");
  for (const auto& s : samples) {
    out << csv::join({s.patient_id, s.session_id, labeling::format_date(s.scan_date), labeling::to_string(s.label),
                      s.t1_path.generic_string(), s.flair_path.generic_string()})
        << '\n';
  }
  if (!out) fail(ErrorCategory::kIo, "failed writing " + path.string());
}

std::vector<Sample> read_labeled_manifest(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto cp = t.column("patient_id"), cs = t.column("session_id"), cd = t.column("scan_date");
  const auto cl = t.column("label"), c1 = t.column("t1_path"), cf = t.column("flair_path");
  std::vector<Sample> out;
  std::set<std::string> sessions;
  for (const auto& row : t.rows) {
    require_width(t, row);
    const auto label = labeling::parse_label(row.fields[cl]);
    if (!label) fail(ErrorCategory::kFormat, t.source + " line " + std::to_string(row.line) + ": invalid label '" + row.fields[cl] + "'");
    if (!sessions.insert(row.fields[cs]).second) fail(ErrorCategory::kFormat, t.source + ": session " + row.fields[cs] + " listed twice");
    out.push_back({row.fields[cp], row.fields[cs], require_date(t, row, cd), *label, resolve(path, row.fields[c1]),
                   resolve(path, row.fields[cf])});
  }
  return out;
}

std::vector<PatientRecord> patients_of(std::span<const Sample> samples) {
  std::vector<PatientRecord> out;
  std::map<std::string, std::size_t> index;
  for (const auto& s : samples) {
    auto [it, fresh] = index.emplace(s.patient_id, out.size());
    if (fresh) {
      out.push_back({s.patient_id, s.label});
    } else if (s.label > *out[it->second].worst_label) {
      out[it->second].worst_label = s.label;
    }
  }
  return out;
}

std::vector<Sample> select(std::span<const Sample> samples, const SplitAssignment& split, Split which) {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    const auto it = split.find(s.patient_id);
    if (it == split.end()) fail(ErrorCategory::kData, "patient " + s.patient_id + " has no split assignment");
    if (it->second == which) out.push_back(s);
  }
  return out;
}

}  // namespace nfuse::data
