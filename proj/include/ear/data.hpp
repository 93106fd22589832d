#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ear/mask.hpp"
#include "ear/random.hpp"
#include "ear/tensor.hpp"

namespace ear {

inline constexpr int kRecordFormatVersion = 1;
inline constexpr int kRecordChannels = 4;
inline constexpr double kDefaultSpacingMm = 0.85;

/// One cine slice: image [4,T,H,W] f32 (magnitude, v_x, v_y, v_z in cm/s) and mask [T,H,W].
/// v_x is the column-direction velocity and v_y the row-direction velocity.
struct CineRecord {
  std::string subject_id;
  std::string slice_id;
  Tensor image;
  BinaryMask mask;
  std::array<double, 2> spacing_mm{kDefaultSpacingMm, kDefaultSpacingMm};  // (row, col)
  std::array<double, 3> venc_cm_s{20.0, 20.0, 20.0};

  std::int64_t frames() const { return image.size(1); }
  std::int64_t height() const { return image.size(2); }
  std::int64_t width() const { return image.size(3); }

  /// Throws DimensionError if shapes, mask values or velocity limits are violated.
  void validate() const;

  friend bool operator==(const CineRecord& a, const CineRecord& b);
};

/// Writes `dir`/meta.json, image.raw and mask.raw (creating `dir`).
void save_record(const CineRecord& record, const std::filesystem::path& dir);
/// FormatError (with byte offset) on unparsable or wrongly sized files; DimensionError on invariant violations.
CineRecord load_record(const std::filesystem::path& dir);

struct ManifestEntry {
  std::string subject_id;
  std::string slice_id;
  std::string path;  // relative to the manifest's directory
};

struct DatasetManifest {
  int format_version = kRecordFormatVersion;
  std::vector<ManifestEntry> records;
  std::filesystem::path root;  // directory the manifest was loaded from

  /// Sorted unique subject ids.
  std::vector<std::string> subjects() const;
  void validate() const;
};

DatasetManifest load_manifest(const std::filesystem::path& file);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);

/// Saves every record under `dir`/<subject>_<slice>/ and writes `dir`/manifest.json.
DatasetManifest write_dataset(const std::vector<CineRecord>& records, const std::filesystem::path& dir);

/// Loads manifest records on demand and logs every access. While a subject guard is
/// active, touching a guarded subject throws LeakageError.
class RecordStore {
 public:
  explicit RecordStore(DatasetManifest manifest);
  /// In-memory store; entries get empty paths.
  explicit RecordStore(std::vector<CineRecord> records);

  std::size_t size() const { return manifest_.records.size(); }
  const DatasetManifest& manifest() const { return manifest_; }
  const ManifestEntry& entry(std::size_t index) const { return manifest_.records.at(index); }

  /// DataError naming the record if it cannot be loaded.
  const CineRecord& get(std::size_t index);

  /// Indices of all records belonging to `subjects`, in manifest order.
  std::vector<std::size_t> indices_for(const std::set<std::string>& subjects) const;

  void guard_subjects(std::set<std::string> subjects) { guarded_ = std::move(subjects); }
  void clear_guard() { guarded_.clear(); }

  const std::vector<std::size_t>& access_log() const { return access_log_; }
  void clear_access_log() { access_log_.clear(); }

 private:
  DatasetManifest manifest_;
  std::map<std::size_t, CineRecord> cache_;
  std::set<std::string> guarded_;
  std::vector<std::size_t> access_log_;
};

/// Rotates every channel and the mask by `quarter_turns` x 90 degrees counter-clockwise.
/// Pixel (r, c) of an H x W frame moves to (W-1-c, r). Velocity values are not remapped.
CineRecord rotate_record(const CineRecord& record, int quarter_turns);
/// Rotation by 0, 90, 180 or 270 degrees drawn from `rng`.
CineRecord random_rotation(const CineRecord& record, Rng& rng);

struct SplitPlan {
  std::vector<std::string> train_subjects;  // sorted
  std::vector<std::string> test_subjects;   // sorted
  std::vector<std::vector<std::string>> folds;  // each sorted; partition of train_subjects
};

/// Subject-level split: test count = floor(n * test_fraction + 0.5), folds assigned round-robin
/// over a seeded shuffle. ConfigError if fewer than k training subjects remain.
SplitPlan make_split(std::vector<std::string> subject_ids, double test_fraction, int k, std::uint64_t seed);

struct PhantomOptions {
  int n_records = 8;
  std::int64_t frames = 8;
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::uint64_t seed = 0;
  int records_per_subject = 1;
  double radial_cm_s = 3.0;           // V_R
  double circumferential_cm_s = 2.0;  // V_C
  double longitudinal_cm_s = 8.0;     // V_Z
  double velocity_noise = 0.5;        // sigma_n, cm/s
  double magnitude_noise = 0.05;
  double venc_cm_s = 20.0;
  double spacing_mm = kDefaultSpacingMm;
};

/// Annular myocardium with a drifting centre and pulsing radius. Inside the mask the velocity
/// field is v_r = V_R cos(2 pi t/T) outward, v_c = V_C sin(2 pi t/T) counter-clockwise and
/// v_z = V_Z cos(2 pi t/T), taken about the mask centroid of each frame; zero outside.
std::vector<CineRecord> generate_phantom(const PhantomOptions& options);

/// Network input [1,4,T,H,W]: magnitude min-max scaled to [0,1], velocities divided by venc.
Tensor prepare_input(const CineRecord& record, DType dtype = DType::f32);
/// Foreground target [1,T,H,W].
Tensor prepare_target(const CineRecord& record, DType dtype = DType::f32);

}  // namespace ear
