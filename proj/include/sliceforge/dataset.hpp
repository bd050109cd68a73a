#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sliceforge/rng.hpp"
#include "sliceforge/tensor.hpp"

namespace sliceforge {

/// One imaged subject. label 1 (Alzheimer's) iff cdr > 0.
struct SubjectRecord {
  std::string subject_id;
  double cdr = 0.0;
  int label = 0;
  double age = 0.0;
  char sex = 'F';
  std::optional<int> mmse;
  std::vector<std::string> slice_paths;  // relative to the manifest directory

  bool operator==(const SubjectRecord&) const = default;
};

struct DatasetManifest {
  std::string name;
  std::size_t slice_height = 0;
  std::size_t slice_width = 0;
  double intensity_ceiling = 255.0;
  std::vector<SubjectRecord> subjects;
  /// Directory that slice paths are resolved against; not serialized.
  std::filesystem::path root;

  std::filesystem::path slice_path(const SubjectRecord& s, std::size_t k) const {
    return root / s.slice_paths.at(k);
  }
  std::size_t total_slices() const;
  const SubjectRecord& subject(const std::string& id) const;

  bool operator==(const DatasetManifest& o) const {
    return name == o.name && slice_height == o.slice_height && slice_width == o.slice_width &&
           intensity_ceiling == o.intensity_ceiling && subjects == o.subjects;
  }
};

struct AugmentConfig {
  double width_shift_frac = 0.1;
  double height_shift_frac = 0.1;
  bool horizontal_flip = true;
  bool normalize = true;

  void validate() const;
};

/// Checks a single record against the labeling rule and field ranges.
void validate_subject(const SubjectRecord& s);

/// Drops `skip` slices from both ends of a [D,H,W] volume and keeps at most
/// `target` central slices of what remains.
Tensor select_slices(const Tensor& volume, std::size_t target = 96, std::size_t skip = 40);

/// Divides by `ceiling`; values must lie in [0, ceiling].
Tensor scale_normalize(const Tensor& slice, double ceiling);

/// Integer shift of an [H,W] image by (dy, dx) pixels with zero fill.
Tensor shift_image(const Tensor& slice, std::int64_t dy, std::int64_t dx);
Tensor flip_horizontal(const Tensor& slice);

/// Random width/height shift and horizontal flip, then optional normalization.
/// Always consumes exactly three draws from `rng` (dx, dy, flip).
Tensor augment(const Tensor& slice, const AugmentConfig& cfg, RngStream& rng, double ceiling);

/// Parses and validates a manifest; slice files must exist and match the
/// declared dimensions.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Writes a synthetic stand-in dataset (TSR1 slices plus manifest.json) into
/// `out_dir`. Class-1 subjects carry a severity-scaled low-intensity region.
DatasetManifest generate_synthetic(std::size_t n_per_class, std::size_t slices_per_subject,
                                   std::size_t height, std::size_t width, std::uint64_t seed,
                                   const std::filesystem::path& out_dir);

/// Same generator with independent class sizes (e.g. 84 negatives, 30 positives).
DatasetManifest generate_synthetic_counts(std::size_t n_negative, std::size_t n_positive,
                                          std::size_t slices_per_subject, std::size_t height,
                                          std::size_t width, std::uint64_t seed,
                                          const std::filesystem::path& out_dir);

}  // namespace sliceforge
