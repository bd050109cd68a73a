#include "sliceforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

namespace sliceforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t DatasetManifest::total_slices() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.slice_paths.size();
  return n;
}

const SubjectRecord& DatasetManifest::subject(const std::string& id) const {
  for (const auto& s : subjects) {
    if (s.subject_id == id) return s;
  }
  throw InvalidArgument("unknown subject id " + id);
}

void AugmentConfig::validate() const {
  if (!(width_shift_frac >= 0.0 && width_shift_frac <= 0.5) ||
      !(height_shift_frac >= 0.0 && height_shift_frac <= 0.5)) {
    throw InvalidArgument("shift fractions must be in [0, 0.5]");
  }
}

void validate_subject(const SubjectRecord& s) {
  static constexpr double kCdrScale[] = {0.0, 0.5, 1.0, 2.0, 3.0};
  if (s.subject_id.empty()) throw InvalidArgument("empty subject_id");
  if (std::find(std::begin(kCdrScale), std::end(kCdrScale), s.cdr) == std::end(kCdrScale)) {
    throw InvalidArgument("subject " + s.subject_id + ": cdr must be one of 0, 0.5, 1, 2, 3");
  }
  if (s.label != 0 && s.label != 1) throw InvalidArgument("subject " + s.subject_id + ": label must be 0 or 1");
  if ((s.cdr > 0.0) != (s.label == 1)) {
    throw InvalidArgument("subject " + s.subject_id + ": label/CDR contradiction");
  }
  if (s.sex != 'M' && s.sex != 'F') throw InvalidArgument("subject " + s.subject_id + ": sex must be M or F");
  if (s.mmse && (*s.mmse < 0 || *s.mmse > 30)) {
    throw InvalidArgument("subject " + s.subject_id + ": mmse must be in 0..30");
  }
  if (s.slice_paths.empty()) throw InvalidArgument("subject " + s.subject_id + ": no slices");
}

// ---------------------------------------------------------------------------

Tensor select_slices(const Tensor& volume, std::size_t target, std::size_t skip) {
  if (volume.shape().rank() != 3) throw InvalidArgument("select_slices expects a [D,H,W] volume");
  const std::size_t depth = volume.dim(0), h = volume.dim(1), w = volume.dim(2);
  if (depth <= 2 * skip) {
    throw InvalidArgument("volume depth " + std::to_string(depth) + " leaves no slices after skipping " +
                          std::to_string(skip) + " at each end");
  }
  if (target == 0) throw InvalidArgument("target slice count must be positive");
  const std::size_t remaining = depth - 2 * skip;
  const std::size_t count = std::min(target, remaining);
  const std::size_t first = skip + (remaining - count) / 2;
  const std::size_t plane = h * w;
  const auto data = volume.data();
  std::vector<float> out(data.begin() + static_cast<std::ptrdiff_t>(first * plane),
                         data.begin() + static_cast<std::ptrdiff_t>((first + count) * plane));
  return Tensor(Shape{count, h, w}, std::move(out));
}

Tensor scale_normalize(const Tensor& slice, double ceiling) {
  if (!(ceiling > 0.0)) throw InvalidArgument("intensity ceiling must be positive");
  Tensor out(slice.shape());
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const double v = slice[i];
    if (v < 0.0) throw InvalidArgument("negative intensity in slice (corrupt input)");
    if (v > ceiling) throw InvalidArgument("intensity above the declared ceiling");
    out[i] = static_cast<float>(v / ceiling);
  }
  return out;
}

Tensor shift_image(const Tensor& slice, std::int64_t dy, std::int64_t dx) {
  if (slice.shape().rank() != 2) throw InvalidArgument("shift_image expects [H,W]");
  const auto h = static_cast<std::int64_t>(slice.dim(0)), w = static_cast<std::int64_t>(slice.dim(1));
  Tensor out(slice.shape());
  for (std::int64_t i = 0; i < h; ++i) {
    const std::int64_t si = i - dy;
    if (si < 0 || si >= h) continue;
    for (std::int64_t j = 0; j < w; ++j) {
      const std::int64_t sj = j - dx;
      if (sj < 0 || sj >= w) continue;
      out[static_cast<std::size_t>(i * w + j)] = slice[static_cast<std::size_t>(si * w + sj)];
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& slice) {
  if (slice.shape().rank() != 2) throw InvalidArgument("flip_horizontal expects [H,W]");
  const std::size_t h = slice.dim(0), w = slice.dim(1);
  Tensor out(slice.shape());
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = slice[i * w + (w - 1 - j)];
  }
  return out;
}

Tensor augment(const Tensor& slice, const AugmentConfig& cfg, RngStream& rng, double ceiling) {
  cfg.validate();
  if (slice.shape().rank() != 2) throw InvalidArgument("augment expects [H,W]");
  const auto max_dx = static_cast<std::int64_t>(std::floor(cfg.width_shift_frac * static_cast<double>(slice.dim(1))));
  const auto max_dy = static_cast<std::int64_t>(std::floor(cfg.height_shift_frac * static_cast<double>(slice.dim(0))));
  const std::int64_t dx = rng.between(-max_dx, max_dx);
  const std::int64_t dy = rng.between(-max_dy, max_dy);
  const bool flip = rng.uniform() < 0.5;

  Tensor out = (dx != 0 || dy != 0) ? shift_image(slice, dy, dx) : slice;
  if (cfg.horizontal_flip && flip) out = flip_horizontal(out);
  if (cfg.normalize) out = scale_normalize(out, ceiling);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

json subject_to_json(const SubjectRecord& s) {
  return json{{"subject_id", s.subject_id},
              {"cdr", s.cdr},
              {"label", s.label},
              {"age", s.age},
              {"sex", std::string(1, s.sex)},
              {"mmse", s.mmse ? json(*s.mmse) : json(nullptr)},
              {"slices", s.slice_paths}};
}

SubjectRecord subject_from_json(const json& j) {
  SubjectRecord s;
  s.subject_id = j.at("subject_id").get<std::string>();
  s.cdr = j.at("cdr").get<double>();
  s.label = j.at("label").get<int>();
  s.age = j.at("age").get<double>();
  const auto sex = j.at("sex").get<std::string>();
  if (sex.size() != 1) throw InvalidArgument("subject " + s.subject_id + ": sex must be M or F");
  s.sex = sex[0];
  if (j.contains("mmse") && !j.at("mmse").is_null()) s.mmse = j.at("mmse").get<int>();
  s.slice_paths = j.at("slices").get<std::vector<std::string>>();
  return s;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const json j = json::parse(in);
    m.name = j.at("name").get<std::string>();
    m.slice_height = j.at("slice_height").get<std::size_t>();
    m.slice_width = j.at("slice_width").get<std::size_t>();
    m.intensity_ceiling = j.value("intensity_ceiling", 255.0);
    for (const auto& sj : j.at("subjects")) m.subjects.push_back(subject_from_json(sj));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("invalid manifest: ") + e.what());
  }
  m.root = path.parent_path();
  if (m.slice_height == 0 || m.slice_width == 0) throw IoError("manifest slice dimensions must be positive");
  if (!(m.intensity_ceiling > 0.0)) throw IoError("manifest intensity_ceiling must be positive");

  std::set<std::string> seen;
  const Shape expected{m.slice_height, m.slice_width};
  for (const auto& s : m.subjects) {
    try {
      validate_subject(s);
    } catch (const InvalidArgument& e) {
      throw IoError(std::string("invalid manifest: ") + e.what());
    }
    if (!seen.insert(s.subject_id).second) throw IoError("duplicate subject_id " + s.subject_id);
    for (std::size_t k = 0; k < s.slice_paths.size(); ++k) {
      const fs::path p = m.slice_path(s, k);
      if (!fs::exists(p)) throw IoError("missing slice file " + p.string());
      if (tensor_read_shape(p) != expected) {
        throw IoError("slice " + p.string() + " does not match declared dimensions " + expected.to_string());
      }
    }
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  json subjects = json::array();
  for (const auto& s : m.subjects) subjects.push_back(subject_to_json(s));
  const json j{{"name", m.name},
               {"slice_height", m.slice_height},
               {"slice_width", m.slice_width},
               {"intensity_ceiling", m.intensity_ceiling},
               {"subjects", std::move(subjects)}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

namespace {

struct SyntheticSubject {
  double severity = 0.0;  // 0 for class 0
  double brightness = 0.0;
  double center_dy = 0.0, center_dx = 0.0;
};

Tensor render_slice(const SyntheticSubject& subj, std::size_t h, std::size_t w, std::size_t slice,
                    std::size_t n_slices, RngStream& noise) {
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  const double ry = 0.44 * static_cast<double>(h), rx = 0.40 * static_cast<double>(w);
  // Position along the stack, 0 at the central slice and 1 at the ends.
  const double t = n_slices > 1 ? std::abs(2.0 * static_cast<double>(slice) / static_cast<double>(n_slices - 1) - 1.0) : 0.0;
  const double lesion_r = subj.severity > 0.0
                              ? (0.15 + 0.08 * subj.severity) * (1.0 - 0.25 * t) *
                                    static_cast<double>(std::min(h, w))
                              : 0.0;
  const double ly = cy + subj.center_dy, lx = cx + subj.center_dx;

  Tensor out(Shape{h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double y = static_cast<double>(i), x = static_cast<double>(j);
      const double e = ((y - cy) / ry) * ((y - cy) / ry) + ((x - cx) / rx) * ((x - cx) / rx);
      double v;
      if (e <= 1.0) {
        v = 150.0 + subj.brightness + 30.0 * std::cos(3.0 * (y - cy) / ry) * std::cos(2.0 * (x - cx) / rx) -
            20.0 * e;
        if (lesion_r > 0.0) {
          const double d = std::hypot(y - ly, x - lx);
          if (d < lesion_r) v *= 0.3 + 0.2 * (d / lesion_r);
        }
      } else {
        v = 8.0;
      }
      v += noise.uniform(-10.0, 10.0);
      out[i * w + j] = static_cast<float>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

}  // namespace

DatasetManifest generate_synthetic_counts(std::size_t n_negative, std::size_t n_positive,
                                          std::size_t slices_per_subject, std::size_t height,
                                          std::size_t width, std::uint64_t seed,
                                          const fs::path& out_dir) {
  if (n_negative + n_positive == 0 || slices_per_subject == 0 || height == 0 || width == 0) {
    throw InvalidArgument("synthetic dataset counts must be >= 1");
  }
  std::error_code ec;
  fs::create_directories(out_dir / "slices", ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.name = "synthetic";
  m.slice_height = height;
  m.slice_width = width;
  m.intensity_ceiling = 255.0;
  m.root = out_dir;

  const std::size_t total = n_negative + n_positive;
  for (std::size_t idx = 0; idx < total; ++idx) {
    const int label = idx < n_negative ? 0 : 1;
    RngStream meta{stream_tag::kSynthetic, seed, idx};
    SubjectRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "SUB_%04zu", idx + 1);
    rec.subject_id = id;
    rec.label = label;
    SyntheticSubject subj;
    if (label == 0) {
      rec.cdr = 0.0;
      rec.age = static_cast<double>(meta.between(62, 94));
      rec.sex = meta.uniform() < 24.0 / 90.0 ? 'M' : 'F';
      rec.mmse = static_cast<int>(meta.between(25, 30));
    } else {
      // CDR mix of the balanced cohort: 60 x 0.5, 28 x 1, 2 x 2 out of 90.
      const double u = meta.uniform();
      rec.cdr = u < 60.0 / 90.0 ? 0.5 : (u < 88.0 / 90.0 ? 1.0 : 2.0);
      rec.age = static_cast<double>(meta.between(62, 96));
      rec.sex = meta.uniform() < 38.0 / 90.0 ? 'M' : 'F';
      const int lo = rec.cdr == 0.5 ? 20 : (rec.cdr == 1.0 ? 16 : 14);
      const int hi = rec.cdr == 0.5 ? 30 : (rec.cdr == 1.0 ? 26 : 22);
      rec.mmse = static_cast<int>(meta.between(lo, hi));
      subj.severity = rec.cdr;
    }
    subj.brightness = meta.uniform(-15.0, 15.0);
    subj.center_dy = meta.uniform(-0.05, 0.05) * static_cast<double>(height);
    subj.center_dx = meta.uniform(-0.05, 0.05) * static_cast<double>(width);

    for (std::size_t k = 0; k < slices_per_subject; ++k) {
      RngStream noise{stream_tag::kSynthetic, seed, idx, k + 1};
      const Tensor slice = render_slice(subj, height, width, k, slices_per_subject, noise);
      char name[64];
      std::snprintf(name, sizeof name, "slices/%s_s%03zu.tsr", id, k);
      tensor_write(out_dir / name, slice);
      rec.slice_paths.emplace_back(name);
    }
    m.subjects.push_back(std::move(rec));
  }
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

DatasetManifest generate_synthetic(std::size_t n_per_class, std::size_t slices_per_subject,
                                   std::size_t height, std::size_t width, std::uint64_t seed,
                                   const fs::path& out_dir) {
  if (n_per_class == 0) throw InvalidArgument("n_per_class must be >= 1");
  return generate_synthetic_counts(n_per_class, n_per_class, slices_per_subject, height, width,
                                   seed, out_dir);
}

}  // namespace sliceforge
