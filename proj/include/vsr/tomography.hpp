#ifndef VSR_TOMOGRAPHY_HPP
#define VSR_TOMOGRAPHY_HPP

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vsr/error.hpp"
#include "vsr/io.hpp"
#include "vsr/random.hpp"
#include "vsr/volume.hpp"

namespace vsr {

// Section-wise limited-angle tilt imaging. A section is a slab of
// layers_per_section voxel layers imaged as one unit; each view is either the
// normal projection or a 45-degree tilt about the x or y axis.
//
// Ray convention. Within one section, with local layer index ell = 0..L-1 and
// anchor pixel (x, y):
//   normal   hits (x,           y,           ell)
//   +45 x    hits (x,           y + ell,     ell)
//   -45 x    hits (x,           y + L-1-ell, ell)
//   +45 y    hits (x + ell,     y,           ell)
//   -45 y    hits (x + L-1-ell, y,           ell)
// Tilt rays step exactly one voxel diagonal per layer, no interpolation.
// Each measurement is the mean of its L voxels (weights 1/L). In the
// patch-level operator only rays whose L voxels all lie inside the h x h
// patch footprint are kept; at volume level, pixels whose ray exits the
// lateral bounds are marked invalid.

enum class TiltAngle { normal, plus_x, minus_x, plus_y, minus_y };

inline const char* to_string(TiltAngle a) {
  switch (a) {
    case TiltAngle::normal: return "normal";
    case TiltAngle::plus_x: return "plus_x";
    case TiltAngle::minus_x: return "minus_x";
    case TiltAngle::plus_y: return "plus_y";
    case TiltAngle::minus_y: return "minus_y";
  }
  return "?";
}

inline TiltAngle tilt_angle_from_string(const std::string& s) {
  if (s == "normal") return TiltAngle::normal;
  if (s == "plus_x") return TiltAngle::plus_x;
  if (s == "minus_x") return TiltAngle::minus_x;
  if (s == "plus_y") return TiltAngle::plus_y;
  if (s == "minus_y") return TiltAngle::minus_y;
  throw DataError("unknown tilt angle '" + s + "'");
}

/// Lateral offset (dx, dy) of the ray voxel at local layer ell.
inline Eigen::Vector2i ray_step(TiltAngle a, int ell, int layers) {
  switch (a) {
    case TiltAngle::normal: return {0, 0};
    case TiltAngle::plus_x: return {0, ell};
    case TiltAngle::minus_x: return {0, layers - 1 - ell};
    case TiltAngle::plus_y: return {ell, 0};
    case TiltAngle::minus_y: return {layers - 1 - ell, 0};
  }
  return {0, 0};
}

/// Largest lateral offset of any layer: anchors must leave this much margin.
inline Eigen::Vector2i ray_span(TiltAngle a, int layers) {
  switch (a) {
    case TiltAngle::normal: return {0, 0};
    case TiltAngle::plus_x:
    case TiltAngle::minus_x: return {0, layers - 1};
    case TiltAngle::plus_y:
    case TiltAngle::minus_y: return {layers - 1, 0};
  }
  return {0, 0};
}

struct TiltGeometry {
  int layers_per_section = 5;
  std::vector<TiltAngle> angles = {TiltAngle::normal, TiltAngle::plus_x,
                                   TiltAngle::minus_x, TiltAngle::plus_y,
                                   TiltAngle::minus_y};
  int h = 9;
  int v = 15;

  int sections_per_patch() const { return v / layers_per_section; }

  void validate() const {
    if (layers_per_section < 1) throw ConfigError("layers_per_section must be >= 1");
    if (h < 1 || v < 1) throw ConfigError("patch extents must be >= 1");
    if (v % layers_per_section != 0)
      throw ConfigError("axial patch extent " + std::to_string(v) +
                        " is not a multiple of layers_per_section " +
                        std::to_string(layers_per_section));
    if (angles.empty()) throw ConfigError("angle list must not be empty");
    int normals = 0;
    for (TiltAngle a : angles)
      if (a == TiltAngle::normal) ++normals;
    if (normals > 1) throw ConfigError("normal view may appear at most once");
  }

  TiltGeometry normal_only() const {
    TiltGeometry g = *this;
    g.angles = {TiltAngle::normal};
    return g;
  }
};

/// Identity of one projection-operator row: which section, angle, and anchor
/// pixel (patch-local) produced it.
struct RayRef {
  int section = 0;
  TiltAngle angle = TiltAngle::normal;
  int px = 0;
  int py = 0;
};

/// Sparse operator mapping a vectorized h*h*v patch to its tilt measurements.
/// Row order is (section, angle list order, y-major then x); this ordering is
/// part of the format shared with gather_patch_measurements.
template <class Scalar = double>
struct ProjectionModel {
  TiltGeometry geometry;
  Eigen::SparseMatrix<Scalar, Eigen::RowMajor> matrix;
  std::vector<RayRef> row_index;

  Eigen::Index rows() const { return matrix.rows(); }
  Eigen::Index cols() const { return matrix.cols(); }

  VecX<Scalar> apply(const VecX<Scalar>& patch) const { return matrix * patch; }
};

using ProjectionModeld = ProjectionModel<double>;

template <class Scalar = double>
ProjectionModel<Scalar> build_projection_model(const TiltGeometry& geometry) {
  geometry.validate();
  const int L = geometry.layers_per_section;
  const int h = geometry.h;
  const int sections = geometry.sections_per_patch();
  const Scalar weight = Scalar(1) / Scalar(L);

  ProjectionModel<Scalar> model;
  model.geometry = geometry;
  std::vector<Eigen::Triplet<Scalar>> entries;

  Eigen::Index row = 0;
  for (int s = 0; s < sections; ++s) {
    for (TiltAngle angle : geometry.angles) {
      const Eigen::Vector2i span = ray_span(angle, L);
      for (int py = 0; py + span[1] < h; ++py) {
        for (int px = 0; px + span[0] < h; ++px) {
          for (int ell = 0; ell < L; ++ell) {
            const Eigen::Vector2i step = ray_step(angle, ell, L);
            const Eigen::Index col =
                Eigen::Index(px + step[0]) +
                Eigen::Index(h) * (py + step[1]) +
                Eigen::Index(h) * h * (s * L + ell);
            entries.emplace_back(row, col, weight);
          }
          model.row_index.push_back({s, angle, px, py});
          ++row;
        }
      }
    }
  }

  model.matrix.resize(row, Eigen::Index(h) * h * geometry.v);
  model.matrix.setFromTriplets(entries.begin(), entries.end());
  model.matrix.makeCompressed();
  return model;
}

constexpr double kNoiselessSnrDb = std::numeric_limits<double>::infinity();

struct NoiseSpec {
  double snr_db = kNoiselessSnrDb;
  std::uint64_t seed = 0;
};

/// Per-section, per-angle measurement images over the full lateral grid of
/// the source volume, with validity masks (false where a tilt ray exits the
/// volume laterally, or under a fold).
template <class Scalar = double>
struct TiltViewSet {
  int nx = 0;
  int ny = 0;
  int n_sections = 0;
  int layers_per_section = 5;
  std::vector<TiltAngle> angles;
  std::vector<MatX<Scalar>> images;  // index: section * angles.size() + angle
  std::vector<MaskImage> masks;
  double snr_db = kNoiselessSnrDb;
  std::uint64_t noise_seed = 0;

  Eigen::Index view_count() const { return Eigen::Index(images.size()); }

  const MatX<Scalar>& image(int section, int angle_idx) const {
    return images[static_cast<std::size_t>(section) * angles.size() +
                  static_cast<std::size_t>(angle_idx)];
  }
  MatX<Scalar>& image(int section, int angle_idx) {
    return images[static_cast<std::size_t>(section) * angles.size() +
                  static_cast<std::size_t>(angle_idx)];
  }
  const MaskImage& mask(int section, int angle_idx) const {
    return masks[static_cast<std::size_t>(section) * angles.size() +
                 static_cast<std::size_t>(angle_idx)];
  }
  MaskImage& mask(int section, int angle_idx) {
    return masks[static_cast<std::size_t>(section) * angles.size() +
                 static_cast<std::size_t>(angle_idx)];
  }

  int angle_index(TiltAngle a) const {
    for (std::size_t i = 0; i < angles.size(); ++i)
      if (angles[i] == a) return static_cast<int>(i);
    return -1;
  }

  void validate() const {
    if (nx < 1 || ny < 1 || n_sections < 1)
      throw DataError("tilt view set has empty dimensions");
    if (angles.empty()) throw DataError("tilt view set has no angles");
    const std::size_t expect = static_cast<std::size_t>(n_sections) * angles.size();
    if (images.size() != expect || masks.size() != expect)
      throw DataError("tilt view set image/mask count mismatch");
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].rows() != nx || images[i].cols() != ny ||
          masks[i].rows() != nx || masks[i].cols() != ny)
        throw DataError("tilt view image dims do not match the set");
      if (!images[i].allFinite())
        throw DataError("tilt view image contains non-finite values");
    }
  }
};

using TiltViewSetd = TiltViewSet<double>;

/// Add i.i.d. zero-mean Gaussian noise at a given amplitude SNR (dB), with
/// sigma = std(valid pixels) * 10^(-snr_db/20). Masks are untouched.
template <class Scalar>
TiltViewSet<Scalar> add_noise(const TiltViewSet<Scalar>& views, double snr_db,
                              std::uint64_t seed) {
  views.validate();
  if (std::isinf(snr_db) && snr_db > 0) return views;
  if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite or +inf");

  // Population standard deviation over every valid pixel in the set.
  double sum = 0, sumsq = 0;
  Eigen::Index count = 0;
  for (std::size_t i = 0; i < views.images.size(); ++i) {
    for (Eigen::Index idx = 0; idx < views.images[i].size(); ++idx) {
      if (!views.masks[i].data()[idx]) continue;
      const double x = double(views.images[i].data()[idx]);
      sum += x;
      sumsq += x * x;
      ++count;
    }
  }
  if (count == 0) throw DataError("tilt view set has no valid pixels");
  const double mean = sum / double(count);
  const double var = std::max(0.0, sumsq / double(count) - mean * mean);
  const double sigma_signal = std::sqrt(var);
  if (sigma_signal == 0)
    throw DataError("zero signal variance: SNR is undefined");

  const double sigma = sigma_signal * std::pow(10.0, -snr_db / 20.0);
  TiltViewSet<Scalar> out = views;
  out.snr_db = snr_db;
  out.noise_seed = seed;
  Rng rng(seed);
  // Fixed draw order: sections outer, then angle, then y-major pixels.
  for (int s = 0; s < out.n_sections; ++s)
    for (std::size_t a = 0; a < out.angles.size(); ++a) {
      auto& img = out.image(s, static_cast<int>(a));
      for (Eigen::Index y = 0; y < img.cols(); ++y)
        for (Eigen::Index x = 0; x < img.rows(); ++x)
          img(x, y) += Scalar(sigma * rng.gaussian());
    }
  return out;
}

/// Simulate section-wise tilt views of a whole volume: each pixel is the
/// mean of the L voxels on its ray; rays leaving the lateral bounds are
/// marked invalid. Noise (if any) is added after projection.
template <class Scalar>
TiltViewSet<Scalar> simulate_views(const Volume3D<Scalar>& volume,
                                   const TiltGeometry& geometry,
                                   const NoiseSpec& noise = {}) {
  geometry.validate();
  volume.validate();
  const int L = geometry.layers_per_section;
  if (volume.nz() % L != 0)
    throw DataError("volume nz = " + std::to_string(volume.nz()) +
                    " is not a multiple of layers_per_section = " +
                    std::to_string(L));

  TiltViewSet<Scalar> views;
  views.nx = volume.nx();
  views.ny = volume.ny();
  views.n_sections = volume.nz() / L;
  views.layers_per_section = L;
  views.angles = geometry.angles;
  views.images.reserve(static_cast<std::size_t>(views.n_sections) *
                       geometry.angles.size());
  views.masks.reserve(views.images.capacity());

  const Scalar inv_L = Scalar(1) / Scalar(L);
  for (int s = 0; s < views.n_sections; ++s) {
    for (TiltAngle angle : geometry.angles) {
      MatX<Scalar> img = MatX<Scalar>::Zero(views.nx, views.ny);
      MaskImage mask = MaskImage::Constant(views.nx, views.ny, false);
      const Eigen::Vector2i span = ray_span(angle, L);
      for (int y = 0; y + span[1] < views.ny; ++y) {
        for (int x = 0; x + span[0] < views.nx; ++x) {
          Scalar acc = 0;
          for (int ell = 0; ell < L; ++ell) {
            const Eigen::Vector2i step = ray_step(angle, ell, L);
            acc += volume.at(x + step[0], y + step[1], s * L + ell);
          }
          img(x, y) = acc * inv_L;
          mask(x, y) = true;
        }
      }
      views.images.push_back(std::move(img));
      views.masks.push_back(std::move(mask));
    }
  }

  if (!(std::isinf(noise.snr_db) && noise.snr_db > 0))
    return add_noise(views, noise.snr_db, noise.seed);
  return views;
}

/// Measurements of one patch gathered from the views, ordered exactly like
/// the ProjectionModel rows, with a per-row validity mask.
template <class Scalar = double>
struct PatchMeasurements {
  VecX<Scalar> values;
  Eigen::Array<bool, Eigen::Dynamic, 1> valid;
};

template <class Scalar>
PatchMeasurements<Scalar> gather_patch_measurements(
    const TiltViewSet<Scalar>& views, const ProjectionModel<Scalar>& model,
    const Eigen::Vector3i& origin) {
  const TiltGeometry& g = model.geometry;
  if (views.layers_per_section != g.layers_per_section)
    throw DataError("views and model disagree on layers_per_section");
  const int ox = origin[0], oy = origin[1], os = origin[2];
  if (ox < 0 || oy < 0 || os < 0 || ox + g.h > views.nx || oy + g.h > views.ny ||
      os + g.sections_per_patch() > views.n_sections)
    throw DataError("patch origin (" + std::to_string(ox) + "," +
                    std::to_string(oy) + "," + std::to_string(os) +
                    ") out of range");

  std::vector<int> angle_map(g.angles.size());
  for (std::size_t i = 0; i < g.angles.size(); ++i) {
    const int idx = views.angle_index(g.angles[i]);
    if (idx < 0)
      throw DataError(std::string("views are missing angle ") +
                      to_string(g.angles[i]));
    angle_map[i] = idx;
  }

  PatchMeasurements<Scalar> out;
  out.values.resize(model.rows());
  out.valid.resize(model.rows());
  for (Eigen::Index r = 0; r < model.rows(); ++r) {
    const RayRef& ray = model.row_index[static_cast<std::size_t>(r)];
    std::size_t ai = 0;
    while (g.angles[ai] != ray.angle) ++ai;
    const int view_angle = angle_map[ai];
    const auto& img = views.image(os + ray.section, view_angle);
    const auto& mask = views.mask(os + ray.section, view_angle);
    out.values[r] = img(ox + ray.px, oy + ray.py);
    out.valid[r] = mask(ox + ray.px, oy + ray.py);
  }
  return out;
}

// Tilt view file format TV1: JSON manifest plus one raw f32 image and one
// 1-bit mask file per (section, angle), stored next to the manifest.
template <class Scalar>
void write_tilt_views(const TiltViewSet<Scalar>& views, const std::string& path) {
  views.validate();
  namespace fs = std::filesystem;
  const std::string base = vv1_base(path);
  const fs::path dir = fs::path(base).parent_path();
  const std::string stem = fs::path(base).filename().string();

  json manifest = {
      {"format", "TV1"},
      {"nx", views.nx},
      {"ny", views.ny},
      {"n_sections", views.n_sections},
      {"layers_per_section", views.layers_per_section},
      {"noise_seed", views.noise_seed},
  };
  if (std::isfinite(views.snr_db))
    manifest["snr_db"] = views.snr_db;
  else
    manifest["snr_db"] = nullptr;  // noiseless
  json angles = json::array();
  for (TiltAngle a : views.angles) angles.push_back(to_string(a));
  manifest["angles"] = angles;

  json files = json::array();
  for (int s = 0; s < views.n_sections; ++s)
    for (std::size_t a = 0; a < views.angles.size(); ++a) {
      const std::string tag =
          stem + "_s" + std::to_string(s) + "_" + to_string(views.angles[a]);
      write_image_raw(views.image(s, static_cast<int>(a)),
                      (dir / (tag + ".raw")).string());
      write_bitmask(views.mask(s, static_cast<int>(a)),
                    (dir / (tag + ".mask")).string());
      files.push_back({{"section", s},
                       {"angle", to_string(views.angles[a])},
                       {"image", tag + ".raw"},
                       {"mask", tag + ".mask"}});
    }
  manifest["views"] = files;
  save_json(base + ".json", manifest);
}

template <class Scalar = double>
TiltViewSet<Scalar> read_tilt_views(const std::string& path) {
  namespace fs = std::filesystem;
  const std::string base = vv1_base(path);
  const fs::path dir = fs::path(base).parent_path();
  const json manifest = load_json(base + ".json");
  if (!manifest.contains("format") || manifest["format"] != "TV1")
    throw DataError(base + ".json: not a TV1 manifest");

  TiltViewSet<Scalar> views;
  views.nx = manifest.at("nx").get<int>();
  views.ny = manifest.at("ny").get<int>();
  views.n_sections = manifest.at("n_sections").get<int>();
  views.layers_per_section = manifest.at("layers_per_section").get<int>();
  if (manifest.contains("noise_seed"))
    views.noise_seed = manifest["noise_seed"].get<std::uint64_t>();
  if (manifest.contains("snr_db") && !manifest["snr_db"].is_null())
    views.snr_db = manifest["snr_db"].get<double>();
  for (const auto& a : manifest.at("angles"))
    views.angles.push_back(tilt_angle_from_string(a.get<std::string>()));

  views.images.resize(static_cast<std::size_t>(views.n_sections) *
                      views.angles.size());
  views.masks.resize(views.images.size());
  std::vector<bool> seen(views.images.size(), false);
  for (const auto& entry : manifest.at("views")) {
    const int s = entry.at("section").get<int>();
    const TiltAngle a = tilt_angle_from_string(entry.at("angle").get<std::string>());
    const int ai = views.angle_index(a);
    if (s < 0 || s >= views.n_sections || ai < 0)
      throw DataError(base + ".json: view entry out of range");
    const std::size_t slot =
        static_cast<std::size_t>(s) * views.angles.size() +
        static_cast<std::size_t>(ai);
    views.images[slot] = read_image_raw<Scalar>(
        (dir / entry.at("image").get<std::string>()).string(), views.nx, views.ny);
    views.masks[slot] = read_bitmask(
        (dir / entry.at("mask").get<std::string>()).string(), views.nx, views.ny);
    seen[slot] = true;
  }
  for (bool s : seen)
    if (!s) throw DataError(base + ".json: missing (section, angle) images");
  views.validate();
  return views;
}

}  // namespace vsr

#endif  // VSR_TOMOGRAPHY_HPP
