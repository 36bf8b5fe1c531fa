#ifndef VSR_PHANTOM_HPP
#define VSR_PHANTOM_HPP

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "vsr/error.hpp"
#include "vsr/random.hpp"
#include "vsr/volume.hpp"

namespace vsr {

// Deterministic membrane phantoms: thin slabs on randomly oriented, gently
// curved planes over a flat background, Gaussian-smoothed. Stands in for
// high-resolution acquisition volumes at desk scale. Slanted membranes are
// the point: depth super-resolution is exercised by structure that is
// neither flat in z nor aligned to the sectioning grid.

enum class OrientationMode { random_planes, axis_aligned, mixed };

inline const char* to_string(OrientationMode m) {
  switch (m) {
    case OrientationMode::random_planes: return "random_planes";
    case OrientationMode::axis_aligned: return "axis_aligned";
    case OrientationMode::mixed: return "mixed";
  }
  return "?";
}

inline OrientationMode orientation_mode_from_string(const std::string& s) {
  if (s == "random_planes") return OrientationMode::random_planes;
  if (s == "axis_aligned") return OrientationMode::axis_aligned;
  if (s == "mixed") return OrientationMode::mixed;
  throw ConfigError("unknown orientation mode '" + s + "'");
}

struct PhantomSpec {
  Eigen::Vector3i dims{60, 60, 60};
  std::uint64_t seed = 0;
  int n_membranes = 24;
  double thickness_voxels = 2.0;
  OrientationMode orientation_mode = OrientationMode::mixed;
  double membrane_value = 1.0;
  double background_value = 0.0;
  double smoothing_sigma = 0.8;

  void validate() const {
    if (dims.minCoeff() < 1) throw ConfigError("phantom dims must be >= 1");
    if (n_membranes < 0) throw ConfigError("n_membranes must be >= 0");
    if (!(thickness_voxels > 0)) throw ConfigError("thickness must be > 0");
    if (!(background_value >= 0) || !(background_value < membrane_value))
      throw ConfigError("need 0 <= background_value < membrane_value");
    if (smoothing_sigma < 0) throw ConfigError("smoothing_sigma must be >= 0");
  }
};

namespace detail {

// Separable Gaussian blur, kernel truncated at 3 sigma and renormalized at
// the boundaries (output stays a convex combination of inputs).
template <class Scalar>
void gaussian_blur_axis(Volume3D<Scalar>& vol, int axis, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  if (radius < 1) return;
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int t = -radius; t <= radius; ++t)
    kernel[static_cast<std::size_t>(t + radius)] =
        std::exp(-0.5 * (t / sigma) * (t / sigma));

  const Eigen::Vector3i dims = vol.dims;
  VecX<Scalar> out(vol.data.size());
  Eigen::Vector3i p;
  for (p[2] = 0; p[2] < dims[2]; ++p[2])
    for (p[1] = 0; p[1] < dims[1]; ++p[1])
      for (p[0] = 0; p[0] < dims[0]; ++p[0]) {
        double acc = 0, wsum = 0;
        for (int t = -radius; t <= radius; ++t) {
          Eigen::Vector3i q = p;
          q[axis] += t;
          if (q[axis] < 0 || q[axis] >= dims[axis]) continue;
          const double w = kernel[static_cast<std::size_t>(t + radius)];
          acc += w * double(vol.at(q[0], q[1], q[2]));
          wsum += w;
        }
        out[flat_index(dims, p[0], p[1], p[2])] = Scalar(acc / wsum);
      }
  vol.data = std::move(out);
}

struct MembranePlane {
  Eigen::Vector3d normal;
  Eigen::Vector3d point;
  Eigen::Vector3d wave_dir;  // in-plane direction of the sinusoidal warp
  double wave_amplitude = 0;
  double wave_length = 1;
  double wave_phase = 0;
};

inline Eigen::Vector3d random_unit_vector(Rng& rng) {
  Eigen::Vector3d v;
  do {
    v = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
  } while (v.norm() < 1e-9);
  return v.normalized();
}

}  // namespace detail

/// Deterministic membrane phantom (same seed, same volume, bit for bit).
template <class Scalar = double>
Volume3D<Scalar> generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Volume3D<Scalar> vol = Volume3D<Scalar>::zeros(spec.dims);
  vol.data.setConstant(Scalar(spec.background_value));

  Rng rng(spec.seed);
  std::vector<detail::MembranePlane> planes;
  for (int i = 0; i < spec.n_membranes; ++i) {
    detail::MembranePlane plane;
    if (spec.orientation_mode == OrientationMode::axis_aligned) {
      // Axis cycles z, x, y; offsets evenly spaced so positions are known.
      const int axis_order[3] = {2, 0, 1};
      const int axis = axis_order[i % 3];
      plane.normal = Eigen::Vector3d::Zero();
      plane.normal[axis] = 1.0;
      const double frac = double(i + 1) / double(spec.n_membranes + 1);
      plane.point = Eigen::Vector3d(spec.dims[0] - 1, spec.dims[1] - 1,
                                    spec.dims[2] - 1) * 0.5;
      plane.point[axis] = frac * (spec.dims[axis] - 1);
      plane.wave_amplitude = 0.0;  // analytic positions, no warp
      plane.wave_dir = Eigen::Vector3d::UnitX();
    } else {
      const bool force_oblique =
          spec.orientation_mode == OrientationMode::mixed && (i % 10) < 4;
      do {
        plane.normal = detail::random_unit_vector(rng);
        // oblique: plane tilted > 30 degrees from vertical, i.e. the normal
        // within 60 degrees of the z axis
      } while (force_oblique && std::abs(plane.normal[2]) < 0.5);
      for (int a = 0; a < 3; ++a)
        plane.point[a] = rng.uniform(0.0, double(spec.dims[a] - 1));
      // a direction in the plane for the low-frequency warp
      Eigen::Vector3d seed_dir = detail::random_unit_vector(rng);
      Eigen::Vector3d in_plane =
          seed_dir - seed_dir.dot(plane.normal) * plane.normal;
      while (in_plane.norm() < 1e-6) {
        seed_dir = detail::random_unit_vector(rng);
        in_plane = seed_dir - seed_dir.dot(plane.normal) * plane.normal;
      }
      plane.wave_dir = in_plane.normalized();
      plane.wave_amplitude = rng.uniform(1.0, 3.0);
      plane.wave_length = rng.uniform(15.0, 40.0);
      plane.wave_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    planes.push_back(plane);
  }

  const double half = 0.5 * spec.thickness_voxels;
  for (const auto& plane : planes) {
    for (int z = 0; z < spec.dims[2]; ++z)
      for (int y = 0; y < spec.dims[1]; ++y)
        for (int x = 0; x < spec.dims[0]; ++x) {
          const Eigen::Vector3d p(x, y, z);
          double d = plane.normal.dot(p - plane.point);
          if (plane.wave_amplitude > 0)
            d += plane.wave_amplitude *
                 std::sin(2.0 * std::numbers::pi * plane.wave_dir.dot(p) /
                              plane.wave_length +
                          plane.wave_phase);
          if (std::abs(d) <= half)
            vol.at(x, y, z) = Scalar(spec.membrane_value);
        }
  }

  if (spec.smoothing_sigma > 0)
    for (int axis = 0; axis < 3; ++axis)
      detail::gaussian_blur_axis(vol, axis, spec.smoothing_sigma);

  for (Eigen::Index i = 0; i < vol.size(); ++i)
    vol.data[i] = std::clamp(vol.data[i], Scalar(spec.background_value),
                             Scalar(spec.membrane_value));
  return vol;
}

}  // namespace vsr

#endif  // VSR_PHANTOM_HPP
