#ifndef VSR_EVALUATION_HPP
#define VSR_EVALUATION_HPP

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "vsr/error.hpp"
#include "vsr/io.hpp"
#include "vsr/tomography.hpp"
#include "vsr/volume.hpp"

namespace vsr {

// Fidelity metrics (normalized dot products of volumes and their gradient
// fields) and the two comparison baselines: cubic interpolation along z and
// unfiltered backprojection.

template <class Scalar>
Scalar normalized_dot(const VecX<Scalar>& a, const VecX<Scalar>& b) {
  if (a.size() != b.size()) throw DataError("normalized_dot: length mismatch");
  const Scalar na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0)
    throw DataError("normalized_dot: zero-norm input");
  return a.dot(b) / (na * nb);
}

template <class Scalar>
Scalar normalized_dot(const Volume3D<Scalar>& a, const Volume3D<Scalar>& b) {
  if (a.dims != b.dims) throw DataError("normalized_dot: dims mismatch");
  return normalized_dot<Scalar>(a.data, b.data);
}

struct GradientMetrics {
  double grad_xy_ndp = 0;
  double grad_z_ndp = 0;
};

namespace detail {

// Central differences along one axis, interior voxels of that axis only.
template <class Scalar>
VecX<Scalar> central_gradient(const Volume3D<Scalar>& v, int axis) {
  Eigen::Vector3i lo = Eigen::Vector3i::Zero();
  Eigen::Vector3i hi = v.dims;
  lo[axis] = 1;
  hi[axis] -= 1;
  VecX<Scalar> g((hi - lo).template cast<Eigen::Index>().prod());
  Eigen::Index i = 0;
  Eigen::Vector3i step = Eigen::Vector3i::Zero();
  step[axis] = 1;
  for (int z = lo[2]; z < hi[2]; ++z)
    for (int y = lo[1]; y < hi[1]; ++y)
      for (int x = lo[0]; x < hi[0]; ++x)
        g[i++] = (v.at(x + step[0], y + step[1], z + step[2]) -
                  v.at(x - step[0], y - step[1], z - step[2])) /
                 Scalar(2);
  return g;
}

}  // namespace detail

/// Normalized dot products of the gradient fields: x and y gradients are
/// concatenated into one transverse score, z stands alone.
template <class Scalar>
GradientMetrics gradient_metrics(const Volume3D<Scalar>& truth,
                                 const Volume3D<Scalar>& recon) {
  if (truth.dims != recon.dims) throw DataError("gradient_metrics: dims mismatch");
  if (truth.dims.minCoeff() < 3)
    throw DataError("gradient_metrics: every dim must be >= 3");

  const VecX<Scalar> tx = detail::central_gradient(truth, 0);
  const VecX<Scalar> ty = detail::central_gradient(truth, 1);
  const VecX<Scalar> rx = detail::central_gradient(recon, 0);
  const VecX<Scalar> ry = detail::central_gradient(recon, 1);
  VecX<Scalar> txy(tx.size() + ty.size()), rxy(rx.size() + ry.size());
  txy << tx, ty;
  rxy << rx, ry;

  GradientMetrics m;
  m.grad_xy_ndp = double(normalized_dot<Scalar>(txy, rxy));
  m.grad_z_ndp = double(normalized_dot<Scalar>(detail::central_gradient(truth, 2),
                                               detail::central_gradient(recon, 2)));
  return m;
}

/// Cubic interpolation along z: each section's normal view samples the
/// section's axial center; a natural cubic spline per lateral pixel fills in
/// the layers, clamped (not extrapolated) beyond the outermost samples.
template <class Scalar>
Volume3D<Scalar> cubic_z_interpolate(const TiltViewSet<Scalar>& views) {
  views.validate();
  const int ni = views.angle_index(TiltAngle::normal);
  if (ni < 0) throw DataError("cubic interpolation needs normal views");
  const int S = views.n_sections;
  if (S < 2) throw DataError("cubic interpolation needs at least 2 sections");
  const int L = views.layers_per_section;
  const double spacing = double(L);

  // Natural spline second derivatives from a constant tridiagonal system
  // (uniform knots); Thomas factorization shared by every pixel.
  const int interior = S - 2;
  std::vector<double> diag(static_cast<std::size_t>(std::max(0, interior)));
  std::vector<double> upper(diag.size());
  for (int i = 0; i < interior; ++i) {
    double d = 2.0 * spacing / 3.0;
    if (i > 0) d -= (spacing / 6.0) * upper[static_cast<std::size_t>(i - 1)];
    diag[static_cast<std::size_t>(i)] = d;
    upper[static_cast<std::size_t>(i)] = (spacing / 6.0) / d;
  }

  Volume3D<Scalar> out = Volume3D<Scalar>::zeros({views.nx, views.ny, L * S});
  std::vector<double> f(static_cast<std::size_t>(S));
  std::vector<double> m(static_cast<std::size_t>(S));
  std::vector<double> rhs(static_cast<std::size_t>(std::max(0, interior)));

  const double z0 = 0.5 * (L - 1);
  for (int y = 0; y < views.ny; ++y)
    for (int x = 0; x < views.nx; ++x) {
      for (int s = 0; s < S; ++s) f[static_cast<std::size_t>(s)] = views.image(s, ni)(x, y);
      // forward sweep
      for (int i = 0; i < interior; ++i) {
        double r = (f[static_cast<std::size_t>(i + 2)] -
                    2.0 * f[static_cast<std::size_t>(i + 1)] +
                    f[static_cast<std::size_t>(i)]) /
                   spacing;
        if (i > 0) r -= (spacing / 6.0) * rhs[static_cast<std::size_t>(i - 1)] /
                        diag[static_cast<std::size_t>(i - 1)];
        rhs[static_cast<std::size_t>(i)] = r;
      }
      m[0] = 0.0;
      m[static_cast<std::size_t>(S - 1)] = 0.0;
      for (int i = interior - 1; i >= 0; --i) {
        double v = rhs[static_cast<std::size_t>(i)] / diag[static_cast<std::size_t>(i)];
        if (i < interior - 1)
          v -= upper[static_cast<std::size_t>(i)] * m[static_cast<std::size_t>(i + 2)];
        m[static_cast<std::size_t>(i + 1)] = v;
      }

      for (int z = 0; z < L * S; ++z) {
        // clamp to the sampled range: no extrapolation beyond end centers
        double zc = std::clamp(double(z), z0, z0 + spacing * (S - 1));
        int seg = std::clamp(int((zc - z0) / spacing), 0, S - 2);
        const double za = z0 + spacing * seg;
        const double zb = za + spacing;
        const double ma = m[static_cast<std::size_t>(seg)];
        const double mb = m[static_cast<std::size_t>(seg + 1)];
        const double fa = f[static_cast<std::size_t>(seg)];
        const double fb = f[static_cast<std::size_t>(seg + 1)];
        const double t1 = zb - zc, t2 = zc - za;
        const double value =
            ma * t1 * t1 * t1 / (6.0 * spacing) + mb * t2 * t2 * t2 / (6.0 * spacing) +
            (fa / spacing - ma * spacing / 6.0) * t1 +
            (fb / spacing - mb * spacing / 6.0) * t2;
        out.at(x, y, z) = Scalar(value);
      }
    }
  return out;
}

struct BackprojectReport {
  Eigen::Index uncovered_voxels = 0;
};

/// Unfiltered backprojection: each valid view pixel smears its value
/// uniformly along the ray's L voxels, and each voxel takes the mean of the
/// contributions covering it. Voxels with no coverage fall back to the
/// section's normal-view value (zero if no normal view exists) and are
/// counted in the report.
template <class Scalar>
Volume3D<Scalar> backproject(const TiltViewSet<Scalar>& views,
                             const TiltGeometry& geometry,
                             BackprojectReport* report = nullptr) {
  views.validate();
  geometry.validate();
  if (views.layers_per_section != geometry.layers_per_section)
    throw DataError("views and geometry disagree on layers_per_section");
  const int L = geometry.layers_per_section;

  std::vector<int> angle_map;
  for (TiltAngle a : geometry.angles) {
    const int idx = views.angle_index(a);
    if (idx < 0)
      throw DataError(std::string("views are missing angle ") + to_string(a));
    angle_map.push_back(idx);
  }

  const Eigen::Vector3i dims{views.nx, views.ny, L * views.n_sections};
  VecX<Scalar> sum = VecX<Scalar>::Zero(Eigen::Index(dims[0]) * dims[1] * dims[2]);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(sum.size());

  for (int s = 0; s < views.n_sections; ++s)
    for (std::size_t a = 0; a < geometry.angles.size(); ++a) {
      const TiltAngle angle = geometry.angles[a];
      const auto& img = views.image(s, angle_map[a]);
      const auto& mask = views.mask(s, angle_map[a]);
      const Eigen::Vector2i span = ray_span(angle, L);
      for (int y = 0; y + span[1] < views.ny; ++y)
        for (int x = 0; x + span[0] < views.nx; ++x) {
          if (!mask(x, y)) continue;
          const Scalar value = img(x, y);
          for (int ell = 0; ell < L; ++ell) {
            const Eigen::Vector2i step = ray_step(angle, ell, L);
            const Eigen::Index idx =
                flat_index(dims, x + step[0], y + step[1], s * L + ell);
            sum[idx] += value;
            count[idx] += 1;
          }
        }
    }

  const int ni = views.angle_index(TiltAngle::normal);
  Volume3D<Scalar> out = Volume3D<Scalar>::zeros(dims);
  Eigen::Index uncovered = 0;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const Eigen::Index idx = flat_index(dims, x, y, z);
        if (count[idx] > 0) {
          out.data[idx] = sum[idx] / Scalar(count[idx]);
        } else {
          ++uncovered;
          out.data[idx] = ni >= 0 ? views.image(z / L, ni)(x, y) : Scalar(0);
        }
      }
  if (report) report->uncovered_voxels = uncovered;
  return out;
}

/// The Fig. 7 metric set for one (truth, candidate) pair. Dot products are
/// reported both raw and mean-subtracted since either convention is common.
struct MetricReport {
  double volume_ndp = 0;
  double volume_ndp_centered = 0;
  double grad_xy_ndp = 0;
  double grad_z_ndp = 0;
  json metadata;

  json to_json() const {
    json j = {
        {"volume_ndp", volume_ndp},
        {"volume_ndp_centered", volume_ndp_centered},
        {"grad_xy_ndp", grad_xy_ndp},
        {"grad_z_ndp", grad_z_ndp},
    };
    if (!metadata.is_null()) j["metadata"] = metadata;
    return j;
  }
};

template <class Scalar>
MetricReport evaluate_pair(const Volume3D<Scalar>& truth,
                           const Volume3D<Scalar>& candidate,
                           json metadata = {}) {
  MetricReport report;
  report.volume_ndp = double(normalized_dot(truth, candidate));
  VecX<Scalar> tc = truth.data.array() - truth.data.mean();
  VecX<Scalar> cc = candidate.data.array() - candidate.data.mean();
  if (tc.norm() == 0 || cc.norm() == 0)
    throw DataError("centered normalized dot undefined for constant volumes");
  report.volume_ndp_centered = double(tc.dot(cc) / (tc.norm() * cc.norm()));
  const GradientMetrics g = gradient_metrics(truth, candidate);
  report.grad_xy_ndp = g.grad_xy_ndp;
  report.grad_z_ndp = g.grad_z_ndp;
  report.metadata = std::move(metadata);
  return report;
}

}  // namespace vsr

#endif  // VSR_EVALUATION_HPP
