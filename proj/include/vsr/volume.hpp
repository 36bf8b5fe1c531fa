#ifndef VSR_VOLUME_HPP
#define VSR_VOLUME_HPP

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "vsr/error.hpp"

namespace vsr {

template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Flat index of voxel (x, y, z): x-fastest, then y, then z.
inline Eigen::Index flat_index(const Eigen::Vector3i& dims, int x, int y, int z) {
  return static_cast<Eigen::Index>(x) +
         static_cast<Eigen::Index>(dims[0]) *
             (static_cast<Eigen::Index>(y) +
              static_cast<Eigen::Index>(dims[1]) * static_cast<Eigen::Index>(z));
}

/// Inverse of flat_index.
inline Eigen::Vector3i unflatten(const Eigen::Vector3i& dims, Eigen::Index idx) {
  const Eigen::Index nx = dims[0], ny = dims[1];
  Eigen::Vector3i p;
  p[0] = static_cast<int>(idx % nx);
  p[1] = static_cast<int>((idx / nx) % ny);
  p[2] = static_cast<int>(idx / (nx * ny));
  return p;
}

/// Dense scalar field on a regular voxel grid. The universal signal container:
/// training volumes, reconstructions, and phantoms all live here. Data is
/// stored x-fastest, then y, then z; voxel_size_nm is informational only.
template <class Scalar = double>
struct Volume3D {
  Eigen::Vector3i dims{0, 0, 0};
  Eigen::Vector3d voxel_size_nm{1.0, 1.0, 1.0};
  VecX<Scalar> data;

  Volume3D() = default;
  Volume3D(Eigen::Vector3i d, VecX<Scalar> values,
           Eigen::Vector3d voxel_nm = {1.0, 1.0, 1.0})
      : dims(std::move(d)), voxel_size_nm(std::move(voxel_nm)),
        data(std::move(values)) {
    validate();
  }

  static Volume3D zeros(Eigen::Vector3i d,
                        Eigen::Vector3d voxel_nm = {1.0, 1.0, 1.0}) {
    if (d.minCoeff() < 1) throw DataError("volume dims must all be >= 1");
    Volume3D v;
    v.dims = d;
    v.voxel_size_nm = voxel_nm;
    v.data = VecX<Scalar>::Zero(Eigen::Index(d[0]) * d[1] * d[2]);
    return v;
  }

  Eigen::Index size() const { return data.size(); }
  int nx() const { return dims[0]; }
  int ny() const { return dims[1]; }
  int nz() const { return dims[2]; }

  Scalar& at(int x, int y, int z) { return data[flat_index(dims, x, y, z)]; }
  Scalar at(int x, int y, int z) const { return data[flat_index(dims, x, y, z)]; }

  void validate() const {
    if (dims.minCoeff() < 1) throw DataError("volume dims must all be >= 1");
    const Eigen::Index expect = Eigen::Index(dims[0]) * dims[1] * dims[2];
    if (data.size() != expect) {
      std::ostringstream os;
      os << "volume data length " << data.size() << " does not match dims "
         << dims[0] << "x" << dims[1] << "x" << dims[2];
      throw DataError(os.str());
    }
    if (!data.allFinite()) throw DataError("volume contains non-finite values");
  }
};

using Volume3Dd = Volume3D<double>;

/// Patch geometry: lateral side h, axial extent v, extraction stride.
/// The vectorized patch length is n = h*h*v.
struct PatchSpec {
  int h = 9;
  int v = 15;
  Eigen::Vector3i stride{4, 4, 10};

  int patch_len() const { return h * h * v; }
  Eigen::Vector3i extents() const { return {h, h, v}; }

  void validate() const {
    if (h < 1 || v < 1) throw ConfigError("patch extents must be >= 1");
    const Eigen::Vector3i ext = extents();
    for (int a = 0; a < 3; ++a) {
      if (stride[a] < 1) throw ConfigError("patch strides must be >= 1");
      if (stride[a] > ext[a])
        throw ConfigError("patch stride exceeds patch extent on axis " +
                          std::to_string(a));
    }
  }
};

/// A set of vectorized patches cut from one volume: one column per patch,
/// same x-fastest ordering as the volume.
template <class Scalar = double>
struct PatchBatch {
  PatchSpec spec;
  std::vector<Eigen::Vector3i> origins;
  MatX<Scalar> matrix;  // patch_len x count

  Eigen::Index count() const { return matrix.cols(); }
};

using PatchBatchd = PatchBatch<double>;

/// Stride lattice along one axis: {0, s, 2s, ...} with the final position
/// clamped so a patch flush with the far boundary is always included.
inline std::vector<int> patch_lattice(int dim, int extent, int stride) {
  if (dim < extent)
    throw DataError("dimension " + std::to_string(dim) +
                    " smaller than patch extent " + std::to_string(extent));
  std::vector<int> pos;
  for (int p = 0; p + extent <= dim; p += stride) pos.push_back(p);
  if (pos.back() != dim - extent) pos.push_back(dim - extent);
  return pos;
}

/// Cut every lattice patch out of the volume. Origins enumerate z-outer,
/// y-middle, x-inner, matching ascending (z, y, x) order.
template <class Scalar>
PatchBatch<Scalar> extract_patches(const Volume3D<Scalar>& volume,
                                   const PatchSpec& spec) {
  spec.validate();
  const Eigen::Vector3i ext = spec.extents();
  for (int a = 0; a < 3; ++a) {
    if (volume.dims[a] < ext[a])
      throw DataError("volume dim " + std::to_string(volume.dims[a]) +
                      " on axis " + std::to_string(a) +
                      " is smaller than patch extent " + std::to_string(ext[a]));
  }
  const auto lx = patch_lattice(volume.dims[0], ext[0], spec.stride[0]);
  const auto ly = patch_lattice(volume.dims[1], ext[1], spec.stride[1]);
  const auto lz = patch_lattice(volume.dims[2], ext[2], spec.stride[2]);

  PatchBatch<Scalar> batch;
  batch.spec = spec;
  batch.origins.reserve(lx.size() * ly.size() * lz.size());
  for (int z : lz)
    for (int y : ly)
      for (int x : lx) batch.origins.emplace_back(x, y, z);

  batch.matrix.resize(spec.patch_len(), Eigen::Index(batch.origins.size()));
  for (Eigen::Index c = 0; c < batch.matrix.cols(); ++c) {
    const Eigen::Vector3i& o = batch.origins[static_cast<std::size_t>(c)];
    Eigen::Index r = 0;
    for (int dz = 0; dz < ext[2]; ++dz)
      for (int dy = 0; dy < ext[1]; ++dy)
        for (int dx = 0; dx < ext[0]; ++dx)
          batch.matrix(r++, c) = volume.at(o[0] + dx, o[1] + dy, o[2] + dz);
  }
  return batch;
}

/// Copy one vectorized patch out of a volume (single-column extract).
template <class Scalar>
VecX<Scalar> extract_patch_at(const Volume3D<Scalar>& volume,
                              const Eigen::Vector3i& origin,
                              const Eigen::Vector3i& ext) {
  VecX<Scalar> out(Eigen::Index(ext[0]) * ext[1] * ext[2]);
  Eigen::Index r = 0;
  for (int dz = 0; dz < ext[2]; ++dz)
    for (int dy = 0; dy < ext[1]; ++dy)
      for (int dx = 0; dx < ext[0]; ++dx)
        out[r++] = volume.at(origin[0] + dx, origin[1] + dy, origin[2] + dz);
  return out;
}

// Streaming overlap-average accumulator. Patches must be fed in ascending
// (z, y, x) origin order; that fixed order is what makes reductions
// bit-reproducible regardless of how callers batch or thread the solves.
template <class Scalar = double>
class PatchAccumulator {
 public:
  PatchAccumulator(Eigen::Vector3i dims, Eigen::Vector3i patch_extents)
      : dims_(dims), ext_(patch_extents),
        sum_(VecX<Scalar>::Zero(Eigen::Index(dims[0]) * dims[1] * dims[2])),
        count_(Eigen::VectorXi::Zero(sum_.size())) {}

  void add(const Eigen::Vector3i& origin,
           const Eigen::Ref<const VecX<Scalar>>& column) {
    for (int a = 0; a < 3; ++a) {
      if (origin[a] < 0 || origin[a] + ext_[a] > dims_[a])
        throw DataError("patch at (" + std::to_string(origin[0]) + "," +
                        std::to_string(origin[1]) + "," +
                        std::to_string(origin[2]) +
                        ") does not fit inside the output volume");
    }
    if (column.size() != Eigen::Index(ext_[0]) * ext_[1] * ext_[2])
      throw DataError("patch column length does not match patch extents");
    Eigen::Index r = 0;
    for (int dz = 0; dz < ext_[2]; ++dz)
      for (int dy = 0; dy < ext_[1]; ++dy) {
        const Eigen::Index base =
            flat_index(dims_, origin[0], origin[1] + dy, origin[2] + dz);
        for (int dx = 0; dx < ext_[0]; ++dx) {
          sum_[base + dx] += column[r++];
          count_[base + dx] += 1;
        }
      }
  }

  Eigen::Index uncovered() const { return (count_.array() == 0).count(); }

  /// Mean per voxel; throws listing uncovered voxels if any have no coverage.
  Volume3D<Scalar> finalize() const {
    if (uncovered() > 0) {
      std::ostringstream os;
      os << "coverage gap: " << uncovered() << " voxel(s) not covered by any patch;";
      int listed = 0;
      for (Eigen::Index i = 0; i < count_.size() && listed < 8; ++i) {
        if (count_[i] == 0) {
          const Eigen::Vector3i p = unflatten(dims_, i);
          os << " (" << p[0] << "," << p[1] << "," << p[2] << ")";
          ++listed;
        }
      }
      if (uncovered() > listed) os << " ...";
      throw DataError(os.str());
    }
    return finalize_fill(Scalar(0));
  }

  /// Mean per voxel; uncovered voxels get fill_value instead of throwing.
  Volume3D<Scalar> finalize_fill(Scalar fill_value) const {
    Volume3D<Scalar> out = Volume3D<Scalar>::zeros(dims_);
    for (Eigen::Index i = 0; i < sum_.size(); ++i)
      out.data[i] = count_[i] > 0 ? sum_[i] / Scalar(count_[i]) : fill_value;
    return out;
  }

 private:
  Eigen::Vector3i dims_, ext_;
  VecX<Scalar> sum_;
  Eigen::VectorXi count_;
};

/// Restore a volume as the per-voxel arithmetic mean of overlapping patches.
/// The batch is first sorted by origin (ascending z, y, x; ties broken by
/// column content) so the result does not depend on patch list order.
template <class Scalar>
Volume3D<Scalar> recompose_average(const PatchBatch<Scalar>& batch,
                                   const Eigen::Vector3i& dims) {
  if (batch.count() == 0) throw DataError("cannot recompose an empty batch");
  if (batch.origins.size() != static_cast<std::size_t>(batch.count()))
    throw DataError("origin count does not match patch column count");

  std::vector<Eigen::Index> order(batch.origins.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = Eigen::Index(i);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const Eigen::Vector3i& oa = batch.origins[static_cast<std::size_t>(a)];
    const Eigen::Vector3i& ob = batch.origins[static_cast<std::size_t>(b)];
    if (oa[2] != ob[2]) return oa[2] < ob[2];
    if (oa[1] != ob[1]) return oa[1] < ob[1];
    if (oa[0] != ob[0]) return oa[0] < ob[0];
    // Duplicate origins: order by content so shuffled inputs still
    // accumulate identically.
    for (Eigen::Index r = 0; r < batch.matrix.rows(); ++r) {
      if (batch.matrix(r, a) != batch.matrix(r, b))
        return batch.matrix(r, a) < batch.matrix(r, b);
    }
    return false;
  });

  PatchAccumulator<Scalar> acc(dims, batch.spec.extents());
  for (Eigen::Index idx : order)
    acc.add(batch.origins[static_cast<std::size_t>(idx)], batch.matrix.col(idx));
  return acc.finalize();
}

/// Affine rescale to [0, 1] for ingestion. A constant volume maps to zeros.
template <class Scalar>
Volume3D<Scalar> rescale_to_unit(const Volume3D<Scalar>& v) {
  const Scalar lo = v.data.minCoeff();
  const Scalar hi = v.data.maxCoeff();
  Volume3D<Scalar> out = v;
  if (hi > lo)
    out.data = (v.data.array() - lo) / (hi - lo);
  else
    out.data.setZero();
  return out;
}

/// Subtract the per-column mean (the optional mean-centering used for
/// dictionary training experiments; off by default everywhere).
template <class Scalar>
void center_columns(PatchBatch<Scalar>& batch) {
  for (Eigen::Index c = 0; c < batch.matrix.cols(); ++c)
    batch.matrix.col(c).array() -= batch.matrix.col(c).mean();
}

}  // namespace vsr

#endif  // VSR_VOLUME_HPP
