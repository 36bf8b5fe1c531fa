#ifndef VSR_RECONSTRUCTION_HPP
#define VSR_RECONSTRUCTION_HPP

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <vector>

#include "vsr/dictionary.hpp"
#include "vsr/error.hpp"
#include "vsr/io.hpp"
#include "vsr/lasso.hpp"
#include "vsr/parallel.hpp"
#include "vsr/tomography.hpp"
#include "vsr/volume.hpp"

namespace vsr {

// Patch-wise sparse recovery from tilt measurements (step A), overlap-average
// assembly, and dense re-smoothing against the dictionary (step B), plus fold
// detection and mask-aware inpainting. Patch solves run in parallel; the
// accumulation into the output volume is sequential in lattice order, so the
// result is bit-identical for any thread count.

struct ReconConfig {
  double lambda_recover = 0.1;
  double lambda_smooth = 0.1;
  Eigen::Vector3i recover_stride{1, 1, 0};  // z = 0 selects one section (L)
  Eigen::Vector3i smooth_stride{1, 1, 1};
  bool smooth_enabled = true;
  bool single_view = false;          // restrict to the normal angle
  double min_valid_fraction = 0.1;   // skip patches with fewer valid rows
  SolverConfig solver;               // tol / max_iter for both lasso steps
  int n_threads = 1;

  void validate() const {
    if (lambda_recover < 0 || lambda_smooth < 0)
      throw ConfigError("lambda must be >= 0");
    if (min_valid_fraction < 0 || min_valid_fraction > 1)
      throw ConfigError("min_valid_fraction must be in [0, 1]");
  }
};

struct ReconReport {
  Eigen::Index n_patches = 0;
  Eigen::Index n_skipped = 0;       // below the valid-measurement floor
  Eigen::Index n_unconverged = 0;   // lasso hit the iteration cap
  Eigen::Index uncovered_voxels = 0;  // covered only by skipped patches
  bool coverage_gap = false;
};

/// Per-section fold/occlusion masks; true marks an occluded pixel.
struct FoldMask {
  std::vector<MaskImage> sections;

  void validate(int nx, int ny, int n_sections) const {
    if (static_cast<int>(sections.size()) != n_sections)
      throw DataError("fold mask section count does not match views");
    for (const auto& m : sections)
      if (m.rows() != nx || m.cols() != ny)
        throw DataError("fold mask dims do not match view images");
  }
};

/// Invalidate fold pixels in every angle image of each section (tilt views
/// are registered to the normal view, so the footprint is shared).
template <class Scalar>
TiltViewSet<Scalar> apply_fold_mask(const TiltViewSet<Scalar>& views,
                                    const FoldMask& folds) {
  folds.validate(views.nx, views.ny, views.n_sections);
  TiltViewSet<Scalar> out = views;
  for (int s = 0; s < out.n_sections; ++s)
    for (std::size_t a = 0; a < out.angles.size(); ++a)
      out.mask(s, static_cast<int>(a)) =
          out.mask(s, static_cast<int>(a)) &&
          !folds.sections[static_cast<std::size_t>(s)];
  return out;
}

namespace detail {

// corr = B^T Y in fixed-width column blocks: block boundaries do not depend
// on the thread count, so every column is computed by the same kernel on the
// same operands regardless of parallelism.
template <class Scalar>
void block_corr(const MatX<Scalar>& B, const MatX<Scalar>& Y, MatX<Scalar>& corr,
                int n_threads) {
  constexpr Eigen::Index kBlock = 128;
  const Eigen::Index blocks = (Y.cols() + kBlock - 1) / kBlock;
  corr.resize(B.cols(), Y.cols());
  parallel_for(static_cast<std::size_t>(blocks), n_threads, [&](std::size_t b) {
    const Eigen::Index start = Eigen::Index(b) * kBlock;
    const Eigen::Index width = std::min(kBlock, Y.cols() - start);
    corr.middleCols(start, width).noalias() =
        B.transpose() * Y.middleCols(start, width);
  });
}

enum class PatchStatus { solved, skipped };

struct SolvedPatch {
  VecX<double> decoded;
  PatchStatus status = PatchStatus::skipped;
  bool converged = true;
};

}  // namespace detail

/// Algorithm step A + optional step B. Measurement rows flagged invalid
/// (boundary rays, folds) are dropped per patch before the lasso; patches
/// whose valid-row count falls below min_valid_fraction * m are skipped and
/// reported, and voxels covered by no surviving patch are zero-filled with a
/// coverage flag.
template <class Scalar>
Volume3D<Scalar> reconstruct_volume(const TiltViewSet<Scalar>& views_in,
                                    const Dictionary<Scalar>& dictionary,
                                    const ProjectionModel<Scalar>& model_in,
                                    const ReconConfig& config,
                                    const FoldMask* folds = nullptr,
                                    ReconReport* report = nullptr) {
  config.validate();
  dictionary.validate(1e-8);
  views_in.validate();

  const ProjectionModel<Scalar> single_model =
      config.single_view && model_in.geometry.angles.size() > 1
          ? build_projection_model<Scalar>(model_in.geometry.normal_only())
          : ProjectionModel<Scalar>{};
  const ProjectionModel<Scalar>& model =
      single_model.rows() > 0 ? single_model : model_in;

  const TiltGeometry& geometry = model.geometry;
  if (dictionary.spec.h != geometry.h || dictionary.spec.v != geometry.v)
    throw DataError("dictionary patch spec does not match model geometry");
  if (views_in.layers_per_section != geometry.layers_per_section)
    throw DataError("views and model disagree on layers_per_section");
  const int spp = geometry.sections_per_patch();
  if (views_in.n_sections < spp)
    throw DataError("views cover fewer sections than one patch needs");

  const TiltViewSet<Scalar> masked =
      folds ? apply_fold_mask(views_in, *folds) : TiltViewSet<Scalar>{};
  const TiltViewSet<Scalar>& views = folds ? masked : views_in;

  const int L = geometry.layers_per_section;
  Eigen::Vector3i stride = config.recover_stride;
  if (stride[2] == 0) stride[2] = L;
  if (stride[0] < 1 || stride[1] < 1)
    throw ConfigError("recover stride must be >= 1");
  if (stride[2] % L != 0)
    throw ConfigError("axial recover stride must be a multiple of layers_per_section");

  const auto lat_x = patch_lattice(views.nx, geometry.h, stride[0]);
  const auto lat_y = patch_lattice(views.ny, geometry.h, stride[1]);
  const auto lat_s = patch_lattice(views.n_sections, spp, stride[2] / L);

  const Eigen::Index m = model.rows();
  const Eigen::Index k = dictionary.k();
  const Eigen::Index floor_rows = static_cast<Eigen::Index>(
      std::ceil(config.min_valid_fraction * double(m)));

  // B = P D and its Gram, shared by every patch with a full set of rows.
  MatX<Scalar> projected_atoms = model.matrix * dictionary.atoms;
  MatX<Scalar> gram(k, k);
  gram.template selfadjointView<Eigen::Lower>().rankUpdate(
      projected_atoms.transpose());
  gram.template triangularView<Eigen::StrictlyUpper>() =
      gram.transpose().template triangularView<Eigen::StrictlyUpper>();

  SolverConfig recover_solver = config.solver;
  recover_solver.lambda = config.lambda_recover;
  recover_solver.record_trace = false;

  ReconReport local_report;
  const Eigen::Vector3i out_dims{views.nx, views.ny, L * views.n_sections};
  PatchAccumulator<Scalar> accumulator(out_dims, dictionary.spec.extents());

  constexpr std::size_t kChunk = 256;
  std::vector<Eigen::Vector3i> origins;
  origins.reserve(kChunk);
  std::vector<detail::SolvedPatch> solved(kChunk);
  MatX<Scalar> values(m, Eigen::Index(kChunk));
  std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> valid(kChunk);
  MatX<Scalar> corr;

  const auto flush = [&] {
    if (origins.empty()) return;
    const Eigen::Index c = Eigen::Index(origins.size());
    detail::block_corr<Scalar>(projected_atoms, values.leftCols(c), corr,
                               config.n_threads);
    parallel_for(origins.size(), config.n_threads, [&](std::size_t i) {
      detail::SolvedPatch& slot = solved[i];
      const Eigen::Index n_valid = valid[i].count();
      if (n_valid < floor_rows) {
        slot.status = detail::PatchStatus::skipped;
        return;
      }
      SparseCode<Scalar> code;
      if (n_valid == m) {
        code = lasso_solve_gram<Scalar>(
            gram, corr.col(Eigen::Index(i)),
            values.col(Eigen::Index(i)).squaredNorm(), recover_solver);
      } else {
        MatX<Scalar> B_valid(n_valid, k);
        VecX<Scalar> y_valid(n_valid);
        Eigen::Index r = 0;
        for (Eigen::Index row = 0; row < m; ++row) {
          if (!valid[i][row]) continue;
          B_valid.row(r) = projected_atoms.row(row);
          y_valid[r] = values(row, Eigen::Index(i));
          ++r;
        }
        code = lasso_solve<Scalar>(B_valid, y_valid, recover_solver);
      }
      slot.status = detail::PatchStatus::solved;
      slot.converged = code.converged;
      slot.decoded = dictionary.atoms * code.coeffs;
    });
    for (std::size_t i = 0; i < origins.size(); ++i) {
      ++local_report.n_patches;
      if (solved[i].status == detail::PatchStatus::skipped) {
        ++local_report.n_skipped;
        continue;
      }
      if (!solved[i].converged) ++local_report.n_unconverged;
      accumulator.add(origins[i], solved[i].decoded);
    }
    origins.clear();
  };

  for (int s : lat_s)
    for (int y : lat_y)
      for (int x : lat_x) {
        const auto measured =
            gather_patch_measurements(views, model, {x, y, s});
        const std::size_t slot = origins.size();
        values.col(Eigen::Index(slot)) = measured.values;
        valid[slot] = measured.valid;
        origins.push_back({x, y, s * L});
        if (origins.size() == kChunk) flush();
      }
  flush();

  local_report.uncovered_voxels = accumulator.uncovered();
  local_report.coverage_gap = local_report.uncovered_voxels > 0;
  Volume3D<Scalar> volume = accumulator.finalize_fill(Scalar(0));

  if (config.smooth_enabled) {
    // Step B: re-extract the recovered volume densely and re-code each patch
    // against the dictionary itself (the denoising projection).
    PatchSpec smooth_spec = dictionary.spec;
    smooth_spec.stride = config.smooth_stride;
    smooth_spec.validate();
    const auto sx = patch_lattice(out_dims[0], smooth_spec.h, smooth_spec.stride[0]);
    const auto sy = patch_lattice(out_dims[1], smooth_spec.h, smooth_spec.stride[1]);
    const auto sz = patch_lattice(out_dims[2], smooth_spec.v, smooth_spec.stride[2]);

    MatX<Scalar> dict_gram(k, k);
    dict_gram.template selfadjointView<Eigen::Lower>().rankUpdate(
        dictionary.atoms.transpose());
    dict_gram.template triangularView<Eigen::StrictlyUpper>() =
        dict_gram.transpose().template triangularView<Eigen::StrictlyUpper>();

    SolverConfig smooth_solver = config.solver;
    smooth_solver.lambda = config.lambda_smooth;
    smooth_solver.record_trace = false;

    PatchAccumulator<Scalar> smooth_acc(out_dims, smooth_spec.extents());
    const Eigen::Index n = dictionary.n();
    MatX<Scalar> patch_block(n, Eigen::Index(kChunk));
    std::vector<Eigen::Vector3i> smooth_origins;
    smooth_origins.reserve(kChunk);
    std::vector<VecX<Scalar>> smoothed(kChunk);
    std::vector<bool> ok(kChunk, true);

    const auto flush_smooth = [&] {
      if (smooth_origins.empty()) return;
      const Eigen::Index c = Eigen::Index(smooth_origins.size());
      detail::block_corr<Scalar>(dictionary.atoms, patch_block.leftCols(c), corr,
                                 config.n_threads);
      parallel_for(smooth_origins.size(), config.n_threads, [&](std::size_t i) {
        const auto code = lasso_solve_gram<Scalar>(
            dict_gram, corr.col(Eigen::Index(i)),
            patch_block.col(Eigen::Index(i)).squaredNorm(), smooth_solver);
        ok[i] = code.converged;
        smoothed[i] = dictionary.atoms * code.coeffs;
      });
      for (std::size_t i = 0; i < smooth_origins.size(); ++i) {
        if (!ok[i]) ++local_report.n_unconverged;
        smooth_acc.add(smooth_origins[i], smoothed[i]);
      }
      smooth_origins.clear();
    };

    for (int z : sz)
      for (int y : sy)
        for (int x : sx) {
          patch_block.col(Eigen::Index(smooth_origins.size())) =
              extract_patch_at(volume, {x, y, z}, smooth_spec.extents());
          smooth_origins.push_back({x, y, z});
          if (smooth_origins.size() == kChunk) flush_smooth();
        }
    flush_smooth();
    volume = smooth_acc.finalize();
  }

  if (report) *report = local_report;
  return volume;
}

struct FoldParams {
  double threshold_sigma = 4.0;
  int min_region = 64;  // smaller non-fold islands are absorbed
  int min_fold = 16;    // smaller fold specks are discarded as dust
  bool reversed_contrast = false;
};

struct FoldDetectResult {
  MaskImage mask;
  bool degenerate = false;  // sigma was zero; mask is empty
  double threshold = 0;
};

namespace detail {

inline MaskImage dilate3x3(const MaskImage& in) {
  MaskImage out = MaskImage::Constant(in.rows(), in.cols(), false);
  for (Eigen::Index y = 0; y < in.cols(); ++y)
    for (Eigen::Index x = 0; x < in.rows(); ++x) {
      if (!in(x, y)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Eigen::Index nx = x + dx, ny = y + dy;
          if (nx >= 0 && nx < in.rows() && ny >= 0 && ny < in.cols())
            out(nx, ny) = true;
        }
    }
  return out;
}

inline MaskImage erode3x3(const MaskImage& in) {
  // out-of-bounds neighbors do not veto, so closing is the identity on
  // rectangles that touch the border
  MaskImage out = MaskImage::Constant(in.rows(), in.cols(), false);
  for (Eigen::Index y = 0; y < in.cols(); ++y)
    for (Eigen::Index x = 0; x < in.rows(); ++x) {
      bool keep = in(x, y);
      for (int dy = -1; dy <= 1 && keep; ++dy)
        for (int dx = -1; dx <= 1 && keep; ++dx) {
          const Eigen::Index nx = x + dx, ny = y + dy;
          if (nx >= 0 && nx < in.rows() && ny >= 0 && ny < in.cols())
            keep = in(nx, ny);
        }
      out(x, y) = keep;
    }
  return out;
}

// 8-connected components over pixels with the given value; returns labels
// (-1 elsewhere) and per-component pixel counts.
inline std::vector<Eigen::Index> connected_components(const MaskImage& mask,
                                                      bool value,
                                                      Eigen::ArrayXXi& labels) {
  labels = Eigen::ArrayXXi::Constant(mask.rows(), mask.cols(), -1);
  std::vector<Eigen::Index> sizes;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index y0 = 0; y0 < mask.cols(); ++y0)
    for (Eigen::Index x0 = 0; x0 < mask.rows(); ++x0) {
      if (mask(x0, y0) != value || labels(x0, y0) >= 0) continue;
      const int label = static_cast<int>(sizes.size());
      Eigen::Index count = 0;
      stack.push_back({x0, y0});
      labels(x0, y0) = label;
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        ++count;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const Eigen::Index nx = x + dx, ny = y + dy;
            if (nx < 0 || nx >= mask.rows() || ny < 0 || ny >= mask.cols())
              continue;
            if (mask(nx, ny) == value && labels(nx, ny) < 0) {
              labels(nx, ny) = label;
              stack.push_back({nx, ny});
            }
          }
      }
      sizes.push_back(count);
    }
  return sizes;
}

}  // namespace detail

/// Fold detection on one section image: threshold at mean - 4 sigma (folds
/// are dark in raw positives; --reversed-contrast flips the comparison),
/// close tiny bridges with a 3x3 morphological closing, absorb small
/// non-fold islands, and discard fold specks as dust.
template <class Scalar>
FoldDetectResult detect_folds(const MatX<Scalar>& image,
                              const FoldParams& params = {}) {
  if (!image.allFinite()) throw DataError("fold detection on non-finite image");
  FoldDetectResult result;
  const double mean = double(image.mean());
  const double var =
      double((image.array() - Scalar(mean)).square().sum()) / double(image.size());
  const double sigma = std::sqrt(std::max(0.0, var));
  if (sigma == 0) {
    result.mask = MaskImage::Constant(image.rows(), image.cols(), false);
    result.degenerate = true;
    return result;
  }

  MaskImage mask(image.rows(), image.cols());
  if (params.reversed_contrast) {
    result.threshold = mean + params.threshold_sigma * sigma;
    mask = image.array() > Scalar(result.threshold);
  } else {
    result.threshold = mean - params.threshold_sigma * sigma;
    mask = image.array() < Scalar(result.threshold);
  }

  mask = detail::erode3x3(detail::dilate3x3(mask));  // closing

  Eigen::ArrayXXi labels;
  // absorb small non-fold islands (holes from dust etc.)
  const auto region_sizes = detail::connected_components(mask, false, labels);
  for (Eigen::Index y = 0; y < mask.cols(); ++y)
    for (Eigen::Index x = 0; x < mask.rows(); ++x)
      if (!mask(x, y) &&
          region_sizes[static_cast<std::size_t>(labels(x, y))] < params.min_region)
        mask(x, y) = true;
  // discard fold specks below the dust floor
  const auto fold_sizes = detail::connected_components(mask, true, labels);
  for (Eigen::Index y = 0; y < mask.cols(); ++y)
    for (Eigen::Index x = 0; x < mask.rows(); ++x)
      if (mask(x, y) &&
          fold_sizes[static_cast<std::size_t>(labels(x, y))] < params.min_fold)
        mask(x, y) = false;

  result.mask = std::move(mask);
  return result;
}

/// Mask-aware reconstruction: identical to reconstruct_volume with the fold
/// rows dropped per patch. The 3-section axial patch extent is what lets an
/// occluded region draw evidence from the sections above and below.
template <class Scalar>
Volume3D<Scalar> inpaint(const TiltViewSet<Scalar>& views,
                         const Dictionary<Scalar>& dictionary,
                         const ProjectionModel<Scalar>& model,
                         const ReconConfig& config, const FoldMask& folds,
                         ReconReport* report = nullptr) {
  return reconstruct_volume(views, dictionary, model, config, &folds, report);
}

// Fold mask file format FM1: JSON manifest plus one 1-bit bitmap per section.
inline void write_fold_mask(const FoldMask& folds, int nx, int ny,
                            const std::string& path) {
  namespace fs = std::filesystem;
  const std::string base = vv1_base(path);
  const fs::path dir = fs::path(base).parent_path();
  const std::string stem = fs::path(base).filename().string();
  folds.validate(nx, ny, static_cast<int>(folds.sections.size()));

  json manifest = {{"format", "FM1"},
                   {"nx", nx},
                   {"ny", ny},
                   {"n_sections", static_cast<int>(folds.sections.size())}};
  json files = json::array();
  for (std::size_t s = 0; s < folds.sections.size(); ++s) {
    const std::string name = stem + "_s" + std::to_string(s) + ".mask";
    write_bitmask(folds.sections[s], (dir / name).string());
    files.push_back(name);
  }
  manifest["sections"] = files;
  save_json(base + ".json", manifest);
}

inline FoldMask read_fold_mask(const std::string& path, int* nx_out = nullptr,
                               int* ny_out = nullptr) {
  namespace fs = std::filesystem;
  const std::string base = vv1_base(path);
  const fs::path dir = fs::path(base).parent_path();
  const json manifest = load_json(base + ".json");
  if (!manifest.contains("format") || manifest["format"] != "FM1")
    throw DataError(base + ".json: not an FM1 manifest");
  const int nx = manifest.at("nx").get<int>();
  const int ny = manifest.at("ny").get<int>();
  FoldMask folds;
  for (const auto& name : manifest.at("sections"))
    folds.sections.push_back(
        read_bitmask((dir / name.get<std::string>()).string(), nx, ny));
  if (static_cast<int>(folds.sections.size()) !=
      manifest.at("n_sections").get<int>())
    throw DataError(base + ".json: section count mismatch");
  if (nx_out) *nx_out = nx;
  if (ny_out) *ny_out = ny;
  return folds;
}

}  // namespace vsr

#endif  // VSR_RECONSTRUCTION_HPP
