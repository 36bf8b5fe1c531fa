#ifndef VSR_DICTIONARY_HPP
#define VSR_DICTIONARY_HPP

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vsr/digest.hpp"
#include "vsr/error.hpp"
#include "vsr/io.hpp"
#include "vsr/lasso.hpp"
#include "vsr/parallel.hpp"
#include "vsr/random.hpp"
#include "vsr/volume.hpp"

namespace vsr {

// Over-complete dictionary learning by alternating minimization: a lasso
// coding step over the coefficients and block coordinate descent over the
// atoms, with unit-norm columns throughout. Both steps never increase the
// training objective
//   sum_i 1/2 ||x_i - D a_i||^2 + lambda ||a_i||_1,
// so the per-alternation objective trace is non-increasing in full-batch
// mode. A mini-batch mode keeps running sufficient statistics instead of a
// dense residual for datasets too large to hold; it trades away the
// monotonicity guarantee.

struct DictionaryProvenance {
  double lambda = 0.1;
  int epochs = 0;
  std::uint64_t seed = 0;
  std::string dataset_hash;
};

template <class Scalar = double>
struct Dictionary {
  PatchSpec spec;      // atom patch geometry; stride is extraction metadata
  MatX<Scalar> atoms;  // n x k, unit-norm columns
  DictionaryProvenance provenance;

  Eigen::Index n() const { return atoms.rows(); }
  Eigen::Index k() const { return atoms.cols(); }

  void validate(double norm_tol = 1e-10) const {
    if (atoms.rows() != spec.patch_len())
      throw DataError("dictionary atom length does not match patch spec");
    if (atoms.cols() < 1) throw DataError("dictionary must have at least one atom");
    if (!atoms.allFinite()) throw DataError("dictionary contains non-finite values");
    for (Eigen::Index j = 0; j < atoms.cols(); ++j) {
      const double norm = atoms.col(j).norm();
      if (std::abs(norm - 1.0) > norm_tol)
        throw DataError("atom " + std::to_string(j) + " has norm " +
                        std::to_string(norm) + ", expected 1");
    }
  }
};

using Dictionaryd = Dictionary<double>;

enum class DictInit { random_patches, provided };

struct LearnConfig {
  int k = 0;  // 0 means twice over-complete: k = 2n
  double lambda = 0.1;
  int n_epochs = 10;
  int batch_size = 0;  // 0 means full batch
  std::uint64_t seed = 0;
  DictInit init = DictInit::random_patches;
  double plateau_rel_tol = 1e-5;  // early exit when the trace flattens
  int n_threads = 1;
  bool record_trace = true;
  SolverConfig solver;  // tol / max_iter for the coding steps

  void validate() const {
    if (k < 0) throw ConfigError("k must be >= 0 (0 selects 2n)");
    if (n_epochs < 1) throw ConfigError("n_epochs must be >= 1");
    if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
  }
};

template <class Scalar = double>
struct LearnResult {
  Dictionary<Scalar> dictionary;
  std::vector<Scalar> objective_trace;    // one value per alternation
  std::vector<Scalar> post_coding_trace;  // after each coding step
  int epochs_run = 0;
  bool plateau_exit = false;
  bool all_codes_converged = true;
};

using SparseCodes = Eigen::SparseMatrix<double, Eigen::RowMajor>;

namespace detail {

template <class Scalar>
Eigen::SparseMatrix<Scalar, Eigen::RowMajor> codes_to_matrix(
    const std::vector<SparseCode<Scalar>>& codes, Eigen::Index k) {
  std::vector<Eigen::Triplet<Scalar>> trips;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].coeffs.size() != k)
      throw DataError("code length does not match atom count");
    for (Eigen::Index j = 0; j < k; ++j)
      if (codes[i].coeffs[j] != 0)
        trips.emplace_back(j, Eigen::Index(i), codes[i].coeffs[j]);
  }
  Eigen::SparseMatrix<Scalar, Eigen::RowMajor> A(k, Eigen::Index(codes.size()));
  A.setFromTriplets(trips.begin(), trips.end());
  return A;
}

// Indices of training patches sorted worst-represented first, given the
// residual matrix E = X - D A.
template <class Scalar>
std::vector<Eigen::Index> worst_patch_order(const MatX<Scalar>& residual) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(residual.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index(0));
  const VecX<Scalar> norms = residual.colwise().squaredNorm();
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return norms[a] > norms[b]; });
  return order;
}

}  // namespace detail

/// One block-coordinate-descent pass over the atoms with the codes fixed.
/// Each used atom moves to the exact unit-sphere minimizer of the restricted
/// least squares, so the fit never degrades; unused atoms are replaced by the
/// worst-represented training patches, normalized.
template <class Scalar>
MatX<Scalar> update_dictionary_step(
    const MatX<Scalar>& atoms,
    const Eigen::SparseMatrix<Scalar, Eigen::RowMajor>& codes,
    const MatX<Scalar>& patches) {
  const Eigen::Index n = atoms.rows(), k = atoms.cols();
  if (codes.rows() != k) throw DataError("codes rows must equal atom count");
  if (patches.rows() != n) throw DataError("patch length must equal atom length");
  if (patches.cols() != codes.cols())
    throw DataError("patch count must equal code count");

  MatX<Scalar> dict = atoms;
  // Residual maintained across sequential column updates.
  MatX<Scalar> residual = patches - dict * codes;
  std::vector<Eigen::Index> dead;

  for (Eigen::Index j = 0; j < k; ++j) {
    Scalar gjj = 0;
    VecX<Scalar> s = VecX<Scalar>::Zero(n);
    for (typename Eigen::SparseMatrix<Scalar, Eigen::RowMajor>::InnerIterator
             it(codes, j);
         it; ++it) {
      gjj += it.value() * it.value();
      s += it.value() * residual.col(it.col());
    }
    if (gjj == 0) {
      dead.push_back(j);
      continue;
    }
    const VecX<Scalar> u = dict.col(j) + s / gjj;
    const Scalar unorm = u.norm();
    if (unorm == 0) {
      dead.push_back(j);
      continue;
    }
    const VecX<Scalar> d_new = u / unorm;
    const VecX<Scalar> delta = d_new - dict.col(j);
    // residual -= delta * a_j (sparse row j of the codes)
    for (typename Eigen::SparseMatrix<Scalar, Eigen::RowMajor>::InnerIterator
             it(codes, j);
         it; ++it)
      residual.col(it.col()) -= it.value() * delta;
    dict.col(j) = d_new;
  }

  if (!dead.empty()) {
    // Replacing a zero-usage atom leaves D*A unchanged, so the objective is
    // untouched; each dead atom takes a distinct worst patch.
    const auto order = detail::worst_patch_order(residual);
    std::size_t next = 0;
    for (Eigen::Index j : dead) {
      while (next < order.size() && patches.col(order[next]).norm() == 0) ++next;
      if (next >= order.size())
        throw DataError("no nonzero patch available to replace a dead atom");
      dict.col(j) = patches.col(order[next]).normalized();
      ++next;
    }
  }
  return dict;
}

template <class Scalar>
MatX<Scalar> update_dictionary_step(const MatX<Scalar>& atoms,
                                    const std::vector<SparseCode<Scalar>>& codes,
                                    const MatX<Scalar>& patches) {
  return update_dictionary_step(atoms, detail::codes_to_matrix(codes, atoms.cols()),
                                patches);
}

/// Sparse-code a patch matrix against a dictionary: columnwise lasso with
/// B = atoms over a precomputed Gram matrix.
template <class Scalar>
std::vector<SparseCode<Scalar>> encode(const Dictionary<Scalar>& dictionary,
                                       const MatX<Scalar>& patches, double lambda,
                                       int n_threads = 1,
                                       const SolverConfig* solver = nullptr) {
  if (patches.rows() != dictionary.n())
    throw DataError("patch length " + std::to_string(patches.rows()) +
                    " does not match dictionary n = " +
                    std::to_string(dictionary.n()));
  SolverConfig config = solver ? *solver : SolverConfig{};
  config.lambda = lambda;
  const MatX<Scalar> gram = dictionary.atoms.transpose() * dictionary.atoms;
  return lasso_solve_batch<Scalar>(dictionary.atoms, patches, config, n_threads,
                                   &gram);
}

template <class Scalar>
std::vector<SparseCode<Scalar>> encode(const Dictionary<Scalar>& dictionary,
                                       const PatchBatch<Scalar>& patches,
                                       double lambda, int n_threads = 1,
                                       const SolverConfig* solver = nullptr) {
  if (patches.spec.patch_len() != dictionary.spec.patch_len())
    throw DataError("patch spec does not match dictionary spec");
  return encode(dictionary, patches.matrix, lambda, n_threads, solver);
}

namespace detail {

template <class Scalar>
Scalar batch_objective(const MatX<Scalar>& patches, const MatX<Scalar>& atoms,
                       const Eigen::SparseMatrix<Scalar, Eigen::RowMajor>& codes,
                       Scalar lambda) {
  const MatX<Scalar> residual = patches - atoms * codes;
  Scalar l1 = 0;
  for (Eigen::Index j = 0; j < codes.outerSize(); ++j)
    for (typename Eigen::SparseMatrix<Scalar, Eigen::RowMajor>::InnerIterator
             it(codes, j);
         it; ++it)
      l1 += std::abs(it.value());
  return Scalar(0.5) * residual.squaredNorm() + lambda * l1;
}

// Coding pass against a fixed dictionary; optionally warm-started from the
// previous epoch's codes so the objective picks up where it left off.
template <class Scalar>
std::vector<SparseCode<Scalar>> coding_pass(
    const MatX<Scalar>& atoms, const MatX<Scalar>& gram,
    const MatX<Scalar>& patches, const SolverConfig& config, int n_threads,
    const Eigen::SparseMatrix<Scalar, Eigen::RowMajor>* warm) {
  std::vector<SparseCode<Scalar>> codes(static_cast<std::size_t>(patches.cols()));
  parallel_for(static_cast<std::size_t>(patches.cols()), n_threads,
               [&](std::size_t i) {
                 const Eigen::Index c = static_cast<Eigen::Index>(i);
                 const VecX<Scalar> corr = atoms.transpose() * patches.col(c);
                 if (warm) {
                   VecX<Scalar> start = warm->col(c);
                   codes[i] = lasso_solve_gram<Scalar>(
                       gram, corr, patches.col(c).squaredNorm(), config, &start);
                 } else {
                   codes[i] = lasso_solve_gram<Scalar>(
                       gram, corr, patches.col(c).squaredNorm(), config);
                 }
               });
  return codes;
}

}  // namespace detail

/// Learn an over-complete dictionary from a patch batch (Eq. 2 alternation).
template <class Scalar>
LearnResult<Scalar> learn_dictionary(
    const PatchBatch<Scalar>& patches, const LearnConfig& config,
    const Dictionary<Scalar>* initial = nullptr) {
  config.validate();
  const MatX<Scalar>& X = patches.matrix;
  const Eigen::Index n = X.rows(), N = X.cols();
  if (N < 1) throw DataError("empty training set");
  if (!X.allFinite()) throw DataError("training patches contain non-finite values");

  std::vector<Eigen::Index> nonzero_cols;
  for (Eigen::Index c = 0; c < N; ++c)
    if (X.col(c).norm() > 0) nonzero_cols.push_back(c);
  if (nonzero_cols.empty())
    throw DataError("degenerate training set: every patch is zero");

  const Eigen::Index k = config.k > 0 ? config.k : 2 * n;

  LearnResult<Scalar> result;
  Dictionary<Scalar>& dict = result.dictionary;
  dict.spec = patches.spec;
  dict.provenance.lambda = config.lambda;
  dict.provenance.seed = config.seed;
  {
    Fnv1a h;
    const Eigen::Index shape[2] = {n, N};
    h.update(shape, sizeof(shape));
    h.update(X.data(), static_cast<std::size_t>(X.size()) * sizeof(Scalar));
    dict.provenance.dataset_hash = h.hex();
  }

  if (config.init == DictInit::provided) {
    if (!initial) throw ConfigError("provided-dictionary init needs a dictionary");
    initial->validate(1e-8);
    if (initial->n() != n)
      throw DataError("initial dictionary atom length does not match patches");
    dict.atoms = initial->atoms;
  } else {
    if (k > static_cast<Eigen::Index>(nonzero_cols.size()))
      throw DataError("cannot seed " + std::to_string(k) +
                      " distinct atoms from " +
                      std::to_string(nonzero_cols.size()) + " nonzero patches");
    Rng rng(config.seed);
    rng.shuffle(nonzero_cols);
    dict.atoms.resize(n, k);
    for (Eigen::Index j = 0; j < k; ++j)
      dict.atoms.col(j) = X.col(nonzero_cols[static_cast<std::size_t>(j)]).normalized();
  }

  SolverConfig solver = config.solver;
  solver.lambda = config.lambda;
  solver.record_trace = false;

  const bool online = config.batch_size > 0 && config.batch_size < N;
  const Scalar lambda = Scalar(config.lambda);

  if (!online) {
    Eigen::SparseMatrix<Scalar, Eigen::RowMajor> codes;
    bool have_codes = false;
    for (int epoch = 0; epoch < config.n_epochs; ++epoch) {
      MatX<Scalar> gram = dict.atoms.transpose() * dict.atoms;
      auto code_vec = detail::coding_pass<Scalar>(dict.atoms, gram, X, solver,
                                                  config.n_threads,
                                                  have_codes ? &codes : nullptr);
      for (const auto& c : code_vec)
        result.all_codes_converged = result.all_codes_converged && c.converged;
      codes = detail::codes_to_matrix(code_vec, k);
      have_codes = true;
      if (config.record_trace)
        result.post_coding_trace.push_back(
            detail::batch_objective(X, dict.atoms, codes, lambda));

      dict.atoms = update_dictionary_step(dict.atoms, codes, X);
      result.epochs_run = epoch + 1;

      if (config.record_trace) {
        result.objective_trace.push_back(
            detail::batch_objective(X, dict.atoms, codes, lambda));
        const auto& trace = result.objective_trace;
        if (trace.size() >= 2) {
          const Scalar prev = trace[trace.size() - 2], cur = trace.back();
          if (prev - cur < config.plateau_rel_tol * std::abs(prev)) {
            result.plateau_exit = true;
            break;
          }
        }
      }
    }
  } else {
    // Mini-batch mode: running second-order statistics stand in for the
    // dense residual. No monotonicity guarantee; the trace (when recorded)
    // costs one extra coding pass per epoch.
    MatX<Scalar> stat_gram = MatX<Scalar>::Zero(k, k);
    MatX<Scalar> stat_corr = MatX<Scalar>::Zero(n, k);
    Rng rng(config.seed + 0x9e3779b97f4a7c15ULL);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
    std::iota(order.begin(), order.end(), Eigen::Index(0));

    for (int epoch = 0; epoch < config.n_epochs; ++epoch) {
      rng.shuffle(order);
      for (Eigen::Index start = 0; start < N; start += config.batch_size) {
        const Eigen::Index stop = std::min<Eigen::Index>(N, start + config.batch_size);
        MatX<Scalar> Xb(n, stop - start);
        for (Eigen::Index i = start; i < stop; ++i)
          Xb.col(i - start) = X.col(order[static_cast<std::size_t>(i)]);

        MatX<Scalar> gram = dict.atoms.transpose() * dict.atoms;
        auto code_vec = detail::coding_pass<Scalar>(dict.atoms, gram, Xb, solver,
                                                    config.n_threads, nullptr);
        const auto Ab = detail::codes_to_matrix(code_vec, k);
        stat_gram += MatX<Scalar>(Ab * Ab.transpose());
        stat_corr += MatX<Scalar>(Xb * Ab.transpose());

        MatX<Scalar> residual_b = Xb - dict.atoms * Ab;
        for (Eigen::Index j = 0; j < k; ++j) {
          const Scalar gjj = stat_gram(j, j);
          if (gjj == 0) continue;
          const VecX<Scalar> u =
              dict.atoms.col(j) +
              (stat_corr.col(j) - dict.atoms * stat_gram.col(j)) / gjj;
          const Scalar unorm = u.norm();
          if (unorm > 0) dict.atoms.col(j) = u / unorm;
        }
        // Atoms still unused after this batch get reseeded from the worst
        // patches seen here.
        std::vector<Eigen::Index> dead;
        for (Eigen::Index j = 0; j < k; ++j)
          if (stat_gram(j, j) == 0) dead.push_back(j);
        if (!dead.empty()) {
          const auto worst = detail::worst_patch_order(residual_b);
          std::size_t next = 0;
          for (Eigen::Index j : dead) {
            while (next < worst.size() && Xb.col(worst[next]).norm() == 0) ++next;
            if (next >= worst.size()) break;
            dict.atoms.col(j) = Xb.col(worst[next]).normalized();
            ++next;
          }
        }
      }
      result.epochs_run = epoch + 1;

      if (config.record_trace) {
        MatX<Scalar> gram = dict.atoms.transpose() * dict.atoms;
        auto code_vec = detail::coding_pass<Scalar>(dict.atoms, gram, X, solver,
                                                    config.n_threads, nullptr);
        const auto A = detail::codes_to_matrix(code_vec, k);
        result.objective_trace.push_back(
            detail::batch_objective(X, dict.atoms, A, lambda));
        const auto& trace = result.objective_trace;
        if (trace.size() >= 2 &&
            trace[trace.size() - 2] - trace.back() <
                config.plateau_rel_tol * std::abs(trace[trace.size() - 2])) {
          result.plateau_exit = true;
          break;
        }
      }
    }
  }

  dict.provenance.epochs = result.epochs_run;
  dict.validate();
  return result;
}

// Dictionary file format VD1: JSON sidecar plus raw little-endian f64
// payload, column-major (atom-major).
template <class Scalar>
void save_dictionary(const Dictionary<Scalar>& dictionary,
                     const std::string& path) {
  dictionary.validate(1e-8);
  const std::string base = vv1_base(path);
  json sidecar = {
      {"format", "VD1"},
      {"n", dictionary.n()},
      {"k", dictionary.k()},
      {"patch", {dictionary.spec.h, dictionary.spec.h, dictionary.spec.v}},
      {"lambda", dictionary.provenance.lambda},
      {"provenance",
       {{"epochs", dictionary.provenance.epochs},
        {"seed", dictionary.provenance.seed},
        {"dataset_hash", dictionary.provenance.dataset_hash}}},
  };
  save_json(base + ".json", sidecar);
  std::vector<double> payload(static_cast<std::size_t>(dictionary.atoms.size()));
  for (Eigen::Index i = 0; i < dictionary.atoms.size(); ++i)
    payload[static_cast<std::size_t>(i)] = double(dictionary.atoms.data()[i]);
  write_bytes(base + ".raw", payload.data(), payload.size() * sizeof(double));
}

template <class Scalar = double>
Dictionary<Scalar> load_dictionary(const std::string& path) {
  const std::string base = vv1_base(path);
  const json sidecar = load_json(base + ".json");
  if (!sidecar.contains("format") || sidecar["format"] != "VD1")
    throw DataError(base + ".json: not a VD1 sidecar");
  for (const char* key : {"n", "k", "patch", "lambda"})
    if (!sidecar.contains(key))
      throw DataError(base + ".json: missing required field '" +
                      std::string(key) + "'");

  Dictionary<Scalar> dict;
  const Eigen::Index n = sidecar["n"].get<Eigen::Index>();
  const Eigen::Index k = sidecar["k"].get<Eigen::Index>();
  const auto patch = sidecar["patch"];
  if (!patch.is_array() || patch.size() != 3 || patch[0] != patch[1])
    throw DataError(base + ".json: patch must be [h, h, v]");
  dict.spec.h = patch[0].get<int>();
  dict.spec.v = patch[2].get<int>();
  dict.spec.stride = {1, 1, 1};  // stride is not dictionary metadata
  if (n != dict.spec.patch_len())
    throw DataError(base + ".json: n does not equal h*h*v");
  dict.provenance.lambda = sidecar["lambda"].get<double>();
  if (sidecar.contains("provenance")) {
    const auto& p = sidecar["provenance"];
    if (p.contains("epochs")) dict.provenance.epochs = p["epochs"].get<int>();
    if (p.contains("seed")) dict.provenance.seed = p["seed"].get<std::uint64_t>();
    if (p.contains("dataset_hash"))
      dict.provenance.dataset_hash = p["dataset_hash"].get<std::string>();
  }

  const auto payload = read_bytes(base + ".raw");
  if (payload.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(k) *
                            sizeof(double))
    throw DataError(base + ".raw: payload size does not match n*k atoms");
  dict.atoms.resize(n, k);
  const double* d = reinterpret_cast<const double*>(payload.data());
  for (Eigen::Index i = 0; i < dict.atoms.size(); ++i)
    dict.atoms.data()[i] = Scalar(d[i]);
  if (!dict.atoms.allFinite())
    throw DataError(base + ".raw: non-finite atom values");
  dict.validate(1e-6);
  return dict;
}

}  // namespace vsr

#endif  // VSR_DICTIONARY_HPP
