#ifndef VSR_LASSO_HPP
#define VSR_LASSO_HPP

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "vsr/error.hpp"
#include "vsr/parallel.hpp"
#include "vsr/volume.hpp"

namespace vsr {

// L1-regularized least squares: min_a 1/2 ||y - B a||^2 + lambda ||a||_1.
//
// Two independent algorithms are kept on purpose. Coordinate descent is the
// default; exact per-coordinate soft-threshold updates make the objective
// non-increasing sweep by sweep. Proximal gradient (FISTA) is a cross-check
// path with a different numerical route to the same optimum.

enum class LassoAlgorithm { coordinate_descent, proximal_gradient };

struct SolverConfig {
  double lambda = 0.1;
  int max_iter = 1000;  // sweep cap
  double tol = 1e-7;    // KKT tolerance, relative to lambda
  LassoAlgorithm algorithm = LassoAlgorithm::coordinate_descent;
  bool record_trace = false;

  void validate() const {
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (max_iter < 1) throw ConfigError("max_iter must be >= 1");
    if (!(tol > 0)) throw ConfigError("tol must be > 0");
  }
};

template <class Scalar = double>
struct SparseCode {
  VecX<Scalar> coeffs;
  Scalar lambda = 0;
  Scalar objective = 0;
  Eigen::Index n_nonzero = 0;
  bool converged = false;
  int sweeps = 0;
  std::vector<Scalar> trace;  // objective after each sweep, if recorded
};

using SparseCoded = SparseCode<double>;

template <class Scalar>
Scalar soft_threshold(Scalar x, Scalar t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return Scalar(0);  // |x| == t resolves to zero
}

template <class Scalar, class MatB, class VecY>
Scalar lasso_objective(const MatB& B, const VecY& y, Scalar lambda,
                       const VecX<Scalar>& a) {
  return Scalar(0.5) * (y - B * a).squaredNorm() +
         lambda * a.template lpNorm<1>();
}

/// Maximum KKT violation given the gradient of the smooth part,
/// g = B^T (y - B a): nonzero coordinates must sit at |g_j - lambda sign| = 0,
/// zero coordinates must satisfy |g_j| <= lambda.
template <class Scalar>
Scalar kkt_residual(const VecX<Scalar>& grad, Scalar lambda,
                    const VecX<Scalar>& a) {
  Scalar worst = 0;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    Scalar v;
    if (a[j] > 0)
      v = std::abs(grad[j] - lambda);
    else if (a[j] < 0)
      v = std::abs(grad[j] + lambda);
    else
      v = std::max(Scalar(0), std::abs(grad[j]) - lambda);
    worst = std::max(worst, v);
  }
  return worst;
}

namespace detail {

// Threshold deciding the `converged` flag from the exit KKT residual. Scales
// with lambda when lambda dominates, otherwise with the correlation scale of
// the instance (covers lambda == 0, where the problem is least squares).
template <class Scalar>
Scalar kkt_threshold(Scalar lambda, Scalar data_scale, double tol) {
  return Scalar(tol) * std::max(lambda, std::max(data_scale, Scalar(1)));
}

template <class Scalar>
void finish_code(SparseCode<Scalar>& code) {
  code.n_nonzero = (code.coeffs.array() != Scalar(0)).count();
}

}  // namespace detail

/// Coordinate-descent lasso on an explicit dense operator, maintaining the
/// residual r = y - B a. Used directly for one-shot solves; heavy repeated
/// solves against a fixed operator go through lasso_solve_gram instead.
template <class Scalar>
SparseCode<Scalar> lasso_solve(const MatX<Scalar>& B, const VecX<Scalar>& y,
                               const SolverConfig& config,
                               const VecX<Scalar>* warm_start = nullptr) {
  config.validate();
  if (B.rows() < 1 || B.cols() < 1)
    throw DataError("lasso operator must have at least one row and column");
  if (B.rows() != y.size())
    throw DataError("lasso operator rows do not match measurement length");
  if (!B.allFinite() || !y.allFinite())
    throw DataError("non-finite values in lasso input");

  const Eigen::Index k = B.cols();
  const Scalar lambda = Scalar(config.lambda);
  const VecX<Scalar> colsq = B.colwise().squaredNorm();

  SparseCode<Scalar> code;
  code.lambda = lambda;
  if (warm_start) {
    if (warm_start->size() != k)
      throw DataError("warm start length does not match column count");
    code.coeffs = *warm_start;
  } else {
    code.coeffs = VecX<Scalar>::Zero(k);
  }
  VecX<Scalar>& a = code.coeffs;
  VecX<Scalar> r = y - B * a;

  const Scalar thresh = detail::kkt_threshold(
      lambda, (B.transpose() * y).template lpNorm<Eigen::Infinity>(), config.tol);

  if (config.algorithm == LassoAlgorithm::proximal_gradient) {
    // FISTA. Step size 1/L with L estimated by power iteration on B^T B.
    VecX<Scalar> v = VecX<Scalar>::Ones(k).normalized();
    Scalar L = 1;
    for (int it = 0; it < 50; ++it) {
      v = B.transpose() * (B * v);
      L = v.norm();
      if (L <= 0) break;
      v /= L;
    }
    if (L <= 0) L = 1;
    const Scalar step = Scalar(1) / L;
    VecX<Scalar> x_prev = a, z = a;
    Scalar t_prev = 1;
    for (int it = 0; it < config.max_iter; ++it) {
      const VecX<Scalar> grad = B.transpose() * (B * z - y);
      VecX<Scalar> x = z - step * grad;
      for (Eigen::Index j = 0; j < k; ++j)
        x[j] = soft_threshold(x[j], step * lambda);
      const Scalar t = (Scalar(1) + std::sqrt(Scalar(1) + 4 * t_prev * t_prev)) / 2;
      z = x + ((t_prev - 1) / t) * (x - x_prev);
      x_prev = x;
      t_prev = t;
      a = x;
      code.sweeps = it + 1;
      if (config.record_trace)
        code.trace.push_back(lasso_objective(B, y, lambda, a));
      const VecX<Scalar> g = B.transpose() * (y - B * a);
      if (kkt_residual(g, lambda, a) <= thresh) {
        code.converged = true;
        break;
      }
    }
    code.objective = lasso_objective(B, y, lambda, a);
    detail::finish_code(code);
    return code;
  }

  for (int sweep = 0; sweep < config.max_iter; ++sweep) {
    Scalar max_change = 0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (colsq[j] == 0) {
        if (a[j] != 0) {  // zero column cannot carry weight
          r += B.col(j) * a[j];
          a[j] = 0;
        }
        continue;
      }
      const Scalar rho = B.col(j).dot(r) + colsq[j] * a[j];
      const Scalar a_new = soft_threshold(rho, lambda) / colsq[j];
      const Scalar delta = a_new - a[j];
      if (delta != 0) {
        r -= delta * B.col(j);
        a[j] = a_new;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    code.sweeps = sweep + 1;
    if (config.record_trace)
      code.trace.push_back(Scalar(0.5) * r.squaredNorm() +
                           lambda * a.template lpNorm<1>());
    if (max_change < Scalar(config.tol)) break;  // per-coordinate stall
  }
  code.converged =
      kkt_residual(VecX<Scalar>(B.transpose() * r), lambda, a) <= thresh;
  code.objective = lasso_objective(B, y, lambda, a);
  detail::finish_code(code);
  return code;
}

// Covariance-path coordinate descent for repeated solves against one fixed
// operator: the caller precomputes G = B^T B once and passes c = B^T y per
// instance. An active-set schedule alternates full passes with sweeps over
// the current support, which is where almost all the time goes for
// overcomplete dictionaries.
template <class Scalar>
SparseCode<Scalar> lasso_solve_gram(const MatX<Scalar>& gram,
                                    const VecX<Scalar>& corr, Scalar y_sqnorm,
                                    const SolverConfig& config,
                                    const VecX<Scalar>* warm_start = nullptr) {
  config.validate();
  const Eigen::Index k = gram.cols();
  if (gram.rows() != k) throw DataError("gram matrix must be square");
  if (corr.size() != k) throw DataError("correlation length != gram size");

  const Scalar lambda = Scalar(config.lambda);
  const Scalar thresh = detail::kkt_threshold(
      lambda, corr.template lpNorm<Eigen::Infinity>(), config.tol);

  SparseCode<Scalar> code;
  code.lambda = lambda;
  code.coeffs = warm_start ? *warm_start : VecX<Scalar>::Zero(k);
  VecX<Scalar>& a = code.coeffs;
  VecX<Scalar> q = VecX<Scalar>::Zero(k);  // q = G a, maintained incrementally
  if (warm_start) q = gram * a;

  std::vector<Eigen::Index> support;
  support.reserve(64);

  const auto update_coord = [&](Eigen::Index j) -> Scalar {
    const Scalar gjj = gram(j, j);
    if (gjj == 0) return 0;
    const Scalar rho = corr[j] - q[j] + gjj * a[j];
    const Scalar a_new = soft_threshold(rho, lambda) / gjj;
    const Scalar delta = a_new - a[j];
    if (delta != 0) {
      q += delta * gram.col(j);
      a[j] = a_new;
    }
    return std::abs(delta);
  };

  const auto record = [&] {
    if (config.record_trace)
      code.trace.push_back(Scalar(0.5) * (y_sqnorm - 2 * a.dot(corr) + a.dot(q)) +
                           lambda * a.template lpNorm<1>());
  };

  while (code.sweeps < config.max_iter) {
    // Full pass over all coordinates.
    Scalar full_change = 0;
    for (Eigen::Index j = 0; j < k; ++j)
      full_change = std::max(full_change, update_coord(j));
    ++code.sweeps;
    record();
    if (full_change < Scalar(config.tol)) break;  // per-coordinate stall

    support.clear();
    for (Eigen::Index j = 0; j < k; ++j)
      if (a[j] != 0) support.push_back(j);

    // Sweep the active set until it settles, then go back for a full pass.
    while (code.sweeps < config.max_iter) {
      Scalar max_delta = 0;
      for (Eigen::Index j : support) max_delta = std::max(max_delta, update_coord(j));
      ++code.sweeps;
      record();
      if (max_delta < Scalar(config.tol)) break;
    }
  }

  // Refresh q from the support to cancel incremental drift before the exit
  // KKT check and the objective.
  q.setZero();
  for (Eigen::Index j = 0; j < k; ++j)
    if (a[j] != 0) q += a[j] * gram.col(j);
  code.converged = kkt_residual(VecX<Scalar>(corr - q), lambda, a) <= thresh;
  code.objective = Scalar(0.5) * (y_sqnorm - 2 * a.dot(corr) + a.dot(q)) +
                   lambda * a.template lpNorm<1>();
  if (code.objective < 0 && code.objective > Scalar(-1e-12)) code.objective = 0;
  detail::finish_code(code);
  return code;
}

/// Columnwise lasso over a measurement matrix. Columns are independent, so
/// the result does not depend on batch partitioning or thread count. Passing
/// a precomputed Gram matrix switches every column to the covariance path.
template <class Scalar>
std::vector<SparseCode<Scalar>> lasso_solve_batch(
    const MatX<Scalar>& B, const MatX<Scalar>& Y, const SolverConfig& config,
    int n_threads = 1, const MatX<Scalar>* gram = nullptr) {
  config.validate();
  if (B.rows() != Y.rows())
    throw DataError("operator rows do not match measurement rows");
  std::vector<SparseCode<Scalar>> codes(static_cast<std::size_t>(Y.cols()));
  parallel_for(static_cast<std::size_t>(Y.cols()), n_threads, [&](std::size_t i) {
    const Eigen::Index c = static_cast<Eigen::Index>(i);
    try {
      if (gram) {
        const VecX<Scalar> corr = B.transpose() * Y.col(c);
        codes[i] = lasso_solve_gram<Scalar>(*gram, corr, Y.col(c).squaredNorm(),
                                            config);
      } else {
        const VecX<Scalar> y = Y.col(c);
        codes[i] = lasso_solve<Scalar>(B, y, config);
      }
    } catch (const Error& e) {
      throw DataError("column " + std::to_string(c) + ": " + e.what());
    }
  });
  return codes;
}

}  // namespace vsr

#endif  // VSR_LASSO_HPP
