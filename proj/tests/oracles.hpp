#ifndef VSR_TESTS_ORACLES_HPP
#define VSR_TESTS_ORACLES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <limits>

// Test-only oracles, independent of the solver implementations they check.

namespace vsr_test {

// Exhaustive lasso oracle for small k: enumerate every sign pattern in
// {-1, 0, +1}^k, solve the stationary normal equations on that support,
//   B_S^T B_S a_S = B_S^T y - lambda * sigma_S,
// and evaluate the true lasso objective of each candidate. The optimum is a
// stationary point of some sign-consistent pattern, so the minimum over all
// candidates equals the global minimum; candidates from other patterns can
// only lie above it.
inline double lasso_enum_oracle(const Eigen::MatrixXd& B,
                                const Eigen::VectorXd& y, double lambda,
                                Eigen::VectorXd* argmin = nullptr) {
  const int k = static_cast<int>(B.cols());
  long total = 1;
  for (int i = 0; i < k; ++i) total *= 3;

  double best = 0.5 * y.squaredNorm();  // all-zero candidate
  Eigen::VectorXd best_a = Eigen::VectorXd::Zero(k);

  std::vector<int> digit(static_cast<std::size_t>(k), 0);
  for (long t = 1; t < total; ++t) {
    // increment base-3 counter; digits map {0,1,2} -> {0,+1,-1}
    for (int i = 0; i < k; ++i) {
      if (++digit[static_cast<std::size_t>(i)] < 3) break;
      digit[static_cast<std::size_t>(i)] = 0;
    }
    std::vector<int> support;
    Eigen::VectorXd sigma(k);
    sigma.setZero();
    for (int i = 0; i < k; ++i) {
      if (digit[static_cast<std::size_t>(i)] == 1) {
        sigma[i] = 1;
        support.push_back(i);
      } else if (digit[static_cast<std::size_t>(i)] == 2) {
        sigma[i] = -1;
        support.push_back(i);
      }
    }
    const int s = static_cast<int>(support.size());
    Eigen::MatrixXd Bs(B.rows(), s);
    Eigen::VectorXd sig_s(s);
    for (int i = 0; i < s; ++i) {
      Bs.col(i) = B.col(support[static_cast<std::size_t>(i)]);
      sig_s[i] = sigma[support[static_cast<std::size_t>(i)]];
    }
    const Eigen::MatrixXd gram = Bs.transpose() * Bs;
    const Eigen::VectorXd rhs = Bs.transpose() * y - lambda * sig_s;
    const Eigen::VectorXd a_s = gram.ldlt().solve(rhs);
    if (!a_s.allFinite()) continue;
    const double obj =
        0.5 * (y - Bs * a_s).squaredNorm() + lambda * a_s.lpNorm<1>();
    if (obj < best) {
      best = obj;
      best_a.setZero();
      for (int i = 0; i < s; ++i) best_a[support[static_cast<std::size_t>(i)]] = a_s[i];
    }
  }
  if (argmin) *argmin = best_a;
  return best;
}

}  // namespace vsr_test

#endif  // VSR_TESTS_ORACLES_HPP
