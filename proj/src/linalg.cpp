#include "lnn/linalg.hpp"

#include <cmath>

namespace lnn {

Svd gauged_svd(const Matrix& W, bool full) {
  const unsigned opts = full ? (Eigen::ComputeFullU | Eigen::ComputeFullV)
                             : (Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::JacobiSVD<Matrix> svd(W, opts);
  Svd out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
  const Eigen::Index k = out.sigma.size();
  for (Eigen::Index r = 0; r < k; ++r) {
    auto v = out.V.col(r);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::abs(v(i)) > 1e-12) {
        if (v(i) < 0) {
          v = -v;
          out.U.col(r) = -out.U.col(r);
        }
        break;
      }
    }
  }
  return out;
}

double nuclear_norm(const Matrix& W) {
  if (W.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(W).singularValues().sum();
}

double spectral_norm(const Matrix& W) {
  if (W.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(W).singularValues()(0);
}

double sigma_min(const Matrix& W) {
  if (W.size() == 0) return 0.0;
  const Vector s = Eigen::JacobiSVD<Matrix>(W).singularValues();
  return s(s.size() - 1);
}

double psd_pow(double x, double e) {
  if (e == 0.0) return 1.0;
  if (x <= 0.0) return 0.0;
  return std::pow(x, e);
}

}  // namespace lnn
