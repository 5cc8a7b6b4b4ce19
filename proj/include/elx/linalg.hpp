#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "elx/rng.hpp"

namespace elx::la {

/// Dense row-major matrix, just enough for the numerics in this library.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
  double* row(std::size_t i) { return a.data() + i * cols; }
  const double* row(std::size_t i) const { return a.data() + i * cols; }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

/// C = alpha * A * B + beta * C with A [m x k], B [k x n], C [m x n],
/// all row-major. i-k-j loop order keeps the inner loop contiguous so the
/// compiler can vectorize it.
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* A, std::size_t lda, const double* B, std::size_t ldb,
                    double beta, double* C, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict ci = C + i * ldc;
    if (beta == 0.0) {
      std::fill(ci, ci + n, 0.0);
    } else if (beta != 1.0) {
      for (std::size_t j = 0; j < n; ++j) ci[j] *= beta;
    }
    const double* ai = A + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = alpha * ai[p];
      if (aip == 0.0) continue;
      const double* __restrict bp = B + p * ldb;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

/// C = alpha * A^T * B + beta * C with A [k x m], B [k x n], C [m x n].
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* A, std::size_t lda, const double* B, std::size_t ldb,
                    double beta, double* C, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = C + i * ldc;
    if (beta == 0.0) {
      std::fill(ci, ci + n, 0.0);
    } else if (beta != 1.0) {
      for (std::size_t j = 0; j < n; ++j) ci[j] *= beta;
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = A + p * lda;
    const double* __restrict bp = B + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = alpha * ap[i];
      if (api == 0.0) continue;
      double* __restrict ci = C + i * ldc;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

/// C = alpha * A * B^T + beta * C with A [m x k], B [n x k], C [m x n].
/// Four explicit partial sums keep the dot products SLP-vectorizable without
/// relaxing floating-point semantics.
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha,
                    const double* A, std::size_t lda, const double* B, std::size_t ldb,
                    double beta, double* C, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* __restrict ai = A + i * lda;
    double* ci = C + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      const double* __restrict bj = B + j * ldb;
      double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
      std::size_t p = 0;
      for (; p + 8 <= k; p += 8)
        for (int l = 0; l < 8; ++l) lane[l] += ai[p + l] * bj[p + l];
      double acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
      for (; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = alpha * acc + (beta == 0.0 ? 0.0 : beta * ci[j]);
    }
  }
}

inline std::vector<double> matvec(const Mat& m, const std::vector<double>& x) {
  if (x.size() != m.cols) throw std::invalid_argument("matvec: dimension mismatch");
  std::vector<double> y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* r = m.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

/// In-place Cholesky factorization A = L L^T of a symmetric positive
/// definite matrix; lower triangle of `a` is overwritten by L.
/// Throws std::runtime_error when A is not positive definite.
inline void cholesky(Mat& m) {
  if (m.rows != m.cols) throw std::invalid_argument("cholesky: square matrix required");
  const std::size_t n = m.rows;
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t p = 0; p < j; ++p) d -= m(j, p) * m(j, p);
    if (!(d > 0.0)) throw std::runtime_error("cholesky: matrix not positive definite");
    const double ljj = std::sqrt(d);
    m(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= m(i, p) * m(j, p);
      m(i, j) = s / ljj;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = 0.0;
}

/// Solves A x = b given the Cholesky factor L (as produced by cholesky()).
inline std::vector<double> cholesky_solve(const Mat& l, const std::vector<double>& b) {
  const std::size_t n = l.rows;
  std::vector<double> y(b);
  for (std::size_t i = 0; i < n; ++i) {
    double s = y[i];
    for (std::size_t j = 0; j < i; ++j) s -= l(i, j) * y[j];
    y[i] = s / l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= l(j, i) * y[j];
    y[i] = s / l(i, i);
  }
  return y;
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
inline Mat spd_inverse(const Mat& a) {
  Mat l = a;
  cholesky(l);
  const std::size_t n = a.rows;
  Mat inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const std::vector<double> x = cholesky_solve(l, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = x[i];
  }
  // symmetrize against roundoff
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (inv(i, j) + inv(j, i));
      inv(i, j) = inv(j, i) = v;
    }
  return inv;
}

inline double logdet_from_cholesky(const Mat& l) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.rows; ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues in descending order; `vecs` rows are the matching
/// eigenvectors. Intended for moderate n (a few hundred).
inline void jacobi_eigh(Mat a, std::vector<double>& eigenvalues, Mat& vecs) {
  if (a.rows != a.cols) throw std::invalid_argument("jacobi_eigh: square matrix required");
  const std::size_t n = a.rows;
  Mat v = Mat::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
          const double vpi = v(p, i), vqi = v(q, i);
          v(p, i) = c * vpi - s * vqi;
          v(q, i) = s * vpi + c * vqi;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  eigenvalues.assign(n, 0.0);
  vecs = Mat(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    eigenvalues[r] = a(order[r], order[r]);
    for (std::size_t i = 0; i < n; ++i) vecs(r, i) = v(order[r], i);
  }
}

/// Symmetric tridiagonal QL with implicit shifts (EISPACK tql2 lineage).
/// off[i] couples diag[i] and diag[i+1]; both arrays are modified in place.
/// Rows of z rotate along: initialized to identity, row r ends up holding the
/// eigenvector of diag[r] expressed in the original basis.
inline void tridiag_ql(std::vector<double>& diag, std::vector<double>& off, Mat& z) {
  const std::size_t n = diag.size();
  if (n == 0) return;
  off.resize(n, 0.0);
  off[n - 1] = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    int iter = 0;
    std::size_t m;
    do {
      for (m = l; m + 1 < n; ++m) {
        const double dd = std::abs(diag[m]) + std::abs(diag[m + 1]);
        if (std::abs(off[m]) <= 1e-300 + 2.3e-16 * dd) break;
      }
      if (m != l) {
        if (iter++ == 60) throw std::runtime_error("tridiag_ql: no convergence");
        double g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
        double r = std::hypot(g, 1.0);
        g = diag[m] - diag[l] + off[l] / (g + (g >= 0 ? std::abs(r) : -std::abs(r)));
        double s = 1.0, c = 1.0, p = 0.0;
        bool underflow = false;
        for (std::size_t i = m; i-- > l;) {
          double f = s * off[i];
          const double b = c * off[i];
          r = std::hypot(f, g);
          off[i + 1] = r;
          if (r == 0.0) {
            diag[i + 1] -= p;
            off[m] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = diag[i + 1] - p;
          r = (diag[i] - g) * s + 2.0 * c * b;
          p = s * r;
          diag[i + 1] = g + p;
          g = c * r - b;
          for (std::size_t k = 0; k < z.cols; ++k) {
            f = z(i + 1, k);
            z(i + 1, k) = s * z(i, k) + c * f;
            z(i, k) = c * z(i, k) - s * f;
          }
        }
        if (underflow) continue;
        diag[l] -= p;
        off[l] = g;
        off[m] = 0.0;
      }
    } while (m != l);
  }
}

/// Top-k eigenpairs of a symmetric operator given only matrix-vector
/// products, via Lanczos with full reorthogonalization. Deterministic:
/// the start vector comes from the supplied seed.
///
/// Returns eigenvalues (descending) and eigenvectors (rows of `vecs`).
inline void lanczos_topk(const std::function<void(const double*, double*)>& apply,
                         std::size_t n, std::size_t k, std::size_t max_iter, double tol,
                         std::uint64_t seed, std::vector<double>& eigenvalues, Mat& vecs) {
  if (k == 0 || k > n) throw std::invalid_argument("lanczos_topk: bad k");
  const std::size_t m = std::min(n, std::max(max_iter, k + 2));
  std::vector<std::vector<double>> basis;
  basis.reserve(m);
  Rng rng(seed);
  std::vector<double> q(n);
  for (auto& x : q) x = rng.gaussian();
  double nq = norm2(q);
  for (auto& x : q) x /= nq;
  std::vector<double> alpha, beta;
  std::vector<double> w(n);
  basis.push_back(q);
  for (std::size_t j = 0; j < m; ++j) {
    apply(basis[j].data(), w.data());
    const double a = dot(w, basis[j]);
    alpha.push_back(a);
    for (std::size_t i = 0; i < n; ++i) w[i] -= a * basis[j][i];
    if (j > 0)
      for (std::size_t i = 0; i < n; ++i) w[i] -= beta[j - 1] * basis[j - 1][i];
    // full reorthogonalization, twice
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) {
        const double c = dot(w, b);
        for (std::size_t i = 0; i < n; ++i) w[i] -= c * b[i];
      }
    const double bnorm = norm2(w);
    if (j + 1 == m || (j + 1 >= k + 2 && bnorm < tol)) {
      beta.push_back(bnorm);
      break;
    }
    beta.push_back(bnorm);
    if (bnorm < 1e-300) break;
    for (std::size_t i = 0; i < n; ++i) w[i] /= bnorm;
    basis.push_back(w);
  }
  const std::size_t steps = basis.size();
  std::vector<double> diag(alpha.begin(), alpha.begin() + steps);
  std::vector<double> off(steps, 0.0);
  for (std::size_t i = 0; i + 1 < steps; ++i) off[i] = beta[i];
  Mat z = Mat::identity(steps);
  tridiag_ql(diag, off, z);
  std::vector<std::size_t> order(steps);
  for (std::size_t i = 0; i < steps; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return diag[i] > diag[j]; });
  const std::size_t kk = std::min(k, steps);
  eigenvalues.assign(kk, 0.0);
  vecs = Mat(kk, n);
  // Ritz vectors: v_r = sum_s z(order[r], s) * basis[s]
  for (std::size_t r = 0; r < kk; ++r) {
    eigenvalues[r] = diag[order[r]];
    double* out = vecs.row(r);
    for (std::size_t s = 0; s < steps; ++s) {
      const double c = z(order[r], s);
      const double* b = basis[s].data();
      for (std::size_t i = 0; i < n; ++i) out[i] += c * b[i];
    }
    double nv = 0.0;
    for (std::size_t i = 0; i < n; ++i) nv += out[i] * out[i];
    nv = std::sqrt(nv);
    if (nv > 0)
      for (std::size_t i = 0; i < n; ++i) out[i] /= nv;
  }
}

}  // namespace elx::la
