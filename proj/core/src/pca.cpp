#include "zsseg/pca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "zsseg/error.hpp"

ZSSEG_NAMESPACE_BEGIN

namespace {

constexpr std::size_t kK = 3;

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Gram-Schmidt on the k columns stored row-wise in q (k x d). A column that
// vanishes is replaced by the first basis vector orthogonal to the others.
void orthonormalize(std::vector<double>& q, std::size_t d) {
  for (std::size_t i = 0; i < kK; ++i) {
    double* qi = &q[i * d];
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        const double p = dot(qi, &q[j * d], d);
        for (std::size_t t = 0; t < d; ++t) qi[t] -= p * q[j * d + t];
      }
    }
    double norm = std::sqrt(dot(qi, qi, d));
    for (std::size_t e = 0; norm < 1e-12 && e < d; ++e) {
      std::fill(qi, qi + d, 0.0);
      qi[e] = 1.0;
      for (std::size_t j = 0; j < i; ++j) {
        const double p = dot(qi, &q[j * d], d);
        for (std::size_t t = 0; t < d; ++t) qi[t] -= p * q[j * d + t];
      }
      norm = std::sqrt(dot(qi, qi, d));
    }
    if (norm < 1e-12) {
      std::fill(qi, qi + d, 0.0);  // fewer than three dimensions
      continue;
    }
    for (std::size_t t = 0; t < d; ++t) qi[t] /= norm;
  }
}

// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix. Returns the
// eigenvalues in `w` and eigenvectors as columns of `v`.
void jacobi3(double a[3][3], double w[3], double v[3][3]) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v[i][j] = (i == j) ? 1.0 : 0.0;
  for (int sweep = 0; sweep < 50; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    if (off < 1e-30) break;
    for (int p = 0; p < 2; ++p) {
      for (int r = p + 1; r < 3; ++r) {
        if (std::abs(a[p][r]) < 1e-300) continue;
        const double theta = (a[r][r] - a[p][p]) / (2.0 * a[p][r]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akr = a[k][r];
          a[k][p] = c * akp - s * akr;
          a[k][r] = s * akp + c * akr;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], ark = a[r][k];
          a[p][k] = c * apk - s * ark;
          a[r][k] = s * apk + c * ark;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkr = v[k][r];
          v[k][p] = c * vkp - s * vkr;
          v[k][r] = s * vkp + c * vkr;
        }
      }
    }
  }
  for (int i = 0; i < 3; ++i) w[i] = a[i][i];
}

}  // namespace

Pca3 pca3(const Tensor& x, const PcaOptions& options) {
  if (x.rank() != 2) throw DimensionError("pca3 expects a matrix, got " + shape_string(x.shape()));
  const auto data = x.data();
  return pca3(std::vector<double>(data.begin(), data.end()), x.rows(), x.cols(), options);
}

Pca3 pca3(const std::vector<double>& x, std::size_t rows, std::size_t dim, const PcaOptions& options) {
  if (rows < 3) throw InputError("pca3 needs at least 3 rows, got " + std::to_string(rows));
  if (dim == 0 || x.size() != rows * dim) throw DimensionError("pca3: data size does not match rows x dim");

  std::vector<double> centered = x;
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < rows; ++i) mean += x[i * dim + j];
    mean /= static_cast<double>(rows);
    for (std::size_t i = 0; i < rows; ++i) centered[i * dim + j] -= mean;
  }
  std::vector<double> cov(dim * dim, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = &centered[i * dim];
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = a; b < dim; ++b) cov[a * dim + b] += r[a] * r[b];
  }
  const double denom = static_cast<double>(rows - 1);
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = a; b < dim; ++b) {
      cov[a * dim + b] /= denom;
      cov[b * dim + a] = cov[a * dim + b];
    }
  }

  // Subspace iteration from a fixed pseudo-random start.
  std::mt19937_64 rng(0x9ca3);
  std::normal_distribution<double> normal;
  std::vector<double> q(kK * dim);
  for (auto& v : q) v = normal(rng);
  orthonormalize(q, dim);
  std::vector<double> next(kK * dim);
  Pca3 out;
  out.rows = rows;
  out.dim = dim;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    for (std::size_t c = 0; c < kK; ++c)
      for (std::size_t a = 0; a < dim; ++a) next[c * dim + a] = dot(&cov[a * dim], &q[c * dim], dim);
    orthonormalize(next, dim);
    double change = 0.0;
    for (std::size_t c = 0; c < kK; ++c) {
      // Compare spans column by column, ignoring sign flips.
      const double p = std::abs(dot(&next[c * dim], &q[c * dim], dim));
      change = std::max(change, 1.0 - std::min(1.0, p));
    }
    q.swap(next);
    out.iterations = it + 1;
    if (change < options.tolerance) break;
  }

  // Rayleigh-Ritz on the converged subspace.
  double h[3][3], w[3], v[3][3];
  std::vector<double> cq(kK * dim);
  for (std::size_t c = 0; c < kK; ++c)
    for (std::size_t a = 0; a < dim; ++a) cq[c * dim + a] = dot(&cov[a * dim], &q[c * dim], dim);
  for (std::size_t i = 0; i < kK; ++i)
    for (std::size_t j = 0; j < kK; ++j) h[i][j] = dot(&q[i * dim], &cq[j * dim], dim);
  jacobi3(h, w, v);
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return w[a] > w[b]; });

  out.components.assign(kK * dim, 0.0);
  for (std::size_t c = 0; c < kK; ++c) {
    const int e = order[c];
    out.variance[c] = std::max(0.0, w[e]);
    double* comp = &out.components[c * dim];
    for (std::size_t i = 0; i < kK; ++i)
      for (std::size_t a = 0; a < dim; ++a) comp[a] += v[i][e] * q[i * dim + a];
    std::size_t arg = 0;
    for (std::size_t a = 1; a < dim; ++a)
      if (std::abs(comp[a]) > std::abs(comp[arg])) arg = a;
    if (comp[arg] < 0)
      for (std::size_t a = 0; a < dim; ++a) comp[a] = -comp[a];
  }

  out.projection.assign(rows * kK, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < kK; ++c) out.projection[i * kK + c] = dot(&centered[i * dim], &out.components[c * dim], dim);
  return out;
}

Image pca_to_rgb(const Pca3& pca, std::size_t grid_rows, std::size_t grid_cols, std::size_t cell) {
  if (grid_rows * grid_cols != pca.rows) throw DimensionError("pca_to_rgb: grid does not match the projected rows");
  if (cell == 0) throw ParameterError("pca_to_rgb: cell size must be positive");
  double lo[3], hi[3];
  for (std::size_t c = 0; c < kK; ++c) {
    lo[c] = std::numeric_limits<double>::infinity();
    hi[c] = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pca.rows; ++i) {
      lo[c] = std::min(lo[c], pca.projection[i * kK + c]);
      hi[c] = std::max(hi[c], pca.projection[i * kK + c]);
    }
  }
  Image out(grid_rows * cell, grid_cols * cell);
  for (std::size_t r = 0; r < grid_rows; ++r) {
    for (std::size_t c = 0; c < grid_cols; ++c) {
      std::uint8_t px[3];
      for (std::size_t ch = 0; ch < kK; ++ch) {
        const double range = hi[ch] - lo[ch];
        const double t = range > 1e-12 ? (pca.projection[(r * grid_cols + c) * kK + ch] - lo[ch]) / range : 0.0;
        px[ch] = static_cast<std::uint8_t>(std::lround(255.0 * t));
      }
      for (std::size_t y = 0; y < cell; ++y)
        for (std::size_t x = 0; x < cell; ++x)
          for (std::size_t ch = 0; ch < kK; ++ch) out.at(r * cell + y, c * cell + x, ch) = px[ch];
    }
  }
  return out;
}

ZSSEG_NAMESPACE_END
