#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "zsseg/image.hpp"
#include "zsseg/tensor.hpp"

ZSSEG_NAMESPACE_BEGIN

struct Pca3 {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> projection;  // rows x 3
  std::vector<double> components;  // 3 x dim, orthonormal rows
  std::array<double, 3> variance{};  // eigenvalues of the covariance, descending
  std::size_t iterations = 0;
};

struct PcaOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-8;
};

/// Top-3 principal components of the rows of `x` by orthogonalised power
/// iteration. Each component's largest-magnitude coordinate is positive.
Pca3 pca3(const Tensor& x, const PcaOptions& options = {});
Pca3 pca3(const std::vector<double>& x, std::size_t rows, std::size_t dim, const PcaOptions& options = {});

/// Maps the projection to RGB with per-channel min-max scaling; each grid cell
/// becomes a `cell` x `cell` block.
Image pca_to_rgb(const Pca3& pca, std::size_t grid_rows, std::size_t grid_cols, std::size_t cell);

ZSSEG_NAMESPACE_END
