#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "crayon/numerics/matrix.hpp"

namespace crayon::numerics {

// a.b / (|a||b|). Throws ZeroVectorError if either input has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct SymmetricEigen {
  std::vector<double> values;  // descending
  MatrixD vectors;             // row i is the eigenvector for values[i]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen symmetric_eigen(const MatrixD& m);

struct PcaProjection {
  std::vector<double> mean;        // input_dim
  MatrixD components;              // out_dim x input_dim, orthonormal rows
  std::vector<double> explained;   // eigenvalue per component
  bool rank_deficient = false;     // some selected component has ~zero variance

  std::size_t input_dim() const { return mean.size(); }
  std::size_t out_dim() const { return components.rows(); }
};

// Top out_dim eigenvectors of the centred sample covariance. The first
// nonzero entry of each component is made positive.
PcaProjection fit_pca(const MatrixD& samples, std::size_t out_dim);

// Mean zero, components = I. Used when PCA is disabled.
PcaProjection identity_projection(std::size_t dim);

// components * (x - mean)
std::vector<double> pca_project(const PcaProjection& p, std::span<const double> x);

// Inverse map of pca_project for reconstruction-error checks.
std::vector<double> pca_reconstruct(const PcaProjection& p, std::span<const double> z);

struct CentroidSet {
  MatrixD centroids;  // n x dim
  std::size_t n() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }
};

struct KMeansOptions {
  std::size_t max_iters = 100;
  // Independent k-means++ restarts; the lowest objective wins.
  std::size_t restarts = 40;
};

struct KMeansResult {
  CentroidSet centroids;
  std::vector<std::size_t> assignment;
  double objective = 0.0;
  std::size_t iterations = 0;
  // Objective after every Lloyd step of the winning restart.
  std::vector<double> objective_trace;
};

KMeansResult kmeans_detailed(const MatrixD& samples, std::size_t k, std::uint64_t seed,
                             const KMeansOptions& options = {});

inline CentroidSet kmeans(const MatrixD& samples, std::size_t k, std::uint64_t seed,
                          std::size_t max_iters = 100) {
  return kmeans_detailed(samples, k, seed, {.max_iters = max_iters}).centroids;
}

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace crayon::numerics
