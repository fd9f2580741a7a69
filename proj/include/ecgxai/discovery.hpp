#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ecgxai/attribution.hpp"
#include "ecgxai/synth.hpp"

namespace ecgxai::disc {

using Matrix = Eigen::MatrixXd;

struct PcaResult {
  Matrix projected;                 // n x k
  std::size_t k = 0;
  std::vector<double> eigenvalues;  // all, descending (sample covariance)
  Eigen::VectorXd mean;
  Matrix components;                // d x k
  bool whitened = false;
};

/// Keeps the smallest k whose cumulative explained variance reaches
/// `variance`; whitening scales each component to unit variance.
PcaResult pca_project(const Matrix& x, double variance = 0.75, bool whiten = false);

struct Clustering {
  std::vector<int> assignments;  // relabeled by first appearance
  double objective = 0.0;        // inertia (k-means, Ward) or log-likelihood (GMM)
};

/// k-means++ seeding and Lloyd iterations; best of `restarts` by inertia.
Clustering kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t restarts = 10,
                  std::size_t max_iter = 300);

/// Diagonal-covariance Gaussian mixture fitted by EM; best of `restarts` by
/// log-likelihood.
Clustering gmm_diagonal(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t restarts = 10,
                        std::size_t max_iter = 500, double tol = 1e-7);

/// Agglomerative clustering with Ward linkage, cut at k clusters.
Clustering ward(const Matrix& x, std::size_t k);

/// Fraction matched under the best one-to-one cluster-to-class assignment
/// (rectangular when the counts differ).
double cluster_accuracy(std::span<const int> assignments, std::span<const int> labels);

/// Hubert-Arabie adjusted Rand index. Equals 1 for identical partitions,
/// including the degenerate case where both are single clusters.
double adjusted_rand_score(std::span<const int> assignments, std::span<const int> labels);

enum class Algorithm { KMeans, Gmm, Ward };
std::string_view to_string(Algorithm a);

struct GridEntry {
  Algorithm algorithm = Algorithm::KMeans;
  bool whiten = false;
  std::size_t pca_dim = 0;
  std::vector<int> assignments;
  double acc = 0.0;
  double ars = 0.0;
};

struct GridResult {
  GridEntry best;
  std::vector<GridEntry> entries;
};

/// All algorithms with and without whitening; best by ACC, then ARS, then
/// fixed order.
GridResult cluster_grid_search(const Matrix& x, std::span<const int> labels, std::size_t n_clusters,
                               std::uint64_t seed, double variance = 0.75);

/// Two-sided Welch t-test p-value. Zero variance in both groups gives 1 for
/// equal means and 0 otherwise.
double welch_p_value(std::span<const double> a, std::span<const double> b);

struct Region {
  std::size_t lead = 0;
  std::size_t tau_begin = 0;  // inclusive
  std::size_t tau_end = 0;    // exclusive
  double p = 1.0;             // smallest corrected p in the region
  double effect = 0.0;        // mean of (cluster 1 - cluster 0) over the region
};

/// Welch test per (tau, lead) between clusters 0 and 1 of [W, L] beats,
/// Bonferroni-corrected over all cells; significant cells merged into
/// contiguous runs per lead, ranked by |effect|.
std::vector<Region> cluster_difference_regions(std::span<const Tensor> beats, std::span<const int> assignments,
                                               double alpha = 0.01);

enum class RepKind { AttributionBeat, InputBeat, Hidden };
std::string_view to_string(RepKind k);

/// One row per record: flattened median beat of the record's attribution for
/// output k (or of its signal), or the pooled features at layer `hidden`.
Matrix build_representation(RepKind kind, const nn::Model& model, const EcgDataset& dataset,
                            std::span<const std::size_t> indices, std::size_t k, attr::Method method,
                            const attr::Options& opts = {}, std::string_view hidden = "gap", std::size_t jobs = 1);

}  // namespace ecgxai::disc
