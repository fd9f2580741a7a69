#include <gtest/gtest.h>

#include "ecgxai/discovery.hpp"
#include "ecgxai/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ecgxai;
using namespace ecgxai::disc;

namespace {

Matrix two_blobs(std::size_t per, double gap, std::uint64_t seed, std::vector<int>& labels) {
  Rng rng(seed);
  Matrix x(static_cast<Eigen::Index>(2 * per), 5);
  labels.clear();
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const int c = i < per ? 0 : 1;
    labels.push_back(c);
    for (int j = 0; j < 5; ++j) x(static_cast<Eigen::Index>(i), j) = rng.normal() + (j == 0 ? gap * c : 0.0);
  }
  return x;
}

}  // namespace

TEST(Scores, AccuracyAndArsMatchBruteForce) {
  using ecgxai::testing::all_partitions;
  for (int n = 1; n <= 6; ++n) {
    const auto parts = all_partitions(n);
    for (const auto& a : parts)
      for (const auto& y : parts) {
        EXPECT_NEAR(cluster_accuracy(a, y), ecgxai::testing::brute_accuracy(a, y), 1e-12);
        EXPECT_NEAR(adjusted_rand_score(a, y), ecgxai::testing::brute_ars(a, y), 1e-12);
      }
  }
}

TEST(Scores, KnownArsValue) {
  const std::vector<int> a = {0, 0, 1, 1, 2, 2}, y = {0, 0, 1, 2, 2, 2};
  EXPECT_NEAR(adjusted_rand_score(a, y), 0.4444444444444444, 1e-15);
  EXPECT_EQ(cluster_accuracy(a, y), 5.0 / 6.0);
}

TEST(Pca, KeepsEnoughVarianceAndWhitens) {
  Rng rng(1);
  Matrix x(200, 4);
  for (int i = 0; i < 200; ++i) {
    x(i, 0) = 10 * rng.normal();
    x(i, 1) = 3 * rng.normal();
    x(i, 2) = 0.1 * rng.normal();
    x(i, 3) = 0.1 * rng.normal();
  }
  const auto p = pca_project(x, 0.75, false);
  EXPECT_EQ(p.k, 1u);
  const auto q = pca_project(x, 0.99, true);
  EXPECT_EQ(q.k, 2u);
  for (Eigen::Index c = 0; c < 2; ++c) {
    const auto col = q.projected.col(c);
    const double var = (col.array() - col.mean()).square().sum() / (col.size() - 1);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
  EXPECT_THROW(pca_project(Matrix::Zero(5, 3), 0.75), std::invalid_argument);
}

TEST(Clustering, SeparatedBlobsAreRecoveredByEveryAlgorithm) {
  std::vector<int> y;
  const Matrix x = two_blobs(30, 12.0, 2, y);
  EXPECT_EQ(cluster_accuracy(kmeans(x, 2, 1).assignments, y), 1.0);
  EXPECT_EQ(cluster_accuracy(gmm_diagonal(x, 2, 1).assignments, y), 1.0);
  EXPECT_EQ(cluster_accuracy(ward(x, 2).assignments, y), 1.0);
  const auto g = cluster_grid_search(x, y, 2, 3);
  EXPECT_EQ(g.best.acc, 1.0);
  EXPECT_EQ(g.best.ars, 1.0);
  EXPECT_EQ(g.entries.size(), 6u);
}

TEST(Clustering, DeterministicPerSeed) {
  std::vector<int> y;
  const Matrix x = two_blobs(25, 1.5, 4, y);
  EXPECT_EQ(kmeans(x, 3, 9).assignments, kmeans(x, 3, 9).assignments);
  EXPECT_EQ(gmm_diagonal(x, 3, 9).assignments, gmm_diagonal(x, 3, 9).assignments);
}

TEST(Welch, MatchesReferenceValue) {
  const std::vector<double> a = {1.0, 2.0, 3.5, 4.0, 2.2}, b = {3.0, 4.5, 5.0, 6.1, 4.4, 5.5};
  EXPECT_NEAR(welch_p_value(a, b), 0.01260600577610232, 1e-12);
  const std::vector<double> c = {1, 1, 1}, d = {1, 1, 1}, e = {2, 2, 2};
  EXPECT_EQ(welch_p_value(c, d), 1.0);
  EXPECT_EQ(welch_p_value(c, e), 0.0);
}

TEST(Regions, PlantedDifferenceIsRecoveredExactly) {
  Rng rng(5);
  std::vector<Tensor> beats;
  std::vector<int> assign;
  for (int i = 0; i < 40; ++i) {
    Tensor b({80, 12});
    for (double& v : b.values()) v = rng.normal(0.0, 0.1);
    const int c = i % 2;
    if (c == 1)
      for (std::size_t t = 20; t < 30; ++t) b.at(t, 3) += 1.0;
    beats.push_back(b);
    assign.push_back(c);
  }
  const auto r = cluster_difference_regions(beats, assign, 0.01);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].lead, 3u);
  EXPECT_EQ(r[0].tau_begin, 20u);
  EXPECT_EQ(r[0].tau_end, 30u);
  EXPECT_GT(r[0].effect, 0.9);
  EXPECT_LT(r[0].p, 0.01);
}

TEST(Representations, ShapesPerKind) {
  SynthConfig sc;
  sc.seed = 3;
  const auto ds = generate(sc, 20);
  const nn::Model m = nn::fold_batchnorm(nn::Model(nn::lenet(2, nn::Head::SigmoidMultilabel), 1));
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  attr::Options o;
  o.ig_steps = 8;
  const auto a = build_representation(RepKind::AttributionBeat, m, ds, idx, 1, attr::Method::IntegratedGradients, o);
  EXPECT_EQ(a.rows(), 4);
  EXPECT_EQ(a.cols(), 80 * 12);
  const auto in = build_representation(RepKind::InputBeat, m, ds, idx, 1, attr::Method::Saliency);
  EXPECT_EQ(in.cols(), 80 * 12);
  const auto h = build_representation(RepKind::Hidden, m, ds, idx, 1, attr::Method::Saliency, {}, "gap");
  EXPECT_EQ(h.cols(), 128);
  const auto par = build_representation(RepKind::AttributionBeat, m, ds, idx, 1, attr::Method::IntegratedGradients, o,
                                        "gap", 3);
  EXPECT_EQ((a - par).cwiseAbs().maxCoeff(), 0.0);
}
