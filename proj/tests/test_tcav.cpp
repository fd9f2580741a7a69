#include <gtest/gtest.h>

#include <set>

#include "ecgxai/tcav.hpp"
#include "support.hpp"

using namespace ecgxai;
using namespace ecgxai::tcav;
using ecgxai::testing::random_tensor;

TEST(Tcav, ScoreSignFlipIsExact) {
  Rng rng(1);
  for (int c = 0; c < 20; ++c) {
    std::vector<std::vector<double>> grads(37, std::vector<double>(6));
    for (auto& g : grads)
      for (double& v : g) v = rng.normal();
    std::vector<double> v(6), neg(6);
    for (std::size_t i = 0; i < 6; ++i) neg[i] = -(v[i] = rng.normal());
    std::vector<double> s, sn;
    for (const auto& g : grads) {
      s.push_back(sensitivity(g, v));
      sn.push_back(sensitivity(g, neg));
    }
    EXPECT_EQ(positive_count(sn), s.size() - positive_count(s));
    EXPECT_NEAR(tcav_score(sn), 1.0 - tcav_score(s), 1e-15);
  }
  const std::vector<double> zeros = {0.0, 1.0, -1.0, 2.0};
  EXPECT_EQ(tcav_score(zeros), 0.5);
}

TEST(Tcav, PooledGradientIsDerivativeAlongDirection) {
  Rng rng(2);
  nn::Model m(nn::lenet(2, nn::Head::SigmoidMultilabel), 3);
  const Tensor x = random_tensor({260, 12}, rng);
  const auto fr = nn::forward(m, x, true);
  for (const char* layer : {"relu2", "relu4"}) {
    const std::size_t pos = m.position_of(layer);
    const auto g = pooled_gradient(m, *fr.trace, pos, 1);
    const Tensor a = fr.trace->activations[pos];
    const std::size_t channels = a.dim(a.rank() - 1);
    ASSERT_EQ(g.size(), channels);
    std::vector<double> v(channels);
    for (double& e : v) e = rng.normal();
    const double h = 1e-6;
    Tensor ap = a, am = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ap[i] += h * v[i % channels];
      am[i] -= h * v[i % channels];
    }
    const double fd = (m.forward_from(ap, pos)[1] - m.forward_from(am, pos)[1]) / (2 * h);
    EXPECT_LT(ecgxai::testing::relative_error(sensitivity(g, v), fd), 1e-5) << layer;
    EXPECT_EQ(pooled_activation(*fr.trace, pos).size(), channels);
  }
}

TEST(Tcav, ConceptDatasetDrawsDisjointMembers) {
  std::vector<bool> mem(100);
  for (std::size_t i = 0; i < 100; ++i) mem[i] = i % 3 == 0;
  const auto s = build_concept_dataset(mem, 20, 30, 1, 2);
  EXPECT_EQ(s.positives.size(), 20u);
  EXPECT_EQ(s.negatives.size(), 30u);
  std::set<std::size_t> seen;
  for (auto i : s.positives) {
    EXPECT_TRUE(mem[i]);
    EXPECT_TRUE(seen.insert(i).second);
  }
  for (auto i : s.negatives) {
    EXPECT_FALSE(mem[i]);
    EXPECT_TRUE(seen.insert(i).second);
  }
  const auto t = build_concept_dataset(mem, 20, 30, 1, 3);
  EXPECT_EQ(t.positives, s.positives);
  EXPECT_NE(t.negatives, s.negatives);
  EXPECT_THROW(build_concept_dataset(mem, 40, 10, 1, 2), std::invalid_argument);
}

TEST(Tcav, LogisticFitSeparatesAndConverges) {
  Rng rng(3);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    const int c = i % 2;
    x.push_back({rng.normal() + (c ? 1.5 : -1.5), rng.normal()});
    y.push_back(c);
  }
  const auto fit = fit_logistic(x, y);
  EXPECT_GT(fit.weights[0], 1.0);
  EXPECT_GT(fit.weights[0], 2.0 * std::abs(fit.weights[1]));
  EXPECT_LT(fit.gradient_norm, 1e-6);
  const auto cav = fit_cav(x, y, 7);
  double norm = 0.0;
  for (double v : cav.direction) norm += v * v;
  EXPECT_NEAR(norm, 1.0, 1e-12);
  EXPECT_GT(cav.accuracy, 0.9);
  EXPECT_GT(cav.direction[0], 0.9);
}

TEST(Tcav, CellStatsStarAndGrey) {
  const std::vector<double> high = {0.95, 0.97, 0.99, 1.0, 0.96, 0.98};
  const std::vector<double> good(6, 0.9), bad(6, 0.65);
  const auto s = cell_stats(high, good);
  EXPECT_TRUE(s.starred);
  EXPECT_FALSE(s.greyed);
  const auto g = cell_stats(high, bad);
  EXPECT_TRUE(g.greyed);
  EXPECT_FALSE(g.starred);
  const std::vector<double> mid = {0.4, 0.45, 0.5, 0.55, 0.6};
  EXPECT_FALSE(cell_stats(mid, good).starred);
  const std::vector<double> wide = {0.0, 0.1, 0.9, 1.0};
  EXPECT_FALSE(cell_stats(wide, good).starred);
}

TEST(Tcav, ReducedProtocolShapeAndDeterminism) {
  SynthConfig sc;
  sc.seed = 4;
  sc.classes = {"norm", "lvh-like"};
  const auto ds = generate(sc, 120);
  const auto rules = concepts::RuleSet::builtin();
  const auto tr = ds.indices(Split::Train);
  TcavData d;
  for (std::size_t i : tr) {
    d.train.inputs.push_back(ds.records[i].signal);
    d.train.targets.push_back({double(ds.records[i].has_label("lvh-like"))});
    d.concept_pool.push_back(ds.records[i].signal);
  }
  for (std::size_t i : ds.indices(Split::Test)) {
    d.class_samples.push_back(ds.records[i].signal);
    d.class_labels.push_back({int(ds.records[i].has_label("lvh-like"))});
  }
  TcavConfig c;
  c.arch = nn::lenet(1, nn::Head::SigmoidMultilabel);
  c.train.epochs = 1;
  c.layers = {"relu3", "relu4"};
  c.classes = {0};
  c.class_names = {"lvh-like"};
  c.n_models = 2;
  c.n_cavs = 2;
  c.n_pos = 10;
  c.n_neg = 10;
  const std::vector<ConceptDef> defs = {{"SLI-LVH", rule_membership(rules, "SLI-LVH", ds, tr)}};
  const auto g = significance_protocol(d, defs, c);
  ASSERT_EQ(g.cells.size(), 2u);
  EXPECT_EQ(g.find("relu4", "SLI-LVH", "lvh-like").scores.size(), 4u);
  c.jobs = 2;
  const auto h = significance_protocol(d, defs, c);
  EXPECT_EQ(h.find("relu3", "SLI-LVH", "lvh-like").scores, g.find("relu3", "SLI-LVH", "lvh-like").scores);
  EXPECT_THROW(g.find("relu1", "SLI-LVH", "lvh-like"), std::invalid_argument);
}
