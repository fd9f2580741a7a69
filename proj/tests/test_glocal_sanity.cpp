#include <gtest/gtest.h>

#include <cmath>

#include "ecgxai/glocal.hpp"
#include "ecgxai/sanity.hpp"
#include "ecgxai/stats.hpp"
#include "ecgxai/train.hpp"
#include "support.hpp"

using namespace ecgxai;
using ecgxai::testing::random_tensor;

TEST(Beats, CropLengthAndWindow) {
  Tensor s({300, 12});
  for (std::size_t t = 0; t < 300; ++t)
    for (std::size_t l = 0; l < 12; ++l) s.at(t, l) = static_cast<double>(t);
  const std::vector<std::size_t> peaks = {10, 100, 260, 200};
  const auto st = glocal::crop_beats(s, peaks, "r");
  EXPECT_EQ(glocal::kBeatLength, 80u);
  EXPECT_EQ(st.beats.shape(), (Tensor::Shape{2, 80, 12}));
  EXPECT_EQ(st.peaks, (std::vector<std::size_t>{100, 200}));
  EXPECT_EQ(st.beats.at(0, 0, 0), 70.0);
  EXPECT_EQ(st.beats.at(1, 79, 5), 249.0);
  const std::vector<std::size_t> none = {5};
  EXPECT_THROW(glocal::crop_beats(s, none), std::invalid_argument);
}

TEST(Beats, MedianBeatIsElementwise) {
  Tensor s({400, 12});
  const std::vector<std::size_t> peaks = {50, 150, 250};
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t w = 0; w < 80; ++w) s.at(peaks[b] - 30 + w, 4) = static_cast<double>(b * 10 + w % 3);
  const Tensor m = glocal::median_beat(glocal::crop_beats(s, peaks));
  for (std::size_t w = 0; w < 80; ++w) EXPECT_EQ(m.at(w, 4), static_cast<double>(10 + w % 3));
}

TEST(Glocal, SelectTopBreaksTiesById) {
  const std::vector<double> sc = {0.5, 0.9, 0.5, 0.1};
  const std::vector<std::string> ids = {"d", "a", "b", "c"};
  EXPECT_EQ(glocal::select_top(sc, ids, 3), (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Glocal, SegmentAggregateUniformFixpointAndNaN) {
  Rng rng(3);
  delin::SegmentationMap sm{Tensor({50, 12, 24})};
  for (std::size_t t = 0; t < 50; ++t)
    for (std::size_t l = 0; l < 12; ++l) {
      double s = 0.0;
      for (std::size_t c = 0; c < 23; ++c) s += sm.probs.at(t, l, c) = rng.uniform();
      for (std::size_t c = 0; c < 23; ++c) sm.probs.at(t, l, c) /= s;
    }
  const Tensor a({50, 12}, 0.75);
  const Tensor m = glocal::segment_aggregate(a, sm);
  for (std::size_t l = 0; l < 12; ++l) {
    for (std::size_t c = 0; c < 23; ++c) EXPECT_EQ(m.at(l, c), 0.75);
    EXPECT_TRUE(std::isnan(m.at(l, 23)));
  }
}

TEST(Glocal, RankCellsByMagnitude) {
  Tensor t({12, 24}, std::nan(""));
  t.at(0, 1) = 0.2;
  t.at(3, 4) = -0.9;
  t.at(5, 5) = 0.5;
  t.at(2, 2) = -0.5;
  const auto r = glocal::rank_cells(t, 3);
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0].lead, 3u);
  EXPECT_EQ(r[1].lead, 2u);
  EXPECT_EQ(r[2].lead, 5u);
}

TEST(Glocal, BuildMapOnTrainedModel) {
  SynthConfig sc;
  sc.seed = 4;
  const auto ds = generate(sc, 150);
  const std::vector<std::string> labels = {"norm", "mi-like"};
  SupervisedSet tr;
  for (std::size_t i : ds.indices(Split::Train)) {
    tr.inputs.push_back(ds.records[i].signal);
    tr.targets.push_back({double(ds.records[i].has_label("norm")), double(ds.records[i].has_label("mi-like"))});
  }
  TrainConfig tc;
  tc.epochs = 2;
  const auto model = train(nn::lenet(2, nn::Head::SigmoidMultilabel), tr, tc).model;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.size(); ++i) pool.push_back(i);
  glocal::GlocalOptions o;
  o.top_n = 12;
  o.method = attr::Method::LrpEpsilon;
  const auto g = glocal::build_glocal_map(model, ds, pool, labels, 1, o);
  EXPECT_EQ(g.sample_ids.size(), 12u);
  EXPECT_EQ(g.median_beat.shape(), (Tensor::Shape{80, 12}));
  EXPECT_EQ(g.attribution_beat.shape(), (Tensor::Shape{80, 12}));
  EXPECT_EQ(g.segment_table.shape(), (Tensor::Shape{12, 24}));
  EXPECT_EQ(g.top.size(), 7u);
  for (std::size_t i = 0; i < g.sample_ids.size(); ++i) EXPECT_EQ(g.sample_ids[i].substr(0, 3), "rec");
}

TEST(Sanity, SpatialSpecificityBounds) {
  Rng rng(5);
  const Tensor u({80, 12}, 1.0);
  for (std::size_t l = 0; l < 12; ++l) EXPECT_EQ(sanity::spatial_specificity(u, l), 1.0 / 12.0);
  Tensor one({80, 12});
  for (std::size_t t = 0; t < 80; ++t) one.at(t, 7) = rng.normal();
  EXPECT_EQ(sanity::spatial_specificity(one, 7), 1.0);
  EXPECT_EQ(sanity::spatial_specificity(one, 2), 0.0);
  EXPECT_TRUE(std::isnan(sanity::spatial_specificity(Tensor({80, 12}), 0)));
  for (int c = 0; c < 50; ++c) {
    const Tensor m = random_tensor({100, 12}, rng);
    const double s = sanity::spatial_specificity(m, c % 12);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Sanity, BeatProfilePeaksWhereTheMapDoes) {
  Tensor m({400, 12});
  const std::vector<std::size_t> peaks = {100, 250};
  for (std::size_t p : peaks) m.at(p + 12, 3) = 2.0;
  const auto prof = sanity::beat_profile(m, peaks);
  ASSERT_EQ(prof.size(), 80u);
  EXPECT_EQ(std::max_element(prof.begin(), prof.end()) - prof.begin(), 42);
  const std::vector<std::size_t> edge = {3};
  EXPECT_TRUE(sanity::beat_profile(m, edge).empty());
}

TEST(Sanity, WaveTargetsAreSignedDeflections) {
  SynthConfig sc;
  sc.seed = 6;
  sc.noise_sd = 0.0;
  sc.classes = {"norm"};
  const auto r = generate(sc, 1).records[0];
  const auto rt = sanity::wave_targets(r, sanity::Wave::R);
  EXPECT_GT(rt[1], 0.3);   // II upright
  EXPECT_LT(rt[3], -0.3);  // aVR inverted
  EXPECT_EQ(sanity::wave_from_string("t"), sanity::Wave::T);
  EXPECT_THROW(sanity::wave_from_string("U"), std::invalid_argument);
}

TEST(Stats, QuantileInterpolates) {
  const std::vector<double> v = {4, 1, 3, 2, std::nan("")};
  EXPECT_DOUBLE_EQ(stats::quantile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(stats::quantile(v, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(stats::median(v), 2.5);
}
