#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "ecgxai/concept_rules.hpp"
#include "ecgxai/delineation.hpp"
#include "ecgxai/io_util.hpp"
#include "ecgxai/synth.hpp"

using namespace ecgxai;

namespace {

SynthConfig quiet(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.noise_sd = 0.0;
  return c;
}

}  // namespace

TEST(Synth, DeterministicPerSeed) {
  const auto a = generate(quiet(3), 10);
  const auto b = generate(quiet(3), 10);
  const auto c = generate(quiet(4), 10);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(max_abs_diff(a.records[i].signal, b.records[i].signal), 0.0);
    EXPECT_EQ(a.records[i].labels, b.records[i].labels);
  }
  EXPECT_GT(max_abs_diff(a.records[0].signal, c.records[0].signal), 0.0);
}

TEST(Synth, ShapesAnnotationAndPeaks) {
  const auto ds = generate(quiet(1), 20);
  for (const auto& r : ds.records) {
    EXPECT_EQ(r.signal.shape(), (Tensor::Shape{500, 12}));
    EXPECT_EQ(r.annotation.size(), 500u * 12u);
    ASSERT_FALSE(r.r_peaks.empty());
    for (std::size_t p : r.r_peaks) EXPECT_EQ(r.segment_at(p, 0), kRPeak);
    EXPECT_GE(r.age, 20.0);
    EXPECT_LE(r.age, 90.0);
  }
}

TEST(Synth, LimbLeadsObeyEinthovenAndGoldberger) {
  const auto ds = generate(quiet(2), 5);
  for (const auto& r : ds.records) {
    for (std::size_t t = 0; t < r.length(); ++t) {
      const double I = r.signal.at(t, 0), II = r.signal.at(t, 1), III = r.signal.at(t, 2);
      EXPECT_NEAR(III, II - I, 1e-12);
      EXPECT_NEAR(r.signal.at(t, 3), -(I + II) / 2, 1e-12);
      EXPECT_NEAR(r.signal.at(t, 4), I - II / 2, 1e-12);
      EXPECT_NEAR(r.signal.at(t, 5), II - I / 2, 1e-12);
    }
  }
}

TEST(Synth, ClassSubsetAndSuperclass) {
  SynthConfig c = quiet(5);
  c.classes = {"norm", "lvh-like"};
  const auto ds = generate(c, 30);
  for (const auto& r : ds.records)
    for (const auto& l : r.labels) EXPECT_TRUE(l == "norm" || l == "lvh-like") << l;
  const auto all = generate(quiet(5), 30);
  for (const auto& r : all.records)
    if (r.has_label("ami-like") || r.has_label("imi-like")) EXPECT_TRUE(r.has_label("mi-like"));
}

TEST(Synth, SplitsAreStratifiedAndComplete) {
  const auto ds = generate(quiet(6), 100);
  EXPECT_EQ(ds.indices(Split::Train).size() + ds.indices(Split::Valid).size() + ds.indices(Split::Test).size(),
            100u);
  EXPECT_EQ(ds.indices(Split::Test).size(), 10u);
}

TEST(Synth, ValidationNamesField) {
  SynthConfig c;
  c.heart_rate = {80, 50};
  try {
    c.validate();
    FAIL() << "expected a validation error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("heart_rate"), std::string::npos);
  }
  SynthConfig d;
  d.classes = {"unknown-class"};
  EXPECT_THROW(d.validate(), std::invalid_argument);
}

TEST(Synth, SaveLoadRoundTrip) {
  const auto ds = generate(quiet(7), 8);
  const auto dir = std::filesystem::temp_directory_path() / "ecgxai_ds_test";
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  const auto back = load_dataset(dir);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.records[i].id, ds.records[i].id);
    EXPECT_LT(max_abs_diff(back.records[i].signal, ds.records[i].signal), 1e-6);
    EXPECT_EQ(back.records[i].annotation, ds.records[i].annotation);
    EXPECT_EQ(back.records[i].r_peaks, ds.records[i].r_peaks);
    EXPECT_EQ(back.splits[i], ds.splits[i]);
  }
  EXPECT_THROW(load_dataset(dir / "nope"), io::NotFound);
  std::filesystem::remove_all(dir);
}

TEST(Features, NamesAndClassSignatures) {
  EXPECT_EQ(feature_names().size(), 12u * 9u + 3u);
  const auto ds = generate(quiet(8), 50);
  const auto rules = concepts::RuleSet::builtin();
  for (const auto& r : ds.records) {
    const auto f = extract_features(r);
    EXPECT_EQ(f.values.size(), feature_names().size());
    EXPECT_EQ(f.get("SEX"), r.sex == Sex::Female ? 1.0 : 0.0);
    if (r.has_label("clbbb-like")) EXPECT_GE(f.get("QRS_Dur_Global"), 0.12) << r.id;
    if (r.has_label("norm")) EXPECT_LT(f.get("QRS_Dur_Global"), 0.12) << r.id;
    if (r.has_label("ami-like")) EXPECT_TRUE(rules.evaluate("V2V3-MI", f)) << r.id;
  }
  EXPECT_THROW(extract_features(ds.records[0]).get("X_Amp_I"), std::invalid_argument);
}

TEST(Features, CrossCorrelationIsSymmetric) {
  const auto cc = lead_cross_correlation(generate(quiet(9), 10));
  for (std::size_t a = 0; a < kNumLeads; ++a) {
    EXPECT_NEAR(cc.matrix[a][a], 1.0, 1e-12);
    for (std::size_t b = 0; b < kNumLeads; ++b) EXPECT_NEAR(cc.matrix[a][b], cc.matrix[b][a], 1e-12);
  }
}

TEST(Delineation, OracleSlicesAreDistributions) {
  const auto ds = generate(quiet(10), 3);
  for (double soft : {0.0, 1.0, 3.0, 5.5}) {
    const auto m = delin::oracle_segment(ds.records[0], soft);
    for (std::size_t t = 0; t < m.length(); t += 7)
      for (std::size_t l = 0; l < kNumLeads; ++l) {
        double s = 0.0;
        for (std::size_t c = 0; c < kNumSegments; ++c) {
          EXPECT_GE(m.at(t, l, c), 0.0);
          s += m.at(t, l, c);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  }
  const auto hard = delin::oracle_segment(ds.records[1], 0.0);
  for (std::size_t t = 0; t < hard.length(); ++t) EXPECT_EQ(hard.at(t, 2, ds.records[1].segment_at(t, 2)), 1.0);
  EXPECT_THROW(delin::oracle_segment(ds.records[0], -1.0), std::invalid_argument);
}

TEST(Delineation, PeakDetectorRules) {
  const std::vector<double> s = {0, 0.5, 0.5, 0.2, 0.9, 0.1, 0.3, 0.1, 0.0, 0.6, 0.0};
  EXPECT_EQ(delin::detect_peaks(s, {0.25, 1}), (std::vector<std::size_t>{1, 4, 6, 9}));
  EXPECT_EQ(delin::detect_peaks(s, {0.25, 3}), (std::vector<std::size_t>{1, 4, 9}));
  EXPECT_EQ(delin::detect_peaks(s, {0.7, 1}), (std::vector<std::size_t>{4}));
}

TEST(Delineation, OracleRecoversRPeaks) {
  const auto ds = generate(quiet(11), 40);
  for (const auto& r : ds.records)
    EXPECT_EQ(delin::detect_r_peaks(delin::oracle_segment(r)), r.r_peaks) << r.id;
}

TEST(Delineation, EvaluateHardMapIsPerfect) {
  const auto r = generate(quiet(12), 1).records[0];
  const auto rep = delin::evaluate_segmenter(delin::oracle_segment(r, 0.0), r.annotation);
  EXPECT_DOUBLE_EQ(rep.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(rep.macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(rep.macro_auc, 1.0);
}
