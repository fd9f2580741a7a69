#include <gtest/gtest.h>

#include <cmath>

#include "ecgxai/concept_rules.hpp"
#include "support.hpp"

using namespace ecgxai;
using concepts::RuleSet;

namespace {

// Unremarkable ECG: small R and S everywhere, no Q waves, upright T.
EcgFeatures base() {
  auto f = ecgxai::testing::neutral_features();
  for (auto lead : kLeadNames) {
    const std::string l(lead);
    f.values["R_Amp_" + l] = 0.5;
    f.values["S_Amp_" + l] = 0.2;
    f.values["T_Amp_" + l] = 0.2;
    f.values["R_Dur_" + l] = 0.03;
    f.values["T_Morph_" + l] = 1.0;
  }
  f.values["QRS_Dur_Global"] = 0.09;
  return f;
}

class Rules : public ::testing::Test {
 protected:
  bool eval(const std::string& rule, const EcgFeatures& f) const { return rules.evaluate(rule, f); }
  RuleSet rules = RuleSet::builtin();
};

constexpr double kUp = 1e-9;

}  // namespace

TEST_F(Rules, BuiltinSetIsComplete) {
  EXPECT_EQ(rules.size(), 14u);
  for (const auto& n : rules.names()) EXPECT_FALSE(eval(n, base())) << n;
}

TEST_F(Rules, SokolowLyonIsStrict) {
  auto f = base();
  f.values["R_Amp_V5"] = 2.0;
  f.values["S_Amp_V1"] = 1.5;
  EXPECT_FALSE(eval("SLI-LVH", f));
  f.values["S_Amp_V1"] = 1.5 + kUp;
  EXPECT_TRUE(eval("SLI-LVH", f));
}

TEST_F(Rules, LewisIndexIsStrict) {
  auto f = base();
  f.values["R_Amp_I"] = 1.6;
  f.values["S_Amp_III"] = 0.0;
  f.values["R_Amp_III"] = 0.0;
  f.values["S_Amp_I"] = 0.0;
  EXPECT_FALSE(eval("LI-LVH", f));
  f.values["S_Amp_III"] = kUp;
  EXPECT_TRUE(eval("LI-LVH", f));
}

TEST_F(Rules, LimbAmplitudeThresholds) {
  for (const char* field : {"R_Amp_I", "R_Amp_II", "R_Amp_III", "S_Amp_I", "S_Amp_II", "S_Amp_III"}) {
    auto f = base();
    f.values[field] = 2.0;
    EXPECT_FALSE(eval("RS-LVH", f)) << field;
    f.values[field] = 2.0 + kUp;
    EXPECT_TRUE(eval("RS-LVH", f)) << field;
  }
  for (const char* field : {"S_Amp_V1", "S_Amp_V2"}) {
    auto f = base();
    f.values[field] = 3.0;
    EXPECT_FALSE(eval("S12-LVH", f));
    f.values[field] = 3.0 + kUp;
    EXPECT_TRUE(eval("S12-LVH", f));
  }
  for (const char* field : {"R_Amp_V5", "R_Amp_V6"}) {
    auto f = base();
    f.values[field] = 3.0;
    EXPECT_FALSE(eval("R56-LVH", f));
    f.values[field] = 3.0 + kUp;
    EXPECT_TRUE(eval("R56-LVH", f));
  }
}

TEST_F(Rules, QrsDurationIsInclusive) {
  auto f = base();
  f.values["QRS_Dur_Global"] = 0.12;
  EXPECT_TRUE(eval("QRS-CLBBB", f));
  f.values["QRS_Dur_Global"] = 0.12 - kUp;
  EXPECT_FALSE(eval("QRS-CLBBB", f));
}

TEST_F(Rules, AnteroseptalQWaves) {
  auto f = base();
  f.values["Q_Dur_V2"] = 0.02;
  f.values["Q_Dur_V3"] = 0.02 + kUp;
  EXPECT_FALSE(eval("V2V3-MI", f));
  f.values["Q_Dur_V2"] = 0.02 + kUp;
  EXPECT_TRUE(eval("V2V3-MI", f));
  auto g = base();
  g.values["R_Amp_V2"] = 0.0;
  EXPECT_FALSE(eval("V2V3-MI", g));
  g.values["R_Amp_V3"] = 0.0;
  EXPECT_TRUE(eval("V2V3-MI", g));
  EXPECT_TRUE(eval("QWAVES-MI", g));
}

TEST_F(Rules, ProminentRInV1V2) {
  auto f = base();
  for (const char* l : {"V1", "V2"}) {
    f.values[std::string("R_Dur_") + l] = 0.04 + kUp;
    f.values[std::string("R_Amp_") + l] = 0.6;
    f.values[std::string("S_Amp_") + l] = 0.3;
    f.values[std::string("T_Amp_") + l] = 0.1;
  }
  EXPECT_TRUE(eval("RPEAK-MI", f));
  EXPECT_TRUE(eval("QWAVES-MI", f));
  auto g = f;
  g.values["R_Dur_V2"] = 0.04;
  EXPECT_FALSE(eval("RPEAK-MI", g));
  g = f;
  g.values["T_Amp_V1"] = 0.0;
  EXPECT_FALSE(eval("RPEAK-MI", g));
  g = f;
  g.values["S_Amp_V2"] = 0.6;
  EXPECT_FALSE(eval("RPEAK-MI", g));
  g = f;
  g.values["R_Amp_V1"] = 0.0;
  g.values["S_Amp_V1"] = 0.0;
  EXPECT_FALSE(eval("RPEAK-MI", g));
}

TEST_F(Rules, PathologicQNeedsTwoLeadsOfOneGroup) {
  auto q = [](EcgFeatures& f, const std::string& l, double dur, double amp) {
    f.values["Q_Dur_" + l] = dur;
    f.values["Q_Amp_" + l] = amp;
  };
  auto f = base();
  q(f, "II", 0.03, 0.1);
  EXPECT_FALSE(eval("QPEAK-MI", f));
  q(f, "V4", 0.03, 0.1);
  EXPECT_FALSE(eval("QPEAK-MI", f));
  q(f, "aVF", 0.03, -0.1);
  EXPECT_TRUE(eval("QPEAK-MI", f));
  EXPECT_TRUE(eval("QWAVES-MI", f));
  q(f, "aVF", 0.03 - kUp, 0.1);
  EXPECT_FALSE(eval("QPEAK-MI", f));
  q(f, "aVF", 0.03, 0.1 - kUp);
  EXPECT_FALSE(eval("QPEAK-MI", f));
  q(f, "V6", 0.05, 0.2);
  EXPECT_TRUE(eval("QPEAK-MI", f));
}

TEST_F(Rules, StElevation) {
  auto f = base();
  f.values["ST_Amp_I"] = 0.1;
  EXPECT_FALSE(eval("ST-ELEV-ISC", f));
  f.values["ST_Amp_aVL"] = 0.1;
  EXPECT_TRUE(eval("ST-ELEV-ISC", f));
  f.values["ST_Amp_aVL"] = 0.1 - kUp;
  EXPECT_FALSE(eval("ST-ELEV-ISC", f));

  auto g = base();
  g.values["ST_Amp_V1"] = 0.15;
  g.values["ST_Amp_V2"] = 0.15;
  EXPECT_TRUE(eval("ST-ELEV-ISC", g));
  g.values["AGE"] = 30;
  EXPECT_TRUE(eval("ST-ELEV-ISC", g));
  g.values["SEX"] = 1;
  EXPECT_FALSE(eval("ST-ELEV-ISC", g));
  g.values["SEX"] = 0;
  g.values["ST_Amp_V2"] = 0.15 - kUp;
  EXPECT_FALSE(eval("ST-ELEV-ISC", g));
}

TEST_F(Rules, StDepression) {
  auto f = base();
  f.values["ST_Amp_V4"] = -0.5;
  f.values["ST_Amp_V5"] = -0.5;
  EXPECT_TRUE(eval("ST-DEPR-ISC", f));
  f.values["ST_Amp_V5"] = -0.5 + kUp;
  EXPECT_FALSE(eval("ST-DEPR-ISC", f));

  auto g = base();
  g.values["T_Morph_II"] = -1;
  g.values["T_Morph_III"] = -1;
  EXPECT_TRUE(eval("ST-DEPR-ISC", g));
  g.values["S_Amp_III"] = 0.5;
  EXPECT_FALSE(eval("ST-DEPR-ISC", g));
  g.values["R_Amp_III"] = 2.0;
  g.values["S_Amp_III"] = 3.0;
  EXPECT_FALSE(eval("ST-DEPR-ISC", g));
  g.values["R_Amp_III"] = 2.0 + kUp;
  EXPECT_TRUE(eval("ST-DEPR-ISC", g));
  g.values["T_Morph_II"] = 0;
  EXPECT_FALSE(eval("ST-DEPR-ISC", g));
}

TEST_F(Rules, Demographics) {
  auto f = base();
  f.values["SEX"] = 1;
  EXPECT_TRUE(eval("SEX=FEMALE", f));
  f.values["AGE"] = 75;
  EXPECT_TRUE(eval("AGE>75", f));
  f.values["AGE"] = 74.999;
  EXPECT_FALSE(eval("AGE>75", f));
}

TEST_F(Rules, NaNComparisonsAreFalse) {
  auto f = base();
  f.values["QRS_Dur_Global"] = std::nan("");
  EXPECT_FALSE(eval("QRS-CLBBB", f));
  RuleSet r;
  r.add("NOT-LONG", "!(QRS_Dur_Global >= 0.12)");
  EXPECT_TRUE(r.evaluate("NOT-LONG", f));
}

TEST(RuleParser, Grammar) {
  RuleSet r;
  r.add("A", "abs(-R_Amp_I) * 2 - 1 >= 0.5 & !(AGE < 18)");
  r.add("B", "[A] | SEX = 1");
  auto f = ecgxai::testing::neutral_features();
  f.values["R_Amp_I"] = 0.75;
  EXPECT_TRUE(r.evaluate("A", f));
  f.values["R_Amp_I"] = 0.74;
  EXPECT_FALSE(r.evaluate("B", f));
  f.values["SEX"] = 1;
  EXPECT_TRUE(r.evaluate("B", f));
}

TEST(RuleParser, ParseTextWithCommentsAndContinuations) {
  const auto r = RuleSet::parse("# header\nX := AGE > 10\n   & AGE < 20  # teen\nY := ![X]\n");
  EXPECT_EQ(r.names(), (std::vector<std::string>{"X", "Y"}));
  auto f = ecgxai::testing::neutral_features();
  f.values["AGE"] = 15;
  EXPECT_TRUE(r.evaluate("X", f));
  EXPECT_FALSE(r.evaluate("Y", f));
}

TEST(RuleParser, Errors) {
  RuleSet r;
  EXPECT_THROW(r.add("U", "FOO_I > 1"), concepts::RuleSyntaxError);
  EXPECT_THROW(r.add("P", "(AGE > 1"), concepts::RuleSyntaxError);
  EXPECT_THROW(r.add("R", "[MISSING]"), concepts::RuleSyntaxError);
  EXPECT_THROW(r.add("X", "R_Amp_X > 1"), concepts::RuleSyntaxError);
  EXPECT_THROW(r.add("T", "AGE + 1"), concepts::RuleSyntaxError);
  EXPECT_THROW(r.add("N", "any2({I, II}; any2({I, II}; R_Amp_X > 1))"), concepts::RuleSyntaxError);
  EXPECT_THROW(r.add("G", "any2({I, Z9}; R_Amp_X > 1)"), std::invalid_argument);
  r.add("OK", "AGE > 1");
  EXPECT_THROW(r.add("OK", "AGE > 2"), concepts::RuleSyntaxError);
  EXPECT_THROW(RuleSet::parse("no definition here"), concepts::RuleSyntaxError);
}

TEST(Mcc, KnownValues) {
  EXPECT_DOUBLE_EQ(concepts::mcc({10, 0, 0, 10}), 1.0);
  EXPECT_DOUBLE_EQ(concepts::mcc({0, 10, 10, 0}), -1.0);
  EXPECT_NEAR(concepts::mcc({6, 2, 3, 9}), (6.0 * 9 - 2 * 3) / std::sqrt(8.0 * 9 * 11 * 12), 1e-15);
  EXPECT_TRUE(std::isnan(concepts::mcc({5, 5, 0, 0})));
}

TEST(Mcc, ConceptMatchesPlantedClass) {
  SynthConfig sc;
  sc.seed = 2;
  const auto ds = generate(sc, 100);
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  EXPECT_DOUBLE_EQ(concepts::concept_label_mcc(RuleSet::builtin(), "V2V3-MI", ds, idx, "ami-like"), 1.0);
}
