#include <gtest/gtest.h>

#include "ecgxai/attribution.hpp"
#include "support.hpp"

using namespace ecgxai;
using namespace ecgxai::nn;
using ecgxai::testing::random_tensor;

namespace {

ModelSpec small_lenet(std::size_t outputs) {
  LeNetOptions o;
  o.widths = {8, 8, 8};
  o.hidden = 8;
  return lenet(outputs, Head::SigmoidMultilabel, o);
}

double logit(const Model& m, const Tensor& x, std::size_t k) { return forward(m, x).output[k]; }

}  // namespace

TEST(Attribution, MethodNames) {
  EXPECT_EQ(attr::method_from_string("lrp"), attr::Method::LrpEpsilon);
  EXPECT_EQ(attr::method_from_string("ig"), attr::Method::IntegratedGradients);
  EXPECT_EQ(attr::to_string(attr::Method::LrpZPlus), "lrp-zplus");
  EXPECT_THROW(attr::method_from_string("shap"), std::invalid_argument);
}

TEST(Attribution, SaliencyIsAbsoluteGradient) {
  Rng rng(1);
  Model m(small_lenet(2), 1);
  const Tensor x = random_tensor({250, 12}, rng);
  const Tensor s = attr::saliency(m, x, 1);
  const Tensor g = input_gradient(m, x, 1);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i], std::abs(g[i]));
}

// Fresh nets have zero biases, so the path integrand is constant from a zero baseline.
TEST(Attribution, IntegratedGradientsCompleteOnBiasFreeNets) {
  Rng rng(2);
  for (int c = 0; c < 3; ++c) {
    Model m(small_lenet(2), 20 + c);
    m = fold_batchnorm(m);
    const Tensor x = random_tensor({250, 12}, rng);
    const Tensor b(x.shape());
    const Tensor ig = attr::integrated_gradients(m, x, 0, b, 16);
    const double delta = logit(m, x, 0) - logit(m, b, 0);
    EXPECT_LE(std::abs(sum(ig) - delta), 1e-12 * std::abs(delta) + 1e-12);
  }
}

TEST(Attribution, IntegratedGradientsOfLinearModelIsExact) {
  ModelSpec spec;
  spec.output_dim = 1;
  spec.min_length = 4;
  spec.layers = {{LayerKind::Conv1d, "c", 12, 1, 1, 1, 0}, {LayerKind::GlobalAvgPool, "gap"}};
  Model m(spec, 3);
  Rng rng(3);
  const Tensor x = random_tensor({8, 12}, rng);
  const Tensor b = random_tensor({8, 12}, rng);
  const Tensor ig = attr::integrated_gradients(m, x, 0, b, 2);
  const Tensor g = input_gradient(m, x, 0);
  for (std::size_t i = 0; i < ig.size(); ++i) EXPECT_NEAR(ig[i], g[i] * (x[i] - b[i]), 1e-12);
}

TEST(Attribution, LrpEpsilonEqualsGradientTimesInput) {
  Rng rng(4);
  Model m = fold_batchnorm(Model(small_lenet(2), 4));
  const Tensor x = random_tensor({250, 12}, rng);
  const Tensor gi = hadamard(input_gradient(m, x, 1), x);
  EXPECT_LT(max_abs_diff(attr::lrp(m, x, 1, {LrpRule::Epsilon, 1e-12}), gi), 1e-6);
  EXPECT_LT(max_abs_diff(attr::lrp(m, x, 1, {LrpRule::Epsilon, 0.0}), gi), 1e-12);
}

TEST(Attribution, LrpConservesWithoutBiases) {
  Rng rng(5);
  Model m = fold_batchnorm(Model(small_lenet(1), 5));
  ecgxai::testing::zero_biases(m);
  const Tensor x = random_tensor({250, 12}, rng);
  for (auto rule : {LrpRule::Epsilon, LrpRule::ZPlusConv}) {
    const Tensor r = attr::lrp(m, x, 0, {rule, 1e-6});
    const double f = logit(m, x, 0);
    EXPECT_LE(std::abs(sum(r) - f), 0.01 * std::abs(f));
  }
}

TEST(Attribution, LrpRefusesUnfoldedBatchnorm) {
  Rng rng(6);
  Model m(small_lenet(1), 6);
  EXPECT_THROW(attr::lrp(m, random_tensor({250, 12}, rng), 0), std::invalid_argument);
}

TEST(Attribution, GradcamInputVariantIsNonNegativeAndShaped) {
  Rng rng(7);
  Model m(small_lenet(2), 7);
  const Tensor x = random_tensor({260, 12}, rng);
  for (const char* layer : {"input", "relu2", "relu3"}) {
    const Tensor g = attr::gradcam(m, x, 0, attr::gradcam_position(m, layer));
    ASSERT_EQ(g.shape(), x.shape());
    for (double v : g.values()) EXPECT_GE(v, 0.0);
  }
  EXPECT_THROW(attr::gradcam_position(m, "fc9"), std::invalid_argument);
}

TEST(Attribution, AttributeDispatchAndMultiOutput) {
  Rng rng(8);
  Model m = fold_batchnorm(Model(small_lenet(3), 8));
  const Tensor x = random_tensor({250, 12}, rng);
  attr::Options o;
  o.ig_steps = 16;
  for (auto method : {attr::Method::Saliency, attr::Method::IntegratedGradients, attr::Method::GradCam,
                      attr::Method::LrpEpsilon, attr::Method::LrpZPlus}) {
    const auto single = attr::attribute(m, x, 2, method, o);
    EXPECT_EQ(single.method, method);
    const std::vector<std::size_t> outs = {0, 2};
    const auto multi = attr::attribute_outputs(m, x, outs, method, o);
    ASSERT_EQ(multi.size(), 2u);
    EXPECT_LT(max_abs_diff(multi[1], single.values), 1e-12) << attr::to_string(method);
  }
}
