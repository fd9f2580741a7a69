#include <gtest/gtest.h>

#include <filesystem>

#include "ecgxai/checkpoint.hpp"
#include "ecgxai/nn.hpp"
#include "ecgxai/train.hpp"
#include "support.hpp"

using namespace ecgxai;
using namespace ecgxai::nn;
using ecgxai::testing::random_tensor;

namespace {

// One of every layer kind, small enough for exhaustive checks.
ModelSpec all_kinds_spec() {
  ModelSpec m;
  m.arch = "kinds";
  m.output_dim = 3;
  m.min_length = 16;
  m.layers.push_back({LayerKind::Conv1d, "conv", 12, 6, 3, 1, 1});
  m.layers.push_back({LayerKind::BatchNorm1d, "bn", 6});
  m.layers.push_back({LayerKind::Relu, "relu"});
  LayerSpec avg{LayerKind::AvgPool1d, "avg"};
  m.layers.push_back(avg);
  LayerSpec res{LayerKind::ResidualBlock, "res"};
  res.body = {{LayerKind::Conv1d, "res_conv", 6, 6, 3, 1, 1}, {LayerKind::Relu, "res_relu"}};
  m.layers.push_back(res);
  m.layers.push_back({LayerKind::MaxPool1d, "max"});
  m.layers.push_back({LayerKind::Conv1d, "conv_s2", 6, 5, 3, 2, 1});
  m.layers.push_back({LayerKind::GlobalAvgPool, "gap"});
  m.layers.push_back({LayerKind::Linear, "fc", 5, 3});
  return m;
}

double fd_input(const Model& m, const Tensor& x, std::size_t idx, std::size_t k, double h = 1e-6) {
  Tensor xp = x, xm = x;
  xp[idx] += h;
  xm[idx] -= h;
  return (forward(m, xp).output[k] - forward(m, xm).output[k]) / (2 * h);
}

}  // namespace

TEST(Layers, ValidateRejectsChannelMismatch) {
  auto spec = all_kinds_spec();
  spec.layers.back().in_channels = 4;
  EXPECT_THROW(validate(spec), ShapeError);
}

TEST(Layers, ForwardShapes) {
  Model m(lenet(4, Head::SigmoidMultilabel), 1);
  Rng rng(2);
  const auto r = forward(m, random_tensor({300, 12}, rng), true);
  EXPECT_EQ(r.output.size(), 4u);
  ASSERT_TRUE(r.trace.has_value());
  EXPECT_EQ(r.trace->activations.size(), m.num_layers() + 1);
  EXPECT_THROW(forward(m, random_tensor({100, 12}, rng)), std::invalid_argument);
}

TEST(Layers, PositionOfNames) {
  Model m(lenet(2, Head::SigmoidMultilabel), 1);
  EXPECT_EQ(m.position_of("input"), 0u);
  EXPECT_EQ(m.position_of("conv1"), 1u);
  EXPECT_EQ(m.position_of("fc2"), m.num_layers());
  EXPECT_THROW(m.position_of("nope"), std::invalid_argument);
}

TEST(Gradients, InputGradientMatchesFiniteDifferencesForEveryKind) {
  Rng rng(11);
  Model m(all_kinds_spec(), 3);
  ecgxai::testing::randomize_batchnorm(m, rng);
  for (int c = 0; c < 5; ++c) {
    const Tensor x = random_tensor({24, 12}, rng);
    for (std::size_t k = 0; k < 3; ++k) {
      const Tensor g = input_gradient(m, x, k);
      for (int s = 0; s < 10; ++s) {
        const std::size_t idx = rng.below(x.size());
        EXPECT_LT(ecgxai::testing::relative_error(g[idx], fd_input(m, x, idx, k)), 1e-4);
      }
    }
  }
}

TEST(Gradients, LayerGradientMatchesFiniteDifferences) {
  Rng rng(12);
  Model m(all_kinds_spec(), 4);
  ecgxai::testing::randomize_batchnorm(m, rng);
  const Tensor x = random_tensor({24, 12}, rng);
  const auto fr = forward(m, x, true);
  for (std::size_t pos = 1; pos < m.num_layers(); ++pos) {
    const Tensor g = layer_gradient(m, x, pos, 1);
    const Tensor a = fr.trace->activations[pos];
    for (int s = 0; s < 5; ++s) {
      const std::size_t idx = rng.below(a.size());
      Tensor ap = a, am = a;
      ap[idx] += 1e-6;
      am[idx] -= 1e-6;
      const double fd = (m.forward_from(ap, pos)[1] - m.forward_from(am, pos)[1]) / 2e-6;
      EXPECT_LT(ecgxai::testing::relative_error(g[idx], fd), 1e-4) << "position " << pos;
    }
  }
}

TEST(Gradients, InputGradientsShareForwardPass) {
  Rng rng(5);
  Model m(lenet(3, Head::SigmoidMultilabel), 5);
  const Tensor x = random_tensor({260, 12}, rng);
  const std::vector<std::size_t> ks = {0, 2};
  const auto gs = input_gradients(m, x, ks);
  EXPECT_EQ(max_abs_diff(gs[1], input_gradient(m, x, 2)), 0.0);
}

TEST(BatchNormFolding, PreservesOutputs) {
  Rng rng(6);
  for (auto spec : {lenet(3, Head::SigmoidMultilabel), residual_net(3, Head::SigmoidMultilabel)}) {
    Model m(spec, 9);
    ecgxai::testing::randomize_batchnorm(m, rng);
    const Model f = fold_batchnorm(m);
    EXPECT_TRUE(f.folded());
    const Tensor x = random_tensor({300, 12}, rng);
    EXPECT_LT(max_abs_diff(forward(m, x).output, forward(f, x).output), 1e-9);
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(8);
  Model m(residual_net(2, Head::LinearRegression), 10);
  ecgxai::testing::randomize_batchnorm(m, rng);
  const auto dir = std::filesystem::temp_directory_path() / "ecgxai_ckpt_test";
  std::filesystem::remove_all(dir);
  io::Json extra;
  extra["labels"] = {"a", "b"};
  save_checkpoint(m, dir, extra);
  const auto ck = load_checkpoint(dir);
  const Tensor x = random_tensor({260, 12}, rng);
  EXPECT_EQ(max_abs_diff(forward(m, x).output, forward(ck.model, x).output), 0.0);
  EXPECT_EQ(ck.manifest["labels"][1], "b");
  EXPECT_THROW(load_checkpoint(dir / "missing"), io::NotFound);
  std::filesystem::remove_all(dir);
}

TEST(Training, LossDecreasesAndIsDeterministic) {
  Rng rng(1);
  SupervisedSet data;
  for (int i = 0; i < 64; ++i) {
    Tensor x = random_tensor({250, 12}, rng, 0.1);
    const bool pos = i % 2 == 0;
    if (pos)
      for (std::size_t t = 0; t < 250; ++t) x.at(t, 3) += 1.0;
    data.inputs.push_back(x);
    data.targets.push_back({pos ? 1.0 : 0.0});
  }
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 4;
  const auto a = train(lenet(1, Head::SigmoidMultilabel), data, cfg);
  const auto b = train(lenet(1, Head::SigmoidMultilabel), data, cfg);
  EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  const auto rep = evaluate(a.model, data, cfg.crop_length);
  EXPECT_GT(rep.macro_auc, 0.95);
}

TEST(Metrics, RocAucWithTies) {
  const std::vector<double> s = {0.1, 0.4, 0.4, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(s, y), 0.875);
  const std::vector<int> one = {1, 1, 1, 1};
  EXPECT_TRUE(std::isnan(roc_auc(s, one)));
}
