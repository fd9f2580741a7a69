#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/nn.hpp"

namespace ecgxai {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t crop_length = 250;
  double bn_momentum = 0.1;
};

/// Inputs are [T, 12] signals; a NaN regression target is treated as missing.
struct SupervisedSet {
  std::vector<Tensor> inputs;
  std::vector<std::vector<double>> targets;

  std::size_t size() const { return inputs.size(); }
};

struct TrainResult {
  nn::Model model;
  std::vector<double> epoch_losses;
};

/// Mini-batch Adam on random crops. Sigmoid heads use binary cross-entropy on
/// the logits; regression heads use MSE on per-output standardized targets,
/// with the standardization folded back into the last linear layer so the
/// returned model predicts in target units.
TrainResult train(const nn::ModelSpec& spec, const SupervisedSet& data, const TrainConfig& config);

/// Centered crop of `length` samples (the whole signal when shorter or zero).
Tensor center_crop(const Tensor& signal, std::size_t length);

/// Model outputs (logits or regression values) per input, on centered crops.
std::vector<std::vector<double>> predict(const nn::Model& model, std::span<const Tensor> inputs,
                                         std::size_t crop_length);

/// Area under the ROC curve with midranks for ties. NaN when only one class
/// is present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct MetricsReport {
  nn::Head head = nn::Head::SigmoidMultilabel;
  std::vector<double> auc;               // per output, NaN when undefined
  double macro_auc = 0.0;                // over defined labels
  std::vector<std::size_t> excluded;     // labels with one class only
  std::vector<double> mae;               // regression, per output
  std::vector<double> r2;
  double mean_mae = 0.0;
  double mean_r2 = 0.0;
};

MetricsReport evaluate(const nn::Model& model, const SupervisedSet& data, std::size_t crop_length);

/// Same metrics from precomputed outputs.
MetricsReport compute_metrics(nn::Head head, const std::vector<std::vector<double>>& outputs,
                              const std::vector<std::vector<double>>& targets);

}  // namespace ecgxai
