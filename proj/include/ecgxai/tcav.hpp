#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/concept_rules.hpp"
#include "ecgxai/nn.hpp"
#include "ecgxai/train.hpp"

namespace ecgxai::tcav {

/// Temporal mean of the activation at a trace position.
std::vector<double> pooled_activation(const nn::ForwardTrace& trace, std::size_t position);

/// Gradient of logit k summed over time at a trace position: the derivative
/// of the logit when a direction is added at every timestep.
std::vector<double> pooled_gradient(const nn::Model& model, const nn::ForwardTrace& trace, std::size_t position,
                                    std::size_t k);

struct ConceptSample {
  std::vector<std::size_t> positives;  // indices into the membership vector
  std::vector<std::size_t> negatives;
};

/// n_pos members drawn with `pos_seed`, n_neg non-members with `neg_seed`,
/// both uniformly without replacement. Throws when either pool is too small.
ConceptSample build_concept_dataset(const std::vector<bool>& membership, std::size_t n_pos, std::size_t n_neg,
                                    std::uint64_t pos_seed, std::uint64_t neg_seed);

/// Rule membership over the given records.
std::vector<bool> rule_membership(const concepts::RuleSet& rules, std::string_view rule, const EcgDataset& dataset,
                                  std::span<const std::size_t> indices);

struct LogisticOptions {
  double lambda = 1e-3;
  std::size_t max_iterations = 10000;
  double tolerance = 1e-6;
};

struct LogisticFit {
  std::vector<double> weights;
  double bias = 0.0;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

/// Mean log-loss plus lambda/2 |w|^2 (intercept unpenalized), full-batch
/// gradient descent with step 1/L.
LogisticFit fit_logistic(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                         const LogisticOptions& opts = {});

struct Cav {
  std::string layer;
  std::vector<double> direction;  // unit norm
  double accuracy = 0.0;          // held-out 20%
  std::uint64_t seed = 0;
};

/// Direction from a fit on all rows; accuracy from a refit on a stratified
/// 80% split scored on the remaining 20%.
Cav fit_cav(const std::vector<std::vector<double>>& x, const std::vector<int>& y, std::uint64_t split_seed,
            const LogisticOptions& opts = {});

double sensitivity(std::span<const double> pooled_grad, std::span<const double> cav);

/// Number of strictly positive sensitivities.
std::size_t positive_count(std::span<const double> sensitivities);

/// Fraction of strictly positive sensitivities.
double tcav_score(std::span<const double> sensitivities);

struct CellStats {
  double mean = 0.0, q25 = 0.0, q75 = 0.0, iqr = 0.0;
  double mean_accuracy = 0.0;
  bool greyed = false;
  bool starred = false;
};

/// Grey iff mean accuracy <= 0.7; star iff not grey, IQR < 0.25 and 0.5
/// outside [q25, q75].
CellStats cell_stats(std::span<const double> scores, std::span<const double> accuracies);

struct ConceptDef {
  std::string name;
  std::vector<bool> membership;  // over the concept pool
};

struct TcavConfig {
  std::uint64_t seed = 0;
  nn::ModelSpec arch;
  TrainConfig train;
  std::vector<std::string> layers;
  std::vector<std::size_t> classes;      // model outputs to test
  std::vector<std::string> class_names;  // one per model output
  std::size_t n_models = 10;
  std::size_t n_cavs = 10;
  std::size_t n_pos = 50;
  std::size_t n_neg = 50;
  LogisticOptions logistic;
  std::size_t jobs = 1;
};

struct TcavCell {
  std::string arch, layer, concept_name, class_name;
  bool available = true;
  std::string reason;
  std::vector<double> scores;      // n_models * n_cavs
  std::vector<double> accuracies;
  CellStats stats;
};

struct TcavGrid {
  std::vector<TcavCell> cells;

  const TcavCell& find(std::string_view layer, std::string_view concept_name, std::string_view class_name) const;
};

struct TcavData {
  SupervisedSet train;                  // model training set
  std::vector<Tensor> concept_pool;     // signals the concept masks refer to
  std::vector<Tensor> class_samples;    // held-out signals
  std::vector<std::vector<int>> class_labels;  // per sample, per output
};

/// Trains n_models seeds; per (model, layer, concept) fits n_cavs CAVs with
/// fresh negatives and scores every tested class on its held-out samples.
TcavGrid significance_protocol(const TcavData& data, const std::vector<ConceptDef>& concept_defs,
                               const TcavConfig& config);

}  // namespace ecgxai::tcav
