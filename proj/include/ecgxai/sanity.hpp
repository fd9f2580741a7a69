#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/attribution.hpp"
#include "ecgxai/glocal.hpp"
#include "ecgxai/synth.hpp"
#include "ecgxai/train.hpp"

namespace ecgxai::sanity {

enum class Wave { P, R, T };

std::string_view to_string(Wave w);
Wave wave_from_string(std::string_view name);

/// Norm of the target lead over the summed per-lead norms, in [0, 1]. NaN for
/// an all-zero map.
double spatial_specificity(const Tensor& map, std::size_t target_lead);

/// Mean over the complete beats of one map of the per-timestep norm across
/// leads. Empty when no beat window fits.
std::vector<double> beat_profile(const Tensor& map, std::span<const std::size_t> r_peaks);

/// Same profile pooled over the beats of all samples. Throws when no sample
/// has a complete beat.
std::vector<double> temporal_specificity(std::span<const Tensor> maps,
                                         std::span<const std::vector<std::size_t>> r_peaks);

/// Per-lead signed deflection of the wave peak from the TP baseline, median
/// over beats; NaN when the record has no such peak.
std::array<double, kNumLeads> wave_targets(const EcgRecord& record, Wave wave);

struct SanityConfig {
  Wave wave = Wave::R;
  std::vector<attr::Method> methods = {attr::Method::Saliency, attr::Method::IntegratedGradients,
                                       attr::Method::GradCam, attr::Method::LrpEpsilon};
  nn::ModelSpec arch;  // 12 regression outputs
  TrainConfig train;
  std::size_t eval_samples = 100;
  attr::Options attribution{.ig_steps = 32};
  std::size_t jobs = 1;
};

struct MethodReport {
  attr::Method method = attr::Method::Saliency;
  std::vector<std::vector<double>> spatial;  // [target lead][sample], NaN when undefined
  std::array<double, kNumLeads> spatial_median{}, spatial_q25{}, spatial_q75{};
  std::vector<double> t_median, t_q25, t_q75;  // 80 each
  std::size_t argmax = 0;
};

struct SpecificityReport {
  Wave wave = Wave::R;
  std::vector<std::string> sample_ids;
  std::vector<MethodReport> methods;
  Tensor median_beat;  // [80, 12]
  MetricsReport regression;
  bool low_fidelity = false;
  double wave_position = 0.0;        // window index of the wave peak, median over samples
  double qrs_begin = 0.0, qrs_end = 0.0;  // window indices of QRS onset/offset
};

/// Trains the regressor on the train split, evaluates it on the held-out
/// records and computes specificity statistics for every requested method.
SpecificityReport run_sanity_suite(const EcgDataset& dataset, const SanityConfig& config);

}  // namespace ecgxai::sanity
