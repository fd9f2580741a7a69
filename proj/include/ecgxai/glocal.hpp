#pragma once

#include <span>
#include <string>
#include <vector>

#include "ecgxai/attribution.hpp"
#include "ecgxai/delineation.hpp"
#include "ecgxai/nn.hpp"
#include "ecgxai/synth.hpp"

namespace ecgxai::glocal {

inline constexpr std::size_t kPreR = 30;
inline constexpr std::size_t kPostR = 50;
inline constexpr std::size_t kBeatLength = kPreR + kPostR;

struct BeatStack {
  Tensor beats;                    // [B, 80, 12]
  std::vector<std::size_t> peaks;  // R index of each kept beat
  std::vector<std::string> sources;

  std::size_t size() const { return peaks.size(); }
};

/// Windows series[p-30, p+50) for every peak fully inside the series.
/// Throws when no window fits.
BeatStack crop_beats(const Tensor& series, std::span<const std::size_t> peaks, const std::string& source = {});

/// Elementwise median over the beats: [80, 12].
Tensor median_beat(const BeatStack& stack);

/// Elementwise median of equally shaped tensors.
Tensor elementwise_median(std::span<const Tensor> items);

/// Top-n indices into `ids` by descending score; equal scores go to the
/// lexicographically smaller id.
std::vector<std::size_t> select_top(std::span<const double> scores, std::span<const std::string> ids,
                                    std::size_t top_n);

/// Records of `pool` with the top_n highest predicted probabilities for
/// output k. Returns indices into the dataset.
std::vector<std::size_t> select_subgroup(const nn::Model& model, const EcgDataset& dataset,
                                         std::span<const std::size_t> pool, std::size_t k,
                                         std::size_t top_n = 100);

/// m[l, s] = sum_t attr[t,l] p[t,l,s] / sum_t p[t,l,s]; NaN where the segment
/// has no mass. [12, 24].
Tensor segment_aggregate(const Tensor& attr, const delin::SegmentationMap& segmap);

struct RankedCell {
  std::size_t lead = 0;
  std::size_t segment = 0;
  double value = 0.0;
};

/// Defined cells sorted by descending |value| (ties by lead, then segment),
/// truncated to `count`.
std::vector<RankedCell> rank_cells(const Tensor& table, std::size_t count = 7);

struct GlocalMap {
  std::string class_name;
  std::size_t class_index = 0;
  std::vector<std::string> sample_ids;
  Tensor median_beat;       // [80, 12]
  Tensor attribution_beat;  // [80, 12], signed
  std::vector<double> mean_prediction;  // per output, sigmoid
  std::vector<double> mean_label;       // per output
  Tensor segment_table;                 // [12, 24], subgroup mean
  std::vector<RankedCell> top;
};

struct GlocalOptions {
  std::size_t top_n = 100;
  attr::Method method = attr::Method::Saliency;
  attr::Options attribution;
  double softness = 3.0;
  std::size_t jobs = 1;
};

/// Subgroup selection, per-sample attribution, beat-aligned two-stage medians
/// and segment aggregation for output `k`. `labels` names the model outputs.
/// LRP methods fold batchnorm internally.
GlocalMap build_glocal_map(const nn::Model& model, const EcgDataset& dataset,
                           std::span<const std::size_t> pool, const std::vector<std::string>& labels,
                           std::size_t k, const GlocalOptions& opts = {});

}  // namespace ecgxai::glocal
