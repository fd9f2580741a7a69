#pragma once

#include <span>
#include <vector>

#include "ecgxai/synth.hpp"
#include "ecgxai/tensor.hpp"

namespace ecgxai::delin {

/// Soft segmentation: probs is [T, 12, 24], each (t, lead) slice on the simplex.
struct SegmentationMap {
  Tensor probs;

  std::size_t length() const { return probs.dim(0); }
  double at(std::size_t t, std::size_t lead, std::size_t cls) const { return probs.at(t, lead, cls); }
};

/// Pluggable delineation; the default build ships the annotation-backed oracle.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual SegmentationMap segment(const EcgRecord& record) const = 0;
};

/// One-hot annotation smoothed over time with a triangular kernel of
/// half-width `softness` samples. Interval classes use the area-normalized
/// kernel, point classes the peak-normalized one; each slice is then
/// renormalized. softness = 0 yields the exact one-hot map.
SegmentationMap oracle_segment(const EcgRecord& record, double softness = 3.0);

class OracleSegmenter final : public Segmenter {
 public:
  explicit OracleSegmenter(double softness = 3.0) : softness_(softness) {}
  SegmentationMap segment(const EcgRecord& record) const override { return oracle_segment(record, softness_); }

 private:
  double softness_;
};

struct PeakOptions {
  double min_probability = 0.25;
  std::size_t min_distance = 30;
};

/// R peaks from the maximum R-peak probability over V1..V4: local maxima above
/// the threshold, kept greedily by descending score subject to the minimum
/// distance. Ascending indices.
std::vector<std::size_t> detect_r_peaks(const SegmentationMap& map, const PeakOptions& opts = {});

/// Same rule on a precomputed score sequence.
std::vector<std::size_t> detect_peaks(std::span<const double> score, const PeakOptions& opts = {});

struct SegmenterReport {
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1, auc;  // per class, NaN when absent
  std::vector<std::size_t> absent;                 // classes missing from the truth
  double macro_f1 = 0.0;
  double macro_auc = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]
};

/// Hard metrics from per-(t, lead) argmax, soft metrics from one-vs-rest AUC.
SegmenterReport evaluate_segmenter(const SegmentationMap& pred, std::span<const std::uint8_t> truth);

}  // namespace ecgxai::delin
