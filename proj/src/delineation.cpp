#include "ecgxai/delineation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ecgxai/train.hpp"

namespace ecgxai::delin {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

SegmentationMap oracle_segment(const EcgRecord& record, double softness) {
  if (record.annotation.empty())
    throw std::invalid_argument("oracle_segment: record '" + record.id + "' has no annotation");
  if (!(softness >= 0.0)) throw std::invalid_argument("oracle_segment: softness must be >= 0");
  const std::size_t T = record.length();
  const long reach = static_cast<long>(std::floor(softness));
  std::vector<double> tent(static_cast<std::size_t>(reach + 1));
  for (long d = 0; d <= reach; ++d) tent[static_cast<std::size_t>(d)] = 1.0 - static_cast<double>(d) / (softness + 1.0);
  double area = tent[0];
  for (long d = 1; d <= reach; ++d) area += 2.0 * tent[static_cast<std::size_t>(d)];

  SegmentationMap map{Tensor({T, kNumLeads, kNumSegments})};
  for (std::size_t l = 0; l < kNumLeads; ++l) {
    // Edge interval labels extend past the record so truncation does not
    // inflate the renormalized share of nearby point classes.
    for (long t = -reach; t < static_cast<long>(T) + reach; ++t) {
      const bool inside = t >= 0 && t < static_cast<long>(T);
      const std::uint8_t c = record.segment_at(static_cast<std::size_t>(std::clamp(t, 0L, static_cast<long>(T) - 1)), l);
      if (!inside && is_point_segment(c)) continue;
      const double scale = is_point_segment(c) ? 1.0 : 1.0 / area;
      for (long d = -reach; d <= reach; ++d) {
        const long u = t + d;
        if (u < 0 || u >= static_cast<long>(T)) continue;
        map.probs.at(static_cast<std::size_t>(u), l, c) += scale * tent[static_cast<std::size_t>(std::abs(d))];
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      double* p = &map.probs.data()[(t * kNumLeads + l) * kNumSegments];
      const double s = std::accumulate(p, p + kNumSegments, 0.0);
      for (std::size_t m = 0; m < kNumSegments; ++m) p[m] /= s;
    }
  }
  return map;
}

std::vector<std::size_t> detect_peaks(std::span<const double> score, const PeakOptions& opts) {
  const std::size_t n = score.size();
  std::vector<std::size_t> cand;
  for (std::size_t t = 0; t < n;) {
    std::size_t j = t;
    while (j + 1 < n && score[j + 1] == score[t]) ++j;
    const bool left = t == 0 || score[t - 1] < score[t];
    const bool right = j + 1 == n || score[j + 1] < score[t];
    if (left && right && score[t] >= opts.min_probability) cand.push_back(t);
    t = j + 1;
  }
  std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t c : cand) {
    bool ok = true;
    for (std::size_t k : kept)
      if ((c > k ? c - k : k - c) < opts.min_distance) {
        ok = false;
        break;
      }
    if (ok) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

std::vector<std::size_t> detect_r_peaks(const SegmentationMap& map, const PeakOptions& opts) {
  const std::size_t T = map.length();
  std::vector<double> score(T, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t l = lead_index("V1"); l <= lead_index("V4"); ++l)
      score[t] = std::max(score[t], map.at(t, l, kRPeak));
  return detect_peaks(score, opts);
}

SegmenterReport evaluate_segmenter(const SegmentationMap& pred, std::span<const std::uint8_t> truth) {
  const std::size_t T = pred.length();
  if (truth.size() != T * kNumLeads)
    throw std::invalid_argument("evaluate_segmenter: truth has " + std::to_string(truth.size()) +
                                " entries, prediction covers " + std::to_string(T * kNumLeads));
  const std::size_t N = T * kNumLeads, M = kNumSegments;
  SegmenterReport r;
  r.confusion.assign(M, std::vector<std::size_t>(M, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < N; ++i) {
    const double* p = pred.probs.data() + i * M;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(p, p + M) - p);
    ++r.confusion[truth[i]][arg];
    if (arg == truth[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(N);
  double f1_sum = 0.0, auc_sum = 0.0;
  std::size_t f1_n = 0, auc_n = 0;
  for (std::size_t m = 0; m < M; ++m) {
    std::size_t tp = r.confusion[m][m], fn = 0, fp = 0;
    for (std::size_t o = 0; o < M; ++o)
      if (o != m) {
        fn += r.confusion[m][o];
        fp += r.confusion[o][m];
      }
    if (tp + fn == 0) {
      r.absent.push_back(m);
      r.precision.push_back(kNaN);
      r.recall.push_back(kNaN);
      r.f1.push_back(kNaN);
      r.auc.push_back(kNaN);
      continue;
    }
    const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.precision.push_back(prec);
    r.recall.push_back(rec);
    r.f1.push_back(prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);
    f1_sum += r.f1.back();
    ++f1_n;
    std::vector<double> s(N);
    std::vector<int> y(N);
    for (std::size_t i = 0; i < N; ++i) {
      s[i] = pred.probs.data()[i * M + m];
      y[i] = truth[i] == m;
    }
    r.auc.push_back(roc_auc(s, y));
    if (!std::isnan(r.auc.back())) {
      auc_sum += r.auc.back();
      ++auc_n;
    }
  }
  r.macro_f1 = f1_n ? f1_sum / static_cast<double>(f1_n) : kNaN;
  r.macro_auc = auc_n ? auc_sum / static_cast<double>(auc_n) : kNaN;
  return r;
}

}  // namespace ecgxai::delin
