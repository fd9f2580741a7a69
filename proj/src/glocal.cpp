#include "ecgxai/glocal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ecgxai/parallel.hpp"
#include "ecgxai/stats.hpp"

namespace ecgxai::glocal {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

bool is_lrp(attr::Method m) { return m == attr::Method::LrpEpsilon || m == attr::Method::LrpZPlus; }

}  // namespace

BeatStack crop_beats(const Tensor& series, std::span<const std::size_t> peaks, const std::string& source) {
  const std::size_t T = series.dim(0), L = series.dim(1);
  std::vector<std::size_t> kept;
  for (std::size_t p : peaks)
    if (p >= kPreR && p + kPostR <= T) kept.push_back(p);
  if (kept.empty())
    throw std::invalid_argument("crop_beats: no beat window fits inside" +
                                (source.empty() ? std::string(" the series") : " record '" + source + "'"));
  BeatStack s;
  s.beats = Tensor({kept.size(), kBeatLength, L});
  for (std::size_t b = 0; b < kept.size(); ++b)
    std::copy_n(series.data() + (kept[b] - kPreR) * L, kBeatLength * L, s.beats.row(b, 0));
  s.peaks = std::move(kept);
  s.sources.assign(s.peaks.size(), source);
  return s;
}

Tensor elementwise_median(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("elementwise_median: nothing to aggregate");
  Tensor out(items.front().shape());
  std::vector<double> col(items.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t b = 0; b < items.size(); ++b) col[b] = items[b][i];
    out[i] = stats::median(col);
  }
  return out;
}

Tensor median_beat(const BeatStack& stack) {
  const std::size_t B = stack.beats.dim(0), W = stack.beats.dim(1), L = stack.beats.dim(2);
  Tensor out({W, L});
  std::vector<double> col(B);
  for (std::size_t i = 0; i < W * L; ++i) {
    for (std::size_t b = 0; b < B; ++b) col[b] = stack.beats[b * W * L + i];
    out[i] = stats::median(col);
  }
  return out;
}

std::vector<std::size_t> select_top(std::span<const double> scores, std::span<const std::string> ids,
                                    std::size_t top_n) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  order.resize(std::min(top_n, order.size()));
  return order;
}

std::vector<std::size_t> select_subgroup(const nn::Model& model, const EcgDataset& dataset,
                                         std::span<const std::size_t> pool, std::size_t k, std::size_t top_n) {
  if (k >= model.spec().output_dim)
    throw std::out_of_range("select_subgroup: class index " + std::to_string(k) + " out of range");
  std::vector<double> scores;
  std::vector<std::string> ids;
  for (std::size_t i : pool) {
    scores.push_back(sigmoid(nn::forward(model, dataset.records[i].signal).output[k]));
    ids.push_back(dataset.records[i].id);
  }
  std::vector<std::size_t> out;
  for (std::size_t j : select_top(scores, ids, top_n)) out.push_back(pool[j]);
  return out;
}

Tensor segment_aggregate(const Tensor& attr, const delin::SegmentationMap& segmap) {
  const std::size_t T = attr.dim(0), L = attr.dim(1);
  if (segmap.probs.rank() != 3 || segmap.length() != T || segmap.probs.dim(1) != L)
    throw std::invalid_argument("segment_aggregate: attribution " + shape_string(attr.shape()) +
                                " does not match segmentation " + shape_string(segmap.probs.shape()));
  const std::size_t M = segmap.probs.dim(2);
  if (T == 0) return Tensor({L, M}, kNaN);
  // Centered on the first sample per lead so a constant map comes back exactly.
  Tensor num({L, M}), den({L, M});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t l = 0; l < L; ++l) {
      const double a = attr.at(t, l) - attr.at(0, l);
      const double* p = segmap.probs.row(t, l);
      for (std::size_t m = 0; m < M; ++m) {
        num.at(l, m) += a * p[m];
        den.at(l, m) += p[m];
      }
    }
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t m = 0; m < M; ++m)
      num.at(l, m) = den.at(l, m) > 0.0 ? attr.at(0, l) + num.at(l, m) / den.at(l, m) : kNaN;
  return num;
}

std::vector<RankedCell> rank_cells(const Tensor& table, std::size_t count) {
  std::vector<RankedCell> cells;
  for (std::size_t l = 0; l < table.dim(0); ++l)
    for (std::size_t m = 0; m < table.dim(1); ++m)
      if (!std::isnan(table.at(l, m))) cells.push_back({l, m, table.at(l, m)});
  std::stable_sort(cells.begin(), cells.end(),
                   [](const RankedCell& a, const RankedCell& b) { return std::abs(a.value) > std::abs(b.value); });
  if (cells.size() > count) cells.resize(count);
  return cells;
}

GlocalMap build_glocal_map(const nn::Model& model, const EcgDataset& dataset, std::span<const std::size_t> pool,
                           const std::vector<std::string>& labels, std::size_t k, const GlocalOptions& opts) {
  const std::size_t K = model.spec().output_dim;
  if (labels.size() != K)
    throw std::invalid_argument("build_glocal_map: " + std::to_string(labels.size()) + " label names for " +
                                std::to_string(K) + " outputs");
  if (k >= K) throw std::out_of_range("build_glocal_map: class index " + std::to_string(k) + " out of range");
  const auto group = select_subgroup(model, dataset, pool, k, opts.top_n);
  if (group.empty()) throw std::invalid_argument("build_glocal_map: subgroup for '" + labels[k] + "' is empty");

  const nn::Model folded = is_lrp(opts.method) && !model.folded() ? nn::fold_batchnorm(model) : model;
  const std::size_t n = group.size();
  std::vector<Tensor> sig_beats(n), attr_beats(n), tables(n);
  std::vector<std::vector<double>> probs(n);
  parallel_for(n, opts.jobs, [&](std::size_t j) {
    const EcgRecord& rec = dataset.records[group[j]];
    const auto out = nn::forward(model, rec.signal).output;
    for (std::size_t c = 0; c < K; ++c) probs[j].push_back(sigmoid(out[c]));
    const Tensor a = attr::attribute(folded, rec.signal, k, opts.method, opts.attribution).values;
    const auto segmap = delin::oracle_segment(rec, opts.softness);
    const auto peaks = delin::detect_r_peaks(segmap);
    sig_beats[j] = median_beat(crop_beats(rec.signal, peaks, rec.id));
    attr_beats[j] = median_beat(crop_beats(a, peaks, rec.id));
    tables[j] = segment_aggregate(a, segmap);
  });

  GlocalMap g;
  g.class_name = labels[k];
  g.class_index = k;
  for (std::size_t i : group) g.sample_ids.push_back(dataset.records[i].id);
  g.median_beat = elementwise_median(sig_beats);
  g.attribution_beat = elementwise_median(attr_beats);
  g.mean_prediction.assign(K, 0.0);
  g.mean_label.assign(K, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < K; ++c) {
      g.mean_prediction[c] += probs[j][c] / static_cast<double>(n);
      g.mean_label[c] += dataset.records[group[j]].has_label(labels[c]) ? 1.0 / static_cast<double>(n) : 0.0;
    }
  g.segment_table = Tensor(tables.front().shape());
  std::vector<double> col(n);
  for (std::size_t i = 0; i < g.segment_table.size(); ++i) {
    for (std::size_t j = 0; j < n; ++j) col[j] = tables[j][i];
    g.segment_table[i] = stats::mean(col);
  }
  g.top = rank_cells(g.segment_table, 7);
  return g;
}

}  // namespace ecgxai::glocal
