#include "ecgxai/sanity.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ecgxai/parallel.hpp"
#include "ecgxai/stats.hpp"

namespace ecgxai::sanity {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint8_t peak_class(Wave w) {
  switch (w) {
    case Wave::P: return kPPeak;
    case Wave::R: return kRPeak;
    case Wave::T: return kTPeak;
  }
  return kRPeak;
}

// Index of the point-class sample closest to r within the beat window, or -1.
long nearest_point(const EcgRecord& rec, std::uint8_t cls, std::size_t r) {
  long best = -1;
  const long lo = static_cast<long>(r) - static_cast<long>(glocal::kPreR);
  const long hi = static_cast<long>(r) + static_cast<long>(glocal::kPostR);
  for (long t = std::max(0L, lo); t < std::min(hi, static_cast<long>(rec.length())); ++t)
    if (rec.segment_at(static_cast<std::size_t>(t), 0) == cls &&
        (best < 0 || std::abs(t - static_cast<long>(r)) < std::abs(best - static_cast<long>(r))))
      best = t;
  return best;
}

}  // namespace

std::string_view to_string(Wave w) {
  switch (w) {
    case Wave::P: return "P";
    case Wave::R: return "R";
    case Wave::T: return "T";
  }
  return "?";
}

Wave wave_from_string(std::string_view name) {
  if (name == "P" || name == "p") return Wave::P;
  if (name == "R" || name == "r") return Wave::R;
  if (name == "T" || name == "t") return Wave::T;
  throw std::invalid_argument("unknown wave '" + std::string(name) + "' (expected P, R or T)");
}

double spatial_specificity(const Tensor& map, std::size_t target_lead) {
  const std::size_t T = map.dim(0), L = map.dim(1);
  if (target_lead >= L) throw std::out_of_range("spatial_specificity: target lead out of range");
  std::vector<double> norm(L, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t l = 0; l < L; ++l) norm[l] += map.at(t, l) * map.at(t, l);
  double total = 0.0;
  for (double& n : norm) total += (n = std::sqrt(n));
  if (total == 0.0) return kNaN;
  return norm[target_lead] / total;
}

std::vector<double> beat_profile(const Tensor& map, std::span<const std::size_t> r_peaks) {
  const std::size_t T = map.dim(0), L = map.dim(1);
  std::vector<double> prof(glocal::kBeatLength, 0.0);
  std::size_t beats = 0;
  for (std::size_t p : r_peaks) {
    if (p < glocal::kPreR || p + glocal::kPostR > T) continue;
    for (std::size_t w = 0; w < glocal::kBeatLength; ++w) {
      const double* row = map.data() + (p - glocal::kPreR + w) * L;
      double s = 0.0;
      for (std::size_t l = 0; l < L; ++l) s += row[l] * row[l];
      prof[w] += std::sqrt(s);
    }
    ++beats;
  }
  if (beats == 0) return {};
  for (double& v : prof) v /= static_cast<double>(beats);
  return prof;
}

std::vector<double> temporal_specificity(std::span<const Tensor> maps,
                                         std::span<const std::vector<std::size_t>> r_peaks) {
  if (maps.size() != r_peaks.size())
    throw std::invalid_argument("temporal_specificity: " + std::to_string(maps.size()) + " maps but " +
                                std::to_string(r_peaks.size()) + " peak lists");
  std::vector<double> acc(glocal::kBeatLength, 0.0);
  double beats = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto prof = beat_profile(maps[i], r_peaks[i]);
    if (prof.empty()) continue;
    std::size_t n = 0;
    for (std::size_t p : r_peaks[i])
      if (p >= glocal::kPreR && p + glocal::kPostR <= maps[i].dim(0)) ++n;
    for (std::size_t w = 0; w < acc.size(); ++w) acc[w] += prof[w] * static_cast<double>(n);
    beats += static_cast<double>(n);
  }
  if (beats == 0.0) throw std::invalid_argument("temporal_specificity: no complete beat in any sample");
  for (double& v : acc) v /= beats;
  return acc;
}

std::array<double, kNumLeads> wave_targets(const EcgRecord& rec, Wave wave) {
  if (rec.annotation.empty())
    throw std::invalid_argument("wave_targets: record '" + rec.id + "' has no annotation");
  std::array<double, kNumLeads> out;
  const std::uint8_t cls = peak_class(wave);
  for (std::size_t l = 0; l < kNumLeads; ++l) {
    std::vector<double> tp, peaks;
    for (std::size_t t = 0; t < rec.length(); ++t) {
      const auto s = rec.segment_at(t, l);
      if (s == kTP) tp.push_back(rec.signal.at(t, l));
      else if (s == cls) peaks.push_back(rec.signal.at(t, l));
    }
    const double base = tp.empty() ? 0.0 : stats::median(tp);
    for (double& v : peaks) v -= base;
    out[l] = stats::median(peaks);
  }
  return out;
}

SpecificityReport run_sanity_suite(const EcgDataset& dataset, const SanityConfig& cfg) {
  if (cfg.arch.output_dim != kNumLeads || cfg.arch.head != nn::Head::LinearRegression)
    throw std::invalid_argument("sanity suite needs a regression architecture with 12 outputs");
  SpecificityReport rep;
  rep.wave = cfg.wave;

  auto make_set = [&](const std::vector<std::size_t>& idx) {
    SupervisedSet s;
    for (std::size_t i : idx) {
      const auto t = wave_targets(dataset.records[i], cfg.wave);
      s.inputs.push_back(dataset.records[i].signal);
      s.targets.emplace_back(t.begin(), t.end());
    }
    return s;
  };
  std::vector<std::size_t> held = dataset.indices(Split::Test);
  for (std::size_t i : dataset.indices(Split::Valid)) held.push_back(i);
  const auto train_set = make_set(dataset.indices(Split::Train));
  if (train_set.size() == 0) throw std::invalid_argument("sanity suite: the train split is empty");
  if (held.empty()) throw std::invalid_argument("sanity suite: no held-out records");
  const auto held_set = make_set(held);

  const nn::Model model = train(cfg.arch, train_set, cfg.train).model;
  rep.regression = evaluate(model, held_set, cfg.train.crop_length);
  rep.low_fidelity = !(rep.regression.mean_r2 >= 0.5);
  if (cfg.methods.empty()) return rep;
  const nn::Model folded = nn::fold_batchnorm(model);

  std::vector<std::size_t> eval;
  for (std::size_t j = 0; j < held.size() && eval.size() < cfg.eval_samples; ++j) {
    bool ok = true;
    for (double v : held_set.targets[j]) ok = ok && !std::isnan(v);
    const EcgRecord& rec = dataset.records[held[j]];
    bool beat = false;
    for (std::size_t p : rec.r_peaks) beat = beat || (p >= glocal::kPreR && p + glocal::kPostR <= rec.length());
    if (ok && beat) eval.push_back(held[j]);
  }
  if (eval.empty()) throw std::invalid_argument("sanity suite: no held-out record with a complete beat");
  const std::size_t n = eval.size();

  std::vector<Tensor> beats(n);
  std::vector<double> wave_pos(n), qrs_on(n), qrs_off(n);
  for (std::size_t j = 0; j < n; ++j) {
    const EcgRecord& rec = dataset.records[eval[j]];
    rep.sample_ids.push_back(rec.id);
    beats[j] = glocal::median_beat(glocal::crop_beats(rec.signal, rec.r_peaks, rec.id));
    std::size_t r = 0;
    for (std::size_t p : rec.r_peaks)
      if (p >= glocal::kPreR && p + glocal::kPostR <= rec.length()) {
        r = p;
        break;
      }
    auto pos = [&](std::uint8_t cls) {
      const long t = nearest_point(rec, cls, r);
      return t < 0 ? kNaN : static_cast<double>(t - static_cast<long>(r) + static_cast<long>(glocal::kPreR));
    };
    wave_pos[j] = pos(peak_class(cfg.wave));
    qrs_on[j] = pos(kQrsOnset);
    qrs_off[j] = pos(kQrsOffset);
  }
  rep.median_beat = glocal::elementwise_median(beats);
  rep.wave_position = stats::median(wave_pos);
  rep.qrs_begin = stats::median(qrs_on);
  rep.qrs_end = stats::median(qrs_off);

  std::array<std::size_t, kNumLeads> outputs;
  for (std::size_t l = 0; l < kNumLeads; ++l) outputs[l] = l;
  for (attr::Method method : cfg.methods) {
    MethodReport mr;
    mr.method = method;
    mr.spatial.assign(kNumLeads, std::vector<double>(n, kNaN));
    std::vector<std::vector<double>> profiles(n);
    parallel_for(n, cfg.jobs, [&](std::size_t j) {
      const EcgRecord& rec = dataset.records[eval[j]];
      const auto maps = attr::attribute_outputs(folded, rec.signal, outputs, method, cfg.attribution);
      std::vector<double> prof(glocal::kBeatLength, 0.0);
      for (std::size_t l = 0; l < kNumLeads; ++l) {
        mr.spatial[l][j] = spatial_specificity(maps[l], l);
        const auto p = beat_profile(maps[l], rec.r_peaks);
        for (std::size_t w = 0; w < prof.size(); ++w) prof[w] += p[w] / static_cast<double>(kNumLeads);
      }
      profiles[j] = std::move(prof);
    });
    for (std::size_t l = 0; l < kNumLeads; ++l) {
      mr.spatial_median[l] = stats::median(mr.spatial[l]);
      mr.spatial_q25[l] = stats::quantile(mr.spatial[l], 0.25);
      mr.spatial_q75[l] = stats::quantile(mr.spatial[l], 0.75);
    }
    std::vector<double> col(n);
    for (std::size_t w = 0; w < glocal::kBeatLength; ++w) {
      for (std::size_t j = 0; j < n; ++j) col[j] = profiles[j][w];
      mr.t_median.push_back(stats::median(col));
      mr.t_q25.push_back(stats::quantile(col, 0.25));
      mr.t_q75.push_back(stats::quantile(col, 0.75));
    }
    mr.argmax = static_cast<std::size_t>(std::max_element(mr.t_median.begin(), mr.t_median.end()) -
                                         mr.t_median.begin());
    rep.methods.push_back(std::move(mr));
  }
  return rep;
}

}  // namespace ecgxai::sanity
