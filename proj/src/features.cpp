#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "ecgxai/synth.hpp"

namespace ecgxai {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kDurationThreshold = 0.02;  // mV
constexpr double kTMorphDeadband = 0.05;     // mV
constexpr int kStOffset = 6;                 // samples after QRS offset

const std::array<std::string_view, 9> kPerLeadFields = {
    "P_Amp", "Q_Amp", "R_Amp", "S_Amp", "T_Amp", "Q_Dur", "R_Dur", "ST_Amp", "T_Morph"};

double median(std::vector<double> v) {
  std::erase_if(v, [](double x) { return std::isnan(x); });
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Fiducial indices of one beat, found from the annotation of one lead.
struct Beat {
  std::optional<std::size_t> p_peak, qrs_onset, q_peak, r_peak, s_peak, qrs_offset, t_peak;
};

std::vector<Beat> parse_beats(const EcgRecord& rec, std::size_t lead) {
  std::vector<Beat> beats;
  const std::size_t T = rec.length();
  bool inside = false;
  for (std::size_t t = 0; t < T; ++t) {
    const auto s = rec.segment_at(t, lead);
    if (s == kTP) {
      inside = false;
      continue;
    }
    if (!inside) {
      beats.emplace_back();
      inside = true;
    }
    Beat& b = beats.back();
    auto set = [&](std::optional<std::size_t>& f) {
      if (!f) f = t;
    };
    switch (s) {
      case kPPeak: set(b.p_peak); break;
      case kQrsOnset: set(b.qrs_onset); break;
      case kQPeak: set(b.q_peak); break;
      case kRPeak: set(b.r_peak); break;
      case kSPeak: set(b.s_peak); break;
      case kQrsOffset: set(b.qrs_offset); break;
      case kTPeak: set(b.t_peak); break;
      default: break;
    }
  }
  return beats;
}

/// Length (in samples) of the part of the piecewise-linear curve f over
/// [a, b] where f exceeds `thr`.
double extent_above(const std::vector<double>& f, std::size_t a, std::size_t b, double thr) {
  double len = 0.0;
  for (std::size_t t = a; t < b; ++t) {
    const double u = f[t] - thr, v = f[t + 1] - thr;
    if (u > 0 && v > 0) {
      len += 1.0;
    } else if (u > 0 || v > 0) {
      const double pos = u > 0 ? u : v;
      len += pos / (std::abs(u) + std::abs(v));
    }
  }
  return len;
}

}  // namespace

double EcgFeatures::get(std::string_view name) const {
  const auto it = values.find(name);
  if (it == values.end()) throw std::invalid_argument("unknown feature '" + std::string(name) + "'");
  return it->second;
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (auto lead : kLeadNames)
      for (auto f : kPerLeadFields) n.push_back(std::string(f) + "_" + std::string(lead));
    n.emplace_back("QRS_Dur_Global");
    n.emplace_back("AGE");
    n.emplace_back("SEX");
    return n;
  }();
  return names;
}

EcgFeatures extract_features(const EcgRecord& rec) {
  if (rec.annotation.empty())
    throw std::invalid_argument("extract_features: record '" + rec.id +
                                "' has no annotation and no delineation was supplied");
  const std::size_t T = rec.length();
  if (rec.annotation.size() != T * kNumLeads)
    throw std::invalid_argument("extract_features: annotation size does not match signal of record '" +
                                rec.id + "'");
  EcgFeatures out;
  double qrs_global = kNaN;
  for (std::size_t l = 0; l < kNumLeads; ++l) {
    std::vector<double> x(T);
    std::vector<double> tp;
    for (std::size_t t = 0; t < T; ++t) {
      x[t] = rec.signal.at(t, l);
      if (rec.segment_at(t, l) == kTP) tp.push_back(x[t]);
    }
    double base = median(tp);
    if (std::isnan(base)) base = median(x);
    if (std::isnan(base)) base = 0.0;
    std::vector<double> up(T), down(T);
    for (std::size_t t = 0; t < T; ++t) {
      up[t] = x[t] - base;
      down[t] = base - x[t];
    }

    std::vector<double> p, q, r, s, tw, qd, rd, st, qrs;
    for (const Beat& b : parse_beats(rec, l)) {
      if (b.p_peak) p.push_back(up[*b.p_peak]);
      if (b.q_peak) q.push_back(std::max(0.0, down[*b.q_peak]));
      if (b.r_peak) r.push_back(std::max(0.0, up[*b.r_peak]));
      if (b.s_peak) s.push_back(std::max(0.0, down[*b.s_peak]));
      if (b.t_peak) tw.push_back(up[*b.t_peak]);
      if (b.qrs_onset && b.r_peak)
        qd.push_back(extent_above(down, *b.qrs_onset, *b.r_peak, kDurationThreshold) / kSampleRate);
      if (b.r_peak) {
        const std::size_t a = b.q_peak ? *b.q_peak : b.qrs_onset ? *b.qrs_onset : *b.r_peak;
        const std::size_t e = b.s_peak ? *b.s_peak : b.qrs_offset ? *b.qrs_offset : *b.r_peak;
        if (a < *b.r_peak || e > *b.r_peak)
          rd.push_back(extent_above(up, a, e, kDurationThreshold) / kSampleRate);
      }
      if (b.qrs_offset && *b.qrs_offset + kStOffset < T) st.push_back(up[*b.qrs_offset + kStOffset]);
      if (b.qrs_onset && b.qrs_offset)
        qrs.push_back(static_cast<double>(*b.qrs_offset - *b.qrs_onset) / kSampleRate);
    }
    const std::string suffix = "_" + std::string(kLeadNames[l]);
    const double t_amp = median(tw);
    out.values["P_Amp" + suffix] = median(p);
    out.values["Q_Amp" + suffix] = median(q);
    out.values["R_Amp" + suffix] = median(r);
    out.values["S_Amp" + suffix] = median(s);
    out.values["T_Amp" + suffix] = t_amp;
    out.values["Q_Dur" + suffix] = median(qd);
    out.values["R_Dur" + suffix] = median(rd);
    out.values["ST_Amp" + suffix] = median(st);
    out.values["T_Morph" + suffix] =
        std::isnan(t_amp) ? kNaN : t_amp > kTMorphDeadband ? 1.0 : t_amp < -kTMorphDeadband ? -1.0 : 0.0;
    const double lead_qrs = median(qrs);
    if (!std::isnan(lead_qrs)) qrs_global = std::isnan(qrs_global) ? lead_qrs : std::max(qrs_global, lead_qrs);
  }
  out.values["QRS_Dur_Global"] = qrs_global;
  out.values["AGE"] = rec.age;
  out.values["SEX"] = static_cast<double>(static_cast<int>(rec.sex));
  return out;
}

CrossCorrelation lead_cross_correlation(const EcgDataset& dataset) {
  if (dataset.size() < 2) throw std::invalid_argument("lead_cross_correlation: needs at least 2 records");
  std::array<double, kNumLeads> mean{};
  std::size_t n = 0;
  for (const auto& r : dataset.records)
    for (std::size_t t = 0; t < r.length(); ++t) {
      for (std::size_t l = 0; l < kNumLeads; ++l) mean[l] += r.signal.at(t, l);
      ++n;
    }
  for (double& m : mean) m /= static_cast<double>(n);
  std::array<std::array<double, kNumLeads>, kNumLeads> cov{};
  for (const auto& r : dataset.records)
    for (std::size_t t = 0; t < r.length(); ++t) {
      const double* row = r.signal.data() + t * kNumLeads;
      for (std::size_t a = 0; a < kNumLeads; ++a)
        for (std::size_t b = a; b < kNumLeads; ++b) cov[a][b] += (row[a] - mean[a]) * (row[b] - mean[b]);
    }
  CrossCorrelation cc;
  for (std::size_t a = 0; a < kNumLeads; ++a)
    if (!(cov[a][a] > 0.0)) cc.zero_variance_leads.push_back(a);
  for (std::size_t a = 0; a < kNumLeads; ++a)
    for (std::size_t b = a; b < kNumLeads; ++b) {
      double c = 0.0;
      if (cov[a][a] > 0.0 && cov[b][b] > 0.0) c = a == b ? 1.0 : cov[a][b] / std::sqrt(cov[a][a] * cov[b][b]);
      cc.matrix[a][b] = cc.matrix[b][a] = c;
    }
  for (std::size_t a = 0; a < kNumLeads; ++a)
    for (std::size_t b = 0; b < kNumLeads; ++b)
      if (a != b) cc.off_diagonal_sum[a] += std::abs(cc.matrix[a][b]);
  return cc;
}

}  // namespace ecgxai
