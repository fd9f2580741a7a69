#include "ecgxai/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ecgxai/rng.hpp"

namespace ecgxai {

namespace {

constexpr std::array<std::string_view, kNumSegments> kSegmentNames = {
    "P-onset", "p1", "P-peak", "p2", "P-offset", "PQ",
    "QRS-onset", "q1", "Q-peak", "qr", "R-peak", "rs", "S-peak", "q2", "QRS-offset",
    "ql", "L-point", "lt", "T-onset", "t1", "T-peak", "t2", "T-offset", "TP"};

// Independent channels, in generation order.
enum Channel { kChI, kChII, kChV1, kChV2, kChV3, kChV4, kChV5, kChV6, kNumChannels };

struct ChannelWaves {
  double p, q, r, s, t;  // signed peak values (Q and S negative)
  double q_sigma;
};

bool is_point(std::size_t id) {
  switch (id) {
    case kPOnset: case kPPeak: case kPOffset: case kQrsOnset: case kQPeak: case kRPeak:
    case kSPeak: case kQrsOffset: case kLPoint: case kTOnset: case kTPeak: case kTOffset:
      return true;
    default:
      return false;
  }
}

int half_width(double sigma, double factor) {
  return std::max(2, static_cast<int>(std::lround(factor * sigma)));
}

std::uint8_t segment_of_offset(const BeatTiming& b, int d) {
  if (d == b.p_onset) return kPOnset;
  if (d < b.p_center) return kP1;
  if (d == b.p_center) return kPPeak;
  if (d < b.p_offset) return kP2;
  if (d == b.p_offset) return kPOffset;
  if (d < b.qrs_onset) return kPQ;
  if (d == b.qrs_onset) return kQrsOnset;
  if (d < b.q_center) return kQ1;
  if (d == b.q_center) return kQPeak;
  if (d < 0) return kQR;
  if (d == 0) return kRPeak;
  if (d < b.s_center) return kRS;
  if (d == b.s_center) return kSPeak;
  if (d < b.qrs_offset) return kQ2;
  if (d == b.qrs_offset) return kQrsOffset;
  if (d < b.l_point) return kQL;
  if (d == b.l_point) return kLPoint;
  if (d < b.t_onset) return kLT;
  if (d == b.t_onset) return kTOnset;
  if (d < b.t_center) return kT1;
  if (d == b.t_center) return kTPeak;
  if (d < b.t_offset) return kT2;
  return kTOffset;
}

void add_gaussian(std::vector<double>& x, long center, double amp, double sigma) {
  if (amp == 0.0) return;
  const long reach = static_cast<long>(std::ceil(6.0 * sigma));
  const long n = static_cast<long>(x.size());
  for (long t = std::max(0L, center - reach); t <= std::min(n - 1, center + reach); ++t) {
    const double d = static_cast<double>(t - center);
    x[static_cast<std::size_t>(t)] += amp * std::exp(-d * d / (2.0 * sigma * sigma));
  }
}

void check_range(const Range& r, std::string_view field) {
  if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi))
    throw std::invalid_argument(std::string(field) + ": lower bound must not exceed upper bound");
}

}  // namespace

std::size_t lead_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumLeads; ++i)
    if (kLeadNames[i] == name) return i;
  throw std::invalid_argument("unknown lead '" + std::string(name) + "'");
}

std::string_view segment_name(std::size_t id) { return kSegmentNames.at(id); }
bool is_point_segment(std::size_t id) { return is_point(id); }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

bool EcgRecord::has_label(std::string_view label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::vector<std::size_t> EcgDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) out.push_back(i);
  return out;
}

std::array<ChannelAmplitudes, 8> SynthConfig::default_amplitudes() {
  //                P             Q             R            S             T
  return {{
      {{0.05, 0.12}, {0.02, 0.08}, {0.4, 0.9}, {0.05, 0.2}, {0.1, 0.3}},     // I
      {{0.08, 0.20}, {0.03, 0.10}, {0.6, 1.3}, {0.1, 0.3}, {0.15, 0.4}},     // II
      {{0.03, 0.10}, {0.0, 0.0}, {0.1, 0.4}, {0.5, 1.2}, {-0.1, 0.15}},      // V1
      {{0.05, 0.12}, {0.0, 0.02}, {0.3, 0.8}, {0.7, 1.5}, {0.2, 0.5}},       // V2
      {{0.05, 0.12}, {0.0, 0.03}, {0.5, 1.2}, {0.4, 1.0}, {0.3, 0.6}},       // V3
      {{0.05, 0.12}, {0.02, 0.06}, {0.8, 1.6}, {0.2, 0.6}, {0.3, 0.6}},      // V4
      {{0.05, 0.12}, {0.03, 0.10}, {0.8, 1.6}, {0.1, 0.3}, {0.2, 0.5}},      // V5
      {{0.05, 0.12}, {0.03, 0.10}, {0.6, 1.3}, {0.05, 0.2}, {0.15, 0.4}},    // V6
  }};
}

void SynthConfig::validate() const {
  if (!(duration_s * kSampleRate >= 250.0))
    throw std::invalid_argument("duration_s: records need at least 250 samples (2.5 s)");
  check_range(heart_rate, "heart_rate");
  if (heart_rate.lo < 40.0 || heart_rate.hi > 180.0)
    throw std::invalid_argument("heart_rate: must lie within [40, 180] bpm");
  if (!(noise_sd >= 0.0)) throw std::invalid_argument("noise_sd: must be >= 0");
  if (classes.empty()) throw std::invalid_argument("classes: at least one class required");
  for (const auto& c : classes)
    if (std::find(kSynthClasses.begin(), kSynthClasses.end(), c) == kSynthClasses.end())
      throw std::invalid_argument("classes: unknown class '" + c + "'");
  check_range(age, "age");
  if (!(female_fraction >= 0.0 && female_fraction <= 1.0))
    throw std::invalid_argument("female_fraction: must lie in [0, 1]");
  for (const auto& a : amplitudes) {
    for (const Range* r : {&a.p, &a.q, &a.r, &a.s, &a.t}) check_range(*r, "amplitudes");
    for (const Range* r : {&a.p, &a.q, &a.r, &a.s, &a.t})
      if (std::abs(r->lo) > 10.0 || std::abs(r->hi) > 10.0)
        throw std::invalid_argument("amplitudes: must be bounded by 10 mV");
  }
  check_range(mi_q_amplitude, "mi_q_amplitude");
  check_range(clbbb_r_width, "clbbb_r_width");
  check_range(p_width, "p_width");
  check_range(t_width, "t_width");
  if (p_width.lo <= 0.0 || t_width.lo <= 0.0 || clbbb_r_width.lo <= 0.0)
    throw std::invalid_argument("wave widths must be positive");
  double total = 0.0;
  for (double f : split_fractions) {
    if (f < 0.0) throw std::invalid_argument("split_fractions: must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split_fractions: must sum to 1");
}

std::array<std::vector<double>, 6> derive_limb_leads(std::span<const double> lead_i,
                                                     std::span<const double> lead_ii) {
  if (lead_i.size() != lead_ii.size())
    throw std::invalid_argument("derive_limb_leads: lead I has " + std::to_string(lead_i.size()) +
                                " samples, lead II has " + std::to_string(lead_ii.size()));
  const std::size_t n = lead_i.size();
  std::array<std::vector<double>, 6> out;
  for (auto& v : out) v.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double a = lead_i[t], b = lead_ii[t];
    out[0][t] = a;
    out[1][t] = b;
    out[2][t] = b - a;
    out[3][t] = -(a + b) / 2.0;
    out[4][t] = a - b / 2.0;
    out[5][t] = b - a / 2.0;
  }
  return out;
}

namespace {

EcgRecord make_record(const SynthConfig& cfg, std::size_t index, const std::string& cls) {
  Rng rng(substream_seed(cfg.seed, "record", index));
  const std::size_t T = static_cast<std::size_t>(std::lround(cfg.duration_s * kSampleRate));
  const bool lvh = cls == "lvh-like", clbbb = cls == "clbbb-like", ami = cls == "ami-like",
             imi = cls == "imi-like";

  std::array<ChannelWaves, kNumChannels> w{};
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    const auto& a = cfg.amplitudes[c];
    w[c].p = rng.uniform(a.p.lo, a.p.hi);
    w[c].q = -rng.uniform(a.q.lo, a.q.hi);
    w[c].r = rng.uniform(a.r.lo, a.r.hi);
    w[c].s = -rng.uniform(a.s.lo, a.s.hi);
    w[c].t = rng.uniform(a.t.lo, a.t.hi);
    w[c].q_sigma = rng.uniform(0.6, 0.8);
  }

  BeatTiming b{};
  b.p_sigma = rng.uniform(cfg.p_width.lo, cfg.p_width.hi);
  b.t_sigma = rng.uniform(cfg.t_width.lo, cfg.t_width.hi);
  b.q_center = -3;
  b.s_center = 3;
  b.r_sigma = rng.uniform(1.1, 1.3);
  b.s_sigma = rng.uniform(0.9, 1.1);

  if (lvh) {
    for (Channel c : {kChV5, kChV6}) w[c].r *= cfg.lvh_gain;
    for (Channel c : {kChV1, kChV2}) w[c].s *= cfg.lvh_gain;
  } else if (clbbb) {
    b.q_center = -5;
    b.s_center = 6;
    b.r_sigma = rng.uniform(cfg.clbbb_r_width.lo, cfg.clbbb_r_width.hi);
    b.s_sigma = rng.uniform(1.8, 2.2);
    for (auto& c : w) c.q_sigma = 1.0;
    for (Channel c : {kChV1, kChV2, kChV3}) {
      w[c].r *= 0.3;
      w[c].s *= 1.5;
      w[c].t = std::abs(w[c].t) * 1.3;
    }
    for (Channel c : {kChI, kChV5, kChV6}) {
      w[c].r *= 1.2;
      w[c].t = -0.8 * std::abs(w[c].t);
    }
  } else if (ami) {
    for (Channel c : {kChV1, kChV2, kChV3}) w[c].r *= cfg.ami_r_gain;
    for (Channel c : {kChV2, kChV3}) {
      w[c].q = -rng.uniform(cfg.mi_q_amplitude.lo, cfg.mi_q_amplitude.hi);
      w[c].q_sigma = 1.0;
    }
  } else if (imi) {
    w[kChII].q = -rng.uniform(cfg.mi_q_amplitude.lo, cfg.mi_q_amplitude.hi);
    w[kChII].q_sigma = 1.0;
    w[kChII].r *= 0.5;
  }

  double q_sigma_max = 0.0;
  for (const auto& c : w) q_sigma_max = std::max(q_sigma_max, c.q_sigma);
  b.q_sigma = q_sigma_max;
  b.qrs_onset = b.q_center - half_width(q_sigma_max, 2.5);
  b.qrs_offset = b.s_center + half_width(b.s_sigma, 2.5);
  const int pq_len = 2 + static_cast<int>(rng.below(3));
  b.p_offset = b.qrs_onset - pq_len - 1;
  const int p_half = half_width(b.p_sigma, 3.0);
  b.p_center = b.p_offset - p_half;
  b.p_onset = b.p_center - p_half;
  b.l_point = b.qrs_offset + 3;
  const int lt_len = 3 + static_cast<int>(rng.below(4));
  b.t_onset = b.l_point + lt_len + 1;
  const int t_half = half_width(b.t_sigma, 3.0);
  b.t_center = b.t_onset + t_half;
  b.t_offset = b.t_center + t_half;

  const double hr = rng.uniform(cfg.heart_rate.lo, cfg.heart_rate.hi);
  const long period = std::lround(60.0 * kSampleRate / hr);
  const long span = b.t_offset - b.p_onset + 1;
  if (period < span + 1)
    throw std::invalid_argument("heart_rate: beat period of " + std::to_string(period) +
                                " samples at " + std::to_string(hr) +
                                " bpm is shorter than the wave extent of " + std::to_string(span + 1) +
                                " samples; lower heart_rate.hi or narrow the waves");
  const long r0 = static_cast<long>(rng.below(static_cast<std::uint64_t>(period)));

  std::vector<long> beats;  // every beat touching the record
  for (long r = r0 - period; r + b.p_onset < static_cast<long>(T); r += period)
    if (r + b.t_offset >= 0) beats.push_back(r);

  std::array<std::vector<double>, kNumChannels> ch;
  for (std::size_t c = 0; c < kNumChannels; ++c) {
    ch[c].assign(T, 0.0);
    for (long r : beats) {
      add_gaussian(ch[c], r + b.p_center, w[c].p, b.p_sigma);
      add_gaussian(ch[c], r + b.q_center, w[c].q, w[c].q_sigma);
      add_gaussian(ch[c], r, w[c].r, b.r_sigma);
      add_gaussian(ch[c], r + b.s_center, w[c].s, b.s_sigma);
      add_gaussian(ch[c], r + b.t_center, w[c].t, b.t_sigma);
    }
  }
  if (cfg.noise_sd > 0.0) {
    Rng noise(substream_seed(cfg.seed, "noise", index));
    for (auto& v : ch)
      for (double& x : v) x += noise.normal(0.0, cfg.noise_sd);
  }

  EcgRecord rec;
  char id[32];
  std::snprintf(id, sizeof id, "rec%05zu", index);
  rec.id = id;
  rec.labels = {cls};
  if (ami || imi) rec.labels.emplace_back(kMiSuperclass);
  rec.age = std::floor(rng.uniform(cfg.age.lo, cfg.age.hi + 1.0));
  rec.age = std::min(rec.age, std::floor(cfg.age.hi));
  rec.sex = rng.uniform() < cfg.female_fraction ? Sex::Female : Sex::Male;

  const auto limb = derive_limb_leads(ch[kChI], ch[kChII]);
  rec.signal = Tensor({T, kNumLeads});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t l = 0; l < 6; ++l) rec.signal.at(t, l) = limb[l][t];
    for (std::size_t l = 0; l < 6; ++l) rec.signal.at(t, 6 + l) = ch[kChV1 + l][t];
  }

  std::vector<std::uint8_t> seg(T, kTP);
  for (long r : beats) {
    for (int d = b.p_onset; d <= b.t_offset; ++d) {
      const long t = r + d;
      if (t < 0 || t >= static_cast<long>(T)) continue;
      seg[static_cast<std::size_t>(t)] = segment_of_offset(b, d);
    }
    if (r >= 0 && r < static_cast<long>(T)) rec.r_peaks.push_back(static_cast<std::size_t>(r));
  }
  rec.annotation.resize(T * kNumLeads);
  for (std::size_t t = 0; t < T; ++t)
    std::fill_n(rec.annotation.begin() + static_cast<long>(t * kNumLeads), kNumLeads, seg[t]);
  return rec;
}

}  // namespace

EcgDataset generate(const SynthConfig& config, std::size_t n) {
  config.validate();
  if (n == 0) throw std::invalid_argument("n: at least one record required");
  EcgDataset ds;
  ds.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.records.push_back(make_record(config, i, config.classes[i % config.classes.size()]));

  ds.splits.assign(n, Split::Train);
  Rng rng(substream_seed(config.seed, "split"));
  for (std::size_t c = 0; c < config.classes.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = c; i < n; i += config.classes.size()) members.push_back(i);
    rng.shuffle(members);
    const double m = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::lround(config.split_fractions[0] * m));
    const auto n_valid = static_cast<std::size_t>(std::lround(config.split_fractions[1] * m));
    for (std::size_t j = 0; j < members.size(); ++j)
      ds.splits[members[j]] = j < n_train ? Split::Train
                              : j < n_train + n_valid ? Split::Valid
                                                      : Split::Test;
  }
  return ds;
}

}  // namespace ecgxai
