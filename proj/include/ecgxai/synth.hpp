#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/tensor.hpp"

namespace ecgxai {

inline constexpr std::size_t kNumLeads = 12;
inline constexpr double kSampleRate = 100.0;
inline constexpr std::size_t kNumSegments = 24;

inline constexpr std::array<std::string_view, kNumLeads> kLeadNames = {
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};

/// Lead index by name; throws for unknown names.
std::size_t lead_index(std::string_view name);

/// The 24 fiducial segment classes in beat order.
enum Segment : std::uint8_t {
  kPOnset, kP1, kPPeak, kP2, kPOffset, kPQ,
  kQrsOnset, kQ1, kQPeak, kQR, kRPeak, kRS, kSPeak, kQ2, kQrsOffset,
  kQL, kLPoint, kLT, kTOnset, kT1, kTPeak, kT2, kTOffset, kTP,
};

std::string_view segment_name(std::size_t id);
bool is_point_segment(std::size_t id);

inline constexpr std::array<std::string_view, 5> kSynthClasses = {
    "norm", "lvh-like", "clbbb-like", "ami-like", "imi-like"};
inline constexpr std::string_view kMiSuperclass = "mi-like";

enum class Sex : int { Male = 0, Female = 1 };
enum class Split : int { Train = 0, Valid = 1, Test = 2 };
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct EcgRecord {
  std::string id;
  Tensor signal;                        // [T, 12], millivolts
  std::vector<std::string> labels;
  double age = 0.0;
  Sex sex = Sex::Male;
  std::vector<std::uint8_t> annotation; // T * 12 segment ids, empty when absent
  std::vector<std::size_t> r_peaks;     // ground-truth R indices inside [0, T)

  std::size_t length() const { return signal.empty() ? 0 : signal.dim(0); }
  bool has_label(std::string_view label) const;
  std::uint8_t segment_at(std::size_t t, std::size_t lead) const { return annotation[t * kNumLeads + lead]; }
};

struct EcgDataset {
  std::vector<EcgRecord> records;
  std::vector<Split> splits;

  std::size_t size() const { return records.size(); }
  std::vector<std::size_t> indices(Split s) const;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Per-wave amplitude ranges (mV) for the 8 independent channels I, II, V1..V6.
struct ChannelAmplitudes {
  Range p, q, r, s, t;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  double duration_s = 5.0;
  Range heart_rate = {50.0, 75.0};
  double noise_sd = 0.01;
  std::vector<std::string> classes = {kSynthClasses.begin(), kSynthClasses.end()};
  Range age = {20.0, 90.0};
  double female_fraction = 0.5;
  std::array<ChannelAmplitudes, 8> amplitudes = default_amplitudes();
  double lvh_gain = 1.8;           // R in V5/V6 and S in V1/V2
  double ami_r_gain = 0.2;         // R in V1..V3
  Range mi_q_amplitude = {0.3, 0.6};
  Range clbbb_r_width = {2.0, 2.6};
  Range p_width = {1.8, 2.2};      // Gaussian sigma, samples
  Range t_width = {3.6, 4.4};
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};

  static std::array<ChannelAmplitudes, 8> default_amplitudes();
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Record timing relative to the R peak, in samples.
struct BeatTiming {
  int p_center, q_center, s_center, t_center;
  double p_sigma, q_sigma, r_sigma, s_sigma, t_sigma;
  int p_onset, p_offset, qrs_onset, qrs_offset, l_point, t_onset, t_offset;
};

EcgDataset generate(const SynthConfig& config, std::size_t n);

/// The six limb leads {I, II, III, aVR, aVL, aVF} from the two independent ones.
std::array<std::vector<double>, 6> derive_limb_leads(std::span<const double> lead_i,
                                                     std::span<const double> lead_ii);

/// Field names in column order: per-lead fields for every lead, then
/// QRS_Dur_Global, AGE, SEX.
const std::vector<std::string>& feature_names();

struct EcgFeatures {
  std::map<std::string, double, std::less<>> values;

  double get(std::string_view name) const;
  bool has(std::string_view name) const { return values.find(name) != values.end(); }
};

/// Features from the record's annotation. Throws when it has none.
EcgFeatures extract_features(const EcgRecord& record);

struct CrossCorrelation {
  std::array<std::array<double, kNumLeads>, kNumLeads> matrix{};
  std::array<double, kNumLeads> off_diagonal_sum{};
  std::vector<std::size_t> zero_variance_leads;
};

CrossCorrelation lead_cross_correlation(const EcgDataset& dataset);

// On-disk dataset directory.
void save_dataset(const EcgDataset& dataset, const std::filesystem::path& dir);
EcgDataset load_dataset(const std::filesystem::path& dir);

}  // namespace ecgxai
