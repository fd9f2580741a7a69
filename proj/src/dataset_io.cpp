#include <stdexcept>

#include "ecgxai/io_util.hpp"
#include "ecgxai/synth.hpp"

namespace ecgxai {

namespace fs = std::filesystem;
using io::Json;

void save_dataset(const EcgDataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const bool annotated = !ds.records.empty() && !ds.records.front().annotation.empty();
  Json m;
  m["format"] = "ecgxai-dataset";
  m["version"] = 1;
  m["sample_rate"] = kSampleRate;
  m["leads"] = Json(std::vector<std::string>(kLeadNames.begin(), kLeadNames.end()));
  Json segs = Json::array();
  for (std::size_t i = 0; i < kNumSegments; ++i) segs.push_back(std::string(segment_name(i)));
  m["segments"] = segs;
  m["annotations"] = annotated;
  Json recs = Json::array();
  std::vector<double> signals;
  std::vector<std::uint8_t> ann;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const EcgRecord& r = ds.records[i];
    if (annotated != !r.annotation.empty())
      throw std::invalid_argument("save_dataset: records mix annotated and unannotated signals");
    Json jr;
    jr["id"] = r.id;
    jr["length"] = r.length();
    jr["labels"] = r.labels;
    jr["age"] = r.age;
    jr["sex"] = r.sex == Sex::Female ? "female" : "male";
    jr["split"] = std::string(to_string(ds.splits.at(i)));
    jr["r_peaks"] = r.r_peaks;
    recs.push_back(jr);
    signals.insert(signals.end(), r.signal.values().begin(), r.signal.values().end());
    ann.insert(ann.end(), r.annotation.begin(), r.annotation.end());
  }
  m["records"] = recs;
  io::write_json(dir / "manifest.json", m);
  io::write_f32(dir / "signals.bin", signals);
  if (annotated) io::write_u8(dir / "annotations.bin", ann);

  std::vector<std::string> header = {"id"};
  header.insert(header.end(), feature_names().begin(), feature_names().end());
  io::Csv csv(header);
  if (annotated)
    for (const auto& r : ds.records) {
      const EcgFeatures f = extract_features(r);
      std::vector<std::string> row = {r.id};
      for (const auto& n : feature_names()) row.push_back(io::fmt(f.get(n)));
      csv.row(row);
    }
  csv.save(dir / "features.csv");
}

EcgDataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw io::NotFound("dataset directory '" + dir.string() + "' does not exist");
  const Json m = io::read_json(dir / "manifest.json");
  if (m.value("format", "") != "ecgxai-dataset")
    throw std::invalid_argument("'" + dir.string() + "' is not a dataset directory");
  const bool annotated = m.at("annotations").get<bool>();
  const std::vector<double> signals = io::read_f32(dir / "signals.bin");
  std::vector<std::uint8_t> ann;
  if (annotated) ann = io::read_u8(dir / "annotations.bin");
  EcgDataset ds;
  std::size_t off = 0;
  for (const auto& jr : m.at("records")) {
    EcgRecord r;
    r.id = jr.at("id").get<std::string>();
    const auto T = jr.at("length").get<std::size_t>();
    r.labels = jr.at("labels").get<std::vector<std::string>>();
    r.age = jr.at("age").get<double>();
    r.sex = jr.at("sex").get<std::string>() == "female" ? Sex::Female : Sex::Male;
    if (jr.contains("r_peaks")) r.r_peaks = jr.at("r_peaks").get<std::vector<std::size_t>>();
    if (off + T * kNumLeads > signals.size())
      throw std::invalid_argument("signals.bin in '" + dir.string() + "' is shorter than the manifest declares");
    r.signal = Tensor({T, kNumLeads},
                      std::vector<double>(signals.begin() + static_cast<long>(off),
                                          signals.begin() + static_cast<long>(off + T * kNumLeads)));
    if (annotated) {
      if (off + T * kNumLeads > ann.size())
        throw std::invalid_argument("annotations.bin in '" + dir.string() + "' is too short");
      r.annotation.assign(ann.begin() + static_cast<long>(off), ann.begin() + static_cast<long>(off + T * kNumLeads));
    }
    off += T * kNumLeads;
    ds.records.push_back(std::move(r));
    ds.splits.push_back(split_from_string(jr.at("split").get<std::string>()));
  }
  if (off != signals.size())
    throw std::invalid_argument("signals.bin in '" + dir.string() + "' is longer than the manifest declares");
  return ds;
}

}  // namespace ecgxai
