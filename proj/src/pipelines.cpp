#include "ecgxai/pipelines.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>

#include "ecgxai/attribution.hpp"
#include "ecgxai/checkpoint.hpp"
#include "ecgxai/concept_rules.hpp"
#include "ecgxai/delineation.hpp"
#include "ecgxai/discovery.hpp"
#include "ecgxai/glocal.hpp"
#include "ecgxai/parallel.hpp"
#include "ecgxai/rng.hpp"
#include "ecgxai/sanity.hpp"
#include "ecgxai/stats.hpp"
#include "ecgxai/synth.hpp"
#include "ecgxai/tcav.hpp"
#include "ecgxai/train.hpp"

namespace ecgxai::pipelines {

namespace fs = std::filesystem;
using io::Json;
using io::fmt;

namespace {

const std::vector<std::string> kDefaultLabels = {"norm", "lvh-like", "clbbb-like", "mi-like"};

class Log {
 public:
  explicit Log(const fs::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
  }
  void operator()(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
    std::cerr << line << '\n';
  }

 private:
  std::ofstream out_;
};

struct Ctx {
  const Json& cfg;
  fs::path out;
  std::size_t jobs;
  Log& log;
};

Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

std::string num_text(const Json& v) { return v.is_null() ? fmt(NAN) : fmt(v.get<double>()); }

// ---- config access --------------------------------------------------------

template <class T>
T get(const Json& cfg, const char* key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

Range get_range(const Json& cfg, const char* key) {
  const auto v = get<std::vector<double>>(cfg, key);
  if (v.size() != 2) throw ConfigError(std::string(key) + ": expected [low, high]");
  if (v[0] > v[1]) throw ConfigError(std::string(key) + ": lower bound must not exceed upper bound");
  return {v[0], v[1]};
}

std::size_t get_count(const Json& cfg, const char* key, std::size_t min = 0) {
  const auto& v = cfg.at(key);
  if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(min))
    throw ConfigError(std::string(key) + ": expected an integer >= " + std::to_string(min));
  return v.get<std::size_t>();
}

EcgDataset open_dataset(const Json& cfg) {
  const auto path = get<std::string>(cfg, "dataset");
  if (path.empty()) throw ConfigError("dataset: a dataset directory is required");
  if (!fs::is_directory(path)) throw io::NotFound("dataset directory '" + path + "' does not exist");
  try {
    return load_dataset(path);
  } catch (const io::NotFound&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
}

struct LoadedModel {
  nn::Model model;
  std::vector<std::string> labels;
};

LoadedModel open_model(const Json& cfg) {
  const auto path = get<std::string>(cfg, "model");
  if (path.empty()) throw ConfigError("model: a model directory (output of 'train') is required");
  if (!fs::is_directory(path)) throw io::NotFound("model directory '" + path + "' does not exist");
  try {
    auto ck = load_checkpoint(path);
    LoadedModel m{std::move(ck.model), {}};
    if (ck.manifest.contains("labels")) m.labels = ck.manifest["labels"].get<std::vector<std::string>>();
    else
      for (std::size_t k = 0; k < m.model.spec().output_dim; ++k) m.labels.push_back("output" + std::to_string(k));
    return m;
  } catch (const io::NotFound&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

std::size_t label_index(const std::vector<std::string>& labels, const std::string& name, const char* key) {
  const auto it = std::find(labels.begin(), labels.end(), name);
  if (it == labels.end()) {
    std::string known;
    for (const auto& l : labels) known += (known.empty() ? "" : ", ") + l;
    throw ConfigError(std::string(key) + ": '" + name + "' is not a model output (" + known + ")");
  }
  return static_cast<std::size_t>(it - labels.begin());
}

std::vector<std::size_t> select_records(const EcgDataset& ds, const Json& cfg) {
  std::vector<std::size_t> out;
  const auto ids = get<std::vector<std::string>>(cfg, "ids");
  if (!ids.empty()) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ds.size(); ++i) index[ds.records[i].id] = i;
    for (const auto& id : ids) {
      const auto it = index.find(id);
      if (it == index.end()) throw ConfigError("ids: record '" + id + "' is not in the dataset");
      out.push_back(it->second);
    }
    return out;
  }
  const auto split = get<std::string>(cfg, "split");
  if (split == "all") {
    for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(i);
  } else if (split == "heldout") {
    out = ds.indices(Split::Valid);
    for (std::size_t i : ds.indices(Split::Test)) out.push_back(i);
    std::sort(out.begin(), out.end());
  } else {
    try {
      out = ds.indices(split_from_string(split));
    } catch (const std::invalid_argument&) {
      throw ConfigError("split: expected train, valid, test, heldout or all, got '" + split + "'");
    }
  }
  return out;
}

nn::ModelSpec make_arch(const std::string& arch, std::size_t outputs, nn::Head head) {
  if (arch == "lenet") return nn::lenet(outputs, head);
  if (arch == "resnet") return nn::residual_net(outputs, head);
  throw ConfigError("arch: expected lenet or resnet, got '" + arch + "'");
}

TrainConfig train_config(const Json& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.seed = seed;
  tc.epochs = get_count(cfg, "epochs", 1);
  tc.batch_size = get_count(cfg, "batch_size", 1);
  tc.lr = get<double>(cfg, "lr");
  tc.crop_length = get_count(cfg, "crop_length", 1);
  if (!(tc.lr > 0.0)) throw ConfigError("lr: must be > 0");
  return tc;
}

attr::Method method_of(const std::string& name, const char* key) {
  try {
    return attr::method_from_string(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

attr::Options attribution_options(const Json& cfg) {
  attr::Options o;
  o.ig_steps = get_count(cfg, "ig_steps", 2);
  o.gradcam_layer = get<std::string>(cfg, "gradcam_layer");
  o.lrp_epsilon = get<double>(cfg, "lrp_epsilon");
  return o;
}

bool is_lrp(attr::Method m) { return m == attr::Method::LrpEpsilon || m == attr::Method::LrpZPlus; }

SupervisedSet label_set(const EcgDataset& ds, const std::vector<std::size_t>& idx,
                        const std::vector<std::string>& labels) {
  SupervisedSet s;
  for (std::size_t i : idx) {
    s.inputs.push_back(ds.records[i].signal);
    std::vector<double> y;
    for (const auto& l : labels) y.push_back(ds.records[i].has_label(l) ? 1.0 : 0.0);
    s.targets.push_back(std::move(y));
  }
  return s;
}

void write_beat_csv(const fs::path& path, const Tensor& beat) {
  std::vector<std::string> header = {"tau"};
  for (auto n : kLeadNames) header.emplace_back(n);
  io::Csv csv(header);
  for (std::size_t w = 0; w < beat.dim(0); ++w) {
    std::vector<std::string> row = {std::to_string(w)};
    for (std::size_t l = 0; l < beat.dim(1); ++l) row.push_back(fmt(beat.at(w, l)));
    csv.row(row);
  }
  csv.save(path);
}

Json metrics_json(const MetricsReport& m, const std::vector<std::string>& names) {
  Json j;
  if (m.head == nn::Head::SigmoidMultilabel) {
    Json auc = Json::object();
    for (std::size_t k = 0; k < names.size(); ++k) auc[names[k]] = num(m.auc[k]);
    j["auc"] = auc;
    j["macro_auc"] = num(m.macro_auc);
  } else {
    Json mae = Json::object(), r2 = Json::object();
    for (std::size_t k = 0; k < names.size(); ++k) {
      mae[names[k]] = num(m.mae[k]);
      r2[names[k]] = num(m.r2[k]);
    }
    j["mae"] = mae;
    j["r2"] = r2;
    j["mean_mae"] = num(m.mean_mae);
    j["mean_r2"] = num(m.mean_r2);
  }
  return j;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// ---- commands ---------------------------------------------------------------

Json synth_defaults() {
  Json j;
  j["seed"] = 0;
  j["n"] = 500;
  j["classes"] = std::vector<std::string>(kSynthClasses.begin(), kSynthClasses.end());
  j["duration_s"] = 5.0;
  j["heart_rate"] = {50.0, 75.0};
  j["noise_sd"] = 0.01;
  j["age"] = {20.0, 90.0};
  j["female_fraction"] = 0.5;
  j["split_fractions"] = {0.8, 0.1, 0.1};
  return j;
}

void cmd_synth(Ctx& c) {
  const SynthConfig sc = synth_config(c.cfg);
  const std::size_t n = get_count(c.cfg, "n", 1);
  EcgDataset ds;
  try {
    ds = generate(sc, n);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  save_dataset(ds, c.out);
  c.log("generated " + std::to_string(ds.size()) + " records");
  for (const auto& cls : sc.classes) {
    std::size_t k = 0;
    for (const auto& r : ds.records) k += r.has_label(cls);
    c.log("  " + cls + ": " + std::to_string(k));
  }
}

Json train_defaults() {
  Json j;
  j["seed"] = 0;
  j["dataset"] = "";
  j["arch"] = "lenet";
  j["labels"] = kDefaultLabels;
  j["epochs"] = 10;
  j["batch_size"] = 32;
  j["lr"] = 1e-3;
  j["crop_length"] = 250;
  return j;
}

void cmd_train(Ctx& c) {
  const auto ds = open_dataset(c.cfg);
  const auto labels = get<std::vector<std::string>>(c.cfg, "labels");
  if (labels.empty()) throw ConfigError("labels: at least one label required");
  const auto spec = make_arch(get<std::string>(c.cfg, "arch"), labels.size(), nn::Head::SigmoidMultilabel);
  const auto tc = train_config(c.cfg, substream_seed(get<std::uint64_t>(c.cfg, "seed"), "train"));
  const auto train_set = label_set(ds, ds.indices(Split::Train), labels);
  if (train_set.size() == 0) throw ConfigError("dataset: the train split is empty");
  c.log("training " + spec.arch + " on " + std::to_string(train_set.size()) + " records");
  const auto res = train(spec, train_set, tc);
  io::Csv losses({"epoch", "loss"});
  for (std::size_t e = 0; e < res.epoch_losses.size(); ++e) {
    losses.row({std::to_string(e + 1), fmt(res.epoch_losses[e])});
    c.log("epoch " + std::to_string(e + 1) + " loss " + fmt(res.epoch_losses[e]));
  }
  losses.save(c.out / "losses.csv");
  Json metrics = Json::object();
  for (Split s : {Split::Valid, Split::Test}) {
    const auto set = label_set(ds, ds.indices(s), labels);
    if (set.size() == 0) continue;
    metrics[std::string(to_string(s))] = metrics_json(evaluate(res.model, set, tc.crop_length), labels);
  }
  io::write_json(c.out / "metrics.json", metrics);
  Json extra;
  extra["labels"] = labels;
  extra["crop_length"] = tc.crop_length;
  save_checkpoint(res.model, c.out, extra);
  if (metrics.contains("test")) c.log("test macro AUC " + fmt(metrics["test"]["macro_auc"].get<double>()));
}

Json attribute_defaults() {
  Json j;
  j["dataset"] = "";
  j["model"] = "";
  j["method"] = "saliency";
  j["output"] = "";
  j["split"] = "test";
  j["ids"] = Json::array();
  j["ig_steps"] = 64;
  j["gradcam_layer"] = "input";
  j["lrp_epsilon"] = 1e-6;
  return j;
}

void cmd_attribute(Ctx& c) {
  const auto ds = open_dataset(c.cfg);
  auto lm = open_model(c.cfg);
  const auto method = method_of(get<std::string>(c.cfg, "method"), "method");
  const auto out_name = get<std::string>(c.cfg, "output");
  const std::size_t k = out_name.empty() ? 0 : label_index(lm.labels, out_name, "output");
  const auto opts = attribution_options(c.cfg);
  const auto idx = select_records(ds, c.cfg);
  if (idx.empty()) throw ConfigError("no records selected");
  const nn::Model model = is_lrp(method) ? nn::fold_batchnorm(lm.model) : lm.model;
  if (method == attr::Method::GradCam) attr::gradcam_position(model, opts.gradcam_layer);
  std::vector<Tensor> maps(idx.size());
  parallel_for(idx.size(), c.jobs, [&](std::size_t j) {
    maps[j] = attr::attribute(model, ds.records[idx[j]].signal, k, method, opts).values;
  });
  std::vector<double> flat;
  Json records = Json::array();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    Json r;
    r["id"] = ds.records[idx[j]].id;
    r["offset"] = flat.size();
    r["length"] = maps[j].dim(0);
    records.push_back(r);
    flat.insert(flat.end(), maps[j].values().begin(), maps[j].values().end());
  }
  io::write_f32(c.out / "attributions.bin", flat);
  Json side;
  side["format"] = "float32 little-endian, per record [T, 12] row-major";
  side["method"] = std::string(attr::to_string(method));
  side["output"] = lm.labels[k];
  side["output_index"] = k;
  side["ig_steps"] = opts.ig_steps;
  side["gradcam_layer"] = opts.gradcam_layer;
  side["lrp_epsilon"] = num(opts.lrp_epsilon);
  side["model"] = get<std::string>(c.cfg, "model");
  side["records"] = records;
  io::write_json(c.out / "attributions.json", side);
  c.log("attributed " + std::to_string(idx.size()) + " records with " + std::string(attr::to_string(method)) +
        " for output " + lm.labels[k]);
}

Json delineate_defaults() {
  Json j;
  j["dataset"] = "";
  j["softness"] = 3.0;
  j["split"] = "all";
  j["ids"] = Json::array();
  j["min_probability"] = 0.25;
  j["min_distance"] = 30;
  return j;
}

void cmd_delineate(Ctx& c) {
  const auto ds = open_dataset(c.cfg);
  const double softness = get<double>(c.cfg, "softness");
  if (!(softness >= 0.0)) throw ConfigError("softness: must be >= 0");
  delin::PeakOptions po;
  po.min_probability = get<double>(c.cfg, "min_probability");
  po.min_distance = get_count(c.cfg, "min_distance", 1);
  const auto idx = select_records(ds, c.cfg);
  if (idx.empty()) throw ConfigError("no records selected");
  for (std::size_t i : idx)
    if (ds.records[i].annotation.empty())
      throw ConfigError("dataset: record '" + ds.records[i].id + "' has no annotation");
  std::vector<delin::SegmentationMap> maps(idx.size());
  std::vector<std::vector<std::size_t>> peaks(idx.size());
  parallel_for(idx.size(), c.jobs, [&](std::size_t j) {
    maps[j] = delin::oracle_segment(ds.records[idx[j]], softness);
    peaks[j] = delin::detect_r_peaks(maps[j], po);
  });
  std::vector<double> flat;
  Json records = Json::array();
  io::Csv rp({"record_id", "index"});
  std::size_t tp = 0, n_pred = 0, n_true = 0;
  double acc = 0.0, macro_auc = 0.0;
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const auto& rec = ds.records[idx[j]];
    Json r;
    r["id"] = rec.id;
    r["offset"] = flat.size();
    r["length"] = rec.length();
    records.push_back(r);
    flat.insert(flat.end(), maps[j].probs.values().begin(), maps[j].probs.values().end());
    for (std::size_t p : peaks[j]) rp.row({rec.id, std::to_string(p)});
    const std::set<std::size_t> truth(rec.r_peaks.begin(), rec.r_peaks.end());
    for (std::size_t p : peaks[j]) tp += truth.count(p);
    n_pred += peaks[j].size();
    n_true += truth.size();
    const auto rep = delin::evaluate_segmenter(maps[j], rec.annotation);
    acc += rep.accuracy / static_cast<double>(idx.size());
    macro_auc += rep.macro_auc / static_cast<double>(idx.size());
  }
  io::write_f32(c.out / "segmaps.bin", flat);
  Json side;
  side["format"] = "float32 little-endian, per record [T, 12, 24] row-major";
  side["leads"] = std::vector<std::string>(kLeadNames.begin(), kLeadNames.end());
  std::vector<std::string> seg;
  for (std::size_t s = 0; s < kNumSegments; ++s) seg.emplace_back(segment_name(s));
  side["segments"] = seg;
  side["softness"] = softness;
  side["records"] = records;
  io::write_json(c.out / "segmaps.json", side);
  rp.save(c.out / "r_peaks.csv");
  Json ev;
  ev["r_peak_precision"] = num(n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0);
  ev["r_peak_recall"] = num(n_true ? static_cast<double>(tp) / static_cast<double>(n_true) : 0.0);
  ev["mean_accuracy"] = num(acc);
  ev["mean_macro_auc"] = num(macro_auc);
  io::write_json(c.out / "evaluation.json", ev);
  c.log("delineated " + std::to_string(idx.size()) + " records, R-peak precision " +
        fmt(ev["r_peak_precision"].get<double>()) + " recall " + fmt(ev["r_peak_recall"].get<double>()));
}

Json sanity_defaults() {
  Json j;
  j["seed"] = 0;
  j["dataset"] = "";
  j["wave"] = "R";
  j["methods"] = {"saliency", "ig", "gradcam", "lrp"};
  j["arch"] = "lenet";
  j["epochs"] = 10;
  j["batch_size"] = 32;
  j["lr"] = 1e-3;
  j["crop_length"] = 250;
  j["n"] = 100;
  j["ig_steps"] = 32;
  j["gradcam_layer"] = "input";
  j["lrp_epsilon"] = 1e-6;
  return j;
}

void cmd_sanity(Ctx& c) {
  const auto ds = open_dataset(c.cfg);
  for (const auto& r : ds.records)
    if (r.annotation.empty()) throw ConfigError("dataset: sanity checks need annotated records");
  sanity::SanityConfig sc;
  try {
    sc.wave = sanity::wave_from_string(get<std::string>(c.cfg, "wave"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("wave: ") + e.what());
  }
  sc.methods.clear();
  for (const auto& m : get<std::vector<std::string>>(c.cfg, "methods")) sc.methods.push_back(method_of(m, "methods"));
  sc.arch = make_arch(get<std::string>(c.cfg, "arch"), kNumLeads, nn::Head::LinearRegression);
  sc.train = train_config(c.cfg, substream_seed(get<std::uint64_t>(c.cfg, "seed"), "train"));
  sc.eval_samples = get_count(c.cfg, "n", 1);
  sc.attribution = attribution_options(c.cfg);
  sc.jobs = c.jobs;
  c.log("sanity suite, wave " + std::string(sanity::to_string(sc.wave)));
  const auto rep = sanity::run_sanity_suite(ds, sc);

  std::vector<std::string> lead_names(kLeadNames.begin(), kLeadNames.end());
  io::write_json(c.out / "regression.json", metrics_json(rep.regression, lead_names));
  c.log("regressor mean r2 " + fmt(rep.regression.mean_r2) + (rep.low_fidelity ? " (low fidelity)" : ""));
  io::Csv spatial({"method", "target_lead", "sample_id", "s"});
  io::Csv summary({"method", "target_lead", "median", "q25", "q75"});
  io::Csv temporal({"method", "tau", "median", "q25", "q75"});
  Json methods = Json::array();
  for (const auto& m : rep.methods) {
    const std::string name(attr::to_string(m.method));
    for (std::size_t l = 0; l < kNumLeads; ++l) {
      for (std::size_t j = 0; j < rep.sample_ids.size(); ++j)
        spatial.row({name, lead_names[l], rep.sample_ids[j], fmt(m.spatial[l][j])});
      summary.row({name, lead_names[l], fmt(m.spatial_median[l]), fmt(m.spatial_q25[l]), fmt(m.spatial_q75[l])});
    }
    for (std::size_t w = 0; w < m.t_median.size(); ++w)
      temporal.row({name, std::to_string(w), fmt(m.t_median[w]), fmt(m.t_q25[w]), fmt(m.t_q75[w])});
    Json mj;
    mj["method"] = name;
    mj["temporal_argmax"] = m.argmax;
    methods.push_back(mj);
    c.log("  " + name + ": temporal argmax " + std::to_string(m.argmax));
  }
  spatial.save(c.out / "spatial.csv");
  summary.save(c.out / "spatial_summary.csv");
  temporal.save(c.out / "temporal.csv");
  if (!rep.median_beat.empty()) write_beat_csv(c.out / "median_beat.csv", rep.median_beat);

  const auto cc = lead_cross_correlation(ds);
  std::vector<std::string> header = {"lead"};
  header.insert(header.end(), lead_names.begin(), lead_names.end());
  header.push_back("off_diagonal_sum");
  io::Csv corr(header);
  for (std::size_t a = 0; a < kNumLeads; ++a) {
    std::vector<std::string> row = {lead_names[a]};
    for (std::size_t b = 0; b < kNumLeads; ++b) row.push_back(fmt(cc.matrix[a][b]));
    row.push_back(fmt(cc.off_diagonal_sum[a]));
    corr.row(row);
  }
  corr.save(c.out / "lead_correlation.csv");

  Json report;
  report["wave"] = std::string(sanity::to_string(rep.wave));
  report["samples"] = rep.sample_ids.size();
  report["low_fidelity"] = rep.low_fidelity;
  report["mean_r2"] = num(rep.regression.mean_r2);
  report["wave_position"] = num(rep.wave_position);
  report["qrs_window"] = {num(rep.qrs_begin), num(rep.qrs_end)};
  report["methods"] = methods;
  io::write_json(c.out / "report.json", report);
}

Json glocal_defaults() {
  Json j;
  j["dataset"] = "";
  j["model"] = "";
  j["classes"] = Json::array();
  j["split"] = "test";
  j["ids"] = Json::array();
  j["top_n"] = 100;
  j["method"] = "saliency";
  j["softness"] = 3.0;
  j["ig_steps"] = 64;
  j["gradcam_layer"] = "input";
  j["lrp_epsilon"] = 1e-6;
  return j;
}

void cmd_glocal(Ctx& c) {
  const auto ds = open_dataset(c.cfg);
  const auto lm = open_model(c.cfg);
  auto classes = get<std::vector<std::string>>(c.cfg, "classes");
  if (classes.empty()) classes = lm.labels;
  glocal::GlocalOptions go;
  go.top_n = get_count(c.cfg, "top_n", 1);
  go.method = method_of(get<std::string>(c.cfg, "method"), "method");
  go.attribution = attribution_options(c.cfg);
  go.softness = get<double>(c.cfg, "softness");
  go.jobs = c.jobs;
  const auto pool = select_records(ds, c.cfg);
  if (pool.empty()) throw ConfigError("no records selected");
  std::vector<std::string> seg;
  for (std::size_t s = 0; s < kNumSegments; ++s) seg.emplace_back(segment_name(s));
  for (const auto& cls : classes) {
    const std::size_t k = label_index(lm.labels, cls, "classes");
    const auto g = glocal::build_glocal_map(lm.model, ds, pool, lm.labels, k, go);
    write_beat_csv(c.out / ("median_beat_" + cls + ".csv"), g.median_beat);
    write_beat_csv(c.out / ("attribution_beat_" + cls + ".csv"), g.attribution_beat);
    std::vector<std::string> header = {"lead"};
    header.insert(header.end(), seg.begin(), seg.end());
    io::Csv table(header);
    for (std::size_t l = 0; l < kNumLeads; ++l) {
      std::vector<std::string> row = {std::string(kLeadNames[l])};
      for (std::size_t s = 0; s < kNumSegments; ++s) row.push_back(fmt(g.segment_table.at(l, s)));
      table.row(row);
    }
    table.save(c.out / ("segments_" + cls + ".csv"));
    Json j;
    j["class"] = cls;
    j["method"] = std::string(attr::to_string(go.method));
    j["samples"] = g.sample_ids;
    Json pred = Json::object(), lab = Json::object();
    for (std::size_t q = 0; q < lm.labels.size(); ++q) {
      pred[lm.labels[q]] = num(g.mean_prediction[q]);
      lab[lm.labels[q]] = num(g.mean_label[q]);
    }
    j["mean_prediction"] = pred;
    j["mean_label"] = lab;
    Json top = Json::array();
    for (const auto& cell : g.top) {
      Json t;
      t["lead"] = std::string(kLeadNames[cell.lead]);
      t["segment"] = std::string(segment_name(cell.segment));
      t["value"] = num(cell.value);
      top.push_back(t);
    }
    j["top_segments"] = top;
    io::write_json(c.out / ("glocal_" + cls + ".json"), j);
    c.log("glocal " + cls + ": " + std::to_string(g.sample_ids.size()) + " samples, top cell " +
          (g.top.empty() ? std::string("none")
                         : std::string(kLeadNames[g.top[0].lead]) + "/" + std::string(segment_name(g.top[0].segment))));
  }
}

Json tcav_defaults() {
  Json j;
  j["seed"] = 0;
  j["dataset"] = "";
  j["arch"] = "lenet";
  j["labels"] = kDefaultLabels;
  j["planted"] = "";
  j["concepts"] = {"SLI-LVH", "LI-LVH", "RS-LVH", "S12-LVH", "R56-LVH", "QRS-CLBBB", "V2V3-MI", "RPEAK-MI",
                   "QPEAK-MI", "QWAVES-MI", "SEX=FEMALE", "AGE>75", "random"};
  j["rules_file"] = "";
  j["layers"] = Json::array();
  j["classes"] = Json::array();
  j["models"] = 10;
  j["cavs"] = 10;
  j["n_pos"] = 50;
  j["n_neg"] = 50;
  j["epochs"] = 10;
  j["batch_size"] = 32;
  j["lr"] = 1e-3;
  j["crop_length"] = 250;
  return j;
}

void cmd_tcav(Ctx& c) {
  const auto ds = open_dataset(c.cfg);
  const std::uint64_t seed = get<std::uint64_t>(c.cfg, "seed");
  concepts::RuleSet rules;
  const auto rules_file = get<std::string>(c.cfg, "rules_file");
  try {
    rules = rules_file.empty() ? concepts::RuleSet::builtin() : concepts::RuleSet::parse(io::read_text(rules_file));
  } catch (const concepts::RuleSyntaxError& e) {
    throw ConfigError(std::string("rules_file: ") + e.what());
  }
  auto canonical = [&](const std::string& name, const char* key) {
    if (lower(name) == "random") return std::string("random");
    for (const auto& n : rules.names())
      if (lower(n) == lower(name)) return n;
    throw ConfigError(std::string(key) + ": unknown concept '" + name + "'");
  };
  const auto pool = ds.indices(Split::Train);
  auto held = ds.indices(Split::Valid);
  for (std::size_t i : ds.indices(Split::Test)) held.push_back(i);
  std::sort(held.begin(), held.end());
  for (std::size_t i : pool)
    if (ds.records[i].annotation.empty()) throw ConfigError("dataset: concept rules need annotated records");

  std::vector<EcgFeatures> pool_features(pool.size()), held_features(held.size());
  parallel_for(pool.size(), c.jobs, [&](std::size_t j) { pool_features[j] = extract_features(ds.records[pool[j]]); });
  parallel_for(held.size(), c.jobs, [&](std::size_t j) { held_features[j] = extract_features(ds.records[held[j]]); });

  tcav::TcavData data;
  tcav::TcavConfig tc;
  tc.seed = seed;
  const auto planted = get<std::string>(c.cfg, "planted");
  std::vector<std::string> labels;
  if (!planted.empty()) {
    const auto rule = canonical(planted, "planted");
    if (rule == "random") throw ConfigError("planted: the random concept cannot define labels");
    labels = {rule};
    for (std::size_t j = 0; j < pool.size(); ++j) {
      data.train.inputs.push_back(ds.records[pool[j]].signal);
      data.train.targets.push_back({rules.evaluate(rule, pool_features[j]) ? 1.0 : 0.0});
    }
    for (std::size_t j = 0; j < held.size(); ++j) {
      data.class_samples.push_back(ds.records[held[j]].signal);
      data.class_labels.push_back({rules.evaluate(rule, held_features[j]) ? 1 : 0});
    }
  } else {
    labels = get<std::vector<std::string>>(c.cfg, "labels");
    if (labels.empty()) throw ConfigError("labels: at least one label required");
    data.train = label_set(ds, pool, labels);
    for (std::size_t i : held) {
      data.class_samples.push_back(ds.records[i].signal);
      std::vector<int> y;
      for (const auto& l : labels) y.push_back(ds.records[i].has_label(l));
      data.class_labels.push_back(y);
    }
  }
  for (std::size_t i : pool) data.concept_pool.push_back(ds.records[i].signal);

  const auto arch = get<std::string>(c.cfg, "arch");
  tc.arch = make_arch(arch, labels.size(), nn::Head::SigmoidMultilabel);
  tc.train = train_config(c.cfg, 0);
  tc.class_names = labels;
  tc.layers = get<std::vector<std::string>>(c.cfg, "layers");
  if (tc.layers.empty())
    tc.layers = arch == "lenet" ? std::vector<std::string>{"relu1", "relu2", "relu3", "relu4"}
                                : std::vector<std::string>{"block2", "block3", "block4", "gap"};
  {
    const nn::Model probe(tc.arch, 0);
    for (const auto& l : tc.layers) {
      try {
        probe.position_of(l);
      } catch (const std::exception&) {
        throw ConfigError("layers: '" + l + "' is not a layer of " + arch);
      }
    }
  }
  for (const auto& cls : get<std::vector<std::string>>(c.cfg, "classes"))
    tc.classes.push_back(label_index(labels, cls, "classes"));
  if (tc.classes.empty())
    for (std::size_t k = 0; k < labels.size(); ++k) tc.classes.push_back(k);
  tc.n_models = get_count(c.cfg, "models", 1);
  tc.n_cavs = get_count(c.cfg, "cavs", 1);
  tc.n_pos = get_count(c.cfg, "n_pos", 5);
  tc.n_neg = get_count(c.cfg, "n_neg", 5);
  tc.jobs = c.jobs;

  std::vector<tcav::ConceptDef> defs;
  io::Csv mcc({"concept", "label", "tp", "fp", "fn", "tn", "mcc"});
  for (const auto& raw : get<std::vector<std::string>>(c.cfg, "concepts")) {
    const auto name = canonical(raw, "concepts");
    tcav::ConceptDef d;
    d.name = name;
    if (name == "random") {
      Rng rng(substream_seed(seed, "random-concept"));
      for (std::size_t j = 0; j < pool.size(); ++j) d.membership.push_back(rng.uniform() < 0.5);
    } else {
      for (const auto& f : pool_features) d.membership.push_back(rules.evaluate(name, f));
    }
    for (std::size_t q = 0; q < labels.size(); ++q) {
      concepts::Contingency ct;
      for (std::size_t j = 0; j < pool.size(); ++j) {
        const bool y = data.train.targets[j][q] > 0.5;
        (d.membership[j] ? (y ? ct.tp : ct.fp) : (y ? ct.fn : ct.tn))++;
      }
      mcc.row({name, labels[q], std::to_string(ct.tp), std::to_string(ct.fp), std::to_string(ct.fn),
               std::to_string(ct.tn), fmt(concepts::mcc(ct))});
    }
    std::size_t npos = std::count(d.membership.begin(), d.membership.end(), true);
    c.log("concept " + name + ": " + std::to_string(npos) + " of " + std::to_string(pool.size()) + " positives");
    defs.push_back(std::move(d));
  }
  mcc.save(c.out / "mcc.csv");
  c.log("protocol: " + std::to_string(tc.n_models) + " models x " + std::to_string(tc.n_cavs) + " CAVs");
  const auto grid = tcav::significance_protocol(data, defs, tc);

  io::Csv table({"arch", "layer", "concept", "class", "available", "mean", "q25", "q75", "iqr", "cav_accuracy",
                 "starred", "greyed"});
  Json cells = Json::array();
  for (const auto& cell : grid.cells) {
    const auto& s = cell.stats;
    table.row({cell.arch, cell.layer, cell.concept_name, cell.class_name, cell.available ? "1" : "0",
               fmt(cell.available ? s.mean : NAN), fmt(cell.available ? s.q25 : NAN),
               fmt(cell.available ? s.q75 : NAN), fmt(cell.available ? s.iqr : NAN),
               fmt(cell.available ? s.mean_accuracy : NAN), cell.available && s.starred ? "1" : "0",
               cell.available && s.greyed ? "1" : "0"});
    Json j;
    j["arch"] = cell.arch;
    j["layer"] = cell.layer;
    j["concept"] = cell.concept_name;
    j["class"] = cell.class_name;
    j["available"] = cell.available;
    if (!cell.available) {
      j["reason"] = cell.reason;
    } else {
      j["scores"] = cell.scores;
      j["cav_accuracies"] = cell.accuracies;
      j["mean"] = num(s.mean);
      j["q25"] = num(s.q25);
      j["q75"] = num(s.q75);
      j["iqr"] = num(s.iqr);
      j["mean_accuracy"] = num(s.mean_accuracy);
      j["starred"] = s.starred;
      j["greyed"] = s.greyed;
      if (s.starred) c.log("  * " + cell.layer + " / " + cell.concept_name + " / " + cell.class_name + " mean " + fmt(s.mean));
    }
    cells.push_back(j);
  }
  table.save(c.out / "tcav_grid.csv");
  Json g;
  g["cells"] = cells;
  io::write_json(c.out / "tcav_grid.json", g);
}

Json discover_defaults() {
  Json j;
  j["seed"] = 0;
  j["dataset"] = "";
  j["model"] = "";
  j["superclass"] = "mi-like";
  j["subclasses"] = {"ami-like", "imi-like"};
  j["representations"] = {"attribution", "input", "hidden"};
  j["method"] = "ig";
  j["ig_steps"] = 64;
  j["gradcam_layer"] = "input";
  j["lrp_epsilon"] = 1e-6;
  j["hidden_layer"] = "gap";
  j["split"] = "heldout";
  j["ids"] = Json::array();
  j["variance"] = 0.75;
  j["alpha"] = 0.01;
  return j;
}

void cmd_discover(Ctx& c) {
  const auto ds = open_dataset(c.cfg);
  const auto lm = open_model(c.cfg);
  const auto super = get<std::string>(c.cfg, "superclass");
  const std::size_t k = label_index(lm.labels, super, "superclass");
  const auto subs = get<std::vector<std::string>>(c.cfg, "subclasses");
  if (subs.size() < 2) throw ConfigError("subclasses: at least two subclasses required");
  const auto method = method_of(get<std::string>(c.cfg, "method"), "method");
  const auto opts = attribution_options(c.cfg);
  const double variance = get<double>(c.cfg, "variance");
  if (!(variance > 0.0 && variance <= 1.0)) throw ConfigError("variance: must lie in (0, 1]");
  const double alpha = get<double>(c.cfg, "alpha");
  const std::uint64_t seed = get<std::uint64_t>(c.cfg, "seed");
  std::vector<disc::RepKind> kinds;
  for (const auto& r : get<std::vector<std::string>>(c.cfg, "representations")) {
    if (r == "attribution") kinds.push_back(disc::RepKind::AttributionBeat);
    else if (r == "input") kinds.push_back(disc::RepKind::InputBeat);
    else if (r == "hidden") kinds.push_back(disc::RepKind::Hidden);
    else throw ConfigError("representations: expected attribution, input or hidden, got '" + r + "'");
  }
  std::vector<std::size_t> idx;
  std::vector<int> y;
  for (std::size_t i : select_records(ds, c.cfg)) {
    if (!ds.records[i].has_label(super)) continue;
    int cls = -1;
    for (std::size_t s = 0; s < subs.size(); ++s)
      if (ds.records[i].has_label(subs[s])) cls = cls < 0 ? static_cast<int>(s) : -2;
    if (cls >= 0) {
      idx.push_back(i);
      y.push_back(cls);
    }
  }
  if (idx.size() <= subs.size()) throw ConfigError("too few records carry exactly one of the subclasses");
  c.log("discovery on " + std::to_string(idx.size()) + " " + super + " records");
  const nn::Model model = nn::fold_batchnorm(lm.model);
  const std::string hidden = get<std::string>(c.cfg, "hidden_layer");
  try {
    model.position_of(hidden);
  } catch (const std::exception&) {
    throw ConfigError("hidden_layer: '" + hidden + "' is not a layer of the model");
  }

  io::Csv clusters({"sample_id", "representation", "assignment", "label"});
  io::Csv scatter({"representation", "sample_id", "pc1", "pc2", "label"});
  Json report = Json::array();
  std::vector<int> attribution_assign;
  for (auto kind : kinds) {
    const std::string name(disc::to_string(kind));
    const auto x = disc::build_representation(kind, model, ds, idx, k, method, opts, hidden, c.jobs);
    const auto g = disc::cluster_grid_search(x, y, subs.size(), substream_seed(seed, "clustering"), variance);
    for (std::size_t j = 0; j < idx.size(); ++j)
      clusters.row({ds.records[idx[j]].id, name, std::to_string(g.best.assignments[j]), subs[static_cast<std::size_t>(y[j])]});
    const auto p2 = disc::pca_project(x, 1.0, false);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto r = static_cast<Eigen::Index>(j);
      scatter.row({name, ds.records[idx[j]].id, fmt(p2.projected(r, 0)),
                   fmt(p2.k > 1 ? p2.projected(r, 1) : 0.0), subs[static_cast<std::size_t>(y[j])]});
    }
    Json e;
    e["representation"] = name;
    e["dimension"] = x.cols();
    e["algorithm"] = std::string(disc::to_string(g.best.algorithm));
    e["whiten"] = g.best.whiten;
    e["pca_dim"] = g.best.pca_dim;
    e["acc"] = num(g.best.acc);
    e["ars"] = num(g.best.ars);
    Json grid = Json::array();
    for (const auto& ge : g.entries) {
      Json gj;
      gj["algorithm"] = std::string(disc::to_string(ge.algorithm));
      gj["whiten"] = ge.whiten;
      gj["acc"] = num(ge.acc);
      gj["ars"] = num(ge.ars);
      grid.push_back(gj);
    }
    e["grid"] = grid;
    report.push_back(e);
    c.log("  " + name + ": ACC " + fmt(g.best.acc) + " ARS " + fmt(g.best.ars) + " (" +
          std::string(disc::to_string(g.best.algorithm)) + (g.best.whiten ? ", whitened" : "") + ")");
    if (kind == disc::RepKind::AttributionBeat) attribution_assign = g.best.assignments;
  }
  clusters.save(c.out / "clusters.csv");
  scatter.save(c.out / "pca2d.csv");
  Json rj;
  rj["superclass"] = super;
  rj["subclasses"] = subs;
  rj["samples"] = idx.size();
  rj["representations"] = report;
  io::write_json(c.out / "cluster_report.json", rj);

  io::Csv regions({"lead", "tau_start", "tau_end", "p", "effect"});
  if (!attribution_assign.empty() && subs.size() == 2) {
    std::vector<Tensor> beats(idx.size());
    parallel_for(idx.size(), c.jobs, [&](std::size_t j) {
      const auto& rec = ds.records[idx[j]];
      const Tensor a = attr::attribute(model, rec.signal, k, method, opts).values;
      beats[j] = glocal::median_beat(glocal::crop_beats(a, rec.r_peaks, rec.id));
    });
    std::size_t n0 = std::count(attribution_assign.begin(), attribution_assign.end(), 0);
    if (n0 >= 2 && attribution_assign.size() - n0 >= 2) {
      for (const auto& r : disc::cluster_difference_regions(beats, attribution_assign, alpha))
        regions.row({std::string(kLeadNames[r.lead]), std::to_string(r.tau_begin), std::to_string(r.tau_end),
                     fmt(r.p), fmt(r.effect)});
    } else {
      c.log("  a cluster has fewer than two members; no regions computed");
    }
  }
  regions.save(c.out / "regions.csv");
}

Json report_defaults() {
  Json j;
  j["runs"] = Json::array();
  return j;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& line : io::split(io::read_text(p), '\n'))
    if (!line.empty()) rows.push_back(io::split(line, ','));
  return rows;
}

void cmd_report(Ctx& c) {
  const auto runs = get<std::vector<std::string>>(c.cfg, "runs");
  if (runs.empty()) throw ConfigError("runs: at least one run directory required");
  std::size_t i = 0;
  for (const auto& run : runs) {
    const fs::path dir(run);
    if (!fs::is_regular_file(dir / "config.json")) throw io::NotFound("'" + run + "' is not a run directory");
    const auto cfg = io::read_json(dir / "config.json");
    const auto cmd = cfg.value("command", std::string());
    const std::string prefix = "run" + std::to_string(i++) + "_" + cmd;
    if (cmd == "sanity") {
      const auto rows = read_csv_rows(dir / "spatial.csv");
      std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
      std::vector<std::pair<std::string, std::string>> order;
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto key = std::make_pair(rows[r][0], rows[r][1]);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(std::stod(rows[r][3]));
      }
      io::Csv box({"method", "lead", "q05", "q25", "q50", "q75", "q95"});
      for (const auto& key : order) {
        const auto& v = groups[key];
        box.row({key.first, key.second, fmt(stats::quantile(v, 0.05)), fmt(stats::quantile(v, 0.25)),
                 fmt(stats::quantile(v, 0.5)), fmt(stats::quantile(v, 0.75)), fmt(stats::quantile(v, 0.95))});
      }
      box.save(c.out / (prefix + "_spatial_boxplot.csv"));
      io::write_text(c.out / (prefix + "_temporal.csv"), io::read_text(dir / "temporal.csv"));
      io::write_text(c.out / (prefix + "_median_beat.csv"), io::read_text(dir / "median_beat.csv"));
    } else if (cmd == "tcav") {
      io::write_text(c.out / (prefix + "_heat.csv"), io::read_text(dir / "tcav_grid.csv"));
    } else if (cmd == "glocal") {
      io::Csv top({"class", "rank", "lead", "segment", "value"});
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename().string().starts_with("glocal_")) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        const auto j = io::read_json(f);
        std::size_t rank = 1;
        for (const auto& t : j["top_segments"])
          top.row({j["class"].get<std::string>(), std::to_string(rank++), t["lead"].get<std::string>(),
                   t["segment"].get<std::string>(), num_text(t["value"])});
      }
      top.save(c.out / (prefix + "_top_segments.csv"));
    } else if (cmd == "discover") {
      const auto j = io::read_json(dir / "cluster_report.json");
      io::Csv scores({"representation", "algorithm", "whiten", "acc", "ars"});
      for (const auto& e : j["representations"])
        scores.row({e["representation"].get<std::string>(), e["algorithm"].get<std::string>(),
                    e["whiten"].get<bool>() ? "1" : "0", num_text(e["acc"]), num_text(e["ars"])});
      scores.save(c.out / (prefix + "_scores.csv"));
      io::write_text(c.out / (prefix + "_scatter.csv"), io::read_text(dir / "pca2d.csv"));
      io::write_text(c.out / (prefix + "_regions.csv"), io::read_text(dir / "regions.csv"));
    } else {
      c.log("skipping '" + run + "': no figure data for command '" + cmd + "'");
      continue;
    }
    c.log("collected " + cmd + " run '" + run + "'");
  }
}

struct Command {
  std::function<Json()> defaults;
  std::function<void(Ctx&)> run;
};

const std::map<std::string, Command, std::less<>>& registry() {
  static const std::map<std::string, Command, std::less<>> r = {
      {"synth", {synth_defaults, cmd_synth}},         {"train", {train_defaults, cmd_train}},
      {"attribute", {attribute_defaults, cmd_attribute}}, {"delineate", {delineate_defaults, cmd_delineate}},
      {"sanity", {sanity_defaults, cmd_sanity}},      {"glocal", {glocal_defaults, cmd_glocal}},
      {"tcav", {tcav_defaults, cmd_tcav}},            {"discover", {discover_defaults, cmd_discover}},
      {"report", {report_defaults, cmd_report}},
  };
  return r;
}

const Command& lookup(std::string_view command) {
  const auto it = registry().find(command);
  if (it == registry().end()) throw ConfigError("unknown command '" + std::string(command) + "'");
  return it->second;
}

bool same_kind(const Json& def, const Json& v) {
  if (def.is_number()) return v.is_number() && (!def.is_number_integer() || v.is_number_integer());
  if (def.is_array()) {
    if (!v.is_array()) return false;
    if (def.empty()) return true;
    for (const auto& e : v)
      if (!same_kind(def.front(), e)) return false;
    return true;
  }
  return def.type() == v.type();
}

}  // namespace

SynthConfig synth_config(const Json& cfg) {
  SynthConfig sc;
  sc.seed = get<std::uint64_t>(cfg, "seed");
  sc.classes = get<std::vector<std::string>>(cfg, "classes");
  sc.duration_s = get<double>(cfg, "duration_s");
  sc.heart_rate = get_range(cfg, "heart_rate");
  sc.noise_sd = get<double>(cfg, "noise_sd");
  sc.age = get_range(cfg, "age");
  sc.female_fraction = get<double>(cfg, "female_fraction");
  const auto sf = get<std::vector<double>>(cfg, "split_fractions");
  if (sf.size() != 3) throw ConfigError("split_fractions: expected three fractions");
  std::copy(sf.begin(), sf.end(), sc.split_fractions.begin());
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return sc;
}

const std::vector<std::string>& commands() {
  static const std::vector<std::string> c = {"synth",  "train",  "attribute", "delineate", "sanity",
                                             "glocal", "tcav",   "discover",  "report"};
  return c;
}

Json defaults(std::string_view command) { return lookup(command).defaults(); }

Json resolve(std::string_view command, const Json& overrides) {
  const Json def = defaults(command);
  if (!overrides.is_object()) throw ConfigError("configuration must be a JSON object");
  Json out;
  out["command"] = std::string(command);
  for (const auto& [key, value] : def.items()) out[key] = value;
  for (const auto& [key, value] : overrides.items()) {
    if (key == "command") {
      if (!value.is_string() || value.get<std::string>() != command)
        throw ConfigError("command: configuration belongs to '" + value.dump() + "', not '" + std::string(command) + "'");
      continue;
    }
    if (!def.contains(key)) throw ConfigError("unknown key '" + key + "' for command '" + std::string(command) + "'");
    if (!same_kind(def[key], value))
      throw ConfigError(key + ": expected a value like " + def[key].dump() + ", got " + value.dump());
    out[key] = value;
  }
  return out;
}

void run(std::string_view command, const Json& overrides, const fs::path& out, std::size_t jobs) {
  const Command& cmd = lookup(command);
  const Json cfg = resolve(command, overrides);
  if (out.empty()) throw ConfigError("out: an output directory is required");
  fs::create_directories(out);
  io::write_json(out / "config.json", cfg);
  Log log(out / "log.txt");
  log(std::string(command));
  Ctx ctx{cfg, out, jobs == 0 ? 1 : jobs, log};
  cmd.run(ctx);
  log("done");
}

}  // namespace ecgxai::pipelines
