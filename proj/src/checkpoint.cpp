#include "ecgxai/checkpoint.hpp"

#include <stdexcept>

namespace ecgxai {

namespace fs = std::filesystem;
using io::Json;

namespace {

Json layer_to_json(const nn::LayerSpec& l) {
  Json j;
  j["kind"] = std::string(nn::to_string(l.kind));
  j["name"] = l.name;
  switch (l.kind) {
    case nn::LayerKind::Conv1d:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case nn::LayerKind::Linear:
      j["in_features"] = l.in_channels;
      j["out_features"] = l.out_channels;
      break;
    case nn::LayerKind::BatchNorm1d:
      j["channels"] = l.in_channels;
      break;
    case nn::LayerKind::MaxPool1d:
    case nn::LayerKind::AvgPool1d:
      j["window"] = l.window;
      break;
    case nn::LayerKind::ResidualBlock: {
      Json body = Json::array();
      for (const auto& b : l.body) body.push_back(layer_to_json(b));
      j["body"] = body;
      break;
    }
    case nn::LayerKind::Relu:
    case nn::LayerKind::GlobalAvgPool:
      break;
  }
  return j;
}

nn::LayerSpec layer_from_json(const Json& j) {
  nn::LayerSpec l;
  l.kind = nn::layer_kind_from_string(j.at("kind").get<std::string>());
  l.name = j.at("name").get<std::string>();
  switch (l.kind) {
    case nn::LayerKind::Conv1d:
      l.in_channels = j.at("in_channels").get<std::size_t>();
      l.out_channels = j.at("out_channels").get<std::size_t>();
      l.kernel = j.at("kernel").get<std::size_t>();
      l.stride = j.at("stride").get<std::size_t>();
      l.padding = j.at("padding").get<std::size_t>();
      break;
    case nn::LayerKind::Linear:
      l.in_channels = j.at("in_features").get<std::size_t>();
      l.out_channels = j.at("out_features").get<std::size_t>();
      break;
    case nn::LayerKind::BatchNorm1d:
      l.in_channels = j.at("channels").get<std::size_t>();
      break;
    case nn::LayerKind::MaxPool1d:
    case nn::LayerKind::AvgPool1d:
      l.window = j.at("window").get<std::size_t>();
      break;
    case nn::LayerKind::ResidualBlock:
      for (const auto& b : j.at("body")) l.body.push_back(layer_from_json(b));
      break;
    case nn::LayerKind::Relu:
    case nn::LayerKind::GlobalAvgPool:
      break;
  }
  return l;
}

}  // namespace

Json spec_to_json(const nn::ModelSpec& spec) {
  Json j;
  j["arch"] = spec.arch;
  j["head"] = std::string(nn::to_string(spec.head));
  j["output_dim"] = spec.output_dim;
  j["input_channels"] = spec.input_channels;
  j["min_length"] = spec.min_length;
  Json layers = Json::array();
  for (const auto& l : spec.layers) layers.push_back(layer_to_json(l));
  j["layers"] = layers;
  return j;
}

nn::ModelSpec spec_from_json(const Json& j) {
  nn::ModelSpec s;
  s.arch = j.at("arch").get<std::string>();
  s.head = nn::head_from_string(j.at("head").get<std::string>());
  s.output_dim = j.at("output_dim").get<std::size_t>();
  s.input_channels = j.at("input_channels").get<std::size_t>();
  s.min_length = j.at("min_length").get<std::size_t>();
  for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
  return s;
}

void save_checkpoint(const nn::Model& model, const fs::path& dir, const Json& extra) {
  fs::create_directories(dir);
  Json m;
  m["format"] = "ecgxai-checkpoint";
  m["version"] = 1;
  m["arch"] = model.spec().arch;
  m["seed"] = model.seed();
  m["folded"] = model.folded();
  m["spec"] = spec_to_json(model.spec());
  const auto names = model.parameter_names();
  const auto params = model.parameters();
  Json plist = Json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string file = names[i] + ".bin";
    io::write_f64(dir / file, params[i]->values());
    Json p;
    p["name"] = names[i];
    p["file"] = file;
    p["shape"] = params[i]->shape();
    plist.push_back(p);
  }
  m["parameters"] = plist;
  for (const auto& [k, v] : extra.items()) m[k] = v;
  io::write_json(dir / "manifest.json", m);
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw io::NotFound("model directory '" + dir.string() + "' does not exist");
  Json m = io::read_json(dir / "manifest.json");
  if (m.value("format", "") != "ecgxai-checkpoint")
    throw std::invalid_argument("'" + dir.string() + "' is not a model checkpoint");
  const nn::ModelSpec spec = spec_from_json(m.at("spec"));
  nn::validate(spec);
  std::vector<std::unique_ptr<nn::Layer>> layers;
  for (const auto& l : spec.layers) layers.push_back(nn::make_layer(l));
  nn::Model model(spec, std::move(layers), m.at("seed").get<std::uint64_t>(), m.at("folded").get<bool>());
  const auto params = model.parameters();
  const auto names = model.parameter_names();
  const auto& plist = m.at("parameters");
  if (plist.size() != params.size())
    throw std::invalid_argument("checkpoint '" + dir.string() + "' lists " + std::to_string(plist.size()) +
                                " parameters, the spec needs " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (plist[i].at("name").get<std::string>() != names[i])
      throw std::invalid_argument("checkpoint parameter " + std::to_string(i) + " is '" +
                                  plist[i].at("name").get<std::string>() + "', expected '" + names[i] + "'");
    std::vector<double> v = io::read_f64(dir / plist[i].at("file").get<std::string>());
    if (v.size() != params[i]->size())
      throw std::invalid_argument("parameter file for '" + names[i] + "' has " + std::to_string(v.size()) +
                                  " values, expected " + std::to_string(params[i]->size()));
    params[i]->storage() = std::move(v);
  }
  return {std::move(model), std::move(m)};
}

}  // namespace ecgxai
