#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ecgxai/ecgxai.h"
#include "json.hpp"

using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int exit_code(ecgxai_status s) {
  if (s == ECGXAI_OK) return 0;
  return s == ECGXAI_RUNTIME_ERROR ? kExitRuntime : kExitUsage;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Json command_defaults(const std::string& command) {
  char* text = nullptr;
  if (ecgxai_command_defaults(command.c_str(), &text) != ECGXAI_OK) throw UsageError(ecgxai_last_error());
  Json j = Json::parse(text);
  ecgxai_string_free(text);
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

Json scalar_like(const Json& def, const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (def.is_number_integer()) {
      const long long v = std::stoll(text, &used);
      if (used == text.size()) return v;
    } else if (def.is_number()) {
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else if (def.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
    } else {
      return text;
    }
  } catch (const std::exception&) {
  }
  throw UsageError(key + ": cannot read '" + text + "' as " + def.type_name());
}

Json flag_value(const Json& def, const std::string& key, const std::string& text) {
  if (!def.is_array()) return scalar_like(def, key, text);
  Json arr = Json::array();
  const Json elem = def.empty() ? Json("") : def.front();
  for (const auto& item : split_list(text)) arr.push_back(scalar_like(elem, key, item));
  return arr;
}

std::string flag_name(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return key;
}

const std::map<std::string, std::string> kSummaries = {
    {"synth", "Generate a synthetic annotated 12-lead dataset"},
    {"train", "Train a classifier on a dataset"},
    {"attribute", "Compute attribution maps for records"},
    {"delineate", "Soft segmentation maps and R-peak detection"},
    {"sanity", "Spatial/temporal specificity checks on wave-amplitude regression"},
    {"glocal", "Subgroup median beats, attribution beats and segment tables"},
    {"tcav", "Concept activation vectors with the significance protocol"},
    {"discover", "Subclass discovery by clustering attributions"},
    {"report", "Collect plot-data CSVs from finished runs"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explainability toolkit for 12-lead ECG classifiers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ecgxai_version()));

  struct Sub {
    CLI::App* app;
    Json defaults;
    std::map<std::string, std::string> flags;
  };
  std::map<std::string, Sub> subs;
  std::string config_file, out_dir;
  std::size_t jobs = 1;
  std::vector<std::string> sets;

  for (const auto& [name, summary] : kSummaries) {
    Sub s{app.add_subcommand(name, summary), command_defaults(name), {}};
    s.app->add_option("--config", config_file, "JSON configuration (e.g. a previous run's config.json)");
    s.app->add_option("--out", out_dir, "output directory (default $ECGXAI_OUT_ROOT/<command>, root 'runs')");
    s.app->add_option("--jobs", jobs, "worker thread cap")->check(CLI::PositiveNumber);
    s.app->add_option("--set", sets, "override key=value (value parsed as JSON, else string)");
    for (const auto& [key, def] : s.defaults.items()) {
      std::string help = "default " + def.dump();
      s.app->add_option("--" + flag_name(key), s.flags[key], help);
    }
    subs.emplace(name, std::move(s));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  Sub& sub = subs.at(command);
  Json overrides = Json::object();
  try {
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) {
        std::cerr << "error: cannot read config file '" << config_file << "'\n";
        return kExitUsage;
      }
      overrides = Json::parse(in);
      if (!overrides.is_object()) throw UsageError("config file must hold a JSON object");
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
      const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
      overrides[key] = Json::accept(text) ? Json::parse(text) : Json(text);
    }
    for (const auto& [key, text] : sub.flags) {
      if (sub.app->count("--" + flag_name(key)) == 0) continue;
      overrides[key] = flag_value(sub.defaults.at(key), key, text);
    }
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  if (out_dir.empty()) {
    const char* root = std::getenv("ECGXAI_OUT_ROOT");
    out_dir = std::string(root && *root ? root : "runs") + "/" + command;
  }
  const ecgxai_status st = ecgxai_run(command.c_str(), overrides.dump().c_str(), out_dir.c_str(), jobs);
  if (st != ECGXAI_OK) {
    std::cerr << "error: " << ecgxai_last_error() << '\n';
    return exit_code(st);
  }
  return 0;
}
