#include "ecgxai/ecgxai.h"

#include <cstring>
#include <string>

#include "ecgxai/attribution.hpp"
#include "ecgxai/checkpoint.hpp"
#include "ecgxai/pipelines.hpp"
#include "ecgxai/synth.hpp"

struct ecgxai_dataset {
  ecgxai::EcgDataset data;
};

struct ecgxai_model {
  ecgxai::nn::Model model;
  ecgxai::nn::Model folded;
};

namespace {

thread_local std::string g_error;

ecgxai_status fail(ecgxai_status s, const char* what) {
  g_error = what;
  return s;
}

template <class F>
ecgxai_status guarded(F&& f) {
  try {
    f();
    g_error.clear();
    return ECGXAI_OK;
  } catch (const ecgxai::io::NotFound& e) {
    return fail(ECGXAI_NOT_FOUND, e.what());
  } catch (const ecgxai::io::Json::exception& e) {
    return fail(ECGXAI_INVALID_ARGUMENT, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(ECGXAI_INVALID_ARGUMENT, e.what());
  } catch (const std::out_of_range& e) {
    return fail(ECGXAI_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(ECGXAI_RUNTIME_ERROR, e.what());
  } catch (...) {
    return fail(ECGXAI_RUNTIME_ERROR, "unknown error");
  }
}

ecgxai::io::Json parse_object(const char* text) {
  if (text == nullptr || *text == '\0') return ecgxai::io::Json::object();
  auto j = ecgxai::io::Json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("configuration must be a JSON object");
  return j;
}

char* dup(const std::string& s) {
  char* p = new char[s.size() + 1];
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

ecgxai::Tensor wrap_signal(const double* signal, std::size_t length) {
  require(signal != nullptr && length > 0, "signal must be non-empty");
  return ecgxai::Tensor({length, ecgxai::kNumLeads},
                        std::vector<double>(signal, signal + length * ecgxai::kNumLeads));
}

}  // namespace

extern "C" {

const char* ecgxai_last_error(void) { return g_error.c_str(); }

const char* ecgxai_version(void) { return "1.0.0"; }

void ecgxai_string_free(char* s) { delete[] s; }

ecgxai_status ecgxai_dataset_load(const char* dir, ecgxai_dataset** out) {
  return guarded([&] {
    require(dir != nullptr && out != nullptr, "null argument");
    *out = new ecgxai_dataset{ecgxai::load_dataset(dir)};
  });
}

ecgxai_status ecgxai_dataset_generate(const char* config_json, size_t n, ecgxai_dataset** out) {
  return guarded([&] {
    require(out != nullptr, "null argument");
    require(n > 0, "n must be positive");
    const auto cfg = ecgxai::pipelines::resolve("synth", parse_object(config_json));
    *out = new ecgxai_dataset{ecgxai::generate(ecgxai::pipelines::synth_config(cfg), n)};
  });
}

void ecgxai_dataset_free(ecgxai_dataset* ds) { delete ds; }

size_t ecgxai_dataset_size(const ecgxai_dataset* ds) { return ds ? ds->data.size() : 0; }

ecgxai_status ecgxai_record_length(const ecgxai_dataset* ds, size_t index, size_t* length) {
  return guarded([&] {
    require(ds != nullptr && length != nullptr, "null argument");
    *length = ds->data.records.at(index).length();
  });
}

ecgxai_status ecgxai_record_signal(const ecgxai_dataset* ds, size_t index, double* out, size_t capacity) {
  return guarded([&] {
    require(ds != nullptr && out != nullptr, "null argument");
    const auto& v = ds->data.records.at(index).signal.values();
    require(capacity >= v.size(), "output buffer too small");
    std::copy(v.begin(), v.end(), out);
  });
}

ecgxai_status ecgxai_model_load(const char* dir, ecgxai_model** out) {
  return guarded([&] {
    require(dir != nullptr && out != nullptr, "null argument");
    auto ck = ecgxai::load_checkpoint(dir);
    auto folded = ecgxai::nn::fold_batchnorm(ck.model);
    *out = new ecgxai_model{std::move(ck.model), std::move(folded)};
  });
}

void ecgxai_model_free(ecgxai_model* m) { delete m; }

size_t ecgxai_model_outputs(const ecgxai_model* m) { return m ? m->model.spec().output_dim : 0; }

ecgxai_status ecgxai_predict(const ecgxai_model* m, const double* signal, size_t length, double* out) {
  return guarded([&] {
    require(m != nullptr && out != nullptr, "null argument");
    const auto y = ecgxai::nn::forward(m->model, wrap_signal(signal, length), false).output;
    std::copy(y.values().begin(), y.values().end(), out);
  });
}

ecgxai_status ecgxai_attribute(const ecgxai_model* m, const double* signal, size_t length, size_t output,
                               const char* method, const char* options_json, double* out) {
  return guarded([&] {
    require(m != nullptr && out != nullptr && method != nullptr, "null argument");
    require(output < m->model.spec().output_dim, "output index out of range");
    const auto meth = ecgxai::attr::method_from_string(method);
    const auto j = parse_object(options_json);
    ecgxai::attr::Options opts;
    for (const auto& [key, value] : j.items()) {
      if (key == "ig_steps") opts.ig_steps = value.get<std::size_t>();
      else if (key == "gradcam_layer") opts.gradcam_layer = value.get<std::string>();
      else if (key == "lrp_epsilon") opts.lrp_epsilon = value.get<double>();
      else throw std::invalid_argument("unknown attribution option '" + key + "'");
    }
    const bool lrp = meth == ecgxai::attr::Method::LrpEpsilon || meth == ecgxai::attr::Method::LrpZPlus;
    const auto map =
        ecgxai::attr::attribute(lrp ? m->folded : m->model, wrap_signal(signal, length), output, meth, opts);
    std::copy(map.values.values().begin(), map.values.values().end(), out);
  });
}

ecgxai_status ecgxai_run(const char* command, const char* config_json, const char* out_dir, size_t jobs) {
  return guarded([&] {
    require(command != nullptr && out_dir != nullptr, "null argument");
    ecgxai::pipelines::run(command, parse_object(config_json), out_dir, jobs);
  });
}

ecgxai_status ecgxai_command_defaults(const char* command, char** out_json) {
  return guarded([&] {
    require(command != nullptr && out_json != nullptr, "null argument");
    *out_json = dup(ecgxai::pipelines::defaults(command).dump(2));
  });
}

ecgxai_status ecgxai_resolve_config(const char* command, const char* config_json, char** out_json) {
  return guarded([&] {
    require(command != nullptr && out_json != nullptr, "null argument");
    *out_json = dup(ecgxai::pipelines::resolve(command, parse_object(config_json)).dump(2));
  });
}

}  // extern "C"
