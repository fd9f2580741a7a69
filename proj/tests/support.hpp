#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ecgxai/nn.hpp"
#include "ecgxai/rng.hpp"
#include "ecgxai/synth.hpp"

namespace ecgxai::testing {

inline Tensor random_tensor(Tensor::Shape shape, Rng& rng, double sd = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

// Gives batchnorm layers non-trivial running statistics and affine terms.
inline void randomize_batchnorm(nn::Model& model, Rng& rng) {
  const auto names = model.parameter_names();
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& n = names[i];
    auto ends = [&](const std::string& suffix) {
      return n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    for (double& v : params[i]->values()) {
      if (ends("running_var")) v = rng.uniform(0.5, 2.0);
      else if (ends("running_mean")) v = rng.normal(0.0, 0.3);
      else if (ends("gamma")) v = rng.uniform(0.5, 1.5);
      else if (ends("beta")) v = rng.normal(0.0, 0.2);
    }
  }
}

inline void zero_biases(nn::Model& model) {
  const auto names = model.parameter_names();
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (names[i].size() >= 4 && names[i].compare(names[i].size() - 4, 4, "bias") == 0) params[i]->fill(0.0);
}

// |a - b| relative to the larger magnitude, with an absolute floor.
inline double relative_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Feature vector with every name present; amplitudes and durations zero.
inline EcgFeatures neutral_features() {
  EcgFeatures f;
  for (const auto& n : feature_names()) f.values[n] = 0.0;
  f.values["AGE"] = 50.0;
  f.values["SEX"] = 0.0;
  return f;
}

}  // namespace ecgxai::testing
