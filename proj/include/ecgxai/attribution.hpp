#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ecgxai/nn.hpp"

namespace ecgxai::attr {

enum class Method { Saliency, IntegratedGradients, GradCam, LrpEpsilon, LrpZPlus };

std::string_view to_string(Method m);
/// Accepts saliency, ig, gradcam, lrp (same as lrp-eps), lrp-eps, lrp-zplus.
Method method_from_string(std::string_view name);

struct Options {
  std::size_t ig_steps = 64;
  std::optional<Tensor> baseline;  // zero signal when unset
  std::string gradcam_layer = "input";
  double lrp_epsilon = 1e-6;
};

struct AttributionMap {
  Tensor values;  // [T, 12]
  Method method = Method::Saliency;
  std::size_t output_index = 0;
  Options options;
};

/// |dF_k/dx|.
Tensor saliency(const nn::Model& model, const Tensor& x, std::size_t k);

/// Midpoint-rule integrated gradients from `baseline` (zeros when empty).
Tensor integrated_gradients(const nn::Model& model, const Tensor& x, std::size_t k,
                            const Tensor& baseline, std::size_t steps);

/// Grad-CAM at the trace position `position`. Position 0 gives the per-lead
/// input variant ReLU(alpha_l * x_tl); deeper positions give a channel-averaged
/// map, linearly upsampled to T and repeated over the leads.
Tensor gradcam(const nn::Model& model, const Tensor& x, std::size_t k, std::size_t position);

/// Layer-wise relevance propagation of the logit F_k. The model must be
/// batchnorm-free (see nn::fold_batchnorm).
Tensor lrp(const nn::Model& model, const Tensor& x, std::size_t k, const nn::LrpConfig& cfg = {});

/// Trace position addressed by a gradcam layer name, validated.
std::size_t gradcam_position(const nn::Model& model, std::string_view layer);

AttributionMap attribute(const nn::Model& model, const Tensor& x, std::size_t k, Method method,
                         const Options& opts = {});

/// Maps for several outputs of one input, sharing forward passes.
std::vector<Tensor> attribute_outputs(const nn::Model& model, const Tensor& x,
                                      std::span<const std::size_t> outputs, Method method,
                                      const Options& opts = {});

}  // namespace ecgxai::attr
