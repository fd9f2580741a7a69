#include "ecgxai/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ecgxai::attr {

namespace {

void check_output(const nn::Model& model, std::size_t k) {
  if (k >= model.spec().output_dim)
    throw std::out_of_range("output index " + std::to_string(k) + " out of range for " +
                            std::to_string(model.spec().output_dim) + " outputs");
}

Tensor unit_grad(const nn::ForwardTrace& trace, std::size_t k) {
  Tensor g(trace.activations.back().shape());
  g[k] = 1.0;
  return g;
}

Tensor drop_batch(const Tensor& t) { return t.reshaped({t.dim(1), t.dim(2)}); }

Tensor gradcam_from_trace(const nn::Model& model, const nn::ForwardTrace& trace, std::size_t k,
                          std::size_t position, std::size_t T) {
  const Tensor a = nn::trace_activation(trace, position);
  const Tensor g = drop_batch(model.backward(trace, unit_grad(trace, k), position, {}));
  const std::size_t Tl = a.dim(0), C = a.dim(1);
  std::vector<double> alpha(C, 0.0);
  for (std::size_t t = 0; t < Tl; ++t)
    for (std::size_t c = 0; c < C; ++c) alpha[c] += g.at(t, c);
  for (double& v : alpha) v /= static_cast<double>(Tl);

  if (position == 0) {
    Tensor out(a.shape());
    for (std::size_t t = 0; t < Tl; ++t)
      for (std::size_t c = 0; c < C; ++c) out.at(t, c) = std::max(0.0, alpha[c] * a.at(t, c));
    return out;
  }
  std::vector<double> cam(Tl, 0.0);
  for (std::size_t t = 0; t < Tl; ++t) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += alpha[c] * a.at(t, c);
    cam[t] = std::max(0.0, s / static_cast<double>(C));
  }
  const std::size_t leads = model.spec().input_channels;
  Tensor out({T, leads});
  for (std::size_t t = 0; t < T; ++t) {
    double v = cam[0];
    if (Tl > 1 && T > 1) {
      const double pos = static_cast<double>(t) * static_cast<double>(Tl - 1) / static_cast<double>(T - 1);
      const std::size_t i = std::min(static_cast<std::size_t>(pos), Tl - 2);
      const double f = pos - static_cast<double>(i);
      v = (1.0 - f) * cam[i] + f * cam[i + 1];
    }
    for (std::size_t l = 0; l < leads; ++l) out.at(t, l) = v;
  }
  return out;
}

Tensor lrp_from_trace(const nn::Model& model, const nn::ForwardTrace& trace, std::size_t k,
                      const nn::LrpConfig& cfg) {
  Tensor r(trace.activations.back().shape());
  r[k] = trace.activations.back()[k];
  for (std::size_t i = model.num_layers(); i-- > 0;)
    r = model.layer(i).relevance(trace.activations[i], trace.activations[i + 1], r, cfg);
  return drop_batch(r);
}

nn::ForwardTrace trace_of(const nn::Model& model, const Tensor& x) {
  auto r = nn::forward(model, x, true);
  return std::move(*r.trace);
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Saliency: return "saliency";
    case Method::IntegratedGradients: return "ig";
    case Method::GradCam: return "gradcam";
    case Method::LrpEpsilon: return "lrp-eps";
    case Method::LrpZPlus: return "lrp-zplus";
  }
  return "?";
}

Method method_from_string(std::string_view name) {
  if (name == "saliency") return Method::Saliency;
  if (name == "ig") return Method::IntegratedGradients;
  if (name == "gradcam") return Method::GradCam;
  if (name == "lrp" || name == "lrp-eps") return Method::LrpEpsilon;
  if (name == "lrp-zplus") return Method::LrpZPlus;
  throw std::invalid_argument("unknown attribution method '" + std::string(name) +
                              "' (expected saliency, ig, gradcam, lrp, lrp-eps or lrp-zplus)");
}

Tensor saliency(const nn::Model& model, const Tensor& x, std::size_t k) {
  Tensor g = nn::input_gradient(model, x, k);
  for (double& v : g.values()) v = std::abs(v);
  return g;
}

Tensor integrated_gradients(const nn::Model& model, const Tensor& x, std::size_t k,
                            const Tensor& baseline, std::size_t steps) {
  const std::size_t out[] = {k};
  Options o;
  o.ig_steps = steps;
  if (!baseline.empty()) o.baseline = baseline;
  return std::move(attribute_outputs(model, x, out, Method::IntegratedGradients, o).front());
}

std::size_t gradcam_position(const nn::Model& model, std::string_view layer) {
  const std::size_t pos = model.position_of(layer);
  if (pos == 0) return 0;
  for (std::size_t i = 0; i < pos; ++i) {
    const auto kind = model.layer(i).kind();
    if (kind == nn::LayerKind::GlobalAvgPool || kind == nn::LayerKind::Linear)
      throw std::invalid_argument("gradcam layer '" + std::string(layer) +
                                  "' lies after the temporal pooling; choose a convolutional stage");
  }
  const auto kind = model.layer(pos - 1).kind();
  if (kind != nn::LayerKind::Conv1d && kind != nn::LayerKind::BatchNorm1d && kind != nn::LayerKind::Relu &&
      kind != nn::LayerKind::MaxPool1d && kind != nn::LayerKind::AvgPool1d &&
      kind != nn::LayerKind::ResidualBlock)
    throw std::invalid_argument("gradcam layer '" + std::string(layer) + "' is not a convolutional activation");
  return pos;
}

Tensor gradcam(const nn::Model& model, const Tensor& x, std::size_t k, std::size_t position) {
  check_output(model, k);
  if (position > model.num_layers()) throw std::out_of_range("gradcam: layer position out of range");
  const auto trace = trace_of(model, x);
  return gradcam_from_trace(model, trace, k, position, x.dim(0));
}

Tensor lrp(const nn::Model& model, const Tensor& x, std::size_t k, const nn::LrpConfig& cfg) {
  check_output(model, k);
  const auto trace = trace_of(model, x);
  return lrp_from_trace(model, trace, k, cfg);
}

std::vector<Tensor> attribute_outputs(const nn::Model& model, const Tensor& x,
                                      std::span<const std::size_t> outputs, Method method,
                                      const Options& opts) {
  for (std::size_t k : outputs) check_output(model, k);
  std::vector<Tensor> maps;
  switch (method) {
    case Method::Saliency: {
      const auto trace = trace_of(model, x);
      for (std::size_t k : outputs) {
        Tensor g = drop_batch(model.backward(trace, unit_grad(trace, k), 0, {}));
        for (double& v : g.values()) v = std::abs(v);
        maps.push_back(std::move(g));
      }
      return maps;
    }
    case Method::IntegratedGradients: {
      if (opts.ig_steps < 2) throw std::invalid_argument("integrated gradients: steps must be >= 2");
      const Tensor baseline = opts.baseline ? *opts.baseline : Tensor(x.shape());
      if (baseline.shape() != x.shape())
        throw std::invalid_argument("integrated gradients: baseline shape " + shape_string(baseline.shape()) +
                                    " differs from input " + shape_string(x.shape()));
      const Tensor diff = x - baseline;
      std::vector<Tensor> acc(outputs.size(), Tensor(x.shape()));
      for (std::size_t s = 0; s < opts.ig_steps; ++s) {
        const double alpha = (static_cast<double>(s) + 0.5) / static_cast<double>(opts.ig_steps);
        Tensor xs = baseline;
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += alpha * diff[i];
        const auto trace = trace_of(model, xs);
        for (std::size_t j = 0; j < outputs.size(); ++j)
          acc[j] += drop_batch(model.backward(trace, unit_grad(trace, outputs[j]), 0, {}));
      }
      const double inv = 1.0 / static_cast<double>(opts.ig_steps);
      for (auto& a : acc) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] *= diff[i] * inv;
        maps.push_back(std::move(a));
      }
      return maps;
    }
    case Method::GradCam: {
      const std::size_t pos = gradcam_position(model, opts.gradcam_layer);
      const auto trace = trace_of(model, x);
      for (std::size_t k : outputs) maps.push_back(gradcam_from_trace(model, trace, k, pos, x.dim(0)));
      return maps;
    }
    case Method::LrpEpsilon:
    case Method::LrpZPlus: {
      nn::LrpConfig cfg;
      cfg.rule = method == Method::LrpZPlus ? nn::LrpRule::ZPlusConv : nn::LrpRule::Epsilon;
      cfg.epsilon_scale = opts.lrp_epsilon;
      const auto trace = trace_of(model, x);
      for (std::size_t k : outputs) maps.push_back(lrp_from_trace(model, trace, k, cfg));
      return maps;
    }
  }
  return maps;
}

AttributionMap attribute(const nn::Model& model, const Tensor& x, std::size_t k, Method method,
                         const Options& opts) {
  const std::size_t out[] = {k};
  AttributionMap m;
  m.values = std::move(attribute_outputs(model, x, out, method, opts).front());
  m.method = method;
  m.output_index = k;
  m.options = opts;
  return m;
}

}  // namespace ecgxai::attr
