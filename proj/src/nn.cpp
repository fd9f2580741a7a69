#include "ecgxai/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <utility>

#include "ecgxai/rng.hpp"

namespace ecgxai::nn {

namespace {

constexpr double kBatchNormEps = 1e-5;

std::string layer_label(const LayerSpec& s) {
  return "layer '" + s.name + "' (" + std::string(to_string(s.kind)) + ")";
}

void require_rank3(const LayerSpec& s, const Tensor& x) {
  if (x.rank() != 3)
    throw ShapeError(layer_label(s) + ": expected [batch, time, channel] input, got " +
                     shape_string(x.shape()));
}

void require_channels(const LayerSpec& s, const Tensor& x, std::size_t channels) {
  require_rank3(s, x);
  if (x.dim(2) != channels)
    throw ShapeError(layer_label(s) + ": expected " + std::to_string(channels) +
                     " input channels, got " + std::to_string(x.dim(2)));
}

inline double stabilize(double z, double eps) { return z >= 0.0 ? z + eps : z - eps; }

double mean_abs(const Tensor& t) {
  if (t.empty()) return 0.0;
  double s = 0.0;
  for (double v : t.values()) s += std::abs(v);
  return s / static_cast<double>(t.size());
}

/// ry / (z + eps*sign(z)), with eps scaled by mean |z|.
Tensor stabilized_ratio(const Tensor& ry, const Tensor& z, double eps_scale) {
  const double eps = eps_scale * mean_abs(z);
  Tensor s(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = stabilize(z[i], eps);
    s[i] = d == 0.0 ? 0.0 : ry[i] / d;
  }
  return s;
}

// ---------------------------------------------------------------------------

class Conv1d final : public Layer {
 public:
  explicit Conv1d(LayerSpec s) : Layer(std::move(s)) {
    params_.emplace_back(Tensor::Shape{spec_.kernel, spec_.in_channels, spec_.out_channels});
    params_.emplace_back(Tensor::Shape{spec_.out_channels});
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv1d>(*this); }

  std::size_t out_length(std::size_t t) const {
    if (t + 2 * spec_.padding < spec_.kernel)
      throw ShapeError(layer_label(spec_) + ": input length " + std::to_string(t) +
                       " shorter than kernel " + std::to_string(spec_.kernel));
    return (t + 2 * spec_.padding - spec_.kernel) / spec_.stride + 1;
  }

  Tensor convolve(const Tensor& x, const Tensor& w, const Tensor* bias) const {
    require_channels(spec_, x, spec_.in_channels);
    const std::size_t B = x.dim(0), T = x.dim(1), ci_n = spec_.in_channels,
                      co_n = spec_.out_channels, K = spec_.kernel;
    const std::size_t To = out_length(T);
    Tensor y({B, To, co_n});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t to = 0; to < To; ++to) {
        double* yrow = y.row(b, to);
        if (bias)
          for (std::size_t co = 0; co < co_n; ++co) yrow[co] = (*bias)[co];
        for (std::size_t k = 0; k < K; ++k) {
          const long ti = static_cast<long>(to * spec_.stride + k) - static_cast<long>(spec_.padding);
          if (ti < 0 || ti >= static_cast<long>(T)) continue;
          const double* xrow = x.row(b, static_cast<std::size_t>(ti));
          const double* wk = w.data() + k * ci_n * co_n;
          for (std::size_t ci = 0; ci < ci_n; ++ci) {
            const double xv = xrow[ci];
            if (xv == 0.0) continue;
            const double* wrow = wk + ci * co_n;
            for (std::size_t co = 0; co < co_n; ++co) yrow[co] += xv * wrow[co];
          }
        }
      }
    }
    return y;
  }

  Tensor backward_input(const Tensor& gy, const Tensor& w, std::size_t T) const {
    const std::size_t B = gy.dim(0), To = gy.dim(1), ci_n = spec_.in_channels,
                      co_n = spec_.out_channels, K = spec_.kernel;
    // Transposed copy [K, Cout, Cin] keeps the inner loop contiguous.
    std::vector<double> wt(K * co_n * ci_n);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t ci = 0; ci < ci_n; ++ci)
        for (std::size_t co = 0; co < co_n; ++co)
          wt[(k * co_n + co) * ci_n + ci] = w[(k * ci_n + ci) * co_n + co];
    Tensor gx({B, T, ci_n});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t to = 0; to < To; ++to) {
        const double* grow = gy.row(b, to);
        for (std::size_t k = 0; k < K; ++k) {
          const long ti = static_cast<long>(to * spec_.stride + k) - static_cast<long>(spec_.padding);
          if (ti < 0 || ti >= static_cast<long>(T)) continue;
          double* gxrow = gx.row(b, static_cast<std::size_t>(ti));
          const double* wk = wt.data() + k * co_n * ci_n;
          for (std::size_t co = 0; co < co_n; ++co) {
            const double g = grow[co];
            if (g == 0.0) continue;
            const double* wrow = wk + co * ci_n;
            for (std::size_t ci = 0; ci < ci_n; ++ci) gxrow[ci] += g * wrow[ci];
          }
        }
      }
    }
    return gx;
  }

  Tensor forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>*) const override {
    return convolve(x, params_[0], &params_[1]);
  }

  Tensor backward(const Tensor& x, const Tensor&, const Tensor& gy, const LayerCache*,
                  std::span<Tensor> grads) const override {
    if (!grads.empty()) {
      Tensor& gw = grads[0];
      Tensor& gb = grads[1];
      const std::size_t B = gy.dim(0), To = gy.dim(1), T = x.dim(1), ci_n = spec_.in_channels,
                        co_n = spec_.out_channels, K = spec_.kernel;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t to = 0; to < To; ++to) {
          const double* grow = gy.row(b, to);
          for (std::size_t co = 0; co < co_n; ++co) gb[co] += grow[co];
          for (std::size_t k = 0; k < K; ++k) {
            const long ti = static_cast<long>(to * spec_.stride + k) - static_cast<long>(spec_.padding);
            if (ti < 0 || ti >= static_cast<long>(T)) continue;
            const double* xrow = x.row(b, static_cast<std::size_t>(ti));
            double* gk = gw.data() + k * ci_n * co_n;
            for (std::size_t ci = 0; ci < ci_n; ++ci) {
              const double xv = xrow[ci];
              if (xv == 0.0) continue;
              double* grow_w = gk + ci * co_n;
              for (std::size_t co = 0; co < co_n; ++co) grow_w[co] += xv * grow[co];
            }
          }
        }
      }
    }
    return backward_input(gy, params_[0], x.dim(1));
  }

  Tensor relevance(const Tensor& x, const Tensor& y, const Tensor& ry,
                   const LrpConfig& cfg) const override {
    if (cfg.rule == LrpRule::ZPlusConv) {
      Tensor wplus = params_[0];
      for (double& v : wplus.values()) v = std::max(v, 0.0);
      const Tensor zplus = convolve(x, wplus, nullptr);
      const Tensor s = stabilized_ratio(ry, zplus, cfg.epsilon_scale);
      return hadamard(x, backward_input(s, wplus, x.dim(1)));
    }
    const Tensor s = stabilized_ratio(ry, y, cfg.epsilon_scale);
    return hadamard(x, backward_input(s, params_[0], x.dim(1)));
  }

 protected:
  std::vector<std::string> param_roles() const override { return {"weight", "bias"}; }
};

// ---------------------------------------------------------------------------

class Linear final : public Layer {
 public:
  explicit Linear(LayerSpec s) : Layer(std::move(s)) {
    params_.emplace_back(Tensor::Shape{spec_.in_channels, spec_.out_channels});
    params_.emplace_back(Tensor::Shape{spec_.out_channels});
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

  void check(const Tensor& x) const {
    require_rank3(spec_, x);
    if (x.dim(1) * x.dim(2) != spec_.in_channels)
      throw ShapeError(layer_label(spec_) + ": expected " + std::to_string(spec_.in_channels) +
                       " input features, got " + std::to_string(x.dim(1) * x.dim(2)) + " from " +
                       shape_string(x.shape()));
  }

  Tensor forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>*) const override {
    check(x);
    const std::size_t B = x.dim(0), in = spec_.in_channels, out = spec_.out_channels;
    const Tensor& w = params_[0];
    Tensor y({B, 1, out});
    for (std::size_t b = 0; b < B; ++b) {
      double* yrow = y.data() + b * out;
      for (std::size_t o = 0; o < out; ++o) yrow[o] = params_[1][o];
      const double* xrow = x.data() + b * in;
      for (std::size_t i = 0; i < in; ++i) {
        const double xv = xrow[i];
        if (xv == 0.0) continue;
        const double* wrow = w.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) yrow[o] += xv * wrow[o];
      }
    }
    return y;
  }

  static Tensor backward_input(const Tensor& gy, const Tensor& w, const Tensor::Shape& xshape) {
    const std::size_t B = gy.dim(0), in = w.dim(0), out = w.dim(1);
    Tensor gx(xshape);
    for (std::size_t b = 0; b < B; ++b) {
      const double* grow = gy.data() + b * out;
      double* gxrow = gx.data() + b * in;
      for (std::size_t i = 0; i < in; ++i) {
        const double* wrow = w.data() + i * out;
        double acc = 0.0;
        for (std::size_t o = 0; o < out; ++o) acc += wrow[o] * grow[o];
        gxrow[i] = acc;
      }
    }
    return gx;
  }

  Tensor backward(const Tensor& x, const Tensor&, const Tensor& gy, const LayerCache*,
                  std::span<Tensor> grads) const override {
    const std::size_t B = gy.dim(0), in = spec_.in_channels, out = spec_.out_channels;
    if (!grads.empty()) {
      for (std::size_t b = 0; b < B; ++b) {
        const double* grow = gy.data() + b * out;
        const double* xrow = x.data() + b * in;
        for (std::size_t o = 0; o < out; ++o) grads[1][o] += grow[o];
        for (std::size_t i = 0; i < in; ++i) {
          const double xv = xrow[i];
          if (xv == 0.0) continue;
          double* gw = grads[0].data() + i * out;
          for (std::size_t o = 0; o < out; ++o) gw[o] += xv * grow[o];
        }
      }
    }
    return backward_input(gy, params_[0], x.shape());
  }

  Tensor relevance(const Tensor& x, const Tensor& y, const Tensor& ry,
                   const LrpConfig& cfg) const override {
    const Tensor s = stabilized_ratio(ry, y, cfg.epsilon_scale);
    return hadamard(x, backward_input(s, params_[0], x.shape()));
  }

 protected:
  std::vector<std::string> param_roles() const override { return {"weight", "bias"}; }
};

// ---------------------------------------------------------------------------

struct BatchNormCache : LayerCache {
  std::vector<double> mean, var, invstd;
  Tensor xhat;
};

class BatchNorm1d final : public Layer {
 public:
  explicit BatchNorm1d(LayerSpec s) : Layer(std::move(s)) {
    const std::size_t c = spec_.in_channels;
    params_.emplace_back(Tensor::Shape{c}, 1.0);  // gamma
    params_.emplace_back(Tensor::Shape{c}, 0.0);  // beta
    params_.emplace_back(Tensor::Shape{c}, 0.0);  // running_mean
    params_.emplace_back(Tensor::Shape{c}, 1.0);  // running_var
  }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm1d>(*this); }

  Tensor forward(const Tensor& x, Mode mode, std::unique_ptr<LayerCache>* cache) const override {
    require_channels(spec_, x, spec_.in_channels);
    const std::size_t C = spec_.in_channels, N = x.dim(0) * x.dim(1);
    const Tensor &gamma = params_[0], &beta = params_[1];
    Tensor y(x.shape());
    if (mode == Mode::Inference) {
      for (std::size_t c = 0; c < C; ++c) {
        const double scale = gamma[c] / std::sqrt(params_[3][c] + kBatchNormEps);
        const double shift = beta[c] - params_[2][c] * scale;
        for (std::size_t n = 0; n < N; ++n) y[n * C + c] = x[n * C + c] * scale + shift;
      }
      return y;
    }
    auto bc = std::make_unique<BatchNormCache>();
    bc->mean.assign(C, 0.0);
    bc->var.assign(C, 0.0);
    bc->invstd.assign(C, 0.0);
    bc->xhat = Tensor(x.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) bc->mean[c] += x[n * C + c];
    for (std::size_t c = 0; c < C; ++c) bc->mean[c] /= static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const double d = x[n * C + c] - bc->mean[c];
        bc->var[c] += d * d;
      }
    for (std::size_t c = 0; c < C; ++c) {
      bc->var[c] /= static_cast<double>(N);
      bc->invstd[c] = 1.0 / std::sqrt(bc->var[c] + kBatchNormEps);
    }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const double xh = (x[n * C + c] - bc->mean[c]) * bc->invstd[c];
        bc->xhat[n * C + c] = xh;
        y[n * C + c] = gamma[c] * xh + beta[c];
      }
    if (cache) *cache = std::move(bc);
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor&, const Tensor& gy, const LayerCache* cache,
                  std::span<Tensor> grads) const override {
    const std::size_t C = spec_.in_channels, N = x.dim(0) * x.dim(1);
    const Tensor& gamma = params_[0];
    Tensor gx(x.shape());
    const auto* bc = dynamic_cast<const BatchNormCache*>(cache);
    if (!bc) {
      // Inference statistics: a per-channel affine map.
      for (std::size_t c = 0; c < C; ++c) {
        const double invstd = 1.0 / std::sqrt(params_[3][c] + kBatchNormEps);
        const double scale = gamma[c] * invstd;
        for (std::size_t n = 0; n < N; ++n) {
          gx[n * C + c] = gy[n * C + c] * scale;
          if (!grads.empty()) {
            grads[0][c] += gy[n * C + c] * (x[n * C + c] - params_[2][c]) * invstd;
            grads[1][c] += gy[n * C + c];
          }
        }
      }
      return gx;
    }
    std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        sum_g[c] += gy[n * C + c];
        sum_gx[c] += gy[n * C + c] * bc->xhat[n * C + c];
      }
    if (!grads.empty())
      for (std::size_t c = 0; c < C; ++c) {
        grads[0][c] += sum_gx[c];
        grads[1][c] += sum_g[c];
      }
    const double inv_n = 1.0 / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        gx[n * C + c] = gamma[c] * bc->invstd[c] *
                        (gy[n * C + c] - inv_n * sum_g[c] - bc->xhat[n * C + c] * inv_n * sum_gx[c]);
      }
    return gx;
  }

  Tensor relevance(const Tensor&, const Tensor&, const Tensor&, const LrpConfig&) const override {
    throw std::invalid_argument(layer_label(spec_) +
                                ": relevance propagation needs a batchnorm-free model; "
                                "call fold_batchnorm first");
  }

  void update_running(const BatchNormCache& bc, std::size_t n, double momentum) {
    const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
    for (std::size_t c = 0; c < spec_.in_channels; ++c) {
      params_[2][c] = (1.0 - momentum) * params_[2][c] + momentum * bc.mean[c];
      params_[3][c] = (1.0 - momentum) * params_[3][c] + momentum * bc.var[c] * unbias;
    }
  }

 protected:
  std::vector<std::string> param_roles() const override {
    return {"gamma", "beta", "running_mean", "running_var"};
  }
};

// ---------------------------------------------------------------------------

class Relu final : public Layer {
 public:
  using Layer::Layer;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

  Tensor forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>*) const override {
    require_rank3(spec_, x);
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
  }
  Tensor backward(const Tensor& x, const Tensor&, const Tensor& gy, const LayerCache*,
                  std::span<Tensor>) const override {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
    return gx;
  }
  Tensor relevance(const Tensor&, const Tensor&, const Tensor& ry, const LrpConfig&) const override {
    return ry;
  }
};

// ---------------------------------------------------------------------------

class MaxPool1d final : public Layer {
 public:
  using Layer::Layer;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool1d>(*this); }

  std::size_t out_length(std::size_t t) const {
    if (t < spec_.window)
      throw ShapeError(layer_label(spec_) + ": input length " + std::to_string(t) +
                       " shorter than window " + std::to_string(spec_.window));
    return t / spec_.window;
  }

  // Lowest index wins ties.
  std::size_t argmax(const Tensor& x, std::size_t b, std::size_t to, std::size_t c) const {
    const std::size_t t0 = to * spec_.window;
    std::size_t best = t0;
    for (std::size_t t = t0 + 1; t < t0 + spec_.window; ++t)
      if (x.at(b, t, c) > x.at(b, best, c)) best = t;
    return best;
  }

  Tensor forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>*) const override {
    require_rank3(spec_, x);
    const std::size_t B = x.dim(0), C = x.dim(2), To = out_length(x.dim(1));
    Tensor y({B, To, C});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t to = 0; to < To; ++to)
        for (std::size_t c = 0; c < C; ++c) y.at(b, to, c) = x.at(b, argmax(x, b, to, c), c);
    return y;
  }
  Tensor backward(const Tensor& x, const Tensor&, const Tensor& gy, const LayerCache*,
                  std::span<Tensor>) const override {
    Tensor gx(x.shape());
    for (std::size_t b = 0; b < gy.dim(0); ++b)
      for (std::size_t to = 0; to < gy.dim(1); ++to)
        for (std::size_t c = 0; c < gy.dim(2); ++c) gx.at(b, argmax(x, b, to, c), c) += gy.at(b, to, c);
    return gx;
  }
  Tensor relevance(const Tensor& x, const Tensor&, const Tensor& ry, const LrpConfig&) const override {
    return backward(x, Tensor(), ry, nullptr, {});
  }
};

// ---------------------------------------------------------------------------

/// Average pooling over non-overlapping windows; window 0 means global.
class AvgPool final : public Layer {
 public:
  using Layer::Layer;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AvgPool>(*this); }

  std::size_t window(std::size_t t) const {
    if (spec_.kind == LayerKind::GlobalAvgPool) return t;
    if (t < spec_.window)
      throw ShapeError(layer_label(spec_) + ": input length " + std::to_string(t) +
                       " shorter than window " + std::to_string(spec_.window));
    return spec_.window;
  }

  Tensor forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>*) const override {
    require_rank3(spec_, x);
    const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2), w = window(T), To = T / w;
    Tensor y({B, To, C});
    const double inv = 1.0 / static_cast<double>(w);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t to = 0; to < To; ++to) {
        double* yrow = y.row(b, to);
        for (std::size_t t = to * w; t < (to + 1) * w; ++t) {
          const double* xrow = x.row(b, t);
          for (std::size_t c = 0; c < C; ++c) yrow[c] += xrow[c];
        }
        for (std::size_t c = 0; c < C; ++c) yrow[c] *= inv;
      }
    return y;
  }
  Tensor backward(const Tensor& x, const Tensor&, const Tensor& gy, const LayerCache*,
                  std::span<Tensor>) const override {
    const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2), w = window(T), To = T / w;
    Tensor gx(x.shape());
    const double inv = 1.0 / static_cast<double>(w);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t to = 0; to < To; ++to)
        for (std::size_t t = to * w; t < (to + 1) * w; ++t)
          for (std::size_t c = 0; c < C; ++c) gx.at(b, t, c) = gy.at(b, to, c) * inv;
    return gx;
  }
  Tensor relevance(const Tensor& x, const Tensor& y, const Tensor& ry,
                   const LrpConfig& cfg) const override {
    const Tensor s = stabilized_ratio(ry, y, cfg.epsilon_scale);
    return hadamard(x, backward(x, y, s, nullptr, {}));
  }
};

// ---------------------------------------------------------------------------

struct ResidualCache : LayerCache {
  std::vector<Tensor> activations;
  std::vector<std::unique_ptr<LayerCache>> caches;
};

class ResidualBlock final : public Layer {
 public:
  explicit ResidualBlock(LayerSpec s) : Layer(std::move(s)) {
    for (const auto& b : spec_.body) body_.push_back(make_layer(b));
  }
  ResidualBlock(const ResidualBlock& o) : Layer(o) {
    for (const auto& l : o.body_) body_.push_back(l->clone());
  }
  ResidualBlock(LayerSpec s, std::vector<std::unique_ptr<Layer>> body)
      : Layer(std::move(s)), body_(std::move(body)) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }

  const std::vector<std::unique_ptr<Layer>>& body() const { return body_; }
  std::vector<std::unique_ptr<Layer>>& body() { return body_; }

  void collect_params(std::vector<Tensor*>& out) override {
    for (auto& l : body_) l->collect_params(out);
  }
  void collect_params(std::vector<const Tensor*>& out) const override {
    for (const auto& l : body_) std::as_const(*l).collect_params(out);
  }
  void collect_param_names(const std::string& prefix, std::vector<std::string>& out) const override {
    for (std::size_t i = 0; i < body_.size(); ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "_body%02zu", i);
      body_[i]->collect_param_names(prefix + buf, out);
    }
  }
  std::size_t num_params() const override {
    std::size_t n = 0;
    for (const auto& l : body_) n += l->num_params();
    return n;
  }

  Tensor run_body(const Tensor& x, Mode mode, ResidualCache* rc) const {
    Tensor a = x;
    if (rc) rc->activations.push_back(a);
    for (const auto& l : body_) {
      std::unique_ptr<LayerCache> c;
      a = l->forward(a, mode, rc ? &c : nullptr);
      if (rc) {
        rc->activations.push_back(a);
        rc->caches.push_back(std::move(c));
      }
    }
    if (a.shape() != x.shape())
      throw ShapeError(layer_label(spec_) + ": branch output " + shape_string(a.shape()) +
                       " does not match block input " + shape_string(x.shape()));
    return a;
  }

  Tensor forward(const Tensor& x, Mode mode, std::unique_ptr<LayerCache>* cache) const override {
    require_rank3(spec_, x);
    auto rc = std::make_unique<ResidualCache>();
    Tensor y = run_body(x, mode, cache ? rc.get() : nullptr);
    y += x;
    if (cache) *cache = std::move(rc);
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor&, const Tensor& gy, const LayerCache* cache,
                  std::span<Tensor> grads) const override {
    const auto* rc = dynamic_cast<const ResidualCache*>(cache);
    ResidualCache local;
    if (!rc) {
      run_body(x, Mode::Inference, &local);
      rc = &local;
    }
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& l : body_) {
      offsets.push_back(off);
      off += l->num_params();
    }
    Tensor g = gy;
    for (std::size_t i = body_.size(); i-- > 0;) {
      std::span<Tensor> sub =
          grads.empty() ? std::span<Tensor>() : grads.subspan(offsets[i], body_[i]->num_params());
      g = body_[i]->backward(rc->activations[i], rc->activations[i + 1], g, rc->caches[i].get(), sub);
    }
    g += gy;
    return g;
  }

  Tensor relevance(const Tensor& x, const Tensor& y, const Tensor& ry,
                   const LrpConfig& cfg) const override {
    ResidualCache rc;
    const Tensor branch = run_body(x, Mode::Inference, &rc);
    // Split the sum x + branch proportionally to each term.
    const Tensor s = stabilized_ratio(ry, y, cfg.epsilon_scale);
    Tensor r_skip = hadamard(x, s);
    Tensor r = hadamard(branch, s);
    for (std::size_t i = body_.size(); i-- > 0;)
      r = body_[i]->relevance(rc.activations[i], rc.activations[i + 1], r, cfg);
    r_skip += r;
    return r_skip;
  }

 private:
  std::vector<std::unique_ptr<Layer>> body_;
};

void update_running_stats(Layer& layer, const LayerCache* cache, std::size_t n, double momentum) {
  if (auto* bn = dynamic_cast<BatchNorm1d*>(&layer)) {
    if (const auto* bc = dynamic_cast<const BatchNormCache*>(cache)) bn->update_running(*bc, n, momentum);
  } else if (auto* rb = dynamic_cast<ResidualBlock*>(&layer)) {
    const auto* rc = dynamic_cast<const ResidualCache*>(cache);
    if (!rc) return;
    for (std::size_t i = 0; i < rb->body().size(); ++i)
      update_running_stats(*rb->body()[i], rc->caches[i].get(), n, momentum);
  }
}

// Folds batchnorms in a flat layer list; returns the new specs alongside.
std::vector<std::unique_ptr<Layer>> fold_sequence(const std::vector<const Layer*>& in,
                                                  std::vector<LayerSpec>& specs_out) {
  std::vector<std::unique_ptr<Layer>> out;
  for (const Layer* l : in) {
    if (l->kind() == LayerKind::BatchNorm1d) {
      if (out.empty() ||
          (out.back()->kind() != LayerKind::Conv1d && out.back()->kind() != LayerKind::Linear))
        throw std::invalid_argument(layer_label(l->spec()) +
                                    ": batchnorm must directly follow a conv1d or linear layer to be folded");
      Layer& prev = *out.back();
      const auto& bn = l->own_params();
      Tensor& w = prev.own_params()[0];
      Tensor& b = prev.own_params()[1];
      const std::size_t co_n = b.size();
      for (std::size_t c = 0; c < co_n; ++c) {
        const double scale = bn[0][c] / std::sqrt(bn[3][c] + kBatchNormEps);
        b[c] = (b[c] - bn[2][c]) * scale + bn[1][c];
        for (std::size_t i = c; i < w.size(); i += co_n) w[i] *= scale;
      }
      continue;
    }
    if (const auto* rb = dynamic_cast<const ResidualBlock*>(l)) {
      std::vector<const Layer*> body;
      for (const auto& b : rb->body()) body.push_back(b.get());
      LayerSpec spec = rb->spec();
      spec.body.clear();
      auto folded = fold_sequence(body, spec.body);
      specs_out.push_back(spec);
      out.push_back(std::make_unique<ResidualBlock>(spec, std::move(folded)));
      continue;
    }
    out.push_back(l->clone());
    specs_out.push_back(l->spec());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::BatchNorm1d: return "batchnorm1d";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool1d: return "maxpool1d";
    case LayerKind::AvgPool1d: return "avgpool1d";
    case LayerKind::GlobalAvgPool: return "globalavgpool";
    case LayerKind::Linear: return "linear";
    case LayerKind::ResidualBlock: return "residual-block";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto k : {LayerKind::Conv1d, LayerKind::BatchNorm1d, LayerKind::Relu, LayerKind::MaxPool1d,
                 LayerKind::AvgPool1d, LayerKind::GlobalAvgPool, LayerKind::Linear,
                 LayerKind::ResidualBlock})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(Head head) {
  return head == Head::SigmoidMultilabel ? "sigmoid-multilabel" : "linear-regression";
}

Head head_from_string(std::string_view name) {
  if (name == "sigmoid-multilabel") return Head::SigmoidMultilabel;
  if (name == "linear-regression") return Head::LinearRegression;
  throw std::invalid_argument("unknown head '" + std::string(name) + "'");
}

namespace {

// Returns channel count after the layer; `flat` tracks whether time has been
// collapsed (after global pooling or linear layers).
std::size_t validate_layers(const std::vector<LayerSpec>& layers, std::size_t channels, bool& flat) {
  for (const auto& l : layers) {
    switch (l.kind) {
      case LayerKind::Conv1d:
        if (l.kernel < 1 || l.stride < 1)
          throw ShapeError(layer_label(l) + ": kernel and stride must be >= 1");
        if (l.in_channels != channels)
          throw ShapeError(layer_label(l) + ": expects " + std::to_string(l.in_channels) +
                           " input channels but previous layer yields " + std::to_string(channels));
        channels = l.out_channels;
        break;
      case LayerKind::BatchNorm1d:
        if (l.in_channels != channels)
          throw ShapeError(layer_label(l) + ": has " + std::to_string(l.in_channels) +
                           " channels but previous layer yields " + std::to_string(channels));
        break;
      case LayerKind::MaxPool1d:
      case LayerKind::AvgPool1d:
        if (l.window < 1) throw ShapeError(layer_label(l) + ": window must be >= 1");
        break;
      case LayerKind::GlobalAvgPool:
        flat = true;
        break;
      case LayerKind::Linear:
        // Without a preceding global pool the time axis is flattened and the
        // feature count is only known at run time.
        if (flat && l.in_channels != channels)
          throw ShapeError(layer_label(l) + ": expects " + std::to_string(l.in_channels) +
                           " features but previous layer yields " + std::to_string(channels));
        flat = true;
        channels = l.out_channels;
        break;
      case LayerKind::ResidualBlock: {
        bool inner_flat = flat;
        const std::size_t c = validate_layers(l.body, channels, inner_flat);
        if (c != channels)
          throw ShapeError(layer_label(l) + ": branch changes channels " + std::to_string(channels) +
                           " -> " + std::to_string(c));
        break;
      }
      case LayerKind::Relu:
        break;
    }
  }
  return channels;
}

}  // namespace

void validate(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ShapeError("model spec has no layers");
  bool flat = false;
  const std::size_t out = validate_layers(spec.layers, spec.input_channels, flat);
  if (out != spec.output_dim)
    throw ShapeError("model spec: last layer yields " + std::to_string(out) +
                     " outputs but output_dim is " + std::to_string(spec.output_dim));
}

ModelSpec lenet(std::size_t output_dim, Head head, const LeNetOptions& opts) {
  ModelSpec m;
  m.arch = "lenet";
  m.head = head;
  m.output_dim = output_dim;
  std::size_t ch = m.input_channels;
  for (std::size_t i = 0; i < opts.widths.size(); ++i) {
    const std::string n = std::to_string(i + 1);
    LayerSpec conv{LayerKind::Conv1d, "conv" + n, ch, opts.widths[i], opts.kernel, opts.stride,
                   opts.kernel / 2};
    m.layers.push_back(conv);
    m.layers.push_back({LayerKind::BatchNorm1d, "bn" + n, opts.widths[i]});
    m.layers.push_back({LayerKind::Relu, "relu" + n});
    if (i + 1 < opts.widths.size()) {
      LayerSpec pool{LayerKind::MaxPool1d, "pool" + n};
      pool.window = 2;
      m.layers.push_back(pool);
    }
    ch = opts.widths[i];
  }
  m.layers.push_back({LayerKind::GlobalAvgPool, "gap"});
  m.layers.push_back({LayerKind::Linear, "fc1", ch, opts.hidden});
  m.layers.push_back({LayerKind::Relu, "relu" + std::to_string(opts.widths.size() + 1)});
  m.layers.push_back({LayerKind::Linear, "fc2", opts.hidden, output_dim});
  return m;
}

ModelSpec residual_net(std::size_t output_dim, Head head, const ResNetOptions& opts) {
  ModelSpec m;
  m.arch = "resnet";
  m.head = head;
  m.output_dim = output_dim;
  const std::size_t w = opts.width;
  m.layers.push_back({LayerKind::Conv1d, "stem", m.input_channels, w, 5, 2, 2});
  m.layers.push_back({LayerKind::BatchNorm1d, "stem_bn", w});
  m.layers.push_back({LayerKind::Relu, "stem_relu"});
  for (std::size_t i = 0; i < opts.blocks; ++i) {
    const std::string n = std::to_string(i + 1);
    LayerSpec block{LayerKind::ResidualBlock, "block" + n};
    block.body = {
        {LayerKind::Conv1d, "block" + n + "_conv1", w, w, 3, 1, 1},
        {LayerKind::BatchNorm1d, "block" + n + "_bn1", w},
        {LayerKind::Relu, "block" + n + "_relu1"},
        {LayerKind::Conv1d, "block" + n + "_conv2", w, w, 3, 1, 1},
        {LayerKind::BatchNorm1d, "block" + n + "_bn2", w},
        {LayerKind::Relu, "block" + n + "_relu2"},
    };
    m.layers.push_back(block);
    if (i < 2) {
      LayerSpec pool{LayerKind::MaxPool1d, "pool" + n};
      pool.window = 2;
      m.layers.push_back(pool);
    }
  }
  m.layers.push_back({LayerKind::GlobalAvgPool, "gap"});
  m.layers.push_back({LayerKind::Linear, "fc", w, output_dim});
  return m;
}

// ---------------------------------------------------------------------------

void Layer::collect_params(std::vector<Tensor*>& out) {
  for (auto& p : params_) out.push_back(&p);
}
void Layer::collect_params(std::vector<const Tensor*>& out) const {
  for (const auto& p : params_) out.push_back(&p);
}
void Layer::collect_param_names(const std::string& prefix, std::vector<std::string>& out) const {
  for (const auto& role : param_roles()) out.push_back(prefix + "_" + role);
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::Conv1d: return std::make_unique<Conv1d>(spec);
    case LayerKind::BatchNorm1d: return std::make_unique<BatchNorm1d>(spec);
    case LayerKind::Relu: return std::make_unique<Relu>(spec);
    case LayerKind::MaxPool1d: return std::make_unique<MaxPool1d>(spec);
    case LayerKind::AvgPool1d:
    case LayerKind::GlobalAvgPool: return std::make_unique<AvgPool>(spec);
    case LayerKind::Linear: return std::make_unique<Linear>(spec);
    case LayerKind::ResidualBlock: return std::make_unique<ResidualBlock>(spec);
  }
  throw std::invalid_argument("unknown layer kind");
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  validate(spec_);
  for (const auto& l : spec_.layers) layers_.push_back(make_layer(l));
  Rng rng(substream_seed(seed, "init"));
  std::function<void(Layer&)> init = [&](Layer& l) {
    if (auto* rb = dynamic_cast<ResidualBlock*>(&l)) {
      for (auto& b : rb->body()) init(*b);
      return;
    }
    if (l.kind() == LayerKind::Conv1d || l.kind() == LayerKind::Linear) {
      const auto& s = l.spec();
      const double fan_in = l.kind() == LayerKind::Conv1d
                                ? static_cast<double>(s.kernel * s.in_channels)
                                : static_cast<double>(s.in_channels);
      const double sd = std::sqrt(2.0 / fan_in);
      for (double& v : l.own_params()[0].values()) v = rng.normal(0.0, sd);
    }
  };
  for (auto& l : layers_) init(*l);
}

Model::Model(ModelSpec spec, std::vector<std::unique_ptr<Layer>> layers, std::uint64_t seed, bool folded)
    : spec_(std::move(spec)), layers_(std::move(layers)), seed_(seed), folded_(folded) {}

Model::Model(const Model& o) : spec_(o.spec_), seed_(o.seed_), folded_(o.folded_) {
  for (const auto& l : o.layers_) layers_.push_back(l->clone());
}

Model& Model::operator=(const Model& o) {
  if (this != &o) {
    Model tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

std::vector<Tensor*> Model::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) l->collect_params(out);
  return out;
}

std::vector<const Tensor*> Model::parameters() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) std::as_const(*l).collect_params(out);
  return out;
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "layer%02zu", i);
    layers_[i]->collect_param_names(buf, out);
  }
  return out;
}

Tensor Model::forward_batch(const Tensor& batch, Mode mode, ForwardTrace* trace) const {
  if (batch.rank() != 3 || batch.dim(2) != spec_.input_channels)
    throw ShapeError("model input: expected [batch, time, " + std::to_string(spec_.input_channels) +
                     "], got " + shape_string(batch.shape()));
  if (trace) {
    trace->mode = mode;
    trace->activations.clear();
    trace->caches.clear();
    trace->activations.push_back(batch);
  }
  Tensor a = batch;
  for (const auto& l : layers_) {
    std::unique_ptr<LayerCache> cache;
    a = l->forward(a, mode, trace ? &cache : nullptr);
    if (trace) {
      trace->activations.push_back(a);
      trace->caches.push_back(std::move(cache));
    }
  }
  if (a.dim(1) != 1)
    throw ShapeError("model output has time extent " + std::to_string(a.dim(1)) +
                     "; the last layers must pool or flatten time");
  return a;
}

Tensor Model::forward_from(const Tensor& activation, std::size_t start) const {
  if (start > layers_.size()) throw std::out_of_range("forward_from: start beyond last layer");
  Tensor a = activation;
  for (std::size_t i = start; i < layers_.size(); ++i) a = layers_[i]->forward(a, Mode::Inference, nullptr);
  return a;
}

Tensor Model::backward(const ForwardTrace& trace, const Tensor& grad_out, std::size_t stop,
                       std::span<Tensor> grads) const {
  if (trace.activations.size() != layers_.size() + 1)
    throw std::invalid_argument("backward: trace does not belong to this model");
  if (stop > layers_.size()) throw std::out_of_range("backward: stop position out of range");
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& l : layers_) {
    offsets.push_back(off);
    off += l->num_params();
  }
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > stop;) {
    std::span<Tensor> sub =
        grads.empty() ? std::span<Tensor>() : grads.subspan(offsets[i], layers_[i]->num_params());
    g = layers_[i]->backward(trace.activations[i], trace.activations[i + 1], g, trace.caches[i].get(), sub);
  }
  return g;
}

std::size_t Model::position_of(std::string_view name) const {
  if (name == "input") return 0;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i]->name() == name) return i + 1;
  throw std::invalid_argument("model has no layer named '" + std::string(name) + "'");
}

void apply_running_stats(Model& model, const ForwardTrace& trace, double momentum) {
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const auto& x = trace.activations[i];
    update_running_stats(model.layer(i), trace.caches[i].get(), x.dim(0) * x.dim(1), momentum);
  }
}

std::vector<bool> trainable_mask(const Model& model) {
  std::vector<bool> mask;
  for (const auto& n : model.parameter_names())
    mask.push_back(!n.ends_with("_running_mean") && !n.ends_with("_running_var"));
  return mask;
}

// ---------------------------------------------------------------------------

Tensor as_batch(const Tensor& sample) {
  if (sample.rank() != 2)
    throw ShapeError("expected a [time, channel] signal, got " + shape_string(sample.shape()));
  return sample.reshaped({1, sample.dim(0), sample.dim(1)});
}

Tensor trace_activation(const ForwardTrace& trace, std::size_t position) {
  const Tensor& a = trace.activations.at(position);
  return a.reshaped({a.dim(1), a.dim(2)});
}

ForwardResult forward(const Model& model, const Tensor& input, bool keep_trace) {
  if (input.rank() != 2 || input.dim(1) != model.spec().input_channels)
    throw ShapeError("forward: expected [T, " + std::to_string(model.spec().input_channels) +
                     "] input, got " + shape_string(input.shape()));
  if (input.dim(0) < model.spec().min_length)
    throw ShapeError("forward: input length " + std::to_string(input.dim(0)) +
                     " below the model's minimum length " + std::to_string(model.spec().min_length));
  ForwardResult r;
  if (keep_trace) r.trace.emplace();
  Tensor out = model.forward_batch(as_batch(input), Mode::Inference, keep_trace ? &*r.trace : nullptr);
  r.output = out.reshaped({out.dim(2)});
  return r;
}

namespace {

Tensor unit_output_grad(const Model& model, const ForwardTrace& trace, std::size_t k) {
  const Tensor& out = trace.activations.back();
  if (k >= out.dim(2))
    throw std::out_of_range("output index " + std::to_string(k) + " out of range for " +
                            std::to_string(out.dim(2)) + " outputs");
  (void)model;
  Tensor g(out.shape());
  g[k] = 1.0;
  return g;
}

}  // namespace

Tensor layer_gradient(const Model& model, const ForwardTrace& trace, std::size_t position,
                      std::size_t output_index) {
  if (position > model.num_layers())
    throw std::out_of_range("layer position " + std::to_string(position) + " out of range (model has " +
                            std::to_string(model.num_layers()) + " layers)");
  const Tensor g = model.backward(trace, unit_output_grad(model, trace, output_index), position, {});
  return g.reshaped({g.dim(1), g.dim(2)});
}

Tensor layer_gradient(const Model& model, const Tensor& input, std::size_t position,
                      std::size_t output_index) {
  auto r = forward(model, input, true);
  return layer_gradient(model, *r.trace, position, output_index);
}

Tensor input_gradient(const Model& model, const Tensor& input, std::size_t output_index) {
  return layer_gradient(model, input, 0, output_index);
}

std::vector<Tensor> input_gradients(const Model& model, const Tensor& input,
                                    std::span<const std::size_t> output_indices) {
  auto r = forward(model, input, true);
  std::vector<Tensor> out;
  out.reserve(output_indices.size());
  for (std::size_t k : output_indices) out.push_back(layer_gradient(model, *r.trace, 0, k));
  return out;
}

Model fold_batchnorm(const Model& model) {
  std::vector<const Layer*> layers;
  for (std::size_t i = 0; i < model.num_layers(); ++i) layers.push_back(&model.layer(i));
  ModelSpec spec = model.spec();
  spec.layers.clear();
  auto folded = fold_sequence(layers, spec.layers);
  return Model(std::move(spec), std::move(folded), model.seed(), true);
}

}  // namespace ecgxai::nn
