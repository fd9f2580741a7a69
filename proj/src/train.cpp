#include "ecgxai/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ecgxai/rng.hpp"

namespace ecgxai {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Standardizer {
  std::vector<double> mean, sd;
};

Standardizer fit_standardizer(const SupervisedSet& data, std::size_t dim) {
  Standardizer s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  for (std::size_t k = 0; k < dim; ++k) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& t : data.targets)
      if (!std::isnan(t[k])) {
        sum += t[k];
        ++n;
      }
    if (n == 0) continue;
    s.mean[k] = sum / static_cast<double>(n);
    for (const auto& t : data.targets)
      if (!std::isnan(t[k])) sq += (t[k] - s.mean[k]) * (t[k] - s.mean[k]);
    const double sd = n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0;
    s.sd[k] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

void check_set(const nn::ModelSpec& spec, const SupervisedSet& data) {
  if (data.inputs.empty()) throw std::invalid_argument("train: empty dataset");
  if (data.targets.size() != data.inputs.size())
    throw std::invalid_argument("train: inputs and targets differ in count");
  for (const auto& t : data.targets) {
    if (t.size() != spec.output_dim)
      throw std::invalid_argument("train: target width " + std::to_string(t.size()) +
                                  " does not match output_dim " + std::to_string(spec.output_dim));
    if (spec.head == nn::Head::SigmoidMultilabel)
      for (double v : t)
        if (v != 0.0 && v != 1.0)
          throw std::invalid_argument("train: sigmoid-multilabel head needs 0/1 targets, got " +
                                      std::to_string(v));
  }
}

/// Loss and dL/dz for a [B,1,K] output block.
double loss_and_grad(nn::Head head, const Tensor& z, const std::vector<const std::vector<double>*>& y,
                     Tensor& grad) {
  const std::size_t B = z.dim(0), K = z.dim(2);
  grad = Tensor(z.shape());
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k)
      if (!std::isnan((*y[b])[k])) ++count;
  if (count == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      const double t = (*y[b])[k];
      if (std::isnan(t)) continue;
      const double v = z[b * K + k];
      if (head == nn::Head::SigmoidMultilabel) {
        loss += std::max(v, 0.0) - v * t + std::log1p(std::exp(-std::abs(v)));
        grad[b * K + k] = (1.0 / (1.0 + std::exp(-v)) - t) * inv;
      } else {
        const double d = v - t;
        loss += d * d;
        grad[b * K + k] = 2.0 * d * inv;
      }
    }
  }
  return loss * inv;
}

}  // namespace

Tensor center_crop(const Tensor& signal, std::size_t length) {
  const std::size_t T = signal.dim(0), C = signal.dim(1);
  if (length == 0 || length >= T) return signal;
  const std::size_t off = (T - length) / 2;
  Tensor out({length, C});
  std::copy_n(signal.data() + off * C, length * C, out.data());
  return out;
}

TrainResult train(const nn::ModelSpec& spec, const SupervisedSet& data, const TrainConfig& config) {
  check_set(spec, data);
  if (config.batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (config.crop_length < spec.min_length)
    throw std::invalid_argument("train: crop_length " + std::to_string(config.crop_length) +
                                " below the model's minimum length " + std::to_string(spec.min_length));
  for (const auto& x : data.inputs) {
    if (x.rank() != 2 || x.dim(1) != spec.input_channels)
      throw std::invalid_argument("train: input of shape " + shape_string(x.shape()) +
                                  " does not match the model's channel count");
    if (x.dim(0) < config.crop_length)
      throw std::invalid_argument("train: record of length " + std::to_string(x.dim(0)) +
                                  " shorter than crop_length");
  }
  const bool regression = spec.head == nn::Head::LinearRegression;
  if (regression && (spec.layers.empty() || spec.layers.back().kind != nn::LayerKind::Linear))
    throw std::invalid_argument("train: regression head needs a final linear layer");

  const std::size_t K = spec.output_dim, N = data.size(), L = config.crop_length,
                    C = spec.input_channels;
  Standardizer st;
  std::vector<std::vector<double>> scaled;
  if (regression) {
    st = fit_standardizer(data, K);
    scaled = data.targets;
    for (auto& t : scaled)
      for (std::size_t k = 0; k < K; ++k)
        if (!std::isnan(t[k])) t[k] = (t[k] - st.mean[k]) / st.sd[k];
  }
  const auto& targets = regression ? scaled : data.targets;

  TrainResult result{nn::Model(spec, config.seed), {}};
  nn::Model& model = result.model;
  std::vector<Tensor*> params = model.parameters();
  const std::vector<bool> trainable = nn::trainable_mask(model);
  std::vector<Tensor> m1, m2, grads;
  for (const Tensor* p : params) {
    m1.emplace_back(p->shape());
    m2.emplace_back(p->shape());
    grads.emplace_back(p->shape());
  }

  Rng order_rng(substream_seed(config.seed, "train-order"));
  Rng crop_rng(substream_seed(config.seed, "train-crop"));
  std::vector<std::size_t> order(N);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < N; start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, N - start);
      Tensor batch({B, L, C});
      std::vector<const std::vector<double>*> y;
      for (std::size_t b = 0; b < B; ++b) {
        const Tensor& x = data.inputs[order[start + b]];
        const std::size_t off = crop_rng.below(x.dim(0) - L + 1);
        std::copy_n(x.data() + off * C, L * C, batch.data() + b * L * C);
        y.push_back(&targets[order[start + b]]);
      }
      nn::ForwardTrace trace;
      const Tensor z = model.forward_batch(batch, nn::Mode::Training, &trace);
      Tensor gz;
      epoch_loss += loss_and_grad(spec.head, z, y, gz);
      ++batches;
      for (auto& g : grads) g.fill(0.0);
      model.backward(trace, gz, 0, grads);
      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!trainable[i]) continue;
        Tensor& p = *params[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
          const double g = grads[i][j];
          m1[i][j] = config.beta1 * m1[i][j] + (1.0 - config.beta1) * g;
          m2[i][j] = config.beta2 * m2[i][j] + (1.0 - config.beta2) * g * g;
          p[j] -= config.lr * (m1[i][j] / c1) / (std::sqrt(m2[i][j] / c2) + config.adam_eps);
        }
      }
      nn::apply_running_stats(model, trace, config.bn_momentum);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
  }

  if (regression) {
    nn::Layer& head = model.layer(model.num_layers() - 1);
    Tensor& w = head.own_params()[0];
    Tensor& b = head.own_params()[1];
    for (std::size_t i = 0; i < w.size(); ++i) w[i] *= st.sd[i % K];
    for (std::size_t k = 0; k < K; ++k) b[k] = b[k] * st.sd[k] + st.mean[k];
  }
  return result;
}

std::vector<std::vector<double>> predict(const nn::Model& model, std::span<const Tensor> inputs,
                                         std::size_t crop_length) {
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const Tensor& x : inputs) {
    const auto r = nn::forward(model, center_crop(x, crop_length));
    out.emplace_back(r.output.storage());
  }
  return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) return kNaN;
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

MetricsReport compute_metrics(nn::Head head, const std::vector<std::vector<double>>& outputs,
                              const std::vector<std::vector<double>>& targets) {
  if (outputs.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (outputs.size() != targets.size()) throw std::invalid_argument("evaluate: count mismatch");
  MetricsReport r;
  r.head = head;
  const std::size_t K = outputs.front().size();
  if (head == nn::Head::SigmoidMultilabel) {
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> s;
      std::vector<int> y;
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        s.push_back(outputs[i][k]);
        y.push_back(targets[i][k] > 0.5 ? 1 : 0);
      }
      const double auc = roc_auc(s, y);
      r.auc.push_back(auc);
      if (std::isnan(auc)) {
        r.excluded.push_back(k);
      } else {
        sum += auc;
        ++defined;
      }
    }
    r.macro_auc = defined ? sum / static_cast<double>(defined) : kNaN;
    return r;
  }
  double mae_sum = 0.0, r2_sum = 0.0;
  std::size_t r2_n = 0;
  for (std::size_t k = 0; k < K; ++k) {
    double abs_err = 0.0, mean = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < outputs.size(); ++i)
      if (!std::isnan(targets[i][k])) {
        abs_err += std::abs(outputs[i][k] - targets[i][k]);
        mean += targets[i][k];
        ++n;
      }
    if (n == 0) {
      r.mae.push_back(kNaN);
      r.r2.push_back(kNaN);
      continue;
    }
    mean /= static_cast<double>(n);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i)
      if (!std::isnan(targets[i][k])) {
        ss_res += (outputs[i][k] - targets[i][k]) * (outputs[i][k] - targets[i][k]);
        ss_tot += (targets[i][k] - mean) * (targets[i][k] - mean);
      }
    r.mae.push_back(abs_err / static_cast<double>(n));
    mae_sum += r.mae.back();
    r.r2.push_back(ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : kNaN);
    if (!std::isnan(r.r2.back())) {
      r2_sum += r.r2.back();
      ++r2_n;
    }
  }
  r.mean_mae = mae_sum / static_cast<double>(K);
  r.mean_r2 = r2_n ? r2_sum / static_cast<double>(r2_n) : kNaN;
  return r;
}

MetricsReport evaluate(const nn::Model& model, const SupervisedSet& data, std::size_t crop_length) {
  if (data.inputs.empty()) throw std::invalid_argument("evaluate: empty dataset");
  return compute_metrics(model.spec().head, predict(model, data.inputs, crop_length), data.targets);
}

}  // namespace ecgxai
