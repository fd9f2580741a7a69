#include "ecgxai/tcav.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "ecgxai/parallel.hpp"
#include "ecgxai/rng.hpp"
#include "ecgxai/stats.hpp"

namespace ecgxai::tcav {

namespace {

std::vector<std::size_t> sample_without_replacement(const std::vector<std::size_t>& pool, std::size_t n,
                                                    std::uint64_t seed) {
  std::vector<std::size_t> v = pool;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) std::swap(v[i], v[i + rng.below(v.size() - i)]);
  v.resize(n);
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Largest eigenvalue of [x 1]^T [x 1] / n by power iteration.
double gram_top_eigenvalue(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size(), d = x.front().size() + 1;
  std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d))), w(d);
  double lam = 0.0;
  for (int it = 0; it < 200; ++it) {
    std::fill(w.begin(), w.end(), 0.0);
    for (const auto& row : x) {
      double s = v[d - 1];
      for (std::size_t j = 0; j + 1 < d; ++j) s += row[j] * v[j];
      for (std::size_t j = 0; j + 1 < d; ++j) w[j] += s * row[j];
      w[d - 1] += s;
    }
    double norm = 0.0;
    for (double& e : w) {
      e /= static_cast<double>(n);
      norm += e * e;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    const double prev = lam;
    lam = norm;
    for (std::size_t j = 0; j < d; ++j) v[j] = w[j] / norm;
    if (std::abs(lam - prev) <= 1e-9 * lam) break;
  }
  return lam;
}

}  // namespace

std::vector<double> pooled_activation(const nn::ForwardTrace& trace, std::size_t position) {
  const Tensor a = nn::trace_activation(trace, position);
  const std::size_t T = a.dim(0), C = a.dim(1);
  std::vector<double> out(C, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) out[c] += a.at(t, c);
  for (double& v : out) v /= static_cast<double>(T);
  return out;
}

std::vector<double> pooled_gradient(const nn::Model& model, const nn::ForwardTrace& trace, std::size_t position,
                                    std::size_t k) {
  const Tensor g = nn::layer_gradient(model, trace, position, k);
  const std::size_t T = g.dim(0), C = g.dim(1);
  std::vector<double> out(C, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) out[c] += g.at(t, c);
  return out;
}

ConceptSample build_concept_dataset(const std::vector<bool>& membership, std::size_t n_pos, std::size_t n_neg,
                                    std::uint64_t pos_seed, std::uint64_t neg_seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < membership.size(); ++i) (membership[i] ? pos : neg).push_back(i);
  if (pos.size() < n_pos)
    throw std::invalid_argument("concept has " + std::to_string(pos.size()) + " positives, " +
                                std::to_string(n_pos) + " required");
  if (neg.size() < n_neg)
    throw std::invalid_argument("concept has " + std::to_string(neg.size()) + " negatives, " +
                                std::to_string(n_neg) + " required");
  return {sample_without_replacement(pos, n_pos, pos_seed), sample_without_replacement(neg, n_neg, neg_seed)};
}

std::vector<bool> rule_membership(const concepts::RuleSet& rules, std::string_view rule, const EcgDataset& dataset,
                                  std::span<const std::size_t> indices) {
  std::vector<bool> m;
  for (std::size_t i : indices) m.push_back(rules.evaluate(rule, extract_features(dataset.records[i])));
  return m;
}

LogisticFit fit_logistic(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                         const LogisticOptions& opts) {
  if (x.empty() || x.size() != y.size()) throw std::invalid_argument("fit_logistic: empty or mismatched data");
  const std::size_t n = x.size(), d = x.front().size();
  const bool has0 = std::find(y.begin(), y.end(), 0) != y.end();
  const bool has1 = std::find(y.begin(), y.end(), 1) != y.end();
  if (!has0 || !has1) throw std::invalid_argument("fit_logistic: labels contain a single class");
  const double step = 1.0 / (0.25 * gram_top_eigenvalue(x) + opts.lambda);
  LogisticFit f;
  f.weights.assign(d, 0.0);
  std::vector<double> gw(d);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (f.iterations = 0; f.iterations < opts.max_iterations; ++f.iterations) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = (sigmoid(dot(x[i], f.weights) + f.bias) - y[i]) * inv_n;
      for (std::size_t j = 0; j < d; ++j) gw[j] += r * x[i][j];
      gb += r;
    }
    double norm = gb * gb;
    for (std::size_t j = 0; j < d; ++j) {
      gw[j] += opts.lambda * f.weights[j];
      norm += gw[j] * gw[j];
    }
    f.gradient_norm = std::sqrt(norm);
    if (f.gradient_norm < opts.tolerance) break;
    for (std::size_t j = 0; j < d; ++j) f.weights[j] -= step * gw[j];
    f.bias -= step * gb;
  }
  return f;
}

Cav fit_cav(const std::vector<std::vector<double>>& x, const std::vector<int>& y, std::uint64_t split_seed,
            const LogisticOptions& opts) {
  Cav cav;
  cav.seed = split_seed;
  const auto full = fit_logistic(x, y, opts);
  double norm = std::sqrt(dot(full.weights, full.weights));
  if (norm == 0.0) throw std::runtime_error("fit_cav: zero weight vector");
  for (double w : full.weights) cav.direction.push_back(w / norm);

  std::vector<std::size_t> cls[2];
  for (std::size_t i = 0; i < y.size(); ++i) cls[y[i] != 0].push_back(i);
  Rng rng(split_seed);
  std::vector<std::vector<double>> xt, xh;
  std::vector<int> yt, yh;
  for (int c = 0; c < 2; ++c) {
    rng.shuffle(cls[c]);
    const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * cls[c].size())));
    if (n_hold >= cls[c].size()) throw std::invalid_argument("fit_cav: each class needs at least two samples");
    for (std::size_t j = 0; j < cls[c].size(); ++j) {
      auto& xs = j < n_hold ? xh : xt;
      auto& ys = j < n_hold ? yh : yt;
      xs.push_back(x[cls[c][j]]);
      ys.push_back(c);
    }
  }
  const auto part = fit_logistic(xt, yt, opts);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xh.size(); ++i)
    correct += ((dot(xh[i], part.weights) + part.bias > 0.0) == (yh[i] == 1));
  cav.accuracy = static_cast<double>(correct) / static_cast<double>(xh.size());
  return cav;
}

double sensitivity(std::span<const double> pooled_grad, std::span<const double> cav) {
  if (pooled_grad.size() != cav.size()) throw std::invalid_argument("sensitivity: dimension mismatch");
  return dot(pooled_grad, cav);
}

std::size_t positive_count(std::span<const double> s) {
  std::size_t pos = 0;
  for (double v : s) pos += v > 0.0;
  return pos;
}

double tcav_score(std::span<const double> s) {
  if (s.empty()) throw std::invalid_argument("tcav_score: no samples");
  return static_cast<double>(positive_count(s)) / static_cast<double>(s.size());
}

CellStats cell_stats(std::span<const double> scores, std::span<const double> accuracies) {
  CellStats c;
  c.mean = stats::mean(scores);
  c.q25 = stats::quantile(scores, 0.25);
  c.q75 = stats::quantile(scores, 0.75);
  c.iqr = c.q75 - c.q25;
  c.mean_accuracy = stats::mean(accuracies);
  c.greyed = !(c.mean_accuracy > 0.7);
  c.starred = !c.greyed && c.iqr < 0.25 && !(c.q25 <= 0.5 && 0.5 <= c.q75);
  return c;
}

const TcavCell& TcavGrid::find(std::string_view layer, std::string_view concept_name,
                               std::string_view class_name) const {
  for (const auto& c : cells)
    if (c.layer == layer && c.concept_name == concept_name && c.class_name == class_name) return c;
  throw std::invalid_argument("no TCAV cell for layer '" + std::string(layer) + "', concept '" +
                              std::string(concept_name) + "', class '" + std::string(class_name) + "'");
}

TcavGrid significance_protocol(const TcavData& data, const std::vector<ConceptDef>& concept_defs,
                               const TcavConfig& cfg) {
  if (cfg.n_models == 0 || cfg.n_cavs == 0) throw std::invalid_argument("tcav: n_models and n_cavs must be >= 1");
  if (cfg.class_names.size() != cfg.arch.output_dim)
    throw std::invalid_argument("tcav: " + std::to_string(cfg.class_names.size()) + " class names for " +
                                std::to_string(cfg.arch.output_dim) + " outputs");
  for (const auto& c : concept_defs)
    if (c.membership.size() != data.concept_pool.size())
      throw std::invalid_argument("tcav: membership of concept '" + c.name + "' does not cover the concept pool");
  for (std::size_t k : cfg.classes)
    if (k >= cfg.arch.output_dim) throw std::out_of_range("tcav: class index " + std::to_string(k) + " out of range");

  const std::size_t L = cfg.layers.size(), C = concept_defs.size(), K = cfg.classes.size();
  // Concept samples: positives once per concept, negatives per CAV (shared across models).
  std::vector<std::string> unavailable(C);
  std::vector<std::vector<ConceptSample>> samples(C);
  for (std::size_t c = 0; c < C; ++c) {
    try {
      for (std::size_t j = 0; j < cfg.n_cavs; ++j)
        samples[c].push_back(build_concept_dataset(
            concept_defs[c].membership, cfg.n_pos, cfg.n_neg, substream_seed(cfg.seed, "positives", c),
            substream_seed(cfg.seed, "negatives", c * cfg.n_cavs + j)));
    } catch (const std::invalid_argument& e) {
      unavailable[c] = e.what();
      samples[c].clear();
    }
  }

  // scores[m][l][c][k][j], accuracies[m][l][c][j]
  std::vector<std::vector<std::vector<std::vector<std::vector<double>>>>> scores(cfg.n_models);
  std::vector<std::vector<std::vector<std::vector<double>>>> accs(cfg.n_models);
  parallel_for(cfg.n_models, cfg.jobs, [&](std::size_t m) {
    TrainConfig tc = cfg.train;
    tc.seed = substream_seed(cfg.seed, "model", m);
    const nn::Model model = train(cfg.arch, data.train, tc).model;
    std::vector<std::size_t> pos;
    for (const auto& name : cfg.layers) pos.push_back(model.position_of(name));
    // pooled activations of the concept pool, per layer
    std::vector<std::vector<std::vector<double>>> act(L);
    for (const auto& x : data.concept_pool) {
      auto r = nn::forward(model, x, true);
      for (std::size_t l = 0; l < L; ++l) act[l].push_back(pooled_activation(*r.trace, pos[l]));
    }
    // pooled gradients of the class samples, per class and layer
    std::vector<std::vector<std::vector<std::vector<double>>>> grads(K, std::vector<std::vector<std::vector<double>>>(L));
    for (std::size_t s = 0; s < data.class_samples.size(); ++s) {
      auto r = nn::forward(model, data.class_samples[s], true);
      for (std::size_t q = 0; q < K; ++q) {
        if (!data.class_labels[s][cfg.classes[q]]) continue;
        for (std::size_t l = 0; l < L; ++l) grads[q][l].push_back(pooled_gradient(model, *r.trace, pos[l], cfg.classes[q]));
      }
    }
    scores[m].assign(L, std::vector<std::vector<std::vector<double>>>(C, std::vector<std::vector<double>>(K)));
    accs[m].assign(L, std::vector<std::vector<double>>(C));
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < samples[c].size(); ++j) {
          std::vector<std::vector<double>> x;
          std::vector<int> y;
          for (std::size_t i : samples[c][j].positives) {
            x.push_back(act[l][i]);
            y.push_back(1);
          }
          for (std::size_t i : samples[c][j].negatives) {
            x.push_back(act[l][i]);
            y.push_back(0);
          }
          const Cav cav = fit_cav(x, y, substream_seed(cfg.seed, "cav-split", (m * L + l) * C * cfg.n_cavs + c * cfg.n_cavs + j),
                                  cfg.logistic);
          accs[m][l][c].push_back(cav.accuracy);
          for (std::size_t q = 0; q < K; ++q) {
            if (grads[q][l].empty()) continue;
            std::vector<double> sens;
            for (const auto& g : grads[q][l]) sens.push_back(sensitivity(g, cav.direction));
            scores[m][l][c][q].push_back(tcav_score(sens));
          }
        }
  });

  TcavGrid grid;
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t q = 0; q < K; ++q) {
        TcavCell cell;
        cell.arch = cfg.arch.arch;
        cell.layer = cfg.layers[l];
        cell.concept_name = concept_defs[c].name;
        cell.class_name = cfg.class_names[cfg.classes[q]];
        if (!unavailable[c].empty()) {
          cell.available = false;
          cell.reason = unavailable[c];
        } else {
          for (std::size_t m = 0; m < cfg.n_models; ++m) {
            cell.scores.insert(cell.scores.end(), scores[m][l][c][q].begin(), scores[m][l][c][q].end());
            cell.accuracies.insert(cell.accuracies.end(), accs[m][l][c].begin(), accs[m][l][c].end());
          }
          if (cell.scores.empty()) {
            cell.available = false;
            cell.reason = "no held-out samples of class '" + cell.class_name + "'";
          } else {
            cell.stats = cell_stats(cell.scores, cell.accuracies);
          }
        }
        grid.cells.push_back(std::move(cell));
      }
  return grid;
}

}  // namespace ecgxai::tcav
