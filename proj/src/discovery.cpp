#include "ecgxai/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "ecgxai/glocal.hpp"
#include "ecgxai/parallel.hpp"
#include "ecgxai/rng.hpp"
#include "ecgxai/tcav.hpp"

namespace ecgxai::disc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<int> relabel(const std::vector<int>& a) {
  std::map<int, int> m;
  std::vector<int> out;
  for (int v : a) out.push_back(m.try_emplace(v, static_cast<int>(m.size())).first->second);
  return out;
}

Matrix kmeanspp(const Matrix& x, std::size_t k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Matrix c(static_cast<Eigen::Index>(k), x.cols());
  c.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
  for (std::size_t j = 1; j < k; ++j) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2(pick);
        if (r < 0) break;
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    }
    c.row(static_cast<Eigen::Index>(j)) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - c.row(static_cast<Eigen::Index>(j))).rowwise().squaredNorm());
  }
  return c;
}

void check_input(const Matrix& x, std::size_t k) {
  if (k < 2) throw std::invalid_argument("clustering needs at least two clusters");
  if (static_cast<std::size_t>(x.rows()) <= k)
    throw std::invalid_argument("clustering needs more rows (" + std::to_string(x.rows()) + ") than clusters");
}

// Hungarian algorithm (minimization) on a square cost matrix.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  std::vector<double> u(n + 1), v(n + 1), minv(n + 1);
  std::vector<std::size_t> p(n + 1), way(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j)
        if (!used[j]) {
          const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (std::size_t j = 0; j <= n; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

std::vector<std::vector<double>> contingency(std::span<const int> a, std::span<const int> b, std::size_t& ra,
                                             std::size_t& rb) {
  if (a.size() != b.size()) throw std::invalid_argument("partitions differ in length");
  std::map<int, std::size_t> ia, ib;
  for (int v : a) ia.try_emplace(v, ia.size());
  for (int v : b) ib.try_emplace(v, ib.size());
  ra = ia.size();
  rb = ib.size();
  std::vector<std::vector<double>> t(ra, std::vector<double>(rb, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) t[ia[a[i]]][ib[b[i]]] += 1.0;
  return t;
}

double choose2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

PcaResult pca_project(const Matrix& x, double variance, bool whiten) {
  if (x.rows() < 2) throw std::invalid_argument("pca_project: needs at least two rows");
  if (!(variance > 0.0 && variance <= 1.0)) throw std::invalid_argument("pca_project: variance must be in (0, 1]");
  PcaResult r;
  r.whitened = whiten;
  r.mean = x.colwise().mean();
  const Matrix xc = x.rowwise() - r.mean.transpose();
  Eigen::JacobiSVD<Matrix> svd(xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const double denom = static_cast<double>(x.rows() - 1);
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    r.eigenvalues.push_back(s(i) * s(i) / denom);
    total += r.eigenvalues.back();
  }
  if (!(total > 0.0)) throw std::invalid_argument("pca_project: data has zero variance");
  double cum = 0.0;
  for (r.k = 0; r.k < r.eigenvalues.size();) {
    cum += r.eigenvalues[r.k++];
    if (cum / total >= variance - 1e-12) break;
  }
  const auto k = static_cast<Eigen::Index>(r.k);
  r.components = svd.matrixV().leftCols(k);
  r.projected = xc * r.components;
  if (whiten)
    for (Eigen::Index j = 0; j < k; ++j) {
      const double sd = std::sqrt(r.eigenvalues[static_cast<std::size_t>(j)]);
      if (sd > 0) r.projected.col(j) /= sd;
    }
  return r;
}

Clustering kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t restarts, std::size_t max_iter) {
  check_input(x, k);
  const Eigen::Index n = x.rows();
  Clustering best;
  best.objective = kInf;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(substream_seed(seed, "kmeans", r));
    Matrix c = kmeanspp(x, k, rng);
    std::vector<int> a(static_cast<std::size_t>(n), -1);
    double inertia = 0.0;
    for (std::size_t it = 0; it < max_iter; ++it) {
      bool changed = false;
      inertia = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index j;
        inertia += (c.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&j);
        if (a[static_cast<std::size_t>(i)] != static_cast<int>(j)) {
          a[static_cast<std::size_t>(i)] = static_cast<int>(j);
          changed = true;
        }
      }
      if (!changed) break;
      Matrix sum = Matrix::Zero(c.rows(), c.cols());
      std::vector<double> cnt(k, 0.0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sum.row(a[static_cast<std::size_t>(i)]) += x.row(i);
        cnt[static_cast<std::size_t>(a[static_cast<std::size_t>(i)])] += 1.0;
      }
      for (std::size_t j = 0; j < k; ++j)
        if (cnt[j] > 0) c.row(static_cast<Eigen::Index>(j)) = sum.row(static_cast<Eigen::Index>(j)) / cnt[j];
    }
    if (inertia < best.objective) {
      best.objective = inertia;
      best.assignments = relabel(a);
    }
  }
  return best;
}

Clustering gmm_diagonal(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t restarts,
                        std::size_t max_iter, double tol) {
  check_input(x, k);
  const Eigen::Index n = x.rows(), d = x.cols(), K = static_cast<Eigen::Index>(k);
  const Eigen::RowVectorXd mu_all = x.colwise().mean();
  const Eigen::RowVectorXd var_all = (x.rowwise() - mu_all).array().square().colwise().mean();
  const double floor = 1e-6 * std::max(var_all.maxCoeff(), 1e-300) + 1e-12;
  Clustering best;
  best.objective = -kInf;
  for (std::size_t r = 0; r < restarts; ++r) {
    Rng rng(substream_seed(seed, "gmm", r));
    Matrix mu = kmeanspp(x, k, rng);
    Matrix var = var_all.cwiseMax(floor).replicate(K, 1);
    Eigen::VectorXd w = Eigen::VectorXd::Constant(K, 1.0 / static_cast<double>(k));
    Matrix resp(n, K);
    double ll = -kInf;
    for (std::size_t it = 0; it < max_iter; ++it) {
      double new_ll = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < K; ++j) {
          const auto diff2 = (x.row(i) - mu.row(j)).array().square();
          resp(i, j) = std::log(w(j)) - 0.5 * ((diff2 / var.row(j).array()).sum() +
                                               var.row(j).array().log().sum() +
                                               static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
        }
        const double m = resp.row(i).maxCoeff();
        const double lse = m + std::log((resp.row(i).array() - m).exp().sum());
        resp.row(i) = (resp.row(i).array() - lse).exp();
        new_ll += lse;
      }
      const bool done = it > 0 && new_ll - ll < tol * std::max(1.0, std::abs(ll));
      ll = new_ll;
      if (done) break;
      for (Eigen::Index j = 0; j < K; ++j) {
        const double nk = std::max(resp.col(j).sum(), 1e-12);
        w(j) = nk / static_cast<double>(n);
        mu.row(j) = (resp.col(j).transpose() * x) / nk;
        var.row(j) = ((x.rowwise() - mu.row(j)).array().square().colwise() * resp.col(j).array()).colwise().sum() / nk;
        var.row(j) = var.row(j).cwiseMax(floor);
      }
    }
    if (ll > best.objective) {
      best.objective = ll;
      std::vector<int> a(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index j;
        resp.row(i).maxCoeff(&j);
        a[static_cast<std::size_t>(i)] = static_cast<int>(j);
      }
      best.assignments = relabel(a);
    }
  }
  return best;
}

Clustering ward(const Matrix& x, std::size_t k) {
  check_input(x, k);
  const std::size_t n = static_cast<std::size_t>(x.rows());
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      dist[i][j] = dist[j][i] =
          (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).squaredNorm();
  std::vector<double> size(n, 1.0);
  std::vector<bool> alive(n, true);
  std::vector<int> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = static_cast<int>(i);
  double merged_cost = 0.0;
  for (std::size_t clusters = n; clusters > k; --clusters) {
    std::size_t bi = 0, bj = 0;
    double bd = kInf;
    for (std::size_t i = 0; i < n; ++i)
      if (alive[i])
        for (std::size_t j = i + 1; j < n; ++j)
          if (alive[j] && dist[i][j] < bd) {
            bd = dist[i][j];
            bi = i;
            bj = j;
          }
    merged_cost += bd / 2.0;
    for (std::size_t m = 0; m < n; ++m) {
      if (!alive[m] || m == bi || m == bj) continue;
      const double nk = size[m];
      dist[bi][m] = dist[m][bi] =
          ((size[bi] + nk) * dist[bi][m] + (size[bj] + nk) * dist[bj][m] - nk * bd) / (size[bi] + size[bj] + nk);
    }
    size[bi] += size[bj];
    alive[bj] = false;
    for (int& l : label)
      if (l == static_cast<int>(bj)) l = static_cast<int>(bi);
  }
  return {relabel(label), merged_cost};
}

double cluster_accuracy(std::span<const int> assignments, std::span<const int> labels) {
  if (assignments.empty()) throw std::invalid_argument("cluster_accuracy: empty partitions");
  std::size_t ra, rb;
  const auto t = contingency(assignments, labels, ra, rb);
  const std::size_t n = std::max(ra, rb);
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < ra; ++i)
    for (std::size_t j = 0; j < rb; ++j) cost[i][j] = -t[i][j];
  const auto match = hungarian(cost);
  double hit = 0.0;
  for (std::size_t i = 0; i < ra; ++i)
    if (static_cast<std::size_t>(match[i]) < rb) hit += t[i][static_cast<std::size_t>(match[i])];
  return hit / static_cast<double>(assignments.size());
}

double adjusted_rand_score(std::span<const int> assignments, std::span<const int> labels) {
  if (assignments.empty()) throw std::invalid_argument("adjusted_rand_score: empty partition");
  std::size_t ra, rb;
  const auto t = contingency(assignments, labels, ra, rb);
  if (assignments.size() == 1) return 1.0;
  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  std::vector<double> col(rb, 0.0);
  for (std::size_t i = 0; i < ra; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < rb; ++j) {
      sum_ij += choose2(t[i][j]);
      row += t[i][j];
      col[j] += t[i][j];
    }
    sum_a += choose2(row);
  }
  for (double c : col) sum_b += choose2(c);
  const double expected = sum_a * sum_b / choose2(static_cast<double>(assignments.size()));
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_ij - expected) / (max_index - expected);
}

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::KMeans: return "kmeans";
    case Algorithm::Gmm: return "gmm";
    case Algorithm::Ward: return "ward";
  }
  return "?";
}

GridResult cluster_grid_search(const Matrix& x, std::span<const int> labels, std::size_t n_clusters,
                               std::uint64_t seed, double variance) {
  if (x.rows() == 0) throw std::invalid_argument("cluster_grid_search: empty representation");
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw std::invalid_argument("cluster_grid_search: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(x.rows()) + " rows");
  GridResult g;
  bool first = true;
  for (bool whiten : {false, true}) {
    const auto p = pca_project(x, variance, whiten);
    for (Algorithm a : {Algorithm::KMeans, Algorithm::Gmm, Algorithm::Ward}) {
      GridEntry e;
      e.algorithm = a;
      e.whiten = whiten;
      e.pca_dim = p.k;
      const std::uint64_t s = substream_seed(seed, whiten ? "whiten" : "raw");
      switch (a) {
        case Algorithm::KMeans: e.assignments = kmeans(p.projected, n_clusters, s).assignments; break;
        case Algorithm::Gmm: e.assignments = gmm_diagonal(p.projected, n_clusters, s).assignments; break;
        case Algorithm::Ward: e.assignments = ward(p.projected, n_clusters).assignments; break;
      }
      e.acc = cluster_accuracy(e.assignments, labels);
      e.ars = adjusted_rand_score(e.assignments, labels);
      if (first || e.acc > g.best.acc || (e.acc == g.best.acc && e.ars > g.best.ars)) g.best = e;
      first = false;
      g.entries.push_back(std::move(e));
    }
  }
  return g;
}

double welch_p_value(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_p_value: each group needs two values");
  auto moments = [](std::span<const double> v, double& m, double& var) {
    m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    var /= static_cast<double>(v.size() - 1);
  };
  double ma, va, mb, vb;
  moments(a, ma, va);
  moments(b, mb, vb);
  const double sa = va / static_cast<double>(a.size()), sb = vb / static_cast<double>(b.size());
  if (sa + sb == 0.0) return ma == mb ? 1.0 : 0.0;
  const double t = (ma - mb) / std::sqrt(sa + sb);
  const double df = (sa + sb) * (sa + sb) /
                    (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  const boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

std::vector<Region> cluster_difference_regions(std::span<const Tensor> beats, std::span<const int> assignments,
                                               double alpha) {
  if (beats.size() != assignments.size())
    throw std::invalid_argument("cluster_difference_regions: " + std::to_string(assignments.size()) +
                                " assignments for " + std::to_string(beats.size()) + " beats");
  std::vector<std::size_t> g0, g1;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == 0) g0.push_back(i);
    else if (assignments[i] == 1) g1.push_back(i);
  }
  if (g0.size() < 2 || g1.size() < 2)
    throw std::invalid_argument("cluster_difference_regions: each cluster needs at least two members");
  const std::size_t W = beats.front().dim(0), L = beats.front().dim(1);
  const double cells = static_cast<double>(W * L);
  std::vector<double> p(W * L), eff(W * L);
  std::vector<double> a(g0.size()), b(g1.size());
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t l = 0; l < L; ++l) {
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < g0.size(); ++i) ma += (a[i] = beats[g0[i]].at(w, l));
      for (std::size_t i = 0; i < g1.size(); ++i) mb += (b[i] = beats[g1[i]].at(w, l));
      p[w * L + l] = std::min(1.0, welch_p_value(a, b) * cells);
      eff[w * L + l] = mb / static_cast<double>(g1.size()) - ma / static_cast<double>(g0.size());
    }
  std::vector<Region> out;
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t w = 0; w < W;) {
      if (!(p[w * L + l] < alpha)) {
        ++w;
        continue;
      }
      Region r{l, w, w, 1.0, 0.0};
      for (; w < W && p[w * L + l] < alpha; ++w) {
        r.p = std::min(r.p, p[w * L + l]);
        r.effect += eff[w * L + l];
      }
      r.tau_end = w;
      r.effect /= static_cast<double>(r.tau_end - r.tau_begin);
      out.push_back(r);
    }
  std::stable_sort(out.begin(), out.end(),
                   [](const Region& x, const Region& y) { return std::abs(x.effect) > std::abs(y.effect); });
  return out;
}

std::string_view to_string(RepKind k) {
  switch (k) {
    case RepKind::AttributionBeat: return "attribution";
    case RepKind::InputBeat: return "input";
    case RepKind::Hidden: return "hidden";
  }
  return "?";
}

Matrix build_representation(RepKind kind, const nn::Model& model, const EcgDataset& dataset,
                            std::span<const std::size_t> indices, std::size_t k, attr::Method method,
                            const attr::Options& opts, std::string_view hidden, std::size_t jobs) {
  if (indices.empty()) throw std::invalid_argument("build_representation: no records");
  std::vector<std::vector<double>> rows(indices.size());
  const std::size_t pos = kind == RepKind::Hidden ? model.position_of(hidden) : 0;
  parallel_for(indices.size(), jobs, [&](std::size_t j) {
    const EcgRecord& rec = dataset.records[indices[j]];
    if (kind == RepKind::Hidden) {
      auto r = nn::forward(model, rec.signal, true);
      rows[j] = tcav::pooled_activation(*r.trace, pos);
      return;
    }
    const Tensor src = kind == RepKind::InputBeat ? rec.signal : attr::attribute(model, rec.signal, k, method, opts).values;
    const Tensor beat = glocal::median_beat(glocal::crop_beats(src, rec.r_peaks, rec.id));
    rows[j].assign(beat.values().begin(), beat.values().end());
  });
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

}  // namespace ecgxai::disc
