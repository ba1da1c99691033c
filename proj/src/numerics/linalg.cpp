#include "crayon/numerics/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "crayon/numerics/rng.hpp"

namespace crayon::numerics {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine_similarity: sizes " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw ZeroVectorError("cosine_similarity: zero-norm vector");
  }
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

SymmetricEigen symmetric_eigen(const MatrixD& m) {
  if (m.rows() != m.cols()) throw DimensionError("symmetric_eigen: matrix not square");
  const std::size_t n = m.rows();
  MatrixD a = m;
  MatrixD v = identity<double>(n);

  double scale = 0.0;
  for (double x : a.values()) scale = std::max(scale, std::abs(x));

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off <= 1e-30 * std::max(scale * scale, 1e-300)) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymmetricEigen out;
  out.values.resize(n);
  out.vectors = MatrixD(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = order[r];
    out.values[r] = a(src, src);
    for (std::size_t k = 0; k < n; ++k) out.vectors(r, k) = v(k, src);
  }
  return out;
}

namespace {

void fix_sign(std::span<double> row) {
  for (double x : row) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0) {
        for (double& y : row) y = -y;
      }
      return;
    }
  }
}

void check_finite(const MatrixD& m, const char* op) {
  if (!all_finite(m)) throw NonFiniteError(std::string(op) + ": non-finite input");
}

}  // namespace

PcaProjection fit_pca(const MatrixD& samples, std::size_t out_dim) {
  const std::size_t count = samples.rows();
  const std::size_t dim = samples.cols();
  if (out_dim < 1) throw CountError("fit_pca: out_dim must be >= 1");
  if (out_dim > dim) {
    throw DimensionError("fit_pca: out_dim " + std::to_string(out_dim) + " exceeds input dim " +
                         std::to_string(dim));
  }
  if (count < 2) throw CountError("fit_pca: need at least 2 samples");
  if (count < out_dim) {
    throw CountError("fit_pca: " + std::to_string(count) + " samples < out_dim " +
                     std::to_string(out_dim));
  }
  check_finite(samples, "fit_pca");

  PcaProjection p;
  p.mean.assign(dim, 0.0);
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t c = 0; c < dim; ++c) p.mean[c] += samples(r, c);
  }
  for (double& m : p.mean) m /= static_cast<double>(count);

  MatrixD cov(dim, dim);
  std::vector<double> centred(dim);
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t c = 0; c < dim; ++c) centred[c] = samples(r, c) - p.mean[c];
    for (std::size_t i = 0; i < dim; ++i) {
      const double ci = centred[i];
      for (std::size_t j = i; j < dim; ++j) cov(i, j) += ci * centred[j];
    }
  }
  const double denom = static_cast<double>(count - 1);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i; j < dim; ++j) {
      cov(i, j) /= denom;
      cov(j, i) = cov(i, j);
    }
  }

  SymmetricEigen eig = symmetric_eigen(cov);
  const double top = std::max(eig.values.empty() ? 0.0 : eig.values[0], 0.0);
  p.components = MatrixD(out_dim, dim);
  for (std::size_t r = 0; r < out_dim; ++r) {
    auto row = p.components.row(r);
    std::copy(eig.vectors.row(r).begin(), eig.vectors.row(r).end(), row.begin());
    fix_sign(row);
    p.explained.push_back(eig.values[r]);
    if (eig.values[r] <= 1e-12 * std::max(top, 1.0)) p.rank_deficient = true;
  }
  return p;
}

PcaProjection identity_projection(std::size_t dim) {
  PcaProjection p;
  p.mean.assign(dim, 0.0);
  p.components = identity<double>(dim);
  p.explained.assign(dim, 1.0);
  return p;
}

std::vector<double> pca_project(const PcaProjection& p, std::span<const double> x) {
  if (x.size() != p.input_dim()) {
    throw DimensionError("pca_project: input has " + std::to_string(x.size()) +
                         " entries, projection expects " + std::to_string(p.input_dim()));
  }
  std::vector<double> out(p.out_dim(), 0.0);
  for (std::size_t r = 0; r < p.out_dim(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) s += p.components(r, c) * (x[c] - p.mean[c]);
    out[r] = s;
  }
  return out;
}

std::vector<double> pca_reconstruct(const PcaProjection& p, std::span<const double> z) {
  if (z.size() != p.out_dim()) throw DimensionError("pca_reconstruct: wrong code length");
  std::vector<double> x = p.mean;
  for (std::size_t r = 0; r < p.out_dim(); ++r) {
    for (std::size_t c = 0; c < x.size(); ++c) x[c] += z[r] * p.components(r, c);
  }
  return x;
}

namespace {

std::size_t nearest(const MatrixD& centroids, std::span<const double> x, double* dist) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(centroids.row(c), x);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist != nullptr) *dist = best_d;
  return best;
}

MatrixD plus_plus_init(const MatrixD& samples, std::size_t k, SplitMix64& rng) {
  const std::size_t count = samples.rows();
  MatrixD centroids(k, samples.cols());
  std::vector<double> d2(count, std::numeric_limits<double>::infinity());

  std::size_t pick = static_cast<std::size_t>(rng.below(count));
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double d : d2) total += d;
      if (total <= 0.0) {
        pick = static_cast<std::size_t>(rng.below(count));
      } else {
        const double u = rng.uniform() * total;
        double cum = 0.0;
        pick = count;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < count; ++i) {
          if (d2[i] > 0.0) last_positive = i;
          cum += d2[i];
          if (cum > u && d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
        if (pick == count) pick = last_positive;
      }
    }
    std::copy(samples.row(pick).begin(), samples.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < count; ++i) {
      d2[i] = std::min(d2[i], squared_distance(samples.row(i), centroids.row(c)));
    }
  }
  return centroids;
}

struct LloydRun {
  MatrixD centroids;
  std::vector<std::size_t> assignment;
  double objective = 0.0;
  std::size_t iterations = 0;
  std::vector<double> trace;
};

double assign_all(const MatrixD& samples, const MatrixD& centroids,
                  std::vector<std::size_t>& assignment) {
  double obj = 0.0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    double d = 0.0;
    assignment[i] = nearest(centroids, samples.row(i), &d);
    obj += d;
  }
  return obj;
}

void update_centroids(const MatrixD& samples, std::vector<std::size_t>& assignment,
                      MatrixD& centroids) {
  const std::size_t k = centroids.rows();
  const std::size_t dim = centroids.cols();
  std::vector<std::size_t> counts(k, 0);
  MatrixD sums(k, dim);
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const std::size_t c = assignment[i];
    ++counts[c];
    for (std::size_t j = 0; j < dim; ++j) sums(c, j) += samples(i, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < dim; ++j) {
      centroids(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    }
  }
  // Empty cluster: take over the point farthest from its own centroid.
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
      if (counts[assignment[i]] <= 1) continue;
      const double d = squared_distance(samples.row(i), centroids.row(assignment[i]));
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far_d < 0.0) continue;
    --counts[assignment[far]];
    assignment[far] = c;
    counts[c] = 1;
    std::copy(samples.row(far).begin(), samples.row(far).end(), centroids.row(c).begin());
  }
}

LloydRun lloyd(const MatrixD& samples, MatrixD centroids, std::size_t max_iters) {
  LloydRun run;
  run.assignment.assign(samples.rows(), 0);
  run.objective = assign_all(samples, centroids, run.assignment);
  run.trace.push_back(run.objective);
  std::vector<std::size_t> next(samples.rows(), 0);
  for (std::size_t it = 0; it < max_iters; ++it) {
    update_centroids(samples, run.assignment, centroids);
    const double obj = assign_all(samples, centroids, next);
    run.iterations = it + 1;
    run.trace.push_back(obj);
    run.objective = obj;
    const bool unchanged = next == run.assignment;
    run.assignment.swap(next);
    if (unchanged) break;
  }
  run.centroids = std::move(centroids);
  return run;
}

// Single-point transfers that lower the objective once means are updated
// exactly. Stops at a state no single move improves; Lloyd fixed points are
// not always such states.
void transfer_refine(const MatrixD& samples, LloydRun& run) {
  const std::size_t k = run.centroids.rows();
  const std::size_t dim = samples.cols();
  std::vector<std::size_t> counts(k, 0);
  MatrixD sums(k, dim);
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    ++counts[run.assignment[i]];
    for (std::size_t j = 0; j < dim; ++j) sums(run.assignment[i], j) += samples(i, j);
  }
  auto mean_of = [&](std::size_t c) {
    std::vector<double> m(dim);
    for (std::size_t j = 0; j < dim; ++j) m[j] = sums(c, j) / static_cast<double>(counts[c]);
    return m;
  };
  bool moved = true;
  std::size_t guard = 0;
  while (moved && guard++ < 100 * samples.rows()) {
    moved = false;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
      const std::size_t from = run.assignment[i];
      if (counts[from] <= 1) continue;
      const double nf = static_cast<double>(counts[from]);
      const double leave = nf / (nf - 1.0) * squared_distance(samples.row(i), mean_of(from));
      std::size_t to = from;
      double best_gain = 1e-12 * std::max(leave, 1.0);
      for (std::size_t c = 0; c < k; ++c) {
        if (c == from) continue;
        const double nc = static_cast<double>(counts[c]);
        const double join = nc / (nc + 1.0) * squared_distance(samples.row(i), mean_of(c));
        if (leave - join > best_gain) {
          best_gain = leave - join;
          to = c;
        }
      }
      if (to == from) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        sums(from, j) -= samples(i, j);
        sums(to, j) += samples(i, j);
      }
      --counts[from];
      ++counts[to];
      run.assignment[i] = to;
      moved = true;
    }
  }
  if (guard <= 1) return;
  for (std::size_t c = 0; c < k; ++c) {
    const auto m = mean_of(c);
    std::copy(m.begin(), m.end(), run.centroids.row(c).begin());
  }
  double obj = 0.0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    obj += squared_distance(samples.row(i), run.centroids.row(run.assignment[i]));
  }
  if (obj < run.objective) {
    run.objective = obj;
    run.trace.push_back(obj);
  }
}

}  // namespace

KMeansResult kmeans_detailed(const MatrixD& samples, std::size_t k, std::uint64_t seed,
                             const KMeansOptions& options) {
  if (k < 1) throw CountError("kmeans: k must be >= 1");
  if (k > samples.rows()) {
    throw CountError("kmeans: k=" + std::to_string(k) + " exceeds sample count " +
                     std::to_string(samples.rows()));
  }
  check_finite(samples, "kmeans");

  KMeansResult best;
  bool have = false;
  const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);
  for (std::size_t r = 0; r < restarts; ++r) {
    SplitMix64 rng(derive_seed(seed, r));
    LloydRun run = lloyd(samples, plus_plus_init(samples, k, rng), options.max_iters);
    transfer_refine(samples, run);
    if (!have || run.objective < best.objective) {
      best.centroids.centroids = std::move(run.centroids);
      best.assignment = std::move(run.assignment);
      best.objective = run.objective;
      best.iterations = run.iterations;
      best.objective_trace = std::move(run.trace);
      have = true;
    }
  }
  return best;
}

}  // namespace crayon::numerics
