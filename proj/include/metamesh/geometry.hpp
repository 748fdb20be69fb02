#pragma once

// Poincare-section geometry: the lumping metric, exact nearest-neighbour
// queries against a growing mesh, mesh-growth dimensionality fits and PCA
// projection of section states.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metamesh/common.hpp"

namespace metamesh {

/// Post-impact state on the Poincare section.
struct PoincareState {
  std::vector<double> coords;

  std::size_t dim() const noexcept { return coords.size(); }
};

/// Where a mesh came from. Digests are hex SHA-256 strings filled in by the
/// command layer; the library only carries them.
struct MeshProvenance {
  std::string model_id;
  std::vector<std::string> policy_ids;
  std::string profile_id;
  std::string config_digest;
  std::string disturbance_digest;
  std::uint64_t seed = 0;
};

/// Weighted squared Euclidean distance. An empty weight span means all ones.
inline double squared_distance(std::span<const double> a,
                               std::span<const double> b,
                               std::span<const double> weights = {}) {
  double sum = 0.0;
  if (weights.empty()) {
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = a[k] - b[k];
      sum += d * d;
    }
  } else {
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = a[k] - b[k];
      sum += weights[k] * (d * d);
    }
  }
  return sum;
}

namespace detail {

// Same accumulation order as squared_distance; stops once the partial sum
// exceeds `limit`, so any value it returns above `limit` is only a rejection.
inline double bounded_squared_distance(std::span<const double> a,
                                       std::span<const double> b,
                                       std::span<const double> weights,
                                       double limit) {
  double sum = 0.0;
  if (weights.empty()) {
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = a[k] - b[k];
      sum += d * d;
      if (sum > limit) return sum;
    }
  } else {
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = a[k] - b[k];
      sum += weights[k] * (d * d);
      if (sum > limit) return sum;
    }
  }
  return sum;
}

}  // namespace detail

/// Ordered set of section states. Row 0 is the absorbing failure sentinel;
/// its coordinates are zeros and never take part in distance queries.
class Mesh {
 public:
  static constexpr std::size_t kFailure = 0;

  Mesh() = default;

  Mesh(std::size_t dim, double d_tr, std::vector<double> weights = {})
      : dim_(dim), d_tr_(d_tr), weights_(std::move(weights)) {
    if (dim == 0) throw InvalidArgument("mesh dimension must be positive");
    if (!(d_tr > 0.0) || !std::isfinite(d_tr))
      throw InvalidArgument("lumping threshold d_tr must be positive");
    if (!weights_.empty()) {
      if (weights_.size() != dim)
        throw InvalidArgument("metric weight vector length must equal dim");
      for (double w : weights_) {
        if (!(w > 0.0) || !std::isfinite(w))
          throw InvalidArgument("metric weights must be positive and finite");
      }
    }
    flat_.assign(dim_, 0.0);
  }

  /// Rebuild a mesh from its flat row-major storage (failure row included).
  static Mesh from_flat(std::size_t dim, double d_tr,
                        std::vector<double> weights, std::vector<double> flat) {
    Mesh mesh(dim, d_tr, std::move(weights));
    if (flat.size() < dim || flat.size() % dim != 0)
      throw InvalidArgument("flat mesh storage is not a whole number of rows");
    if (!all_finite(flat))
      throw InvalidArgument("mesh coordinates must be finite");
    mesh.flat_ = std::move(flat);
    return mesh;
  }

  std::size_t size() const noexcept { return dim_ == 0 ? 0 : flat_.size() / dim_; }
  std::size_t dim() const noexcept { return dim_; }
  double threshold() const noexcept { return d_tr_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const double> data() const noexcept { return flat_; }

  std::span<const double> state(std::size_t i) const {
    return std::span<const double>(flat_).subspan(i * dim_, dim_);
  }

  /// Appends a state and returns its index.
  std::size_t append(std::span<const double> coords) {
    if (coords.size() != dim_)
      throw InvalidArgument("state dimension does not match mesh dimension");
    if (!all_finite(coords))
      throw InvalidArgument("state coordinates must be finite");
    flat_.insert(flat_.end(), coords.begin(), coords.end());
    return size() - 1;
  }

  MeshProvenance provenance;

 private:
  std::size_t dim_ = 0;
  double d_tr_ = 0.0;
  std::vector<double> weights_;
  std::vector<double> flat_;
};

struct NearestResult {
  double distance = kInfinity;
  std::size_t index = 0;
  double squared = kInfinity;
};

namespace detail {

inline void check_query(std::span<const double> query, const Mesh& mesh) {
  if (query.size() != mesh.dim())
    throw InvalidArgument("query dimension " + std::to_string(query.size()) +
                          " does not match mesh dimension " +
                          std::to_string(mesh.dim()));
  if (mesh.size() < 2)
    throw InvalidArgument("mesh has no non-failure states");
}

inline void scan_range(const Mesh& mesh, std::span<const double> query,
                       std::size_t first, std::size_t last, NearestResult& best) {
  const auto weights = mesh.weights();
  for (std::size_t i = first; i < last; ++i) {
    const double sq =
        bounded_squared_distance(query, mesh.state(i), weights, best.squared);
    if (sq < best.squared || (sq == best.squared && i < best.index)) {
      best.squared = sq;
      best.index = i;
    }
  }
}

}  // namespace detail

/// Reference nearest-neighbour query: exhaustive scan over the non-failure
/// states, ties broken by lowest index.
inline NearestResult distance_to_mesh(std::span<const double> query,
                                      const Mesh& mesh) {
  detail::check_query(query, mesh);
  NearestResult best;
  best.index = mesh.size();
  detail::scan_range(mesh, query, 1, mesh.size(), best);
  best.distance = std::sqrt(best.squared);
  return best;
}

inline NearestResult distance_to_mesh(const PoincareState& s, const Mesh& mesh) {
  return distance_to_mesh(std::span<const double>(s.coords), mesh);
}

/// Exact nearest-neighbour index over a growing mesh: a k-d tree over a
/// prefix of the states plus a linearly scanned tail, rebuilt as the tail
/// grows. Returns exactly what distance_to_mesh returns (same accumulation
/// order, same tie rule); pruning only discards subtrees whose plane bound
/// strictly exceeds the best squared distance.
class MeshIndex {
 public:
  explicit MeshIndex(const Mesh& mesh) : mesh_(&mesh) { sync(); }

  /// Picks up states appended to the mesh since the last call.
  void sync() {
    const std::size_t states = mesh_->size() > 0 ? mesh_->size() - 1 : 0;
    const std::size_t tail = states - indexed_;
    if (tail > std::max<std::size_t>(kMinTail, indexed_ / 2)) rebuild(states);
  }

  NearestResult nearest(std::span<const double> query) const {
    detail::check_query(query, *mesh_);
    NearestResult best;
    best.index = mesh_->size();
    if (!nodes_.empty()) search(0, query, best);
    detail::scan_range(*mesh_, query, 1 + indexed_, mesh_->size(), best);
    best.distance = std::sqrt(best.squared);
    return best;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;
  static constexpr std::size_t kMinTail = 256;

  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
  };

  double weight(std::size_t axis) const {
    const auto w = mesh_->weights();
    return w.empty() ? 1.0 : w[axis];
  }

  void rebuild(std::size_t states) {
    order_.resize(states);
    std::iota(order_.begin(), order_.end(), std::uint32_t{1});
    nodes_.clear();
    nodes_.reserve(2 * states / kLeafSize + 1);
    indexed_ = states;
    if (states > 0) build(0, static_cast<std::uint32_t>(states));
  }

  std::int32_t build(std::uint32_t begin, std::uint32_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(Node{begin, end});
    if (end - begin <= kLeafSize) return id;

    const std::size_t dim = mesh_->dim();
    int best_axis = -1;
    double best_spread = 0.0;
    for (std::size_t a = 0; a < dim; ++a) {
      double lo = kInfinity, hi = -kInfinity;
      for (std::uint32_t i = begin; i < end; ++i) {
        const double v = mesh_->state(order_[i])[a];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double spread = weight(a) * (hi - lo) * (hi - lo);
      if (spread > best_spread) {
        best_spread = spread;
        best_axis = static_cast<int>(a);
      }
    }
    if (best_axis < 0) return id;

    const std::uint32_t mid = begin + (end - begin) / 2;
    const auto axis = static_cast<std::size_t>(best_axis);
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end,
                     [&](std::uint32_t x, std::uint32_t y) {
                       return mesh_->state(x)[axis] < mesh_->state(y)[axis];
                     });
    const double split = mesh_->state(order_[mid])[axis];
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].axis = best_axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(std::int32_t id, std::span<const double> query,
              NearestResult& best) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.axis < 0) {
      const auto weights = mesh_->weights();
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        const double sq = detail::bounded_squared_distance(
            query, mesh_->state(idx), weights, best.squared);
        if (sq < best.squared || (sq == best.squared && idx < best.index)) {
          best.squared = sq;
          best.index = idx;
        }
      }
      return;
    }
    const auto axis = static_cast<std::size_t>(node.axis);
    const double diff = query[axis] - node.split;
    const std::int32_t near = diff < 0.0 ? node.left : node.right;
    const std::int32_t far = diff < 0.0 ? node.right : node.left;
    search(near, query, best);
    const double bound = weight(axis) * (diff * diff);
    if (bound <= best.squared) search(far, query, best);
  }

  const Mesh* mesh_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t indexed_ = 0;
};

// ---------------------------------------------------------------------------
// Mesh-growth dimensionality

struct DimensionSample {
  double d_tr = 0.0;
  double count = 0.0;
};

/// Least-squares fit of log N against log d_tr. If the reachable set is an
/// n-dimensional manifold, N grows like d_tr^-n, so n_hat = -slope.
struct DimensionFit {
  std::vector<DimensionSample> samples;
  double slope = 0.0;
  double intercept = 0.0;
  double n_hat = 0.0;
  double r_squared = 0.0;
};

inline DimensionFit estimate_dimension(std::span<const DimensionSample> samples) {
  if (samples.size() < 2)
    throw InvalidArgument("dimension fit needs at least two (d_tr, N) samples");
  const double n = static_cast<double>(samples.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& s : samples) {
    if (!(s.d_tr > 0.0) || !std::isfinite(s.d_tr))
      throw InvalidArgument("dimension fit: d_tr must be positive");
    if (!(s.count >= 1.0) || !std::isfinite(s.count))
      throw InvalidArgument("dimension fit: N must be at least 1");
    sx += std::log(s.d_tr);
    sy += std::log(s.count);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& s : samples) {
    const double dx = std::log(s.d_tr) - mx;
    const double dy = std::log(s.count) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0)
    throw InvalidArgument("dimension fit: all d_tr values are identical");

  DimensionFit fit;
  fit.samples.assign(samples.begin(), samples.end());
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.n_hat = -fit.slope;
  double ss_res = 0.0;
  for (const auto& s : samples) {
    const double r = std::log(s.count) - (fit.intercept + fit.slope * std::log(s.d_tr));
    ss_res += r * r;
  }
  if (syy > 0.0)
    fit.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  else
    fit.r_squared = 1.0;
  return fit;
}

// ---------------------------------------------------------------------------
// PCA

/// Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.
/// `values` are sorted in decreasing order; `vectors` holds the matching
/// unit eigenvectors row by row (row i pairs with values[i]).
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;
};

inline SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n) {
  if (a.size() != n * n) throw InvalidArgument("jacobi_eigen: matrix is not n x n");
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto at = [n](std::vector<double>& m, std::size_t r, std::size_t c) -> double& {
    return m[r * n + c];
  };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      diag += at(a, p, p) * at(a, p, p);
      for (std::size_t q = p + 1; q < n; ++q) off += at(a, p, q) * at(a, p, q);
    }
    if (off == 0.0 || off <= 1e-32 * diag) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = at(a, p, q);
        if (apq == 0.0) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = at(a, k, p), akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = at(a, p, k), aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = at(v, k, p), vkq = at(v, k, q);
          at(v, k, p) = c * vkp - s * vkq;
          at(v, k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return at(a, x, x) > at(a, y, y);
  });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    out.values[r] = at(a, order[r], order[r]);
    for (std::size_t k = 0; k < n; ++k) out.vectors[r * n + k] = at(v, k, order[r]);
  }
  return out;
}

struct PcaProjection {
  std::size_t dim = 0;
  std::size_t k = 0;
  std::vector<double> components;          // k rows of length dim
  std::vector<double> variance_explained;  // k entries, non-increasing
  std::vector<double> projected;           // one k-vector per input state
  std::vector<double> mean;                // per-coordinate normalization
  std::vector<double> scale;

  std::span<const double> component(std::size_t i) const {
    return std::span<const double>(components).subspan(i * dim, dim);
  }
  std::span<const double> point(std::size_t i) const {
    return std::span<const double>(projected).subspan(i * k, k);
  }
  std::size_t count() const { return k == 0 ? 0 : projected.size() / k; }
};

/// Normalizes each coordinate to zero mean and unit sample variance
/// (zero-variance coordinates keep scale 1) and projects onto the top-k
/// principal directions. Each component's largest-magnitude entry is positive.
inline PcaProjection pca_project(std::span<const double> flat, std::size_t dim,
                                 std::size_t k) {
  if (dim == 0 || flat.size() % dim != 0)
    throw InvalidArgument("pca_project: data is not a whole number of rows");
  const std::size_t n = flat.size() / dim;
  if (k == 0 || k > dim)
    throw InvalidArgument("pca_project: k must be in [1, dim]");
  if (n < k + 1)
    throw InvalidArgument("pca_project: need at least k+1 states");
  if (!all_finite(flat)) throw InvalidArgument("pca_project: non-finite input");

  PcaProjection out;
  out.dim = dim;
  out.k = k;
  out.mean.assign(dim, 0.0);
  out.scale.assign(dim, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dim; ++c) out.mean[c] += flat[i * dim + c];
  for (double& m : out.mean) m /= static_cast<double>(n);
  for (std::size_t c = 0; c < dim; ++c) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = flat[i * dim + c] - out.mean[c];
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    out.scale[c] = sd > 0.0 ? sd : 1.0;
  }

  std::vector<double> z(n * dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < dim; ++c)
      z[i * dim + c] = (flat[i * dim + c] - out.mean[c]) / out.scale[c];

  std::vector<double> cov(dim * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t c = r; c < dim; ++c) cov[r * dim + c] += z[i * dim + r] * z[i * dim + c];
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = r; c < dim; ++c) {
      cov[r * dim + c] /= static_cast<double>(n - 1);
      cov[c * dim + r] = cov[r * dim + c];
    }

  double trace = 0.0;
  for (std::size_t r = 0; r < dim; ++r) trace += cov[r * dim + r];

  const SymmetricEigen eig = jacobi_eigen(std::move(cov), dim);
  out.components.resize(k * dim);
  out.variance_explained.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::span<const double> vec(eig.vectors.data() + i * dim, dim);
    std::size_t lead = 0;
    for (std::size_t c = 1; c < dim; ++c)
      if (std::abs(vec[c]) > std::abs(vec[lead])) lead = c;
    const double sign = vec[lead] < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < dim; ++c) out.components[i * dim + c] = sign * vec[c];
    out.variance_explained[i] =
        trace > 0.0 ? std::max(eig.values[i], 0.0) / trace : 0.0;
  }

  out.projected.assign(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += z[i * dim + c] * out.components[j * dim + c];
      out.projected[i * k + j] = s;
    }
  return out;
}

inline PcaProjection pca_project(std::span<const PoincareState> states, std::size_t k) {
  if (states.empty()) throw InvalidArgument("pca_project: no states");
  const std::size_t dim = states.front().dim();
  std::vector<double> flat;
  flat.reserve(states.size() * dim);
  for (const auto& s : states) {
    if (s.dim() != dim) throw InvalidArgument("pca_project: mixed state dimensions");
    flat.insert(flat.end(), s.coords.begin(), s.coords.end());
  }
  return pca_project(flat, dim, k);
}

}  // namespace metamesh
