#pragma once

// Rotation utilities, sampling and neighborhood kernels, patch construction,
// orientation-frame algebra, and the rotation-invariant geometric relations.
// All geometry runs in double precision; the network casts on ingestion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace parot::geom {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double dist(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline Vec3 normalized(const Vec3& a) {
  double n = norm(a);
  if (n == 0.0) throw std::invalid_argument("normalized: zero vector");
  return a * (1.0 / n);
}

/// Row-major 3x3 matrix. Points are row vectors; rotation acts as p * R.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
  double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }

  static Mat3 identity() { return Mat3{}; }

  Mat3 transposed() const {
    Mat3 t;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) t(c, r) = (*this)(r, c);
    return t;
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 out;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (std::size_t k = 0; k < 3; ++k) s += (*this)(r, k) * o(k, c);
        out(r, c) = s;
      }
    return out;
  }
  /// Row vector times matrix: (v * R).
  friend Vec3 operator*(const Vec3& v, const Mat3& r) {
    return {v[0] * r(0, 0) + v[1] * r(1, 0) + v[2] * r(2, 0),
            v[0] * r(0, 1) + v[1] * r(1, 1) + v[2] * r(2, 1),
            v[0] * r(0, 2) + v[1] * r(1, 2) + v[2] * r(2, 2)};
  }
};

struct Rotation {
  Mat3 m;
  static Rotation identity() { return {Mat3::identity()}; }
  Rotation inverse() const { return {m.transposed()}; }
  Rotation operator*(const Rotation& o) const { return {m * o.m}; }
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<int> labels;  // optional, per point
  int class_id = -1;
};

struct Patch {
  enum class Scale { kLocal, kGlobal };
  std::vector<Vec3> local_points;  // world points minus reference point
  Vec3 reference_point{0, 0, 0};   // world frame
  Scale scale = Scale::kLocal;
};

struct OrientationFrame {
  Vec3 d1{1, 0, 0}, d2{0, 1, 0}, d3{0, 0, 1};
  bool degenerate = false;
};

/// Patch-patch relations have 16 scalars, point-patch relations have 4.
struct GeoRelation {
  std::vector<double> values;
};

// ---------------------------------------------------------------------------
// Rotations

/// Uniform SO(3) rotation from a normalized 4-component Gaussian quaternion.
inline Rotation random_rotation_so3(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  double w, x, y, z, n;
  do {
    w = gauss(rng);
    x = gauss(rng);
    y = gauss(rng);
    z = gauss(rng);
    n = std::sqrt(w * w + x * x + y * y + z * z);
  } while (n < 1e-12);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  Rotation r;
  r.m.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
           2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
           2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  return r;
}

inline Rotation rotation_z(double angle) {
  double c = std::cos(angle), s = std::sin(angle);
  Rotation r;
  r.m.m = {c, s, 0, -s, c, 0, 0, 0, 1};
  return r;
}

inline Rotation random_rotation_z(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 2.0 * M_PI);
  return rotation_z(u(rng));
}

inline PointCloud apply_rotation(const PointCloud& cloud, const Rotation& r) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = p * r.m;
  return out;
}

inline Patch apply_rotation(const Patch& patch, const Rotation& r) {
  Patch out = patch;
  for (auto& p : out.local_points) p = p * r.m;
  out.reference_point = patch.reference_point * r.m;
  return out;
}

/// Centers the cloud at the origin and scales the farthest point to norm 1.
inline PointCloud center_and_scale(const PointCloud& cloud) {
  if (cloud.points.empty())
    throw std::invalid_argument("center_and_scale: empty cloud");
  Vec3 centroid{0, 0, 0};
  for (const auto& p : cloud.points) centroid = centroid + p;
  centroid = centroid * (1.0 / double(cloud.points.size()));
  double max_norm = 0;
  PointCloud out = cloud;
  for (auto& p : out.points) {
    p = p - centroid;
    max_norm = std::max(max_norm, norm(p));
  }
  if (max_norm < 1e-12)
    throw std::invalid_argument("center_and_scale: degenerate cloud (all points identical)");
  for (auto& p : out.points) p = p * (1.0 / max_norm);
  return out;
}

// ---------------------------------------------------------------------------
// Sampling and neighborhood kernels

/// Farthest point sampling; the first index is drawn from the generator.
inline std::vector<std::size_t> fps(const PointCloud& cloud, std::size_t m,
                                    std::mt19937_64& rng) {
  const std::size_t n = cloud.points.size();
  if (m < 1 || m > n)
    throw std::invalid_argument("fps: m = " + std::to_string(m) +
                                " out of range for cloud of " + std::to_string(n));
  std::vector<std::size_t> selected;
  selected.reserve(m);
  std::uniform_int_distribution<std::size_t> start(0, n - 1);
  selected.push_back(start(rng));
  std::vector<double> min_d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 d = cloud.points[i] - cloud.points[selected[0]];
    min_d2[i] = dot(d, d);
  }
  while (selected.size() < m) {
    std::size_t best = 0;
    double best_d = -1;
    for (std::size_t i = 0; i < n; ++i)
      if (min_d2[i] > best_d) {
        best_d = min_d2[i];
        best = i;
      }
    selected.push_back(best);
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 d = cloud.points[i] - cloud.points[best];
      min_d2[i] = std::min(min_d2[i], dot(d, d));
    }
  }
  return selected;
}

/// For each query, the k nearest base indices in ascending distance, ties
/// broken by lower index.
inline std::vector<std::vector<std::size_t>> knn(const std::vector<Vec3>& queries,
                                                 const std::vector<Vec3>& base,
                                                 std::size_t k) {
  if (k < 1 || k > base.size())
    throw std::invalid_argument("knn: k = " + std::to_string(k) +
                                " out of range for base of " + std::to_string(base.size()));
  std::vector<std::vector<std::size_t>> out(queries.size());
  std::vector<std::pair<double, std::size_t>> d(base.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      Vec3 diff = base[i] - queries[q];
      d[i] = {dot(diff, diff), i};
    }
    std::partial_sort(d.begin(), d.begin() + std::ptrdiff_t(k), d.end());
    out[q].reserve(k);
    for (std::size_t i = 0; i < k; ++i) out[q].push_back(d[i].second);
  }
  return out;
}

struct BallQueryResult {
  std::vector<std::vector<std::size_t>> indices;
  std::size_t empty_ball_count = 0;  // queries that fell back to nearest neighbor
};

/// Up to k_max base indices within radius, in index-order scan; padded by
/// repeating the first found index. An empty ball falls back to the nearest
/// base point and increments the counter.
inline BallQueryResult ball_query(const std::vector<Vec3>& queries,
                                  const std::vector<Vec3>& base, double radius,
                                  std::size_t k_max) {
  if (radius <= 0) throw std::invalid_argument("ball_query: radius must be positive");
  if (k_max < 1 || k_max > base.size())
    throw std::invalid_argument("ball_query: k_max out of range");
  BallQueryResult res;
  res.indices.resize(queries.size());
  const double r2 = radius * radius;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    auto& idx = res.indices[q];
    for (std::size_t i = 0; i < base.size() && idx.size() < k_max; ++i) {
      Vec3 diff = base[i] - queries[q];
      if (dot(diff, diff) <= r2) idx.push_back(i);
    }
    if (idx.empty()) {
      ++res.empty_ball_count;
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < base.size(); ++i) {
        Vec3 diff = base[i] - queries[q];
        double d2 = dot(diff, diff);
        if (d2 < best_d) {
          best_d = d2;
          best = i;
        }
      }
      idx.push_back(best);
    }
    while (idx.size() < k_max) idx.push_back(idx[0]);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Patch construction

struct LocalPatches {
  std::vector<Patch> patches;
  std::vector<std::size_t> reference_indices;  // into the cloud
};

enum class NeighborSearch { kKnn, kBall };

inline LocalPatches extract_local_patches(const PointCloud& cloud, std::size_t n_l,
                                          std::size_t k_l, std::mt19937_64& rng,
                                          NeighborSearch search = NeighborSearch::kKnn,
                                          double ball_radius = 0.2) {
  LocalPatches out;
  out.reference_indices = fps(cloud, n_l, rng);
  std::vector<Vec3> refs;
  refs.reserve(n_l);
  for (auto i : out.reference_indices) refs.push_back(cloud.points[i]);
  std::vector<std::vector<std::size_t>> nbrs;
  if (search == NeighborSearch::kKnn) {
    nbrs = knn(refs, cloud.points, k_l);
  } else {
    nbrs = ball_query(refs, cloud.points, ball_radius, k_l).indices;
  }
  out.patches.reserve(n_l);
  for (std::size_t i = 0; i < n_l; ++i) {
    Patch p;
    p.scale = Patch::Scale::kLocal;
    p.reference_point = refs[i];
    p.local_points.reserve(k_l);
    for (auto j : nbrs[i]) p.local_points.push_back(cloud.points[j] - refs[i]);
    out.patches.push_back(std::move(p));
  }
  return out;
}

/// One global patch per reference: the FPS-downsampled cloud translated by
/// -q_i. The reference point is the world origin of the centered cloud.
inline std::vector<Patch> extract_global_patches(const PointCloud& cloud, std::size_t n_g,
                                                 const std::vector<Vec3>& reference_points,
                                                 std::mt19937_64& rng) {
  auto idx = fps(cloud, n_g, rng);
  std::vector<Vec3> g;
  g.reserve(n_g);
  for (auto i : idx) g.push_back(cloud.points[i]);
  std::vector<Patch> out;
  out.reserve(reference_points.size());
  for (const auto& q : reference_points) {
    Patch p;
    p.scale = Patch::Scale::kGlobal;
    p.reference_point = {0, 0, 0};
    p.local_points.reserve(n_g);
    for (const auto& gp : g) p.local_points.push_back(gp - q);
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Orientation frames

/// Normalizes the raw direction heads and completes the frame with
/// d3 = normalize(d1 x d2). Near-zero raws fall back to canonical axes and
/// near-parallel d1, d2 produce a deterministic orthogonal d3; both flag the
/// frame degenerate.
inline OrientationFrame complete_frame(const Vec3& d1_raw, const Vec3& d2_raw) {
  OrientationFrame f;
  if (norm(d1_raw) < 1e-8) {
    f.d1 = {1, 0, 0};
    f.degenerate = true;
  } else {
    f.d1 = normalized(d1_raw);
  }
  if (norm(d2_raw) < 1e-8) {
    f.d2 = {0, 1, 0};
    f.degenerate = true;
  } else {
    f.d2 = normalized(d2_raw);
  }
  Vec3 c = cross(f.d1, f.d2);
  if (norm(c) < 1e-6) {
    f.degenerate = true;
    // Deterministic unit vector orthogonal to d1: cross with the canonical
    // axis least aligned with it.
    std::size_t axis = 0;
    for (std::size_t i = 1; i < 3; ++i)
      if (std::abs(f.d1[i]) < std::abs(f.d1[axis])) axis = i;
    Vec3 e{0, 0, 0};
    e[axis] = 1;
    f.d3 = normalized(cross(f.d1, e));
  } else {
    f.d3 = normalized(c);
  }
  return f;
}

/// Removes a known rotation from a frame's directions (row convention,
/// d -> d * R^T) and re-completes the frame.
inline OrientationFrame derotate_frame(const OrientationFrame& frame, const Rotation& r) {
  Mat3 rt = r.m.transposed();
  return complete_frame(frame.d1 * rt, frame.d2 * rt);
}

inline OrientationFrame rotate_frame(const OrientationFrame& frame, const Rotation& r) {
  return complete_frame(frame.d1 * r.m, frame.d2 * r.m);
}

/// Deterministic handcrafted equivariant frame (test oracle): d1 from the
/// patch centroid offset, d2 from the farthest point's direction component
/// orthogonal to d1, d3 = d1 x d2. Ties in the farthest point break to the
/// lowest index.
inline OrientationFrame oracle_equivariant_frame(const Patch& patch) {
  if (patch.local_points.empty())
    throw std::invalid_argument("oracle_equivariant_frame: empty patch");
  Vec3 centroid{0, 0, 0};
  for (const auto& p : patch.local_points) centroid = centroid + p;
  centroid = centroid * (1.0 / double(patch.local_points.size()));
  if (norm(centroid) < 1e-6)
    throw std::invalid_argument("oracle_equivariant_frame: degenerate centroid");
  Vec3 d1 = normalized(centroid);
  std::size_t far_idx = 0;
  double far_d = -1;
  for (std::size_t i = 0; i < patch.local_points.size(); ++i) {
    double d = norm(patch.local_points[i]);
    if (d > far_d) {
      far_d = d;
      far_idx = i;
    }
  }
  Vec3 fdir = patch.local_points[far_idx];
  Vec3 ortho = fdir - d1 * dot(fdir, d1);
  if (norm(ortho) < 1e-6)
    throw std::invalid_argument("oracle_equivariant_frame: farthest direction parallel to d1");
  OrientationFrame f;
  f.d1 = d1;
  f.d2 = normalized(ortho);
  f.d3 = normalized(cross(f.d1, f.d2));
  return f;
}

// ---------------------------------------------------------------------------
// Geometric relations

inline double cossim(const Vec3& a, const Vec3& b) {
  double na = norm(a), nb = norm(b);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return dot(a, b) / (na * nb);
}

/// Layout: [dist; cossim(O_m, O_n) row-major; cossim(O_m, u); cossim(O_n, u)]
/// with u = p_n - p_m. Cosines against a zero offset are 0 by convention.
inline GeoRelation geo_relation(const Patch& patch_m, const OrientationFrame& frame_m,
                                const Patch& patch_n, const OrientationFrame& frame_n) {
  GeoRelation rel;
  rel.values.reserve(16);
  Vec3 u = patch_n.reference_point - patch_m.reference_point;
  double d = norm(u);
  rel.values.push_back(d);
  const Vec3 m_axes[3] = {frame_m.d1, frame_m.d2, frame_m.d3};
  const Vec3 n_axes[3] = {frame_n.d1, frame_n.d2, frame_n.d3};
  for (const auto& a : m_axes)
    for (const auto& b : n_axes) rel.values.push_back(cossim(a, b));
  if (d < 1e-8) {
    for (int i = 0; i < 6; ++i) rel.values.push_back(0.0);
  } else {
    for (const auto& a : m_axes) rel.values.push_back(cossim(a, u));
    for (const auto& b : n_axes) rel.values.push_back(cossim(b, u));
  }
  return rel;
}

/// Layout: [dist; cossim(O_q, u)] with u = q - p.
inline GeoRelation point_relation(const Vec3& point_p, const Vec3& point_q,
                                  const OrientationFrame& frame_q) {
  GeoRelation rel;
  rel.values.reserve(4);
  Vec3 u = point_q - point_p;
  double d = norm(u);
  rel.values.push_back(d);
  if (d < 1e-8) {
    for (int i = 0; i < 3; ++i) rel.values.push_back(0.0);
  } else {
    rel.values.push_back(cossim(frame_q.d1, u));
    rel.values.push_back(cossim(frame_q.d2, u));
    rel.values.push_back(cossim(frame_q.d3, u));
  }
  return rel;
}

}  // namespace parot::geom

// Vec3 is an alias for std::array, so argument-dependent lookup does not find
// these operators from sibling namespaces; re-export them at parot scope.
namespace parot {
using geom::operator+;
using geom::operator-;
using geom::operator*;
}  // namespace parot
