#pragma once

// Dense real linear algebra used by the attack: Gram-Schmidt residuals,
// top singular vectors, row orthonormalization and subspace distances.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "advsketch/error.hpp"
#include "advsketch/rng.hpp"

namespace advsketch::numerics {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kResidualFloor = 1e-9;

// Orthonormal vectors stored as the columns of an n x k matrix.
class OrthonormalBasis {
 public:
  explicit OrthonormalBasis(std::size_t n = 0) : m_(static_cast<Eigen::Index>(n), 0) {}

  // Takes columns that are already orthonormal (checked to 1e-8).
  static OrthonormalBasis from_columns(const Mat& cols) {
    OrthonormalBasis b(static_cast<std::size_t>(cols.rows()));
    for (Eigen::Index j = 0; j < cols.cols(); ++j) b.append(cols.col(j));
    return b;
  }

  std::size_t ambient_dim() const { return static_cast<std::size_t>(m_.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(m_.cols()); }
  bool empty() const { return m_.cols() == 0; }
  const Mat& matrix() const { return m_; }
  Vec vector(std::size_t i) const { return m_.col(static_cast<Eigen::Index>(i)); }

  void append(const Vec& u) {
    require(u.size() == m_.rows(), ErrorCode::DimensionMismatch, "basis vector length");
    require(std::abs(u.norm() - 1.0) <= 1e-8, ErrorCode::BadParams, "basis vector not unit");
    if (m_.cols() > 0)
      require((m_.transpose() * u).cwiseAbs().maxCoeff() <= 1e-8, ErrorCode::BadParams,
              "basis vector not orthogonal");
    m_.conservativeResize(Eigen::NoChange, m_.cols() + 1);
    m_.col(m_.cols() - 1) = u;
  }

  Vec project(const Vec& v) const {
    if (m_.cols() == 0) return Vec::Zero(v.size());
    return m_ * (m_.transpose() * v);
  }
  Vec project_complement(const Vec& v) const { return v - project(v); }

  Mat projector() const { return m_ * m_.transpose(); }

 private:
  Mat m_;
};

// Unit vector along v minus its projection onto span(basis). Two passes keep
// the result orthogonal to working precision.
inline Vec gram_schmidt_residual(const Vec& v, const OrthonormalBasis& basis) {
  require(v.size() == static_cast<Eigen::Index>(basis.ambient_dim()), ErrorCode::DimensionMismatch,
          "residual input length");
  Vec r = basis.project_complement(v);
  r = basis.project_complement(r);
  const double nrm = r.norm();
  if (!(nrm > kResidualFloor)) fail(ErrorCode::DegenerateResidual, "residual norm " + std::to_string(nrm));
  return r / nrm;
}

struct TopSingular {
  Vec v;
  double value = 0.0;  // largest singular value of M
  int iterations = 0;
  bool restarted = false;
};

namespace detail {

// Power iteration on G = M^T M. Each step applies G^8 (three squarings of the
// trace-normalized Gram matrix), so the per-step contraction is (l2/l1)^8.
inline bool power_iterate(const Mat& G, const Mat& G8, Vec& v, int cap, int& iters, double& rel_change) {
  double lambda = v.dot(G * v);
  rel_change = 1.0;
  for (int it = 0; it < cap; ++it) {
    Vec w = G8 * v;
    const double nw = w.norm();
    ++iters;
    if (!(nw > 0.0)) {
      rel_change = 0.0;
      return true;
    }
    v = w / nw;
    const double next = v.dot(G * v);
    rel_change = std::abs(next - lambda) / std::max(std::abs(next), 1e-300);
    lambda = next;
    if (std::abs(next) == 0.0 || rel_change < 1e-12) return true;
  }
  return rel_change <= 1e-6;
}

}  // namespace detail

// Top right singular vector of M. Deterministic start (normalized all-ones);
// a single seeded random restart if the first run stagnates.
inline TopSingular top_right_singular_vector(const Mat& M, std::uint64_t restart_seed = 0x5eed) {
  require(M.cols() > 0, ErrorCode::DimensionMismatch, "empty matrix");
  const Eigen::Index n = M.cols();
  const Mat G = M.transpose() * M;
  const double tr = G.trace();
  TopSingular out;
  if (!(tr > 0.0)) {
    out.v = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
    return out;
  }
  Mat G8 = G / tr;
  for (int s = 0; s < 3; ++s) {
    G8 = G8 * G8;
    const double t = G8.trace();
    if (t > 0.0) G8 /= t;
  }
  const int cap = static_cast<int>(10 * n);
  Vec v = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
  double change = 1.0;
  bool ok = detail::power_iterate(G, G8, v, cap, out.iterations, change);
  if (!ok || !(G8 * v).allFinite() || (G8 * v).norm() == 0.0) {
    Rng rng(restart_seed);
    Vec r(n);
    for (Eigen::Index i = 0; i < n; ++i) r[i] = std_normal(rng);
    v = r.normalized();
    out.restarted = true;
    ok = detail::power_iterate(G, G8, v, cap, out.iterations, change);
  }
  if (!ok) fail(ErrorCode::NoConvergence, "relative Rayleigh change " + std::to_string(change));
  out.v = v;
  out.value = std::sqrt(std::max(0.0, v.dot(G * v)));
  return out;
}

struct RowOrthonormalization {
  Mat Q;  // r x n, orthonormal rows
  Mat R;  // r x r lower triangular, R * A == Q
};

inline RowOrthonormalization orthonormalize_rows(const Mat& A) {
  const Eigen::Index r = A.rows();
  const double scale = A.norm();
  require(r > 0 && scale > 0.0, ErrorCode::RankDeficient, "empty or zero matrix");
  RowOrthonormalization out{Mat::Zero(r, A.cols()), Mat::Zero(r, r)};
  for (Eigen::Index i = 0; i < r; ++i) {
    Vec w = A.row(i).transpose();
    Vec c = Vec::Zero(r);
    c[i] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index j = 0; j < i; ++j) {
        const double p = out.Q.row(j).dot(w);
        w -= p * out.Q.row(j).transpose();
        c -= p * out.R.row(j).transpose();
      }
    }
    const double nrm = w.norm();
    if (!(nrm > 1e-10 * scale)) fail(ErrorCode::RankDeficient, "row " + std::to_string(i) + " is dependent");
    out.Q.row(i) = w.transpose() / nrm;
    out.R.row(i) = c.transpose() / nrm;
  }
  return out;
}

// Operator norm of the difference of orthogonal projectors onto the column
// spans of V and W (both with orthonormal columns).
inline double projector_distance(const Mat& V, const Mat& W) {
  require(V.rows() == W.rows(), ErrorCode::DimensionMismatch, "ambient dimensions differ");
  const Mat D = V * V.transpose() - W * W.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> es(D, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// The dim(V)-dimensional subspace of span(U) closest to span(V), built from
// principal vectors. V: n x k, U: n x r, both orthonormal columns, k <= r.
inline Mat closest_subspace(const Mat& V, const Mat& U) {
  require(V.rows() == U.rows(), ErrorCode::DimensionMismatch, "ambient dimensions differ");
  require(V.cols() <= U.cols(), ErrorCode::BadParams, "subspace larger than target");
  if (V.cols() == 0) return Mat(V.rows(), 0);
  Eigen::JacobiSVD<Mat> svd(V.transpose() * U, Eigen::ComputeFullV);
  return U * svd.matrixV().leftCols(V.cols());
}

// Cosines of the principal angles between span(V) and span(U).
inline Vec principal_cosines(const Mat& V, const Mat& U) {
  if (V.cols() == 0 || U.cols() == 0) return Vec(0);
  Eigen::JacobiSVD<Mat> svd(V.transpose() * U);
  return svd.singularValues().cwiseMin(1.0);
}

inline Vec to_vec(const std::vector<double>& x) {
  return Eigen::Map<const Vec>(x.data(), static_cast<Eigen::Index>(x.size()));
}

inline Vec to_vec(const std::vector<std::int64_t>& x) {
  Vec v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v[static_cast<Eigen::Index>(i)] = static_cast<double>(x[i]);
  return v;
}

}  // namespace advsketch::numerics
