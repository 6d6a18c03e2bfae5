#pragma once

// Discrete Gaussians over the integers.
//
// Convention: D(c, s2) has pmf proportional to exp(-(z - c)^2 / (2 s2)), so
// s2 is (up to an exponentially small correction) the variance. Normalizers
// and tables are truncated at |z - c| <= ceil(12 sigma) + 1.
//
// Samplers:
//  * rejection from the rounded continuous Gaussian, exact: propose
//    z = round(c + sigma g), accept with probability I(0) / J(z - c) where
//    J(x) = int_{-1/2}^{1/2} exp(-u^2 / 2 s2) cosh(x u / s2) du;
//  * table inversion when the rejection envelope is poor (small s2);
//  * the n-dimensional ellipsoidal sampler by convolution: y ~ N(0, S - r0^2 I)
//    then z_i ~ D(y_i, r0^2), valid when min eig(S) >= 2 r0^2.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "advsketch/error.hpp"
#include "advsketch/numerics.hpp"
#include "advsketch/rng.hpp"

namespace advsketch::dgauss {

inline constexpr double kTailSigmas = 12.0;

inline std::int64_t tail_cut(double sigma2) {
  return static_cast<std::int64_t>(std::ceil(kTailSigmas * std::sqrt(sigma2))) + 1;
}

inline void check_variance(double sigma2) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) fail(ErrorCode::NonPositiveVariance, std::to_string(sigma2));
}

inline double normalizer_1d(double sigma2) {
  check_variance(sigma2);
  const std::int64_t K = tail_cut(sigma2);
  double s = 1.0;
  for (std::int64_t k = K; k >= 1; --k) s += 2.0 * std::exp(-static_cast<double>(k * k) / (2.0 * sigma2));
  return s;
}

inline double pmf_dgauss_1d(std::int64_t z, double sigma2, double center = 0.0) {
  check_variance(sigma2);
  const double x = static_cast<double>(z) - center;
  if (center == 0.0) return std::exp(-x * x / (2.0 * sigma2)) / normalizer_1d(sigma2);
  const std::int64_t K = tail_cut(sigma2);
  const auto c0 = static_cast<std::int64_t>(std::llround(center));
  double s = 0.0;
  for (std::int64_t k = c0 - K; k <= c0 + K; ++k) {
    const double d = static_cast<double>(k) - center;
    s += std::exp(-d * d / (2.0 * sigma2));
  }
  return std::exp(-x * x / (2.0 * sigma2)) / s;
}

namespace detail {

// 16-point Gauss-Legendre nodes/weights on [-1, 1].
inline constexpr std::array<double, 8> kGlNodes = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274, 0.6178762444026438,
    0.7554044083550030, 0.8656312023878318, 0.9445750230732326, 0.9894009349916499};
inline constexpr std::array<double, 8> kGlWeights = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

}  // namespace detail

// J(x) = int_{-1/2}^{1/2} exp(-u^2/2s2) cosh(x u/s2) du. Smooth on the
// window for s2 >= 1, where 16-point quadrature is at machine precision.
inline double window_integral(double x, double sigma2) {
  double s = 0.0;
  for (std::size_t i = 0; i < detail::kGlNodes.size(); ++i) {
    const double u = 0.5 * detail::kGlNodes[i];
    s += detail::kGlWeights[i] * std::exp(-u * u / (2.0 * sigma2)) * std::cosh(x * u / sigma2);
  }
  return s;  // the two symmetric halves times the 1/2 Jacobian cancel
}

// Mass the continuous N(c, s2) puts on [z - 1/2, z + 1/2]: the law of
// rounding a continuous Gaussian to the nearest integer.
inline double rounded_continuous_pmf(std::int64_t z, double sigma2, double center = 0.0) {
  check_variance(sigma2);
  const double x = static_cast<double>(z) - center;
  const double sigma = std::sqrt(sigma2);
  if (sigma2 >= 1.0)
    return std::exp(-x * x / (2.0 * sigma2)) * window_integral(x, sigma2) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
  const double a = (std::abs(x) - 0.5) / (sigma * std::numbers::sqrt2);
  const double b = (std::abs(x) + 0.5) / (sigma * std::numbers::sqrt2);
  return 0.5 * (std::erfc(a) - std::erfc(b));
}

// One-dimensional sampler for a fixed (center, s2).
class DiscreteGaussian1D {
 public:
  explicit DiscreteGaussian1D(double sigma2, double center = 0.0) : s2_(sigma2), c_(center) {
    check_variance(sigma2);
    sigma_ = std::sqrt(sigma2);
    if (sigma2 >= 1.0) {
      i0_ = window_integral(0.0, sigma2);
      envelope_ = std::sqrt(2.0 * std::numbers::pi) * sigma_ / (normalizer_1d(sigma2) * i0_);
    }
    table_ = !(envelope_ <= 1.01);
    if (table_) build_table();
  }

  double sigma2() const { return s2_; }
  double center() const { return c_; }
  // Rejection constant of the rounded-continuous proposal (inf when tabulated).
  double envelope() const { return envelope_; }
  bool tabulated() const { return table_; }

  template <class G>
  std::int64_t operator()(G& rng) const {
    if (table_) {
      const double u = uniform01(rng);
      auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
      const auto idx = static_cast<std::int64_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(), static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
      return lo_ + idx;
    }
    const double quad = 1.0 / (8.0 * s2_ * s2_);
    for (;;) {
      const double z = std::floor(c_ + sigma_ * std_normal(rng) + 0.5);
      const double x = z - c_;
      const double u = uniform01(rng);
      // 1/cosh(x/(2 s2)) <= acceptance; 1 - x^2/(8 s2^2) is below both.
      if (u < 1.0 - x * x * quad || u * window_integral(x, s2_) < i0_) return static_cast<std::int64_t>(z);
    }
  }

 private:
  void build_table() {
    const std::int64_t K = tail_cut(s2_);
    const auto c0 = static_cast<std::int64_t>(std::llround(c_));
    lo_ = c0 - K;
    double total = 0.0;
    std::vector<double> w;
    for (std::int64_t k = c0 - K; k <= c0 + K; ++k) {
      const double d = static_cast<double>(k) - c_;
      w.push_back(std::exp(-d * d / (2.0 * s2_)));
      total += w.back();
    }
    double acc = 0.0;
    for (double x : w) {
      acc += x / total;
      cdf_.push_back(acc);
    }
    cdf_.back() = 1.0;
  }

  double s2_, c_, sigma_ = 0.0;
  double i0_ = 0.0;
  double envelope_ = std::numeric_limits<double>::infinity();
  bool table_ = false;
  std::int64_t lo_ = 0;
  std::vector<double> cdf_;
};

template <class G>
std::int64_t sample_dgauss_1d(double sigma2, G& rng) {
  return DiscreteGaussian1D(sigma2)(rng);
}

// Same law as DiscreteGaussian1D(s2, c) but with s2 fixed and the center
// varying per call; requires s2 >= 4 so rejection is always used.
class CenteredSampler {
 public:
  explicit CenteredSampler(double sigma2) : s2_(sigma2) {
    require(sigma2 >= 4.0, ErrorCode::VarianceTooSmall, "centered sampler needs s2 >= 4");
    sigma_ = std::sqrt(sigma2);
    i0_ = window_integral(0.0, sigma2);
    quad_ = 1.0 / (8.0 * sigma2 * sigma2);
  }
  template <class G>
  std::int64_t operator()(double center, G& rng) const {
    for (;;) {
      const double z = std::floor(center + sigma_ * std_normal(rng) + 0.5);
      const double x = z - center;
      const double u = uniform01(rng);
      if (u < 1.0 - x * x * quad_ || u * window_integral(x, s2_) < i0_) return static_cast<std::int64_t>(z);
    }
  }
  double sigma2() const { return s2_; }

 private:
  double s2_, sigma_, i0_, quad_;
};

// Smoothing margin r0^2 = 4 ln(2n(1 + 1/eps)) / pi for Z^n.
inline double smoothing_r0sq(std::size_t n, double eps = 1e-6) {
  return 4.0 * std::log(2.0 * static_cast<double>(n) * (1.0 + 1.0 / eps)) / std::numbers::pi;
}

// Smallest alpha for which every query variance on the attack grid passes
// the convolution precondition: the V-directions carry alpha/4 >= 2 r0^2.
inline double alpha_floor(std::size_t n, double eps = 1e-6) { return 8.0 * smoothing_r0sq(n, eps); }

using IntVector = std::vector<std::int64_t>;

// General ellipsoidal discrete Gaussian D(0, S) by convolution.
class EllipsoidalSampler {
 public:
  explicit EllipsoidalSampler(const numerics::Mat& Sigma, double eps = 1e-6)
      : r0sq_(smoothing_r0sq(static_cast<std::size_t>(Sigma.rows()), eps)), inner_(std::max(4.0, r0sq_)) {
    require(Sigma.rows() == Sigma.cols(), ErrorCode::DimensionMismatch, "covariance must be square");
    Eigen::SelfAdjointEigenSolver<numerics::Mat> es(Sigma, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    if (!(lo > 0.0)) fail(ErrorCode::NonPositiveVariance, "covariance not positive definite");
    if (lo < 2.0 * r0sq_)
      fail(ErrorCode::VarianceTooSmall, "min eigenvalue " + std::to_string(lo) + " below " + std::to_string(2 * r0sq_));
    const numerics::Mat S1 = Sigma - r0sq_ * numerics::Mat::Identity(Sigma.rows(), Sigma.cols());
    L_ = S1.llt().matrixL();
  }
  double r0sq() const { return r0sq_; }

  template <class G>
  IntVector operator()(G& rng) const {
    const auto n = L_.rows();
    numerics::Vec g(n);
    for (Eigen::Index i = 0; i < n; ++i) g[i] = std_normal(rng);
    const numerics::Vec y = L_ * g;
    IntVector z(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) z[static_cast<std::size_t>(i)] = inner_(y[i], rng);
    return z;
  }

 private:
  double r0sq_;
  CenteredSampler inner_;
  numerics::Mat L_;
};

enum class QueryKind { Discrete, Continuous };

// Covariance (3 s2/4) P_{V-perp} + (s2/4) I: full variance s2 off V, a
// quarter of it along V.
struct SubspaceSpec {
  std::size_t n = 0;
  numerics::OrthonormalBasis V;
  double sigma2 = 0.0;

  numerics::Mat covariance() const {
    const auto N = static_cast<Eigen::Index>(n);
    numerics::Mat P = numerics::Mat::Identity(N, N) - V.projector();
    return 0.75 * sigma2 * P + 0.25 * sigma2 * numerics::Mat::Identity(N, N);
  }
  double min_eigenvalue() const { return V.empty() ? sigma2 : 0.25 * sigma2; }
};

// Fast sampler for SubspaceSpec: the Gaussian stage costs O(n dim V).
class SubspaceSampler {
 public:
  SubspaceSampler(const SubspaceSpec& spec, QueryKind kind = QueryKind::Discrete, double eps = 1e-6)
      : spec_(spec), kind_(kind), r0sq_(smoothing_r0sq(spec.n, eps)), inner_(std::max(4.0, r0sq_)) {
    check_variance(spec.sigma2);
    require(spec.V.ambient_dim() == spec.n, ErrorCode::DimensionMismatch, "basis ambient dimension");
    const double s2 = spec.sigma2;
    if (kind_ == QueryKind::Discrete) {
      if (spec.min_eigenvalue() < 2.0 * r0sq_)
        fail(ErrorCode::VarianceTooSmall,
             "min eigenvalue " + std::to_string(spec.min_eigenvalue()) + " below " + std::to_string(2 * r0sq_));
      a_ = std::sqrt(s2 - r0sq_);
      b_ = std::sqrt(0.25 * s2 - r0sq_);
    } else {
      a_ = std::sqrt(s2);
      b_ = std::sqrt(0.25 * s2);
    }
  }

  const SubspaceSpec& spec() const { return spec_; }

  // Continuous part: variance a^2 off V and b^2 along V.
  template <class G>
  void gaussian(G& rng, numerics::Vec& y) const {
    const auto n = static_cast<Eigen::Index>(spec_.n);
    y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = std_normal(rng);
    if (!spec_.V.empty()) {
      const numerics::Mat& M = spec_.V.matrix();
      const numerics::Vec c = M.transpose() * y;
      y = a_ * y + (b_ - a_) * (M * c);
    } else {
      y *= a_;
    }
  }

  template <class G>
  void sample(G& rng, IntVector& out, numerics::Vec& scratch) const {
    require(kind_ == QueryKind::Discrete, ErrorCode::BadParams, "integer sample from continuous sampler");
    gaussian(rng, scratch);
    out.resize(spec_.n);
    for (std::size_t i = 0; i < spec_.n; ++i) out[i] = inner_(scratch[static_cast<Eigen::Index>(i)], rng);
  }

  template <class G>
  IntVector operator()(G& rng) const {
    IntVector out;
    numerics::Vec scratch;
    sample(rng, out, scratch);
    return out;
  }

  template <class G>
  numerics::Vec continuous(G& rng) const {
    numerics::Vec y;
    gaussian(rng, y);
    return y;
  }

 private:
  SubspaceSpec spec_;
  QueryKind kind_;
  double r0sq_;
  CenteredSampler inner_;
  double a_ = 0.0, b_ = 0.0;
};

template <class G>
IntVector sample_subspace_query(const SubspaceSpec& spec, G& rng) {
  return SubspaceSampler(spec)(rng);
}

inline void write_samples_csv(const std::string& path, const std::vector<IntVector>& rows) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open " + path);
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) f << (i ? "," : "") << r[i];
    f << '\n';
  }
}

}  // namespace advsketch::dgauss
