#pragma once

// Statistical harnesses: histogram TVD with equal-mass bins, closeness of
// lattice-plus-cell-noise to a continuous Gaussian, exact discrete-vs-rounded
// pmf ratios, and the chi-square bound for Gaussian location mixtures.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsketch/dgauss.hpp"
#include "advsketch/error.hpp"
#include "advsketch/lattice.hpp"
#include "advsketch/numerics.hpp"
#include "advsketch/rng.hpp"

namespace advsketch::stats {

using numerics::Mat;
using numerics::Vec;

inline constexpr std::size_t kMinTvdSamples = 1000;
inline constexpr std::size_t kMaxHistogramDim = 3;

struct TvdOptions {
  std::size_t bins = 0;         // per axis; 0 = ceil(N^(1/(d+2))), N the smaller sample count
  std::size_t bootstrap = 200;  // resamples for the CI; 0 disables it
  std::uint64_t seed = 0;
};

struct TvdEstimate {
  double value = 0.0;
  double halfwidth = 0.0;
  std::size_t n1 = 0, n2 = 0;
  std::size_t dim = 0;
  std::size_t bins_per_axis = 0;
};

inline void to_json(nlohmann::json& j, const TvdEstimate& t) {
  j = {{"value", t.value}, {"halfwidth", t.halfwidth}, {"n1", t.n1}, {"n2", t.n2}, {"dim", t.dim},
       {"bins_per_axis", t.bins_per_axis}};
}

inline std::size_t default_bins(std::size_t n, std::size_t dim) {
  return static_cast<std::size_t>(
      std::ceil(std::pow(static_cast<double>(n), 1.0 / static_cast<double>(dim + 2)) - 1e-9));
}

namespace detail {

inline double tvd_from_counts(const std::vector<std::uint32_t>& c1, const std::vector<std::uint32_t>& c2, double n1,
                              double n2) {
  double s = 0.0;
  for (std::size_t k = 0; k < c1.size(); ++k) s += std::abs(c1[k] / n1 - c2[k] / n2);
  return 0.5 * s;
}

}  // namespace detail

// Rows are samples. Equal-mass bins per axis from the pooled marginals.
inline TvdEstimate empirical_tvd(const Mat& s1, const Mat& s2, const TvdOptions& opt = {}) {
  const auto n1 = static_cast<std::size_t>(s1.rows()), n2 = static_cast<std::size_t>(s2.rows());
  if (n1 < kMinTvdSamples || n2 < kMinTvdSamples)
    fail(ErrorCode::TooFewSamples, "need at least " + std::to_string(kMinTvdSamples) + " samples per side, got " +
                                       std::to_string(std::min(n1, n2)));
  require(s1.cols() == s2.cols() && s1.cols() > 0, ErrorCode::DimensionMismatch, "sample dimensions differ");
  const auto d = static_cast<std::size_t>(s1.cols());
  if (d > kMaxHistogramDim)
    fail(ErrorCode::DimensionTooLarge, "histogram TVD supports up to " + std::to_string(kMaxHistogramDim) +
                                           " dimensions, got " + std::to_string(d));
  TvdEstimate out;
  out.n1 = n1;
  out.n2 = n2;
  out.dim = d;
  const std::size_t b = opt.bins ? opt.bins : default_bins(std::min(n1, n2), d);
  out.bins_per_axis = b;
  // Interior edges at pooled quantiles k/b.
  std::vector<std::vector<double>> edges(d);
  std::vector<double> pool(n1 + n2);
  for (std::size_t a = 0; a < d; ++a) {
    const auto A = static_cast<Eigen::Index>(a);
    for (std::size_t i = 0; i < n1; ++i) pool[i] = s1(static_cast<Eigen::Index>(i), A);
    for (std::size_t i = 0; i < n2; ++i) pool[n1 + i] = s2(static_cast<Eigen::Index>(i), A);
    std::sort(pool.begin(), pool.end());
    for (std::size_t k = 1; k < b; ++k) edges[a].push_back(pool[k * pool.size() / b]);
    edges[a].erase(std::unique(edges[a].begin(), edges[a].end()), edges[a].end());
  }
  auto cell = [&](const Mat& s, std::size_t i) {
    std::size_t c = 0;
    for (std::size_t a = 0; a < d; ++a) {
      const double v = s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
      const auto k = static_cast<std::size_t>(std::upper_bound(edges[a].begin(), edges[a].end(), v) - edges[a].begin());
      c = c * b + k;
    }
    return c;
  };
  std::size_t cells = 1;
  for (std::size_t a = 0; a < d; ++a) cells *= b;
  std::vector<std::uint32_t> id1(n1), id2(n2);
  for (std::size_t i = 0; i < n1; ++i) id1[i] = static_cast<std::uint32_t>(cell(s1, i));
  for (std::size_t i = 0; i < n2; ++i) id2[i] = static_cast<std::uint32_t>(cell(s2, i));
  std::vector<std::uint32_t> c1(cells, 0), c2(cells, 0);
  for (auto c : id1) ++c1[c];
  for (auto c : id2) ++c2[c];
  const double N1 = static_cast<double>(n1), N2 = static_cast<double>(n2);
  out.value = detail::tvd_from_counts(c1, c2, N1, N2);
  if (opt.bootstrap > 0) {
    Rng rng = make_rng(opt.seed, "stats/tvd-bootstrap");
    std::vector<double> reps;
    for (std::size_t t = 0; t < opt.bootstrap; ++t) {
      std::fill(c1.begin(), c1.end(), 0);
      std::fill(c2.begin(), c2.end(), 0);
      for (std::size_t i = 0; i < n1; ++i) ++c1[id1[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n1) - 1))]];
      for (std::size_t i = 0; i < n2; ++i) ++c2[id2[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(n2) - 1))]];
      reps.push_back(detail::tvd_from_counts(c1, c2, N1, N2));
    }
    std::sort(reps.begin(), reps.end());
    const auto q = [&](double p) { return reps[static_cast<std::size_t>(p * static_cast<double>(reps.size() - 1))]; };
    out.halfwidth = 0.5 * (q(0.975) - q(0.025));
  }
  return out;
}

// 1-D projection mode: any ambient dimension, samples projected on `dir`.
inline TvdEstimate empirical_tvd_projected(const Mat& s1, const Mat& s2, const Vec& dir, const TvdOptions& opt = {}) {
  require(s1.cols() == dir.size() && s2.cols() == dir.size(), ErrorCode::DimensionMismatch, "projection direction");
  const Vec u = dir.normalized();
  return empirical_tvd(s1 * u, s2 * u, opt);
}

// ---------------------------------------------------------------------------
// Energy distance two-sample test (permutation p-value).

struct EnergyTest {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t per_side = 0;
  std::size_t permutations = 0;
};

inline void to_json(nlohmann::json& j, const EnergyTest& e) {
  j = {{"statistic", e.statistic}, {"p_value", e.p_value}, {"per_side", e.per_side}, {"permutations", e.permutations}};
}

inline EnergyTest energy_test(const Mat& s1, const Mat& s2, std::size_t per_side, std::size_t permutations,
                              std::uint64_t seed) {
  require(s1.cols() == s2.cols(), ErrorCode::DimensionMismatch, "sample dimensions differ");
  const std::size_t k = std::min<std::size_t>({per_side, static_cast<std::size_t>(s1.rows()), static_cast<std::size_t>(s2.rows())});
  require(k >= 10, ErrorCode::TooFewSamples, "energy test needs at least 10 samples per side");
  const std::size_t N = 2 * k;
  Mat P(static_cast<Eigen::Index>(N), s1.cols());
  P.topRows(static_cast<Eigen::Index>(k)) = s1.topRows(static_cast<Eigen::Index>(k));
  P.bottomRows(static_cast<Eigen::Index>(k)) = s2.topRows(static_cast<Eigen::Index>(k));
  Mat D(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(N));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(N); ++i)
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(N); ++j) D(i, j) = (P.row(i) - P.row(j)).norm();
  auto stat = [&](const std::vector<std::uint8_t>& lab) {
    double xy = 0, xx = 0, yy = 0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        const double v = D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (lab[i] != lab[j])
          xy += v;
        else if (lab[i] == 0)
          xx += v;
        else
          yy += v;
      }
    const double K = static_cast<double>(k);
    return xy / (K * K) - xx / (K * K) - yy / (K * K);  // xy counts both orders
  };
  std::vector<std::uint8_t> lab(N, 0);
  std::fill(lab.begin() + static_cast<std::ptrdiff_t>(k), lab.end(), 1);
  EnergyTest out;
  out.per_side = k;
  out.permutations = permutations;
  out.statistic = stat(lab);
  Rng rng = make_rng(seed, "stats/energy");
  std::size_t ge = 0;
  for (std::size_t t = 0; t < permutations; ++t) {
    std::shuffle(lab.begin(), lab.end(), rng);
    if (stat(lab) >= out.statistic) ++ge;
  }
  out.p_value = static_cast<double>(ge + 1) / static_cast<double>(permutations + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Cell lemma: Q x + eta (eta uniform on a fundamental cell of the lattice
// R A Z^n) against N(0, Q Sigma Q^T); and the rounding path, the cell of Q g
// for continuous g against Q x for discrete x.

struct CellLemmaOptions {
  double C = 1.0;
  double tvd_threshold = 0.05;
  double energy_alpha = 0.01;  // r = 4: pass when p >= energy_alpha
  std::size_t energy_per_side = 1000;
  std::size_t energy_permutations = 200;
  std::size_t bootstrap = 200;
};

struct CellLemmaReport {
  std::size_t r = 0;
  std::size_t n = 0;
  std::size_t trials = 0;
  double lattice_length = 0.0;  // certified kernel length
  double floor = 0.0;           // 10 C ln(n) * length
  double sigma_min = 0.0;       // sqrt of the smallest eigenvalue of Sigma
  std::optional<TvdEstimate> tvd;
  std::optional<TvdEstimate> rounding_tvd;
  std::optional<EnergyTest> energy;
  std::optional<EnergyTest> rounding_energy;
  double threshold = 0.0;
  bool passed = false;
};

inline void to_json(nlohmann::json& j, const CellLemmaReport& c) {
  j = {{"r", c.r},
       {"n", c.n},
       {"trials", c.trials},
       {"lattice_length", c.lattice_length},
       {"floor", c.floor},
       {"sigma_min", c.sigma_min},
       {"threshold", c.threshold},
       {"passed", c.passed}};
  if (c.tvd) j["tvd"] = *c.tvd;
  if (c.rounding_tvd) j["rounding_tvd"] = *c.rounding_tvd;
  if (c.energy) j["energy"] = *c.energy;
  if (c.rounding_energy) j["rounding_energy"] = *c.rounding_energy;
}

inline CellLemmaReport cell_lemma_check(const lattice::IntMatrix& A, const Mat& Sigma, std::size_t trials,
                                        std::uint64_t seed, const CellLemmaOptions& opt = {}) {
  const std::size_t r = A.rows, n = A.cols;
  require(Sigma.rows() == static_cast<Eigen::Index>(n) && Sigma.cols() == static_cast<Eigen::Index>(n),
          ErrorCode::DimensionMismatch, "Sigma must be n x n");
  if (r == 0 || r > 4) fail(ErrorCode::PreconditionUnmet, "exact cell rounding needs 1 <= r <= 4");
  std::vector<lattice::BigVec> big;
  for (std::size_t i = 0; i < r; ++i) big.push_back(lattice::to_big(A.row(i)));
  if (lattice::rank(big) != r) fail(ErrorCode::PreconditionUnmet, "sketch rows are dependent");
  CellLemmaReport rep;
  rep.r = r;
  rep.n = n;
  rep.trials = trials;
  rep.threshold = opt.tvd_threshold;
  rep.lattice_length = lattice::reduce_basis(lattice::integer_kernel_basis(A)).max_length();
  rep.floor = 10.0 * opt.C * std::log(static_cast<double>(n)) * rep.lattice_length;
  Eigen::SelfAdjointEigenSolver<Mat> es(Sigma, Eigen::EigenvaluesOnly);
  rep.sigma_min = std::sqrt(std::max(0.0, es.eigenvalues().minCoeff()));
  if (rep.sigma_min < rep.floor)
    fail(ErrorCode::PreconditionUnmet, "sigma_min " + std::to_string(rep.sigma_min) + " below floor " +
                                           std::to_string(rep.floor));

  const auto o = numerics::orthonormalize_rows(A.to_real());
  const lattice::CellRounder cr(A, o.R);
  const Mat cov = o.Q * Sigma * o.Q.transpose();
  const Mat L = cov.llt().matrixL();
  const Mat W = L.inverse();  // whitening
  const Mat Ls = Sigma.llt().matrixL();
  const dgauss::EllipsoidalSampler disc(Sigma);

  Rng rng = make_rng(seed, "stats/cell-lemma");
  const auto R = static_cast<Eigen::Index>(r);
  const auto T = static_cast<Eigen::Index>(trials);
  Mat noisy(T, R), gauss(T, R), rounded(T, R), lattice_pts(T, R);
  Vec g(static_cast<Eigen::Index>(n));
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vec qx = o.Q * numerics::to_vec(disc(rng));
    noisy.row(t) = (W * (qx + lattice::fundamental_cell_uniform(cr, rng))).transpose();
    Vec z(R);
    for (Eigen::Index i = 0; i < R; ++i) z[i] = std_normal(rng);
    gauss.row(t) = z.transpose();  // already white
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = std_normal(rng);
    rounded.row(t) = (W * cr.cell_of(o.Q * (Ls * g)).point).transpose();
    lattice_pts.row(t) = (W * (o.Q * numerics::to_vec(disc(rng)))).transpose();
  }
  if (r <= kMaxHistogramDim) {
    TvdOptions to{0, opt.bootstrap, seed};
    rep.tvd = empirical_tvd(noisy, gauss, to);
    rep.rounding_tvd = empirical_tvd(rounded, lattice_pts, to);
    rep.passed = rep.tvd->value <= opt.tvd_threshold && rep.rounding_tvd->value <= opt.tvd_threshold;
  } else {
    rep.energy = energy_test(noisy, gauss, opt.energy_per_side, opt.energy_permutations, seed);
    rep.rounding_energy = energy_test(rounded, lattice_pts, opt.energy_per_side, opt.energy_permutations, seed + 1);
    rep.passed = rep.energy->p_value >= opt.energy_alpha && rep.rounding_energy->p_value >= opt.energy_alpha;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Discrete Gaussian pmf against the law of a rounded continuous Gaussian.

struct PmfRatioReport {
  double sigma2 = 0.0;
  std::size_t n = 0;
  double C = 0.0;
  std::int64_t z_max = 0;
  double max_dev_1d = 0.0;  // max |p/q - 1| per coordinate
  double max_dev = 0.0;     // over the n-dimensional box |v_i| <= z_max
  double bound = 0.0;       // n^-C
  bool passed = false;
};

inline void to_json(nlohmann::json& j, const PmfRatioReport& p) {
  j = {{"sigma2", p.sigma2}, {"n", p.n},           {"C", p.C},         {"z_max", p.z_max},
       {"max_dev_1d", p.max_dev_1d}, {"max_dev", p.max_dev}, {"bound", p.bound}, {"passed", p.passed}};
}

// The n-dimensional ratio is a product of per-coordinate ratios, so its
// extremes over the box come from the per-coordinate extremes.
inline PmfRatioReport pmf_ratio_check(double sigma2, std::size_t n, double C, std::int64_t z_max = -1) {
  require(n >= 1, ErrorCode::BadParams, "n must be positive");
  const double need = std::pow(static_cast<double>(n), C + 1.0);
  if (!(sigma2 > need))
    fail(ErrorCode::PreconditionUnmet, "sigma2 " + std::to_string(sigma2) + " must exceed n^(C+1) = " + std::to_string(need));
  PmfRatioReport rep;
  rep.sigma2 = sigma2;
  rep.n = n;
  rep.C = C;
  rep.z_max = z_max >= 0 ? z_max : static_cast<std::int64_t>(std::ceil(3.0 * std::sqrt(sigma2)));
  rep.bound = std::pow(static_cast<double>(n), -C);
  double lo = 1.0, hi = 1.0;
  for (std::int64_t z = 0; z <= rep.z_max; ++z) {  // both pmfs are even in z
    const double ratio = dgauss::pmf_dgauss_1d(z, sigma2) / dgauss::rounded_continuous_pmf(z, sigma2);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  rep.max_dev_1d = std::max(hi - 1.0, 1.0 - lo);
  const double N = static_cast<double>(n);
  rep.max_dev = std::max(std::pow(hi, N) - 1.0, 1.0 - std::pow(lo, N));
  rep.passed = rep.max_dev <= rep.bound;
  return rep;
}

// ---------------------------------------------------------------------------
// chi^2(N(0, s2 I) * mu || N(0, s2 I)) <= E exp(<z, z'> / s2) - 1.

struct Mixture {
  enum Kind { PointMass, SymmetricPair, Gaussian } kind = PointMass;
  double a = 0.0;     // SymmetricPair: mu = uniform on {+a e1, -a e1}
  double tau2 = 0.0;  // Gaussian: mu = N(0, tau2 I)
};

struct ChiSquareReport {
  double lhs = 0.0, lhs_se = 0.0;
  double rhs = 0.0, rhs_se = 0.0;
  double rhs_closed_form = 0.0;
  std::size_t trials = 0;
  bool holds = false;  // lhs <= rhs + 3 combined SE
};

inline void to_json(nlohmann::json& j, const ChiSquareReport& c) {
  j = {{"lhs", c.lhs}, {"lhs_se", c.lhs_se}, {"rhs", c.rhs}, {"rhs_se", c.rhs_se}, {"rhs_closed_form", c.rhs_closed_form},
       {"trials", c.trials}, {"holds", c.holds}};
}

namespace detail {

struct MeanSe {
  double mean = 0.0, se = 0.0;
};

template <class F>
MeanSe monte_carlo(std::size_t trials, F&& f) {
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    const double v = f();
    s += v;
    s2 += v * v;
  }
  const double N = static_cast<double>(trials);
  const double m = s / N;
  return {m, std::sqrt(std::max(0.0, s2 / N - m * m) / N)};
}

}  // namespace detail

inline ChiSquareReport chi_square_mixture_check(double sigma2, std::size_t d, const Mixture& mu, std::size_t trials,
                                                std::uint64_t seed) {
  if (d > 2) fail(ErrorCode::DimensionTooLarge, "chi-square mixture check supports d <= 2");
  require(d >= 1 && trials >= 2, ErrorCode::BadParams, "need d >= 1 and trials >= 2");
  dgauss::check_variance(sigma2);
  const double sigma = std::sqrt(sigma2);
  const auto D = static_cast<Eigen::Index>(d);
  if (mu.kind == Mixture::Gaussian)
    require(mu.tau2 >= 0.0 && mu.tau2 < sigma2, ErrorCode::BadParams, "Gaussian mixture needs tau2 < sigma2");
  Rng rng = make_rng(seed, "stats/chi-square");
  auto normal_vec = [&](double s) {
    Vec v(D);
    for (Eigen::Index i = 0; i < D; ++i) v[i] = s * std_normal(rng);
    return v;
  };
  auto draw_mu = [&]() -> Vec {
    switch (mu.kind) {
      case Mixture::PointMass: return Vec::Zero(D);
      case Mixture::SymmetricPair: {
        Vec v = Vec::Zero(D);
        v[0] = uniform_int(rng, 0, 1) ? mu.a : -mu.a;
        return v;
      }
      case Mixture::Gaussian: return normal_vec(std::sqrt(mu.tau2));
    }
    return Vec::Zero(D);
  };
  // Likelihood ratio of the mixture to the null at y.
  auto ratio = [&](const Vec& y) {
    switch (mu.kind) {
      case Mixture::PointMass: return 1.0;
      case Mixture::SymmetricPair:
        return std::exp(-mu.a * mu.a / (2 * sigma2)) * std::cosh(mu.a * y[0] / sigma2);
      case Mixture::Gaussian: {
        const double s = sigma2 + mu.tau2;
        return std::pow(sigma2 / s, 0.5 * static_cast<double>(d)) *
               std::exp(0.5 * y.squaredNorm() * (1.0 / sigma2 - 1.0 / s));
      }
    }
    return 1.0;
  };
  ChiSquareReport rep;
  rep.trials = trials;
  const auto lhs = detail::monte_carlo(trials, [&] {
    const double L = ratio(normal_vec(sigma));
    return L * L - 1.0;
  });
  const auto rhs = detail::monte_carlo(trials, [&] {
    const Vec z = draw_mu(), w = draw_mu();
    return std::exp(z.dot(w) / sigma2) - 1.0;
  });
  rep.lhs = lhs.mean;
  rep.lhs_se = lhs.se;
  rep.rhs = rhs.mean;
  rep.rhs_se = rhs.se;
  switch (mu.kind) {
    case Mixture::PointMass: rep.rhs_closed_form = 0.0; break;
    case Mixture::SymmetricPair: rep.rhs_closed_form = std::cosh(mu.a * mu.a / sigma2) - 1.0; break;
    case Mixture::Gaussian:
      rep.rhs_closed_form = std::pow(1.0 - mu.tau2 * mu.tau2 / (sigma2 * sigma2), -0.5 * static_cast<double>(d)) - 1.0;
      break;
  }
  rep.holds = rep.lhs <= rep.rhs + 3.0 * std::hypot(rep.lhs_se, rep.rhs_se) + 1e-15;
  return rep;
}

}  // namespace advsketch::stats
