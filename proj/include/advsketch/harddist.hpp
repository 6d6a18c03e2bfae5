#pragma once

// Hard input pairs for norm and matrix estimation. Each family has a null
// side D1 and a planted side D2, both built from discrete Gaussians so the
// payload is an integer vector (stored 1 x n) or matrix, and a statistic
// whose threshold event separates the sides.
//
// Planted structure is rounded to integers before it is added, so
// payload(D2) - witness.planted is exactly a D1 draw.
//
// Constants the lower-bound arguments leave existential are calibrated once
// per setup on fresh draws: C1 is the 99th percentile of ||G||_op over its
// natural scale, and spike strengths are the 99th percentile of the smallest
// spike that meets the planted event on a draw (using the lower bound
// ||H v|| / ||v|| <= ||H||_op), times a safety factor.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsketch/dgauss.hpp"
#include "advsketch/error.hpp"
#include "advsketch/lattice.hpp"
#include "advsketch/numerics.hpp"
#include "advsketch/parallel.hpp"
#include "advsketch/rng.hpp"
#include "advsketch/stats.hpp"

namespace advsketch::harddist {

using lattice::IntMatrix;
using numerics::Mat;
using numerics::Vec;
using IntVector = std::vector<std::int64_t>;

enum class Kind { LpSmall, LpLarge, OpnormAlpha, OpnormEps, KyFan, Eigen, Psd, Cs };
enum class Side { D1, D2 };

inline constexpr Kind kAllKinds[] = {Kind::LpSmall, Kind::LpLarge, Kind::OpnormAlpha, Kind::OpnormEps,
                                     Kind::KyFan,   Kind::Eigen,   Kind::Psd,         Kind::Cs};

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::LpSmall: return "lp-small";
    case Kind::LpLarge: return "lp-large";
    case Kind::OpnormAlpha: return "opnorm-alpha";
    case Kind::OpnormEps: return "opnorm-eps";
    case Kind::KyFan: return "kyfan";
    case Kind::Eigen: return "eigen";
    case Kind::Psd: return "psd";
    case Kind::Cs: return "cs";
  }
  return "?";
}

inline Kind kind_from_string(const std::string& s) {
  for (Kind k : kAllKinds)
    if (to_string(k) == s) return k;
  fail(ErrorCode::BadParams, "unknown hard family '" + s + "'");
}

inline std::string to_string(Side s) { return s == Side::D1 ? "D1" : "D2"; }

inline Side side_from_string(const std::string& s) {
  if (s == "D1") return Side::D1;
  if (s == "D2") return Side::D2;
  fail(ErrorCode::BadParams, "side must be D1 or D2, got '" + s + "'");
}

inline constexpr double kMinScale = 16.0;  // below this the draws are too coarse to stand in for Gaussians

struct HardFamily {
  Kind kind = Kind::OpnormAlpha;
  std::size_t n = 64;          // vector length, matrix columns, or d
  double eps = 0.1;            // psd: <= 0 means half the condition bound
  double p = 1.0;              // lp-small, lp-large, psd (may be infinite)
  double delta = 1.0 / 9.0;    // lp-large
  double alpha = 2.0;          // opnorm-alpha
  std::size_t rank = 1;        // kyfan: number of spikes s
  std::size_t k = 8;           // cs sparsity
  double N = 1e4;              // entries ~ D(0, N^2); spike vectors ~ D(0, N)
  std::vector<double> spikes;  // explicit spike strengths; empty = calibrate
  std::size_t calibration_samples = 200;
  double safety = 1.25;
};

// Desk-scale parameters used by the acceptance battery.
inline HardFamily defaults(Kind k) {
  HardFamily f;
  f.kind = k;
  switch (k) {
    case Kind::LpSmall: f.n = 1024, f.eps = 0.1, f.p = 1.0; break;
    case Kind::LpLarge: f.n = 1024, f.eps = 0.2, f.p = 4.0, f.delta = 1.0 / 9.0; break;
    case Kind::OpnormAlpha: f.n = 64, f.alpha = 2.0; break;
    case Kind::OpnormEps: f.n = 64, f.eps = 0.1; break;
    case Kind::KyFan: f.n = 64, f.rank = 4; break;
    case Kind::Eigen: f.n = 64, f.eps = 0.1; break;
    case Kind::Psd: f.n = 64, f.eps = 0.0, f.p = std::numeric_limits<double>::infinity(); break;
    case Kind::Cs: f.n = 256, f.k = 8, f.eps = 0.2; break;
  }
  return f;
}

struct Calibration {
  double C1 = 0.0;         // q99 of ||G||_op / scale on D1 draws
  double C = 0.0;          // constant in the displayed thresholds
  double C2 = 0.0;         // psd: q01 of ||u|| ||v|| / (N d)
  double CS = 0.0;         // psd: q99 of ||M||_p / (N d^{1/2 + 1/p}) on D2 draws
  double tau = 0.0;        // lp-small: E ||x||_p, x ~ N(0, N^2 I)
  double E = 0.0;          // lp-large: E ||g||_p, g ~ N(0, I_{n-t})
  std::size_t t = 0;       // lp-large: planted coordinates
  double planted = 0.0;    // lp-large: planted magnitude
  double gamma = 0.0;      // spike constant of the family
  std::vector<double> spikes;
  double shift = 0.0;      // eigen, psd: integer diagonal shift
  double eps = 0.0;        // effective epsilon
  double eps_bound = 0.0;  // psd: right-hand side of the condition
  double lo = 0.0;         // D1 event: statistic <= lo
  double hi = 0.0;         // D2 event: statistic >= hi
  std::size_t rows = 0, cols = 0;
  std::size_t samples = 0;
  std::vector<std::string> warnings;
};

struct Witness {
  std::vector<IntVector> u, v;
  std::vector<double> s;
  IntMatrix planted;                // payload minus the D1-distributed part; empty when none
  double scale = 1.0;               // lp-small: D2 noise multiplier
  std::vector<std::size_t> coords;  // lp-large: T; cs: support S
  std::size_t support_index = 0;    // cs
};

struct HardInstance {
  Kind kind = Kind::OpnormAlpha;
  Side side = Side::D1;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  IntMatrix payload;
  Witness witness;
};

struct HardSetup {
  HardFamily family;
  Calibration cal;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> supports;  // cs family
  std::vector<std::vector<std::uint64_t>> support_bits;
  std::optional<dgauss::DiscreteGaussian1D> noise, noise_d2, spike;
};

// ---------------------------------------------------------------------------
// Exact small-matrix statistics

inline Vec singular_values(const Mat& X) {
  const Mat g = X.rows() >= X.cols() ? Mat(X.transpose() * X) : Mat(X * X.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
  Vec s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  std::sort(s.data(), s.data() + s.size(), std::greater<>());
  return s;
}

inline Vec symmetric_eigenvalues(const Mat& M) {
  Eigen::SelfAdjointEigenSolver<Mat> es(M, Eigen::EigenvaluesOnly);
  return es.eigenvalues();  // ascending
}

inline double schatten_from_eigs(const Vec& lambda, double p) {
  const double mx = lambda.cwiseAbs().maxCoeff();
  if (std::isinf(p) || mx == 0.0) return mx;
  long double s = 0.0L;
  for (double l : lambda) s += std::pow(static_cast<long double>(std::abs(l) / mx), static_cast<long double>(p));
  return mx * static_cast<double>(std::pow(s, 1.0L / static_cast<long double>(p)));
}

// sum |x_i / scale|^p, in long double.
inline long double lp_power_scaled(const IntMatrix& x, double p, double scale) {
  long double s = 0.0L;
  for (auto v : x.data) s += std::pow(std::abs(static_cast<long double>(v) / scale), static_cast<long double>(p));
  return s;
}

namespace detail {

inline double quantile(std::vector<double> v, double q) {
  require(!v.empty(), ErrorCode::BadParams, "quantile of nothing");
  std::sort(v.begin(), v.end());
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(idx, 1, v.size()) - 1];
}

inline std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)))]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline std::vector<std::uint64_t> bits_of(const std::vector<std::size_t>& s, std::size_t n) {
  std::vector<std::uint64_t> b((n + 63) / 64, 0);
  for (auto i : s) b[i / 64] |= std::uint64_t{1} << (i % 64);
  return b;
}

inline std::size_t sym_diff(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < a.size(); ++i) c += static_cast<std::size_t>(std::popcount(a[i] ^ b[i]));
  return c;
}

inline IntVector draw(std::size_t n, const dgauss::DiscreteGaussian1D& s, Rng& rng) {
  IntVector v(n);
  for (auto& x : v) x = s(rng);
  return v;
}

inline IntMatrix draw(std::size_t r, std::size_t c, const dgauss::DiscreteGaussian1D& s, Rng& rng) {
  IntMatrix m(r, c);
  for (auto& x : m.data) x = s(rng);
  return m;
}

inline Vec real(const IntVector& v) { return numerics::to_vec(v); }

// [[s I, X], [X^T, s I]]
inline IntMatrix embed(const IntMatrix& X, std::int64_t shift) {
  const std::size_t d = X.rows;
  IntMatrix M(2 * d, 2 * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      M(i, d + j) = X(i, j);
      M(d + j, i) = X(i, j);
    }
  for (std::size_t i = 0; i < 2 * d; ++i) M(i, i) = shift;
  return M;
}

// Smallest s >= 0 with ||g + s w|| >= target.
inline double min_spike_quadratic(const Vec& g, const Vec& w, double target) {
  const double a = w.squaredNorm(), b = g.dot(w), c = g.squaredNorm() - target * target;
  if (c >= 0.0) return 0.0;
  return (-b + std::sqrt(b * b - a * c)) / a;
}

// Smallest s in [0, hi] with f(s) >= 0 for f increasing past its root; NaN if none.
template <class F>
double min_spike_bisect(F&& f, double hi) {
  if (f(0.0) >= 0.0) return 0.0;
  if (f(hi) < 0.0) return std::numeric_limits<double>::quiet_NaN();
  double lo = 0.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) >= 0.0 ? hi : lo) = mid;
  }
  return hi;
}

inline bool is_matrix_spike(Kind k) {
  return k == Kind::OpnormAlpha || k == Kind::OpnormEps || k == Kind::KyFan || k == Kind::Eigen || k == Kind::Psd;
}

inline std::size_t spike_rows(const HardFamily& f) {
  if (f.kind == Kind::OpnormEps) return static_cast<std::size_t>(std::llround(static_cast<double>(f.n) / (f.eps * f.eps)));
  return f.n;
}

inline void validate(const HardFamily& f) {
  auto bad = [](const std::string& w) { fail(ErrorCode::BadParams, w); };
  if (!(f.N >= kMinScale) || !std::isfinite(f.N)) bad("scale N=" + std::to_string(f.N) + " is below " + std::to_string(kMinScale));
  if (f.n < 2) bad("dimension must be at least 2");
  if (f.calibration_samples < 20) bad("calibration_samples must be at least 20");
  if (!(f.safety >= 1.0)) bad("safety must be >= 1");
  for (double s : f.spikes)
    if (!(s >= 0.0) || !std::isfinite(s)) bad("spike strengths must be finite and non-negative");
  switch (f.kind) {
    case Kind::LpSmall:
      if (!(f.p >= 1.0 && f.p <= 2.0)) bad("lp-small needs p in [1, 2]");
      if (!(f.eps > 0.0 && f.eps < 1.0)) bad("eps must lie in (0, 1)");
      break;
    case Kind::LpLarge:
      if (!(f.p > 2.0) || std::isinf(f.p)) bad("lp-large needs finite p > 2");
      if (!(f.eps > 0.0 && f.eps < 1.0)) bad("eps must lie in (0, 1)");
      if (!(f.delta > 0.0 && f.delta < 1.0)) bad("delta must lie in (0, 1)");
      break;
    case Kind::OpnormAlpha:
      if (!(f.alpha > 1.0)) bad("opnorm-alpha needs alpha > 1");
      break;
    case Kind::OpnormEps:
      if (!(f.eps > 0.0 && f.eps < 1.0 / 3.0)) bad("opnorm-eps needs eps in (0, 1/3)");
      if (spike_rows(f) > 100000) bad("d / eps^2 rows exceed 1e5");
      break;
    case Kind::KyFan:
      if (f.rank < 1 || f.rank > f.n) bad("kyfan needs 1 <= s <= n");
      break;
    case Kind::Eigen:
      if (!(f.eps > 0.0 && f.eps < 1.0 / 3.0)) bad("eigen needs eps in (0, 1/3)");
      break;
    case Kind::Psd:
      if (!(f.p >= 1.0)) bad("psd needs p >= 1");
      break;
    case Kind::Cs: {
      if (f.k < 1 || 2 * f.k > f.n) bad("cs needs 1 <= k <= n/2");
      if (!(f.eps > 0.0)) bad("cs needs eps > 0");
      const auto r = std::llround(std::sqrt(f.N));
      if (static_cast<double>(r * r) != f.N) bad("cs needs N to be a perfect square");
      break;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Calibration

namespace detail {

struct SpikeDraw {
  Mat G;
  Vec u, v;
};

inline SpikeDraw spike_draw(const HardSetup& h, std::size_t m, std::size_t n, std::uint64_t i) {
  Rng rng = make_rng(h.seed, "harddist-calibration", i);
  SpikeDraw d;
  d.G = draw(m, n, *h.noise, rng).to_real();
  d.u = real(draw(m, *h.spike, rng));
  d.v = real(draw(n, *h.spike, rng));
  return d;
}

inline void calibrate_matrix(HardSetup& h, std::size_t threads) {
  const HardFamily& f = h.family;
  Calibration& c = h.cal;
  const std::size_t m = spike_rows(f), n = f.n, S = f.calibration_samples;
  const double N = f.N, sn = std::sqrt(static_cast<double>(n));
  // Natural scale of ||G||_op for the family's displayed bound.
  const double scale = f.kind == Kind::OpnormEps ? N * (1.0 + 2.0 * f.eps) * sn / f.eps : N * sn;

  std::vector<double> op(S), need(S, 0.0), uv(S);
  std::vector<SpikeDraw> draws(S);
  parallel_for(S, threads, [&](std::size_t i) {
    draws[i] = spike_draw(h, m, n, i);
    op[i] = singular_values(draws[i].G)[0] / scale;
    uv[i] = draws[i].u.norm() * draws[i].v.norm() / (N * static_cast<double>(n));
  });
  c.C1 = quantile(op, 0.99);
  c.C = c.C1;

  auto spikes_given = [&] { return !f.spikes.empty(); };
  auto required = [&](auto&& per_draw) {
    parallel_for(S, threads, [&](std::size_t i) { need[i] = per_draw(draws[i]); });
    for (double x : need)
      if (std::isnan(x)) fail(ErrorCode::BadParams, "no spike strength meets the planted event for " + to_string(f.kind));
    return quantile(need, 0.99) * f.safety;
  };
  auto gv = [](const SpikeDraw& d) { return Vec(d.G * d.v / d.v.norm()); };

  switch (f.kind) {
    case Kind::OpnormAlpha: {
      c.lo = 3.0 * c.C;
      c.hi = 3.0 * f.alpha * c.C;
      if (!spikes_given()) {
        const double s1 = required([&](const SpikeDraw& d) {
          return min_spike_quadratic(gv(d), d.v.norm() * d.u, c.hi * N * sn);
        });
        c.gamma = s1 * sn / f.alpha;
        c.spikes = {c.gamma * f.alpha / sn};
      }
      break;
    }
    case Kind::OpnormEps: {
      c.lo = c.C * (1.0 + 2.0 * f.eps);
      c.hi = c.C * (1.0 + 4.0 * f.eps);
      if (!spikes_given()) {
        const double unit = N * sn / f.eps;
        const double s1 = required([&](const SpikeDraw& d) {
          return min_spike_quadratic(gv(d), d.v.norm() * d.u, c.hi * unit);
        });
        c.gamma = s1 / std::sqrt(f.eps / static_cast<double>(n));
        c.spikes = {s1};
      }
      break;
    }
    case Kind::KyFan: {
      // Separation needs 0.9 gamma - C > C.
      c.gamma = f.safety * 2.0 * c.C / 0.9;
      c.lo = c.C;
      c.hi = 0.9 * c.gamma - c.C;
      if (!spikes_given()) c.spikes.assign(f.rank, c.gamma / sn);
      if (static_cast<double>(f.rank) > sn)
        c.warnings.push_back("kyfan rank exceeds sqrt(n); the spike norms interfere");
      break;
    }
    case Kind::Eigen: {
      c.shift = std::ceil(c.C * N * sn);
      c.eps = f.eps;
      c.lo = 0.0;
      c.hi = 2.0 * f.eps;
      if (!spikes_given()) {
        const double d = static_cast<double>(n), sh = c.shift;
        const double s1 = required([&](const SpikeDraw& dr) {
          const Vec g = gv(dr);
          const Vec w = dr.v.norm() * dr.u;
          const double gF = dr.G.squaredNorm(), cross = dr.u.dot(dr.G * dr.v), uv2 = dr.u.squaredNorm() * dr.v.squaredNorm();
          auto f_of = [&](double s) {
            const double hF2 = gF + 2.0 * s * cross + s * s * uv2;
            const double mF = std::sqrt(2.0 * hF2 + 2.0 * d * sh * sh);
            return (g + s * w).norm() - sh - 2.0 * f.eps * mF;
          };
          return min_spike_bisect(f_of, 100.0);
        });
        c.gamma = s1 / f.eps;
        c.spikes = {s1};
      }
      break;
    }
    case Kind::Psd: {
      const double d = static_cast<double>(n);
      c.shift = std::ceil(c.C * N * sn);
      c.C2 = quantile(uv, 0.01);
      if (!spikes_given()) {
        c.gamma = 4.0 * c.C / c.C2;  // s = gamma / sqrt(d) leaves a gap of 2 C N sqrt(d)
        c.spikes = {c.gamma / sn};
      }
      const double s = f.spikes.empty() ? c.spikes[0] : f.spikes[0];
      const double pexp = std::isinf(f.p) ? 0.0 : 1.0 / f.p;
      std::vector<double> sch(S);
      parallel_for(S, threads, [&](std::size_t i) {
        const auto& dr = draws[i];
        Mat H = dr.G + s * dr.u * dr.v.transpose();
        Mat M = Mat::Zero(2 * n, 2 * n);
        M.topRightCorner(n, n) = H;
        M.bottomLeftCorner(n, n) = H.transpose();
        M.diagonal().setConstant(c.shift);
        sch[i] = schatten_from_eigs(symmetric_eigenvalues(M), f.p) / (N * std::pow(d, 0.5 + pexp));
      });
      c.CS = quantile(sch, 0.99);
      c.eps_bound = (c.C2 * s * N * d - 2.0 * c.C * N * sn) / (c.CS * N * std::pow(d, 0.5 + pexp));
      if (!(c.eps_bound > 0.0)) fail(ErrorCode::BadParams, "spike too small: the psd condition admits no positive eps");
      c.eps = f.eps > 0.0 ? f.eps : 0.5 * c.eps_bound;
      if (c.eps > c.eps_bound) c.warnings.push_back("eps exceeds the psd condition bound");
      c.lo = 0.0;
      c.hi = c.eps;
      break;
    }
    default: break;
  }
  if (c.spikes.empty()) c.spikes = f.spikes;
  if (f.kind == Kind::Eigen && c.spikes[0] >= 1.0) c.warnings.push_back("eigen spike s >= 1");
}

inline void calibrate_lp(HardSetup& h, std::size_t threads) {
  const HardFamily& f = h.family;
  Calibration& c = h.cal;
  if (f.kind == Kind::LpSmall) {
    const std::size_t S = std::max<std::size_t>(f.calibration_samples, 2000);
    std::vector<double> norms(S);
    parallel_for(S, threads, [&](std::size_t i) {
      Rng rng = make_rng(h.seed, "harddist-tau", i);
      long double s = 0.0L;
      for (std::size_t j = 0; j < f.n; ++j) s += std::pow(std::abs(static_cast<long double>(std_normal(rng))), static_cast<long double>(f.p));
      norms[i] = static_cast<double>(std::pow(s, 1.0L / static_cast<long double>(f.p)));
    });
    c.tau = f.N * std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(S);
    c.eps = f.eps;
    c.lo = 1.0 + f.eps;
    c.hi = 1.0 + 3.0 * f.eps;
    return;
  }
  // lp-large: t = log_3(1 / sqrt(delta)), E_{n-t} over 1e4 continuous draws.
  c.t = static_cast<std::size_t>(std::max(1.0, std::ceil(std::log(1.0 / std::sqrt(f.delta)) / std::log(3.0) - 1e-9)));
  require(c.t < f.n / 2, ErrorCode::BadParams, "lp-large needs t < n/2");
  const std::size_t S = 10000, m = f.n - c.t;
  std::vector<double> norm(S), pw(S);
  std::vector<std::vector<double>> tail(S);  // noise on the planted coordinates, in units of N
  parallel_for(S, threads, [&](std::size_t i) {
    Rng rng = make_rng(h.seed, "harddist-E", i);
    long double s = 0.0L;
    for (std::size_t j = 0; j < m; ++j) s += std::pow(std::abs(static_cast<long double>(std_normal(rng))), static_cast<long double>(f.p));
    pw[i] = static_cast<double>(s);
    norm[i] = static_cast<double>(std::pow(s, 1.0L / static_cast<long double>(f.p)));
    for (std::size_t j = 0; j < c.t; ++j) tail[i].push_back(std_normal(rng));
  });
  c.E = std::accumulate(norm.begin(), norm.end(), 0.0) / static_cast<double>(S);
  const double Ep = std::pow(c.E, f.p);
  // Per draw, the smallest C with sum_{i not in T} |x_i|^p + sum_{i in T} |x_i + h(C)|^p
  // >= (1 + 4 eps) N^p E^p, where h(C) = C eps^{1/p} N E / t^{1/p}.
  const double unit = std::pow(f.eps, 1.0 / f.p) * c.E / std::pow(static_cast<double>(c.t), 1.0 / f.p);
  std::vector<double> need(S);
  parallel_for(S, threads, [&](std::size_t i) {
    auto g = [&](double C) {
      double s = pw[i];
      for (double x : tail[i]) s += std::pow(std::abs(x + C * unit), f.p);
      return s / Ep - (1.0 + 4.0 * f.eps);
    };
    need[i] = min_spike_bisect(g, 1e3);
  });
  for (double x : need)
    if (std::isnan(x)) fail(ErrorCode::BadParams, "no planted magnitude meets the lp-large event");
  c.C = f.safety * quantile(need, 0.99);
  c.planted = c.C * std::pow(f.eps, 1.0 / f.p) * f.N * c.E / std::pow(static_cast<double>(c.t), 1.0 / f.p);
  c.eps = f.eps;
  c.lo = 1.0 + 2.0 * f.eps;
  c.hi = 1.0 + 4.0 * f.eps;
}

inline void build_support_family(HardSetup& h) {
  const HardFamily& f = h.family;
  const double n = static_cast<double>(f.n), k = static_cast<double>(f.k);
  const double exponent = std::floor(k * std::log2(n / k) / 4.0);
  const std::size_t target = static_cast<std::size_t>(std::min(4096.0, std::max(2.0, std::exp2(exponent))));
  Rng rng = make_rng(h.seed, "harddist-support-family");
  const std::size_t cap = 200 * target;
  for (std::size_t tries = 0; h.supports.size() < target; ++tries) {
    if (tries >= cap) fail(ErrorCode::BadParams, "could not build a support family of size " + std::to_string(target));
    auto S = random_subset(f.n, f.k, rng);
    auto b = bits_of(S, f.n);
    bool ok = true;
    for (const auto& other : h.support_bits)
      if (sym_diff(b, other) < f.k) {
        ok = false;
        break;
      }
    if (!ok) continue;
    h.supports.push_back(std::move(S));
    h.support_bits.push_back(std::move(b));
  }
  Calibration& c = h.cal;
  c.eps = f.eps;
  c.lo = 0.5;  // top-k energy over k N on pure noise
  c.hi = 0.0;  // decoded support differs from S in no coordinate
  if (!(f.eps > std::sqrt(k * std::log(n) / n)))
    c.warnings.push_back("eps <= sqrt(k ln n / n): outside the regime of the sparse-recovery bound");
}

}  // namespace detail

inline HardSetup prepare(const HardFamily& f, std::uint64_t seed, std::size_t threads = 1) {
  detail::validate(f);
  HardSetup h;
  h.family = f;
  h.seed = seed;
  Calibration& c = h.cal;
  c.samples = f.calibration_samples;
  const double N = f.N;
  h.noise.emplace(N * N);
  switch (f.kind) {
    case Kind::LpSmall:
      h.noise_d2.emplace((1.0 + 4.0 * f.eps) * (1.0 + 4.0 * f.eps) * N * N);
      c.rows = 1, c.cols = f.n;
      detail::calibrate_lp(h, threads);
      break;
    case Kind::LpLarge:
      c.rows = 1, c.cols = f.n;
      detail::calibrate_lp(h, threads);
      break;
    case Kind::Cs:
      h.noise.emplace(f.eps * N * static_cast<double>(f.k) / static_cast<double>(f.n));
      c.rows = 1, c.cols = f.n;
      detail::build_support_family(h);
      break;
    default:
      h.spike.emplace(N);
      c.rows = detail::spike_rows(f), c.cols = f.n;
      if (f.kind == Kind::Eigen || f.kind == Kind::Psd) c.rows = c.cols = 2 * f.n;
      detail::calibrate_matrix(h, threads);
      break;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Generation

inline HardInstance gen_hard_instance(const HardSetup& h, Side side, Rng& rng) {
  const HardFamily& f = h.family;
  const Calibration& c = h.cal;
  HardInstance out;
  out.kind = f.kind;
  out.side = side;
  Witness& w = out.witness;
  switch (f.kind) {
    case Kind::LpSmall:
      out.payload = detail::draw(1, f.n, side == Side::D1 ? *h.noise : *h.noise_d2, rng);
      if (side == Side::D2) w.scale = 1.0 + 4.0 * f.eps;
      break;
    case Kind::LpLarge:
      out.payload = detail::draw(1, f.n, *h.noise, rng);
      if (side == Side::D2) {
        w.coords = detail::random_subset(f.n, c.t, rng);
        w.planted = IntMatrix(1, f.n);
        for (auto i : w.coords) w.planted.data[i] = std::llround(c.planted);
      }
      break;
    case Kind::Cs:
      out.payload = detail::draw(1, f.n, *h.noise, rng);
      if (side == Side::D2) {
        w.support_index = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(h.supports.size()) - 1));
        w.coords = h.supports[w.support_index];
        const auto amp = std::llround(std::sqrt(f.N));
        w.planted = IntMatrix(1, f.n);
        for (auto i : w.coords) w.planted.data[i] = uniform01(rng) < 0.5 ? -amp : amp;
      }
      break;
    default: {
      const std::size_t m = detail::spike_rows(f), n = f.n;
      out.payload = detail::draw(m, n, *h.noise, rng);
      if (side == Side::D2) {
        Mat P = Mat::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        for (double s : c.spikes) {
          w.u.push_back(detail::draw(m, *h.spike, rng));
          w.v.push_back(detail::draw(n, *h.spike, rng));
          w.s.push_back(s);
          P += s * detail::real(w.u.back()) * detail::real(w.v.back()).transpose();
        }
        w.planted = IntMatrix(m, n);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            w.planted(i, j) = std::llround(P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      }
      if (f.kind == Kind::Eigen || f.kind == Kind::Psd) {
        out.payload = detail::embed(out.payload, static_cast<std::int64_t>(c.shift));
        if (side == Side::D2) w.planted = detail::embed(w.planted, 0);
      }
      break;
    }
  }
  if (w.planted.rows > 0)
    for (std::size_t i = 0; i < out.payload.data.size(); ++i) out.payload.data[i] += w.planted.data[i];
  out.payload.bound = out.payload.max_abs();
  return out;
}

inline HardInstance gen_hard_instance(const HardSetup& h, Side side, std::uint64_t seed, std::uint64_t index) {
  Rng rng = make_rng(seed, side == Side::D1 ? "harddist-D1" : "harddist-D2", index);
  HardInstance out = gen_hard_instance(h, side, rng);
  out.seed = seed;
  out.index = index;
  return out;
}

// ---------------------------------------------------------------------------
// Gap events

struct GapEvent {
  double statistic = 0.0;
  bool event_holds = false;
  double threshold = 0.0;
  std::optional<std::size_t> decoded;  // cs: index of the decoded family member
};

// Nearest family member to the top-k coordinates of |x|.
inline std::size_t decode_support(const HardSetup& h, const IntMatrix& x) {
  const std::size_t n = h.family.n, k = h.family.k;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto xa = std::abs(x.data[a]), xb = std::abs(x.data[b]);
    return xa != xb ? xa > xb : a < b;
  });
  idx.resize(k);
  const auto bits = detail::bits_of(idx, n);
  std::size_t best = 0, best_d = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < h.support_bits.size(); ++i) {
    const auto d = detail::sym_diff(bits, h.support_bits[i]);
    if (d < best_d) best = i, best_d = d;
  }
  return best;
}

inline double statistic(const HardSetup& h, const IntMatrix& x) {
  const HardFamily& f = h.family;
  const Calibration& c = h.cal;
  const double N = f.N, sn = std::sqrt(static_cast<double>(f.n));
  switch (f.kind) {
    case Kind::LpSmall:
      return static_cast<double>(std::pow(lp_power_scaled(x, f.p, N), 1.0L / static_cast<long double>(f.p))) * N / c.tau;
    case Kind::LpLarge:
      return static_cast<double>(lp_power_scaled(x, f.p, N) / std::pow(static_cast<long double>(c.E), static_cast<long double>(f.p)));
    case Kind::OpnormAlpha: return singular_values(x.to_real())[0] / (N * sn);
    case Kind::OpnormEps: return singular_values(x.to_real())[0] / (N * sn / f.eps);
    case Kind::KyFan: {
      const Vec s = singular_values(x.to_real());
      return s.head(static_cast<Eigen::Index>(f.rank)).sum() / (N * static_cast<double>(f.rank) * sn);
    }
    case Kind::Eigen: {
      const Mat M = x.to_real();
      return -symmetric_eigenvalues(M)[0] / M.norm();
    }
    case Kind::Psd: {
      const Vec l = symmetric_eigenvalues(x.to_real());
      return -l[0] / schatten_from_eigs(l, f.p);
    }
    case Kind::Cs: {
      std::vector<double> sq;
      for (auto v : x.data) sq.push_back(static_cast<double>(v) * static_cast<double>(v));
      std::partial_sort(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(f.k), sq.end(), std::greater<>());
      return std::accumulate(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(f.k), 0.0) / (static_cast<double>(f.k) * N);
    }
  }
  return 0.0;
}

// D1 event: statistic <= lo. D2 event: statistic >= hi (strictly above for
// opnorm-alpha); for cs the D2 event is exact support recovery.
inline GapEvent verify_gap_event(const HardSetup& h, const HardInstance& inst) {
  const Calibration& c = h.cal;
  GapEvent g;
  if (h.family.kind == Kind::Cs && inst.side == Side::D2) {
    g.decoded = decode_support(h, inst.payload);
    g.statistic = static_cast<double>(detail::sym_diff(h.support_bits[*g.decoded], detail::bits_of(inst.witness.coords, h.family.n)));
    g.threshold = 0.0;
    g.event_holds = g.statistic == 0.0;
    return g;
  }
  g.statistic = statistic(h, inst.payload);
  if (inst.side == Side::D1) {
    g.threshold = c.lo;
    g.event_holds = g.statistic <= c.lo;
  } else {
    g.threshold = c.hi;
    g.event_holds = h.family.kind == Kind::OpnormAlpha ? g.statistic > c.hi : g.statistic >= c.hi;
  }
  return g;
}

struct PairBatch {
  std::size_t pairs = 0;
  std::size_t d1_holds = 0, d2_holds = 0, both = 0;
  std::vector<double> d1_stats, d2_stats;
};

inline PairBatch verify_pairs(const HardSetup& h, std::size_t count, std::uint64_t seed, std::size_t threads = 1) {
  PairBatch b;
  b.pairs = count;
  b.d1_stats.resize(count);
  b.d2_stats.resize(count);
  std::vector<char> ok1(count), ok2(count);
  parallel_for(count, threads, [&](std::size_t i) {
    const auto e1 = verify_gap_event(h, gen_hard_instance(h, Side::D1, seed, i));
    const auto e2 = verify_gap_event(h, gen_hard_instance(h, Side::D2, seed, i));
    b.d1_stats[i] = e1.statistic, ok1[i] = e1.event_holds;
    b.d2_stats[i] = e2.statistic, ok2[i] = e2.event_holds;
  });
  for (std::size_t i = 0; i < count; ++i) {
    b.d1_holds += ok1[i];
    b.d2_holds += ok2[i];
    b.both += ok1[i] && ok2[i];
  }
  return b;
}

// ---------------------------------------------------------------------------
// Sketched indistinguishability: TVD of the images of both sides under one
// fixed random orthonormal d-row sketch of the row-major payload.

inline stats::TvdEstimate sketched_indistinguishability(const HardSetup& h, std::size_t d, std::size_t trials,
                                                        std::uint64_t seed, std::size_t threads = 1,
                                                        bool null_pair = false) {
  if (d == 0 || d > stats::kMaxHistogramDim)
    fail(ErrorCode::DimensionTooLarge, "sketch rows must be in [1, " + std::to_string(stats::kMaxHistogramDim) + "]");
  const std::size_t D = h.cal.rows * h.cal.cols;
  Rng rng = make_rng(seed, "harddist-sketch");
  Mat A(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(D));
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = std_normal(rng);
  const Mat Q = numerics::orthonormalize_rows(A).Q;

  Mat s1(static_cast<Eigen::Index>(trials), static_cast<Eigen::Index>(d)), s2 = s1;
  const Side other = null_pair ? Side::D1 : Side::D2;
  parallel_for(trials, threads, [&](std::size_t t) {
    const auto a = gen_hard_instance(h, Side::D1, seed, 2 * t);
    const auto b = gen_hard_instance(h, other, seed, 2 * t + 1);
    for (Eigen::Index r = 0; r < Q.rows(); ++r) {
      double ya = 0.0, yb = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        ya += Q(r, static_cast<Eigen::Index>(j)) * static_cast<double>(a.payload.data[j]);
        yb += Q(r, static_cast<Eigen::Index>(j)) * static_cast<double>(b.payload.data[j]);
      }
      s1(static_cast<Eigen::Index>(t), r) = ya;
      s2(static_cast<Eigen::Index>(t), r) = yb;
    }
  });
  return stats::empirical_tvd(s1, s2, {0, 200, derive_seed(seed, "harddist-bootstrap")});
}

// ---------------------------------------------------------------------------
// Supporting concentration checks

// E[exp(a x y / s2)] for independent x, y ~ D(0, s2).
struct MgfEstimate {
  double mean = 0.0, se = 0.0;
};

inline MgfEstimate mgf_xy(double a, double sigma2, std::size_t samples, std::uint64_t seed, std::size_t threads = 1) {
  const dgauss::DiscreteGaussian1D d(sigma2);
  constexpr std::size_t kChunk = 10000;
  const std::size_t chunks = (samples + kChunk - 1) / kChunk;
  std::vector<double> sum(chunks, 0.0), sq(chunks, 0.0);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Rng rng = make_rng(seed, "harddist-mgf", c);
    const std::size_t end = std::min(samples, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const double x = static_cast<double>(d(rng)), y = static_cast<double>(d(rng));
      const double e = std::exp(a * x * y / sigma2);
      sum[c] += e;
      sq[c] += e * e;
    }
  });
  const double S = static_cast<double>(samples);
  const double mean = std::accumulate(sum.begin(), sum.end(), 0.0) / S;
  const double var = std::max(0.0, std::accumulate(sq.begin(), sq.end(), 0.0) / S - mean * mean);
  return {mean, std::sqrt(var / S)};
}

struct SingularBand {
  double smin = 0.0, smax = 0.0;  // in units of N
  double lo = 0.0, hi = 0.0;
  bool within = false;
};

// Extreme singular values of an m x n matrix with D(0, N^2) entries against
// N [sqrt(m) - 3 sqrt(n), sqrt(m) + 3 sqrt(n)].
inline SingularBand singular_band_trial(std::size_t m, std::size_t n, double N, Rng& rng) {
  const dgauss::DiscreteGaussian1D d(N * N);
  const Vec s = singular_values(detail::draw(m, n, d, rng).to_real());
  SingularBand b;
  b.smax = s[0] / N;
  b.smin = s[s.size() - 1] / N;
  b.lo = std::sqrt(static_cast<double>(m)) - 3.0 * std::sqrt(static_cast<double>(n));
  b.hi = std::sqrt(static_cast<double>(m)) + 3.0 * std::sqrt(static_cast<double>(n));
  b.within = b.smin >= b.lo && b.smax <= b.hi;
  return b;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {
inline nlohmann::json p_to_json(double p) { return std::isinf(p) ? nlohmann::json("inf") : nlohmann::json(p); }
inline double p_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    require(j.get<std::string>() == "inf", ErrorCode::BadConfig, "p must be a number or \"inf\"");
    return std::numeric_limits<double>::infinity();
  }
  return j.get<double>();
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const HardFamily& f) {
  j = {{"family", to_string(f.kind)}, {"n", f.n},     {"eps", f.eps},         {"p", detail::p_to_json(f.p)},
       {"delta", f.delta},            {"alpha", f.alpha}, {"rank", f.rank},   {"k", f.k},
       {"N", f.N},                    {"spikes", f.spikes}, {"calibration_samples", f.calibration_samples},
       {"safety", f.safety}};
}

// Missing fields take the family's desk defaults.
inline void from_json(const nlohmann::json& j, HardFamily& f) {
  f = defaults(kind_from_string(j.at("family").get<std::string>()));
  if (j.contains("n")) f.n = j["n"].get<std::size_t>();
  if (j.contains("eps")) f.eps = j["eps"].get<double>();
  if (j.contains("p")) f.p = detail::p_from_json(j["p"]);
  if (j.contains("delta")) f.delta = j["delta"].get<double>();
  if (j.contains("alpha")) f.alpha = j["alpha"].get<double>();
  if (j.contains("rank")) f.rank = j["rank"].get<std::size_t>();
  if (j.contains("k")) f.k = j["k"].get<std::size_t>();
  if (j.contains("N")) f.N = j["N"].get<double>();
  if (j.contains("spikes")) f.spikes = j["spikes"].get<std::vector<double>>();
  if (j.contains("calibration_samples")) f.calibration_samples = j["calibration_samples"].get<std::size_t>();
  if (j.contains("safety")) f.safety = j["safety"].get<double>();
}

inline void to_json(nlohmann::json& j, const Calibration& c) {
  j = {{"C1", c.C1},       {"C", c.C},           {"C2", c.C2},           {"CS", c.CS},   {"tau", c.tau},
       {"E", c.E},         {"t", c.t},           {"planted", c.planted}, {"gamma", c.gamma},
       {"spikes", c.spikes}, {"shift", c.shift}, {"eps", c.eps},         {"eps_bound", c.eps_bound},
       {"lo", c.lo},       {"hi", c.hi},         {"rows", c.rows},       {"cols", c.cols},
       {"samples", c.samples}, {"warnings", c.warnings}};
}

inline void to_json(nlohmann::json& j, const Witness& w) {
  j = {{"u", w.u}, {"v", w.v}, {"s", w.s}, {"planted", w.planted}, {"scale", w.scale}, {"coords", w.coords},
       {"support_index", w.support_index}};
}

inline void from_json(const nlohmann::json& j, Witness& w) {
  j.at("u").get_to(w.u);
  j.at("v").get_to(w.v);
  j.at("s").get_to(w.s);
  w.planted = j.at("planted").empty() ? IntMatrix() : j.at("planted").get<IntMatrix>();
  j.at("scale").get_to(w.scale);
  j.at("coords").get_to(w.coords);
  j.at("support_index").get_to(w.support_index);
}

inline void to_json(nlohmann::json& j, const HardInstance& h) {
  j = {{"family", to_string(h.kind)}, {"side", to_string(h.side)}, {"seed", h.seed}, {"index", h.index},
       {"payload", h.payload},        {"witness", h.witness}};
}

inline void from_json(const nlohmann::json& j, HardInstance& h) {
  h.kind = kind_from_string(j.at("family").get<std::string>());
  h.side = side_from_string(j.at("side").get<std::string>());
  j.at("seed").get_to(h.seed);
  j.at("index").get_to(h.index);
  h.payload = j.at("payload").get<IntMatrix>();
  h.witness = j.at("witness").get<Witness>();
}

inline void to_json(nlohmann::json& j, const GapEvent& g) {
  j = {{"statistic", g.statistic}, {"event_holds", g.event_holds}, {"threshold", g.threshold}};
  if (g.decoded) j["decoded"] = *g.decoded;
}

inline void to_json(nlohmann::json& j, const PairBatch& b) {
  j = {{"pairs", b.pairs}, {"d1_holds", b.d1_holds}, {"d2_holds", b.d2_holds}, {"both", b.both}};
}

}  // namespace advsketch::harddist
