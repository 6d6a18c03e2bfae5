#pragma once

// Integer linear sketches and the GapNorm oracles built on them.
//
// GapNorm(B, alpha) promise, per coordinate: answer 1 when ||x||^2 >= alpha B n
// and 0 when ||x||^2 <= alpha n. Queries drawn at variance s2 have
// ||x||^2 ~ s2 n, which lines the promise up with the query grid [alpha, alpha B].
//
// Information boundary: an Estimator sees the sketch's own public state and
// the sketched vector A x, never x itself. Queries reach a SketchOracle as a
// turnstile stream of (index, delta) updates folded into a StreamState.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsketch/dgauss.hpp"
#include "advsketch/error.hpp"
#include "advsketch/lattice.hpp"
#include "advsketch/numerics.hpp"
#include "advsketch/rng.hpp"

namespace advsketch::sketch {

using lattice::IntMatrix;
using IntVector = std::vector<std::int64_t>;

enum class Family { Sign, RoundedGaussian, CountSketch, ProjectionThreshold };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::Sign: return "sign";
    case Family::RoundedGaussian: return "rounded-gaussian";
    case Family::CountSketch: return "countsketch";
    case Family::ProjectionThreshold: return "projection-threshold";
  }
  return "?";
}

inline Family family_from_string(const std::string& s) {
  for (Family f : {Family::Sign, Family::RoundedGaussian, Family::CountSketch, Family::ProjectionThreshold})
    if (to_string(f) == s) return f;
  fail(ErrorCode::BadParams, "unknown sketch family '" + s + "'");
}

struct GapNorm {
  double B = 8.0;
  double alpha = 0.0;

  // Geometric midpoint of the two promise sides, in ||x||^2 units.
  double midpoint(std::size_t n) const { return std::sqrt(B) * alpha * static_cast<double>(n); }
};

struct SketchParams {
  GapNorm gap;
  std::int64_t entry_cap = 0;         // M; 0 means n^2
  double gaussian_scale = 8.0;        // rounded-gaussian entries ~ round(N(0, scale^2))
  std::size_t groups = 0;             // sign: row groups for the median (0: min(r, 4))
  std::size_t hash_rows = 0;          // countsketch: repetitions (0: largest of 3, 2, 1 dividing r)
  std::size_t calibration_samples = 4000;
};

struct SketchSpec {
  Family family = Family::Sign;
  std::size_t n = 0;
  std::size_t r = 0;
  std::uint64_t seed = 0;
  SketchParams params;
};

inline void to_json(nlohmann::json& j, const SketchSpec& s) {
  j = {{"family", to_string(s.family)},
       {"n", s.n},
       {"r", s.r},
       {"seed", s.seed},
       {"params",
        {{"B", s.params.gap.B},
         {"alpha", s.params.gap.alpha},
         {"entry_cap", s.params.entry_cap},
         {"gaussian_scale", s.params.gaussian_scale},
         {"groups", s.params.groups},
         {"hash_rows", s.params.hash_rows},
         {"calibration_samples", s.params.calibration_samples}}}};
}

inline void from_json(const nlohmann::json& j, SketchSpec& s) {
  s.family = family_from_string(j.at("family").get<std::string>());
  s.n = j.at("n").get<std::size_t>();
  s.r = j.at("r").get<std::size_t>();
  s.seed = j.value("seed", std::uint64_t{0});
  const nlohmann::json p = j.value("params", nlohmann::json::object());
  s.params.gap.B = p.value("B", 8.0);
  s.params.gap.alpha = p.value("alpha", 0.0);
  s.params.entry_cap = p.value("entry_cap", std::int64_t{0});
  s.params.gaussian_scale = p.value("gaussian_scale", 8.0);
  s.params.groups = p.value("groups", std::size_t{0});
  s.params.hash_rows = p.value("hash_rows", std::size_t{0});
  s.params.calibration_samples = p.value("calibration_samples", std::size_t{4000});
}

// The matrix plus its orthonormal-row form Q = R A.
class IntegerSketch {
 public:
  IntegerSketch(IntMatrix A, SketchSpec spec) : A_(std::move(A)), spec_(std::move(spec)) {
    require(A_.rows > 0 && A_.cols > 0, ErrorCode::BadParams, "empty sketch");
    auto o = numerics::orthonormalize_rows(A_.to_real());
    Q_ = std::move(o.Q);
    R_ = std::move(o.R);
    At_.resize(A_.data.size());
    for (std::size_t i = 0; i < A_.rows; ++i)
      for (std::size_t j = 0; j < A_.cols; ++j) At_[j * A_.rows + i] = A_(i, j);
  }

  const IntMatrix& matrix() const { return A_; }
  const SketchSpec& spec() const { return spec_; }
  std::size_t n() const { return A_.cols; }
  std::size_t r() const { return A_.rows; }
  const numerics::Mat& Q() const { return Q_; }
  const numerics::Mat& R() const { return R_; }
  // Column j of A, contiguous.
  const std::int64_t* column(std::size_t j) const { return At_.data() + j * A_.rows; }

  IntVector apply(const IntVector& x) const {
    require(x.size() == n(), ErrorCode::DimensionMismatch, "query length " + std::to_string(x.size()));
    std::vector<__int128> acc(r(), 0);
    for (std::size_t j = 0; j < n(); ++j) {
      if (x[j] == 0) continue;
      const std::int64_t* c = column(j);
      for (std::size_t i = 0; i < r(); ++i) acc[i] += static_cast<__int128>(c[i]) * x[j];
    }
    IntVector y(r());
    for (std::size_t i = 0; i < r(); ++i) {
      require(acc[i] <= std::numeric_limits<std::int64_t>::max() && acc[i] >= std::numeric_limits<std::int64_t>::min(),
              ErrorCode::BadParams, "sketch value overflows 64 bits");
      y[i] = static_cast<std::int64_t>(acc[i]);
    }
    return y;
  }

 private:
  IntMatrix A_;
  SketchSpec spec_;
  numerics::Mat Q_, R_;
  std::vector<std::int64_t> At_;
};

inline void to_json(nlohmann::json& j, const IntegerSketch& s) {
  j = s.spec();
  j["matrix"] = s.matrix();
}

struct StreamUpdate {
  std::size_t index = 0;
  std::int64_t delta = 0;
};

inline std::vector<StreamUpdate> to_updates(const IntVector& x) {
  std::vector<StreamUpdate> u;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != 0) u.push_back({i, x[i]});
  return u;
}

// Running value of A x under turnstile updates x_i += delta.
class StreamState {
 public:
  explicit StreamState(const IntegerSketch& s) : s_(&s), value_(s.r(), 0) {}

  void update(std::size_t i, std::int64_t delta) {
    if (i >= s_->n()) fail(ErrorCode::DimensionMismatch, "update index " + std::to_string(i));
    const std::int64_t* c = s_->column(i);
    for (std::size_t k = 0; k < value_.size(); ++k) value_[k] += c[k] * delta;
  }
  void update(const StreamUpdate& u) { update(u.index, u.delta); }
  void reset() { std::fill(value_.begin(), value_.end(), 0); }

  const IntVector& value() const { return value_; }

 private:
  const IntegerSketch* s_;
  IntVector value_;
};

// Decision rule on the sketched vector.
class Estimator {
 public:
  virtual ~Estimator() = default;
  virtual double estimate(const IntVector& sketched) const = 0;  // estimate of ||x||^2
  virtual bool decide(const IntVector& sketched) const = 0;
  virtual nlohmann::json describe() const = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

inline numerics::Vec to_real(const IntVector& y) { return numerics::to_vec(y); }

}  // namespace detail

// Median over row groups of the mean squared row response.
class MedianGroupEstimator : public Estimator {
 public:
  MedianGroupEstimator(std::vector<std::vector<std::size_t>> groups, double scale, double threshold, bool sum_rows)
      : groups_(std::move(groups)), scale_(scale), threshold_(threshold), sum_rows_(sum_rows) {}

  double estimate(const IntVector& y) const override {
    std::vector<double> g;
    g.reserve(groups_.size());
    for (const auto& grp : groups_) {
      double s = 0.0;
      for (std::size_t i : grp) s += static_cast<double>(y[i]) * static_cast<double>(y[i]);
      g.push_back(sum_rows_ ? s : s / static_cast<double>(grp.size()));
    }
    return scale_ * detail::median(std::move(g));
  }
  bool decide(const IntVector& y) const override { return estimate(y) >= threshold_; }
  nlohmann::json describe() const override {
    return {{"kind", sum_rows_ ? "countsketch-median" : "sign-median"}, {"groups", groups_.size()}, {"scale", scale_},
            {"threshold", threshold_}};
  }

 private:
  std::vector<std::vector<std::size_t>> groups_;
  double scale_, threshold_;
  bool sum_rows_;
};

// (n/r) ||Q x||^2 with Q x = R (A x); decision compares ||Q x||^2 to tau.
class ProjectionEstimator : public Estimator {
 public:
  ProjectionEstimator(numerics::Mat R, std::size_t n, double tau) : R_(std::move(R)), n_(n), tau_(tau) {}

  double projected_sq(const IntVector& y) const { return (R_ * detail::to_real(y)).squaredNorm(); }
  double estimate(const IntVector& y) const override {
    return static_cast<double>(n_) / static_cast<double>(R_.rows()) * projected_sq(y);
  }
  bool decide(const IntVector& y) const override { return projected_sq(y) >= tau_; }
  nlohmann::json describe() const override { return {{"kind", "projection"}, {"tau", tau_}}; }
  double tau() const { return tau_; }

 private:
  numerics::Mat R_;
  std::size_t n_;
  double tau_;
};

struct Calibration {
  double tau = 0.0;
  double c = 0.0;               // tau / (alpha B r / n)
  double false_positive = 0.0;  // answer 1 at s2 = 2 alpha
  double false_negative = 0.0;  // answer 0 at s2 = alpha B / 2
  std::size_t samples = 0;
};

inline void to_json(nlohmann::json& j, const Calibration& c) {
  j = {{"tau", c.tau}, {"c", c.c}, {"false_positive", c.false_positive}, {"false_negative", c.false_negative},
       {"samples", c.samples}};
}

struct BuiltSketch {
  std::shared_ptr<const IntegerSketch> sketch;
  std::shared_ptr<const Estimator> estimator;
  std::optional<Calibration> calibration;
};

// alpha = max(smoothing floor, l^2 ln(2n(1 + 1/eps)) / pi), l the certified
// kernel-lattice length (after preprocessing when r <= n/4).
inline double auto_alpha(const IntMatrix& A, double eps = 1e-6) {
  double len = 0.0;
  if (4 * A.rows <= A.cols)
    len = lattice::preprocess_sketch(A).certified_length;
  else
    len = lattice::reduce_basis(lattice::integer_kernel_basis(A)).max_length();
  const double n = static_cast<double>(A.cols);
  return std::max(dgauss::alpha_floor(A.cols, eps), len * len * std::log(2.0 * n * (1.0 + 1.0 / eps)) / std::numbers::pi);
}

namespace detail {

inline IntMatrix sign_matrix(std::size_t r, std::size_t n, Rng& rng) {
  IntMatrix A(r, n);
  for (auto& x : A.data) x = uniform_int(rng, 0, 1) ? 1 : -1;
  A.bound = 1;
  return A;
}

// Mean of the median of g groups of chi^2_k / k: debiases the median rule.
inline double median_bias(std::size_t groups, std::size_t k, Rng& rng) {
  const int N = 20000;
  double s = 0.0;
  std::vector<double> vals(groups);
  for (int t = 0; t < N; ++t) {
    for (auto& v : vals) {
      double a = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double g = std_normal(rng);
        a += g * g;
      }
      v = a / static_cast<double>(k);
    }
    s += median(vals);
  }
  return s / N;
}

// Balanced threshold between the two promise sides, fit on isotropic
// discrete Gaussian queries at s2 = 2 alpha and alpha B / 2.
inline Calibration calibrate_projection(const IntegerSketch& sk, const GapNorm& gap, std::size_t samples, Rng& rng) {
  const std::size_t n = sk.n();
  auto draw = [&](double s2) {
    dgauss::SubspaceSampler smp(dgauss::SubspaceSpec{n, numerics::OrthonormalBasis(n), s2});
    std::vector<double> v;
    IntVector x;
    numerics::Vec scratch;
    for (std::size_t i = 0; i < samples; ++i) {
      smp.sample(rng, x, scratch);
      v.push_back((sk.Q() * numerics::to_vec(x)).squaredNorm());
    }
    std::sort(v.begin(), v.end());
    return v;
  };
  const std::vector<double> lo = draw(2.0 * gap.alpha);
  const std::vector<double> hi = draw(0.5 * gap.alpha * gap.B);
  std::vector<double> cands(lo.begin(), lo.end());
  cands.insert(cands.end(), hi.begin(), hi.end());
  std::sort(cands.begin(), cands.end());
  Calibration best;
  double best_err = 2.0;
  const auto N = static_cast<double>(samples);
  for (double t : cands) {
    const double fp = static_cast<double>(lo.end() - std::lower_bound(lo.begin(), lo.end(), t)) / N;
    const double fn = static_cast<double>(std::lower_bound(hi.begin(), hi.end(), t) - hi.begin()) / N;
    if (std::max(fp, fn) < best_err) {
      best_err = std::max(fp, fn);
      best.tau = t;
      best.false_positive = fp;
      best.false_negative = fn;
    }
  }
  best.samples = samples;
  best.c = best.tau / (gap.alpha * gap.B * static_cast<double>(sk.r()) / static_cast<double>(n));
  return best;
}

}  // namespace detail

inline BuiltSketch build_sketch(SketchSpec spec) {
  const std::size_t n = spec.n, r = spec.r;
  require(n >= 2 && r >= 1 && r < n, ErrorCode::BadParams, "need 1 <= r < n");
  require(spec.params.gap.B >= 8.0, ErrorCode::BadParams, "B must be at least 8");
  require(spec.params.gap.alpha >= 0.0, ErrorCode::BadParams, "alpha must be non-negative");
  if (spec.params.entry_cap <= 0) spec.params.entry_cap = static_cast<std::int64_t>(n * n);
  Rng rng = make_rng(spec.seed, "sketch/" + to_string(spec.family));
  IntMatrix A;
  std::vector<std::vector<std::size_t>> groups;
  switch (spec.family) {
    case Family::Sign:
    case Family::ProjectionThreshold:
      A = detail::sign_matrix(r, n, rng);
      break;
    case Family::RoundedGaussian: {
      require(spec.params.gaussian_scale > 0.0, ErrorCode::BadParams, "gaussian_scale");
      A = IntMatrix(r, n);
      for (auto& x : A.data)
        x = std::clamp<std::int64_t>(std::llround(spec.params.gaussian_scale * std_normal(rng)), -spec.params.entry_cap,
                                     spec.params.entry_cap);
      A.bound = spec.params.entry_cap;
      break;
    }
    case Family::CountSketch: {
      std::size_t h = spec.params.hash_rows;
      if (h == 0)
        for (h = std::min<std::size_t>(r, 3); r % h; --h) {
        }
      require(h >= 1 && r % h == 0, ErrorCode::BadParams, "countsketch needs hash_rows dividing r");
      const std::size_t w = r / h;
      require(n >= w, ErrorCode::BadParams, "countsketch needs n >= buckets");
      A = IntMatrix(r, n);
      std::vector<std::size_t> perm(n);
      for (std::size_t t = 0; t < h; ++t) {
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::size_t> grp;
        for (std::size_t b = 0; b < w; ++b) grp.push_back(t * w + b);
        groups.push_back(grp);
        for (std::size_t j = 0; j < n; ++j) A(t * w + perm[j] % w, j) = uniform_int(rng, 0, 1) ? 1 : -1;
      }
      A.bound = 1;
      break;
    }
  }
  if (spec.params.gap.alpha <= 0.0) spec.params.gap.alpha = auto_alpha(A);
  require(spec.params.gap.alpha >= dgauss::alpha_floor(n), ErrorCode::BadParams,
          "alpha below the smoothing floor " + std::to_string(dgauss::alpha_floor(n)));
  auto sk = std::make_shared<const IntegerSketch>(A, spec);
  BuiltSketch out;
  out.sketch = sk;
  const double mid = spec.params.gap.midpoint(n);
  switch (spec.family) {
    case Family::Sign: {
      const std::size_t g = spec.params.groups ? spec.params.groups : std::min<std::size_t>(r, 4);
      require(g >= 1 && g <= r, ErrorCode::BadParams, "groups must be in [1, r]");
      std::vector<std::vector<std::size_t>> grps(g);
      for (std::size_t i = 0; i < r; ++i) grps[i % g].push_back(i);
      Rng brng = make_rng(spec.seed, "sketch/median-bias");
      const double bias = detail::median_bias(g, r / g, brng);
      out.estimator = std::make_shared<MedianGroupEstimator>(grps, 1.0 / bias, mid, false);
      break;
    }
    case Family::CountSketch: {
      Rng brng = make_rng(spec.seed, "sketch/median-bias");
      const double bias = detail::median_bias(groups.size(), groups.front().size(), brng);
      out.estimator = std::make_shared<MedianGroupEstimator>(groups, 1.0 / bias, mid, true);
      break;
    }
    case Family::RoundedGaussian:
      out.estimator = std::make_shared<ProjectionEstimator>(sk->R(), n, mid * static_cast<double>(r) / static_cast<double>(n));
      break;
    case Family::ProjectionThreshold: {
      Rng crng = make_rng(spec.seed, "sketch/calibration");
      Calibration cal = detail::calibrate_projection(*sk, spec.params.gap, spec.params.calibration_samples, crng);
      out.estimator = std::make_shared<ProjectionEstimator>(sk->R(), n, cal.tau);
      out.calibration = cal;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oracles

class GapNormOracle {
 public:
  virtual ~GapNormOracle() = default;
  virtual bool answer(const IntVector& x) const = 0;
  virtual std::string name() const = 0;
  // True when answer() may be called from several threads at once.
  virtual bool concurrent_safe() const { return true; }
};

// Answers from (seed, A x) only.
class SketchOracle : public GapNormOracle {
 public:
  explicit SketchOracle(BuiltSketch b) : b_(std::move(b)) {}
  bool answer(const IntVector& x) const override {
    require(x.size() == b_.sketch->n(), ErrorCode::DimensionMismatch, "query length");
    StreamState st(*b_.sketch);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] != 0) st.update(i, x[i]);
    return b_.estimator->decide(st.value());
  }
  std::string name() const override { return "sketch:" + to_string(b_.sketch->spec().family); }
  const BuiltSketch& built() const { return b_; }

 private:
  BuiltSketch b_;
};

// White-box reference: exact ||x||^2 against the promise midpoint.
class GroundTruthOracle : public GapNormOracle {
 public:
  GroundTruthOracle(GapNorm gap, std::size_t n) : threshold_(gap.midpoint(n)) {}
  bool answer(const IntVector& x) const override {
    double s = 0.0;
    for (auto v : x) s += static_cast<double>(v) * static_cast<double>(v);
    return s >= threshold_;
  }
  std::string name() const override { return "ground-truth"; }
  double threshold() const { return threshold_; }

 private:
  double threshold_;
};

class ConstantOracle : public GapNormOracle {
 public:
  explicit ConstantOracle(bool v) : v_(v) {}
  bool answer(const IntVector&) const override { return v_; }
  std::string name() const override { return v_ ? "constant-1" : "constant-0"; }

 private:
  bool v_;
};

// Answers 1 iff <u, x>^2 >= threshold for a hidden unit vector u.
class PlantedDirectionOracle : public GapNormOracle {
 public:
  PlantedDirectionOracle(numerics::Vec u, double threshold) : u_(u.normalized()), t_(threshold) {}
  bool answer(const IntVector& x) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += u_[static_cast<Eigen::Index>(i)] * static_cast<double>(x[i]);
    return s * s >= t_;
  }
  std::string name() const override { return "planted-direction"; }
  const numerics::Vec& direction() const { return u_; }

 private:
  numerics::Vec u_;
  double t_;
};

}  // namespace advsketch::sketch
