#include <gtest/gtest.h>

#include <algorithm>

#include <boost/math/distributions/chi_squared.hpp>

#include "advsketch/sketch.hpp"

using namespace advsketch;
using namespace advsketch::sketch;

namespace {

SketchSpec make_spec(Family f, std::size_t n, std::size_t r, std::uint64_t seed) {
  SketchSpec s;
  s.family = f;
  s.n = n;
  s.r = r;
  s.seed = seed;
  s.params.gap.B = 8.0;
  s.params.gap.alpha = dgauss::alpha_floor(n);
  return s;
}

IntVector random_ints(std::size_t n, std::int64_t lim, Rng& rng) {
  IntVector x(n);
  for (auto& v : x) v = uniform_int(rng, -lim, lim);
  return x;
}

double sq(const IntVector& x) {
  double s = 0;
  for (auto v : x) s += static_cast<double>(v) * static_cast<double>(v);
  return s;
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;  // sentinel: nothing thrown
}

}  // namespace

TEST(Apply, IdentityAndZero) {
  IntMatrix I(3, 3);
  for (std::size_t i = 0; i < 3; ++i) I(i, i) = 1;
  IntegerSketch s(I, SketchSpec{});
  IntVector x{5, -7, 11};
  EXPECT_EQ(s.apply(x), x);
  EXPECT_EQ(s.apply(IntVector(3, 0)), IntVector(3, 0));
}

TEST(Apply, DimensionMismatch) {
  auto b = build_sketch(make_spec(Family::Sign, 64, 8, 1));
  EXPECT_EQ(code_of([&] { b.sketch->apply(IntVector(63, 0)); }), ErrorCode::DimensionMismatch);
  StreamState st(*b.sketch);
  EXPECT_EQ(code_of([&] { st.update(64, 1); }), ErrorCode::DimensionMismatch);
}

TEST(Apply, StreamOrderPermutationOracle) {
  auto b = build_sketch(make_spec(Family::Sign, 64, 8, 2));
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    IntVector x = random_ints(64, 100, rng);
    // Split every coordinate into two updates, then shuffle the update order.
    std::vector<StreamUpdate> ups;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::int64_t part = uniform_int(rng, -50, 50);
      ups.push_back({i, part});
      ups.push_back({i, x[i] - part});
    }
    std::shuffle(ups.begin(), ups.end(), rng);
    StreamState st(*b.sketch);
    for (const auto& u : ups) st.update(u);
    EXPECT_EQ(st.value(), b.sketch->apply(x));
  }
}

TEST(Apply, LinearityProperty) {
  for (Family f : {Family::Sign, Family::RoundedGaussian, Family::CountSketch}) {
    auto b = build_sketch(make_spec(f, 48, 6, 4));
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
      IntVector x = random_ints(48, 1000, rng), y = random_ints(48, 1000, rng), xy(48);
      for (std::size_t i = 0; i < 48; ++i) xy[i] = x[i] + y[i];
      IntVector ax = b.sketch->apply(x), ay = b.sketch->apply(y), axy = b.sketch->apply(xy);
      for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(axy[i], ax[i] + ay[i]);
    }
  }
}

TEST(Build, EntryBoundsAndChangeOfBasis) {
  for (Family f : {Family::Sign, Family::RoundedGaussian, Family::CountSketch, Family::ProjectionThreshold}) {
    auto b = build_sketch(make_spec(f, 64, 8, 6));
    const auto& A = b.sketch->matrix();
    EXPECT_LE(A.max_abs(), 64 * 64) << to_string(f);
    EXPECT_LE((b.sketch->R() * A.to_real() - b.sketch->Q()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Build, CountSketchOneNonzeroPerHashRow) {
  SketchSpec s = make_spec(Family::CountSketch, 100, 12, 7);
  s.params.hash_rows = 3;
  auto b = build_sketch(s);
  const auto& A = b.sketch->matrix();
  for (std::size_t j = 0; j < 100; ++j)
    for (std::size_t t = 0; t < 3; ++t) {
      int nz = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        const auto v = A(t * 4 + k, j);
        if (v != 0) {
          ++nz;
          EXPECT_EQ(std::abs(v), 1);
        }
      }
      EXPECT_EQ(nz, 1);
    }
}

TEST(Build, BadParams) {
  EXPECT_EQ(code_of([] { build_sketch(make_spec(Family::Sign, 16, 17, 1)); }), ErrorCode::BadParams);
  SketchSpec s = make_spec(Family::Sign, 64, 8, 1);
  s.params.gap.B = 4;
  EXPECT_EQ(code_of([&] { build_sketch(s); }), ErrorCode::BadParams);
  s = make_spec(Family::Sign, 64, 8, 1);
  s.params.gap.alpha = 1.0;
  EXPECT_EQ(code_of([&] { build_sketch(s); }), ErrorCode::BadParams);
  s = make_spec(Family::CountSketch, 64, 8, 1);
  s.params.hash_rows = 3;
  EXPECT_EQ(code_of([&] { build_sketch(s); }), ErrorCode::BadParams);
  EXPECT_THROW(family_from_string("ams"), Error);
}

TEST(Estimator, SignSketchUnbiasedOnRandomInputs) {
  auto b = build_sketch(make_spec(Family::Sign, 256, 16, 8));
  Rng rng(9);
  double ratio = 0.0;
  const int N = 10000;
  for (int t = 0; t < N; ++t) {
    IntVector x = random_ints(256, 1000, rng);
    ratio += b.estimator->estimate(b.sketch->apply(x)) / sq(x);
  }
  ratio /= N;
  EXPECT_GE(ratio, 0.9);
  EXPECT_LE(ratio, 1.1);
}

TEST(Estimator, RoundedGaussianAndCountSketchRoughlyUnbiased) {
  for (Family f : {Family::RoundedGaussian, Family::CountSketch}) {
    auto b = build_sketch(make_spec(f, 256, 24, 10));
    Rng rng(11);
    double ratio = 0.0;
    const int N = 4000;
    for (int t = 0; t < N; ++t) {
      IntVector x = random_ints(256, 1000, rng);
      ratio += b.estimator->estimate(b.sketch->apply(x)) / sq(x);
    }
    ratio /= N;
    EXPECT_NEAR(ratio, 1.0, 0.15) << to_string(f);
  }
}

TEST(Oracle, ZeroQueryAnswersZero) {
  for (Family f : {Family::Sign, Family::RoundedGaussian, Family::CountSketch, Family::ProjectionThreshold}) {
    SketchOracle o(build_sketch(make_spec(f, 64, 8, 12)));
    EXPECT_FALSE(o.answer(IntVector(64, 0))) << to_string(f);
  }
}

TEST(Oracle, KernelVectorsAreInvisible) {
  SketchSpec s = make_spec(Family::ProjectionThreshold, 64, 8, 13);
  SketchOracle o(build_sketch(s));
  const auto& A = o.built().sketch->matrix();
  auto kb = lattice::reduce_basis(lattice::integer_kernel_basis(A));
  // Scale a short kernel vector well past the high promise side.
  IntVector k = lattice::to_int64(kb.vectors.front());
  const double target = 2.0 * s.params.gap.alpha * s.params.gap.B * 64;
  const auto scale = static_cast<std::int64_t>(std::ceil(std::sqrt(target / sq(k))));
  for (auto& v : k) v *= scale;
  EXPECT_GE(sq(k), target);
  EXPECT_EQ(o.built().sketch->apply(k), IntVector(8, 0));
  EXPECT_FALSE(o.answer(k));
}

TEST(Oracle, PurityOnEqualSketchValues) {
  SketchOracle o(build_sketch(make_spec(Family::ProjectionThreshold, 64, 8, 14)));
  const auto& A = o.built().sketch->matrix();
  IntVector k = lattice::to_int64(lattice::reduce_basis(lattice::integer_kernel_basis(A)).vectors.front());
  Rng rng(15);
  for (int t = 0; t < 50; ++t) {
    IntVector x = random_ints(64, 400, rng), y = x;
    const std::int64_t c = uniform_int(rng, -20, 20);
    for (std::size_t i = 0; i < 64; ++i) y[i] += c * k[i];
    ASSERT_EQ(o.built().sketch->apply(x), o.built().sketch->apply(y));
    EXPECT_EQ(o.answer(x), o.answer(y));
  }
}

TEST(Oracle, ProjectionAnswerDependsOnlyOnProjectedNorm) {
  auto b = build_sketch(make_spec(Family::ProjectionThreshold, 64, 8, 16));
  auto est = std::dynamic_pointer_cast<const ProjectionEstimator>(b.estimator);
  ASSERT_TRUE(est);
  Rng rng(17);
  const numerics::Mat& Q = b.sketch->Q();
  for (int t = 0; t < 100; ++t) {
    IntVector x = random_ints(64, 300, rng);
    const numerics::Vec qx = Q * numerics::to_vec(x);
    // Oracle: the rule evaluated directly on ||Qx||^2.
    EXPECT_EQ(est->decide(b.sketch->apply(x)), qx.squaredNorm() >= est->tau());
    EXPECT_NEAR(est->projected_sq(b.sketch->apply(x)), qx.squaredNorm(), 1e-6 * (1 + qx.squaredNorm()));
  }
}

TEST(Oracle, SingleSpikeRateIsReported) {
  SketchSpec s = make_spec(Family::ProjectionThreshold, 128, 16, 18);
  SketchOracle o(build_sketch(s));
  const double target = 2.0 * s.params.gap.alpha * s.params.gap.B * 128;
  const auto h = static_cast<std::int64_t>(std::ceil(std::sqrt(target)));
  int ones = 0;
  for (std::size_t i = 0; i < 128; ++i) {
    IntVector x(128, 0);
    x[i] = h;
    ones += o.answer(x);
  }
  RecordProperty("single_spike_rate", std::to_string(ones / 128.0));
  SUCCEED();
}

TEST(Calibration, ProjectionThresholdRatesAreBalanced) {
  auto b = build_sketch(make_spec(Family::ProjectionThreshold, 128, 32, 19));
  ASSERT_TRUE(b.calibration);
  const auto& c = *b.calibration;
  EXPECT_GT(c.tau, 0.0);
  EXPECT_LE(std::abs(c.false_positive - c.false_negative), 0.02);
  // Oracle: ||Qx||^2 / s2 ~ chi^2_32 on both sides, with scales 2 alpha and 4 alpha;
  // the balanced error solves P(X >= q) = P(X < q / 2).
  boost::math::chi_squared chi(32);
  double lo = 32, hi = 128;
  for (int it = 0; it < 100; ++it) {
    const double q = 0.5 * (lo + hi);
    (boost::math::cdf(boost::math::complement(chi, q)) > boost::math::cdf(chi, q / 2) ? lo : hi) = q;
  }
  const double want = boost::math::cdf(chi, lo / 2);
  EXPECT_NEAR(c.false_positive, want, 0.02);
  EXPECT_NEAR(c.false_negative, want, 0.02);
}

TEST(Oracles, GroundTruthAndPlanted) {
  GroundTruthOracle g(GapNorm{8.0, 100.0}, 10);
  EXPECT_DOUBLE_EQ(g.threshold(), std::sqrt(8.0) * 1000.0);
  IntVector x(10, 0);
  x[0] = 53;  // 2809 < 2828.4
  EXPECT_FALSE(g.answer(x));
  x[0] = 54;
  EXPECT_TRUE(g.answer(x));
  PlantedDirectionOracle p(numerics::Vec::Unit(10, 3), 9.0);
  x.assign(10, 0);
  x[3] = -3;
  EXPECT_TRUE(p.answer(x));
  x[3] = 2;
  EXPECT_FALSE(p.answer(x));
  EXPECT_TRUE(ConstantOracle(true).answer(x));
}

TEST(Serialization, SpecRoundTripRebuildsSameSketch) {
  SketchSpec s = make_spec(Family::RoundedGaussian, 40, 5, 20);
  auto b1 = build_sketch(s);
  nlohmann::json j = *b1.sketch;
  SketchSpec s2 = j.get<SketchSpec>();
  auto b2 = build_sketch(s2);
  EXPECT_EQ(b1.sketch->matrix().data, b2.sketch->matrix().data);
  EXPECT_EQ(j["matrix"].size(), 5u);
}
