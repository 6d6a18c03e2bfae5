#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <Eigen/SVD>

#include <cmath>
#include <map>

#include "advsketch/harddist.hpp"

using namespace advsketch;
using namespace advsketch::harddist;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

Vec jacobi_singular_values(const Mat& X) { return Eigen::JacobiSVD<Mat>(X).singularValues(); }

// Chi-square goodness of fit of integer samples against exp(-z^2 / 2 s2),
// with consecutive integers merged until each class expects >= 20 hits.
double chi_square_p(const std::map<std::int64_t, std::size_t>& counts, std::size_t total, double s2) {
  const auto K = static_cast<std::int64_t>(std::ceil(14.0 * std::sqrt(s2)));
  long double Z = 0;
  for (std::int64_t z = -K; z <= K; ++z) Z += std::exp(-static_cast<long double>(z * z) / (2.0L * s2));
  auto hits = [&](std::int64_t z) {
    auto it = counts.find(z);
    return it == counts.end() ? 0.0 : static_cast<double>(it->second);
  };
  double stat = 0, exp_acc = 0, obs_acc = 0;
  int classes = 0;
  for (std::int64_t z = -K; z <= K; ++z) {
    exp_acc += static_cast<double>(std::exp(-static_cast<long double>(z * z) / (2.0L * s2)) / Z) * static_cast<double>(total);
    obs_acc += hits(z);
    if (exp_acc >= 20.0 || z == K) {
      stat += (obs_acc - exp_acc) * (obs_acc - exp_acc) / exp_acc;
      ++classes;
      exp_acc = obs_acc = 0;
    }
  }
  std::size_t seen = 0;
  for (auto& [z, c] : counts) seen += c;
  EXPECT_EQ(seen, total);
  boost::math::chi_squared dist(classes - 1);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace

TEST(HardDist, PlantingIsExactlyLinear) {
  auto f = defaults(Kind::OpnormAlpha);
  f.n = 16;
  f.N = 16;
  const auto h = prepare(f, 1);
  const std::size_t reps = 10000, cells = 16 * 16;
  std::vector<std::map<std::int64_t, std::size_t>> per(cells);
  std::map<std::int64_t, std::size_t> pooled;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto inst = gen_hard_instance(h, Side::D2, 7, i);
    ASSERT_EQ(inst.witness.planted.rows, 16u);
    for (std::size_t c = 0; c < cells; ++c) {
      const auto z = inst.payload.data[c] - inst.witness.planted.data[c];
      ++per[c][z];
      ++pooled[z];
    }
  }
  EXPECT_GT(chi_square_p(pooled, reps * cells, 256.0), 1e-3);
  int rejections = 0;
  for (const auto& m : per) rejections += chi_square_p(m, reps, 256.0) < 1e-3;
  EXPECT_LE(rejections, 3);  // 0.26 expected under the null
}

TEST(HardDist, PlantedSpikeIsRoundedOuterProduct) {
  const auto h = prepare(defaults(Kind::OpnormAlpha), 2);
  const auto inst = gen_hard_instance(h, Side::D2, 3, 0);
  const auto& w = inst.witness;
  ASSERT_EQ(w.u.size(), 1u);
  EXPECT_DOUBLE_EQ(w.s[0], h.cal.gamma * 2.0 / 8.0);  // s1 = gamma1 alpha / sqrt(n)
  for (std::size_t i = 0; i < 64; ++i)
    for (std::size_t j = 0; j < 64; ++j)
      EXPECT_EQ(w.planted(i, j), std::llround(w.s[0] * static_cast<double>(w.u[0][i]) * static_cast<double>(w.v[0][j])));
}

TEST(HardDist, OpnormAlphaWitnessRecoversNoise) {
  const auto h = prepare(defaults(Kind::OpnormAlpha), 3);
  const auto inst = gen_hard_instance(h, Side::D2, 4, 0);
  const auto& w = inst.witness;
  Mat R = inst.payload.to_real() - w.s[0] * numerics::to_vec(w.u[0]) * numerics::to_vec(w.v[0]).transpose();
  EXPECT_LE(jacobi_singular_values(R)[0], h.cal.C1 * h.family.N * 8.0);
  EXPECT_TRUE(verify_gap_event(h, inst).event_holds);
}

TEST(HardDist, StatisticsMatchJacobiOracle) {
  auto f = defaults(Kind::KyFan);
  f.n = 24;
  f.rank = 3;
  const auto h = prepare(f, 4);
  const auto inst = gen_hard_instance(h, Side::D2, 5, 0);
  const Vec s = jacobi_singular_values(inst.payload.to_real());
  EXPECT_NEAR(statistic(h, inst.payload), s.head(3).sum() / (f.N * 3 * std::sqrt(24.0)), 1e-9);

  auto fp = defaults(Kind::Psd);
  fp.n = 12;
  fp.p = 3.0;
  const auto hp = prepare(fp, 5);
  const auto ip = gen_hard_instance(hp, Side::D2, 6, 0);
  // Eigenvalues of [[c I, X], [X^T, c I]] are c +- sigma_i(X).
  Mat X = ip.payload.to_real().topRightCorner(12, 12);
  const Vec sx = jacobi_singular_values(X);
  const double c = hp.cal.shift;
  double lmin = c - sx[0], sp = 0;
  for (int i = 0; i < 12; ++i) sp += std::pow(std::abs(c + sx[i]), 3) + std::pow(std::abs(c - sx[i]), 3);
  EXPECT_NEAR(statistic(hp, ip.payload), -lmin / std::cbrt(sp), 1e-9);
}

TEST(HardDist, MgfOfDiscreteProduct) {
  EXPECT_DOUBLE_EQ(mgf_xy(0.0, 1e4, 1000000, 1).mean, 1.0);
  const auto half = mgf_xy(0.5, 1e4, 1000000, 2);
  EXPECT_LE(half.mean, 1.02 / std::sqrt(1.0 - 0.25));
  // Finite-variance case against the Gaussian closed form.
  const auto third = mgf_xy(0.3, 1e4, 1000000, 3);
  EXPECT_NEAR(third.mean, 1.0 / std::sqrt(1.0 - 0.09), 4 * third.se + 1e-3);
}

TEST(HardDist, SingularValueBand) {
  int inside = 0, oracle_inside = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    Rng rng = make_rng(11, "band", t);
    inside += singular_band_trial(400, 100, 1e4, rng).within;
  }
  // Continuous oracle for the constants.
  for (std::uint64_t t = 0; t < 100; ++t) {
    Rng rng = make_rng(12, "band-oracle", t);
    Mat G(400, 100);
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = std_normal(rng);
    const Vec s = jacobi_singular_values(G);
    const double lo = std::sqrt(400.0) - 3.0 * std::sqrt(100.0), hi = std::sqrt(400.0) + 3.0 * std::sqrt(100.0);
    oracle_inside += s[0] <= hi && s[99] >= lo;
  }
  EXPECT_GE(oracle_inside, 95);
  EXPECT_GE(inside, 95);
}

TEST(HardDist, LpSmallNullConcentrates) {
  auto f = defaults(Kind::LpSmall);
  f.N = 1e6;
  const auto h = prepare(f, 6);
  double acc = 0;
  const int reps = 400;
  for (int i = 0; i < reps; ++i) {
    const auto x = gen_hard_instance(h, Side::D1, 7, static_cast<std::uint64_t>(i)).payload.to_real();
    acc += x.squaredNorm() / (f.N * f.N * 1024.0);
  }
  EXPECT_GE(acc / reps, 0.99);
  EXPECT_LE(acc / reps, 1.01);
  // tau tracks E ||x||_1 = N n sqrt(2 / pi).
  EXPECT_NEAR(h.cal.tau / (f.N * 1024.0 * std::sqrt(2.0 / std::numbers::pi)), 1.0, 0.005);
}

TEST(HardDist, LpLargePlantsTCoordinates) {
  const auto h = prepare(defaults(Kind::LpLarge), 7);
  EXPECT_EQ(h.cal.t, 1u);  // log_3(1 / sqrt(1/9)) = 1
  // E ||g||_4 ~ (3 m)^{1/4} for large m.
  EXPECT_NEAR(h.cal.E / std::pow(3.0 * 1023.0, 0.25), 1.0, 0.02);
  const auto inst = gen_hard_instance(h, Side::D2, 8, 0);
  ASSERT_EQ(inst.witness.coords.size(), 1u);
  EXPECT_EQ(inst.witness.planted.data[inst.witness.coords[0]], std::llround(h.cal.planted));
  EXPECT_TRUE(verify_gap_event(h, inst).event_holds);
}

TEST(HardDist, CsSupportFamilyAudit) {
  const auto h = prepare(defaults(Kind::Cs), 8);
  ASSERT_EQ(h.supports.size(), 1024u);
  for (std::size_t a = 0; a < h.supports.size(); ++a)
    for (std::size_t b = a + 1; b < h.supports.size(); ++b) {
      std::vector<std::size_t> d;
      std::set_symmetric_difference(h.supports[a].begin(), h.supports[a].end(), h.supports[b].begin(),
                                    h.supports[b].end(), std::back_inserter(d));
      ASSERT_GE(d.size(), 8u);
    }
  std::vector<double> freq(256, 0.0);
  for (const auto& S : h.supports)
    for (auto i : S) freq[i] += 1.0 / 1024.0;
  for (double q : freq) {
    EXPECT_GE(q, 0.5 * 8 / 256);
    EXPECT_LE(q, 2.0 * 8 / 256);
  }
  EXPECT_FALSE(h.cal.warnings.empty());  // eps = 0.2 is below sqrt(k ln n / n)
  const auto inst = gen_hard_instance(h, Side::D2, 9, 0);
  const auto ev = verify_gap_event(h, inst);
  EXPECT_TRUE(ev.event_holds);
  EXPECT_EQ(*ev.decoded, inst.witness.support_index);
}

TEST(HardDist, EigenPairsSeparate) {
  const auto h = prepare(defaults(Kind::Eigen), 9);
  const auto b = verify_pairs(h, 100, 10, 4);
  EXPECT_GE(b.both, 95u) << b.d1_holds << " " << b.d2_holds;
}

TEST(HardDist, PsdNullIsPsdWhenNoiseIsBounded) {
  const auto h = prepare(defaults(Kind::Psd), 10);
  EXPECT_GT(h.cal.eps, 0.0);
  EXPECT_LE(h.cal.eps, h.cal.eps_bound);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto inst = gen_hard_instance(h, Side::D1, 11, i);
    const Mat M = inst.payload.to_real();
    const double g = jacobi_singular_values(M.topRightCorner(64, 64))[0];
    const double lmin = symmetric_eigenvalues(M)[0];
    if (g <= h.cal.shift) {
      EXPECT_GE(lmin, -1e-6 * h.cal.shift);
    }
    EXPECT_NEAR(lmin, h.cal.shift - g, 1e-6 * h.cal.shift);
  }
}

TEST(HardDist, EveryFamilySeparatesOnAFewPairs) {
  for (Kind k : kAllKinds) {
    if (k == Kind::Eigen) continue;  // covered above
    const auto h = prepare(defaults(k), 12, 4);
    const auto b = verify_pairs(h, 20, 13, 4);
    EXPECT_GE(b.both, 19u) << to_string(k) << " " << b.d1_holds << " " << b.d2_holds;
  }
}

TEST(HardDist, Guards) {
  auto f = defaults(Kind::OpnormAlpha);
  f.N = 3;
  EXPECT_EQ(code_of([&] { prepare(f, 1); }), ErrorCode::BadParams);
  auto c = defaults(Kind::Cs);
  c.N = 1000;
  EXPECT_EQ(code_of([&] { prepare(c, 1); }), ErrorCode::BadParams);
  auto l = defaults(Kind::LpSmall);
  l.p = 3;
  EXPECT_EQ(code_of([&] { prepare(l, 1); }), ErrorCode::BadParams);
  auto e = defaults(Kind::OpnormEps);
  e.eps = 0.5;
  EXPECT_EQ(code_of([&] { prepare(e, 1); }), ErrorCode::BadParams);
  EXPECT_EQ(code_of([] { kind_from_string("schatten"); }), ErrorCode::BadParams);
}

TEST(HardDist, SketchedTvd) {
  auto f = defaults(Kind::OpnormAlpha);
  f.n = 8;
  f.spikes = {std::pow(1.0 / 64.0, 0.25)};
  const auto small = prepare(f, 14);
  EXPECT_LE(sketched_indistinguishability(small, 1, 100000, 15, 4, true).value, 0.03);
  EXPECT_LE(sketched_indistinguishability(small, 1, 100000, 16, 4).value, 0.15);
  f.spikes = {10.0 / std::sqrt(8.0)};
  const auto big = prepare(f, 17);
  EXPECT_GE(sketched_indistinguishability(big, 1, 100000, 18, 4).value, 0.5);
  EXPECT_EQ(code_of([&] { sketched_indistinguishability(big, 4, 2000, 1); }), ErrorCode::DimensionTooLarge);
}

TEST(HardDist, DeterministicAndJsonRoundTrip) {
  auto f = defaults(Kind::Psd);
  f.n = 8;
  const auto h = prepare(f, 19);
  const auto a = gen_hard_instance(h, Side::D2, 20, 3), b = gen_hard_instance(h, Side::D2, 20, 3);
  EXPECT_EQ(a.payload.data, b.payload.data);
  nlohmann::json j = a;
  const auto back = j.get<HardInstance>();
  EXPECT_EQ(back.payload.data, a.payload.data);
  EXPECT_EQ(back.witness.planted.data, a.witness.planted.data);
  EXPECT_EQ(back.side, Side::D2);
  nlohmann::json jf = f;
  EXPECT_EQ(jf["p"], "inf");
  EXPECT_TRUE(std::isinf(jf.get<HardFamily>().p));
}
