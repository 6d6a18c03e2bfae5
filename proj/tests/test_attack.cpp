#include <gtest/gtest.h>

#include <atomic>
#include <sstream>

#include "advsketch/attack.hpp"
#include "advsketch/stats.hpp"

using namespace advsketch;
using namespace advsketch::attack;

namespace {

AttackConfig base_config(std::size_t n, std::size_t m = 1000) {
  AttackConfig c;
  c.gap = GapNorm{8.0, dgauss::alpha_floor(n)};
  c.m = m;
  return c;
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

Vec random_unit(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Vec u(static_cast<Eigen::Index>(n));
  for (auto& v : u) v = std_normal(rng);
  return u.normalized();
}

class CountingOracle : public GapNormOracle {
 public:
  explicit CountingOracle(const GapNormOracle& inner) : inner_(inner) {}
  bool answer(const IntVector& x) const override {
    ++calls_;
    return inner_.answer(x);
  }
  std::string name() const override { return "counting"; }
  std::uint64_t calls() const { return calls_; }

 private:
  const GapNormOracle& inner_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

// Ignores x entirely.
class CoinOracle : public GapNormOracle {
 public:
  explicit CoinOracle(std::uint64_t seed) : rng_(seed) {}
  bool answer(const IntVector&) const override { return uniform_int(rng_, 0, 1) == 1; }
  std::string name() const override { return "coin"; }
  bool concurrent_safe() const override { return false; }

 private:
  mutable Rng rng_;
};

// 1 iff <u, x>^2 >= t, with t fixed at construction.
using Planted = sketch::PlantedDirectionOracle;

}  // namespace

TEST(Config, GridsAndGuards) {
  AttackConfig c = base_config(64);
  auto g = make_grid(c, 64);
  ASSERT_EQ(g.size(), 16u);
  EXPECT_DOUBLE_EQ(g.front(), c.gap.alpha);
  EXPECT_DOUBLE_EQ(g.back(), c.gap.alpha * 8);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] / g[i - 1], std::pow(8.0, 1.0 / 15), 1e-12);
  c.grid = GridKind::Fine;
  EXPECT_EQ(code_of([&] { make_grid(c, 64); }), ErrorCode::BadParams);
  c = base_config(64, 50);
  EXPECT_EQ(code_of([&] { validate(c, 64); }), ErrorCode::BadParams);
  c = base_config(64);
  c.gap.alpha = 10;
  EXPECT_EQ(code_of([&] { validate(c, 64); }), ErrorCode::VarianceTooSmall);
  c = base_config(64);
  EXPECT_NEAR(effective_zeta(c, 64), 5.0 / std::sqrt(1000.0), 1e-15);
  EXPECT_NEAR(positive_floor(c, 64), 1000.0 / (100 * 64 * 64), 1e-15);
}

TEST(RunAttack, ConstantZeroCertifiesHighSideOnFirstPass) {
  sketch::ConstantOracle zero(false);
  AttackConfig c = base_config(64);
  auto out = run_attack(zero, 64, 4, c, 1);
  ASSERT_TRUE(out.certificate);
  EXPECT_EQ(out.certificate->side, Side::High);
  EXPECT_EQ(out.certificate->round, 1u);
  EXPECT_TRUE(out.certificate->V.empty());
  EXPECT_GE(out.certificate->sigma2, c.gap.alpha * c.gap.B / 2);
  EXPECT_EQ(out.certificate->rate, 0.0);
  // First grid point at or above alpha B / 2.
  for (double s : make_grid(c, 64))
    if (s >= c.gap.alpha * 4) {
      EXPECT_DOUBLE_EQ(out.certificate->sigma2, s);
      break;
    }
}

TEST(RunAttack, ConstantOneCertifiesLowSideImmediately) {
  sketch::ConstantOracle one(true);
  AttackConfig c = base_config(64);
  auto out = run_attack(one, 64, 4, c, 2);
  ASSERT_TRUE(out.certificate);
  EXPECT_EQ(out.certificate->side, Side::Low);
  EXPECT_DOUBLE_EQ(out.certificate->sigma2, c.gap.alpha);
  EXPECT_EQ(out.state.transcript.size(), 1u);
}

TEST(RunAttack, GroundTruthExhaustsRoundCap) {
  const std::size_t n = 64;
  AttackConfig c = base_config(n);
  sketch::GroundTruthOracle truth(c.gap, n);
  auto out = run_attack(truth, n, 2, c, 3);
  EXPECT_FALSE(out.certificate);
  EXPECT_EQ(out.state.t, 4u);  // rounds 1..3 ran
  EXPECT_EQ(out.state.transcript.size(), 3 * 16u);
  EXPECT_LE(out.state.V.size(), 3u);
  const Mat& V = out.state.V.matrix();
  EXPECT_LE((V.transpose() * V - Mat::Identity(V.cols(), V.cols())).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(RoundStep, PlantedDirectionRecovery) {
  const std::size_t n = 64;
  AttackConfig c = base_config(n, 5000);
  const double s0 = 3 * c.gap.alpha;  // strictly inside (2 alpha, alpha B / 2): no termination test applies
  c.grid = GridKind::Explicit;
  c.explicit_grid = {s0};
  const Vec u = random_unit(n, 4);
  Planted oracle(u, 3 * s0);
  AttackState st(n, 8, 5);
  RoundOutcome ro = round_step(st, oracle, c);
  ASSERT_EQ(ro.kind, RoundOutcome::Direction);
  const double rate = st.transcript.front().rate;
  EXPECT_GE(rate, 0.05);
  EXPECT_LE(rate, 0.3);
  EXPECT_GE(std::abs(ro.direction.dot(u)), 0.9);
  EXPECT_NEAR(ro.direction.norm(), 1.0, 1e-12);
}

TEST(RoundStep, AcceptedDirectionIsOrthogonalToLearnedBasis) {
  const std::size_t n = 32;
  AttackConfig c = base_config(n, 3000);
  c.grid = GridKind::Explicit;
  c.explicit_grid = {3 * c.gap.alpha};
  AttackState st(n, 8, 6);
  st.V.append(random_unit(n, 7));
  Planted oracle(random_unit(n, 8), 9 * c.gap.alpha);
  RoundOutcome ro = round_step(st, oracle, c);
  ASSERT_EQ(ro.kind, RoundOutcome::Direction);
  EXPECT_LE(std::abs(st.V.vector(0).dot(ro.direction)), 1e-9);
  EXPECT_EQ(st.V.size(), 2u);
}

TEST(RoundStep, NoPositivesMeansNoProgress) {
  const std::size_t n = 32;
  AttackConfig c = base_config(n, 500);
  c.grid = GridKind::Explicit;
  c.explicit_grid = {3 * c.gap.alpha};
  sketch::ConstantOracle zero(false);
  AttackState st(n, 4, 9);
  RoundOutcome ro = round_step(st, zero, c);
  EXPECT_EQ(ro.kind, RoundOutcome::NoProgress);
  EXPECT_TRUE(st.V.empty());
  EXPECT_EQ(st.t, 2u);
  EXPECT_FALSE(st.transcript.front().score);
}

TEST(RoundStep, IdenticalPositivesGiveTheirDirection) {
  Mat M(5, 4);
  for (Eigen::Index i = 0; i < 5; ++i) M.row(i) << 3, -1, 2, 5;
  auto top = numerics::top_right_singular_vector(M);
  const Vec want = M.row(0).transpose().normalized();
  EXPECT_NEAR(std::abs(top.v.dot(want)), 1.0, 1e-12);
  OrthonormalBasis V(4);
  V.append(Vec::Unit(4, 0));
  Vec r = numerics::gram_schmidt_residual(top.v, V);
  Vec oracle = want;
  oracle[0] = 0;
  EXPECT_NEAR(std::abs(r.dot(oracle.normalized())), 1.0, 1e-12);
}

TEST(RunAttack, DeterministicAcrossThreadCounts) {
  const std::size_t n = 48;
  AttackConfig c = base_config(n, 600);
  c.round_cap = 2;
  sketch::GroundTruthOracle truth(c.gap, n);
  auto a = run_attack(truth, n, 4, c, 10);
  auto b = run_attack(truth, n, 4, c, 10);
  c.threads = 4;
  auto d = run_attack(truth, n, 4, c, 10);
  ASSERT_EQ(a.state.transcript.size(), d.state.transcript.size());
  for (std::size_t i = 0; i < a.state.transcript.size(); ++i) {
    EXPECT_EQ(a.state.transcript[i].m_prime, b.state.transcript[i].m_prime);
    EXPECT_EQ(a.state.transcript[i].m_prime, d.state.transcript[i].m_prime);
  }
  EXPECT_EQ(a.state.V.matrix(), d.state.V.matrix());
}

TEST(RunAttack, OnlyTalksToTheOracle) {
  const std::size_t n = 32;
  AttackConfig c = base_config(n, 400);
  c.round_cap = 2;
  sketch::GroundTruthOracle truth(c.gap, n);
  CountingOracle counting(truth);
  auto out = run_attack(counting, n, 4, c, 11);
  EXPECT_EQ(counting.calls(), out.state.queries);
  EXPECT_EQ(out.state.queries, 2 * 16 * 400u);
}

TEST(Verify, ConstantZeroHighSideRate) {
  const std::size_t n = 64;
  AttackConfig c = base_config(n);
  FailureCertificate cert;
  cert.V = OrthonormalBasis(n);
  cert.sigma2 = c.gap.alpha * c.gap.B / 2;
  cert.side = Side::High;
  sketch::ConstantOracle zero(false);
  auto v = verify_certificate(zero, cert, c.gap, 5000, 12);
  EXPECT_GE(v.failure_rate, 0.95);
  EXPECT_EQ(v.exploits.size(), 100u);
  for (const auto& e : v.exploits) {
    EXPECT_FALSE(e.answer);
    EXPECT_TRUE(e.wrong);
    EXPECT_GT(e.norm_sq, v.high_threshold);
  }
}

TEST(Verify, GroundTruthHasNoExploits) {
  // With B = 16 the two exploit bands [.. 3 alpha (n-d)) and (alpha B (n-d)/3 ..]
  // are separated and the exact midpoint oracle answers both correctly.
  const std::size_t n = 64;
  GapNorm gap{16.0, dgauss::alpha_floor(n)};
  sketch::GroundTruthOracle truth(gap, n);
  for (auto [s2, side] : {std::pair{gap.alpha * 8, Side::High}, std::pair{gap.alpha * 2, Side::Low}}) {
    FailureCertificate cert;
    cert.V = OrthonormalBasis(n);
    cert.sigma2 = s2;
    cert.side = side;
    EXPECT_EQ(code_of([&] { verify_certificate(truth, cert, gap, 5000, 13); }), ErrorCode::NoExploitFound);
  }
}

TEST(ConditionalGap, MedianSplitDirection) {
  const std::size_t n = 16;
  const double s2 = 400;
  const Vec u = random_unit(n, 14);
  dgauss::SubspaceSpec spec{n, OrthonormalBasis(n), s2};
  // Median of chi^2_1 times s2.
  Planted oracle(u, 0.454936423 * s2);
  auto g = conditional_gap_estimate(oracle, spec, u, 100000, 15);
  EXPECT_NEAR(g.positive_rate, 0.5, 0.01);
  EXPECT_GT(g.delta, 5 * g.standard_error);
}

TEST(ConditionalGap, IndependentCoinHasNoGap) {
  const std::size_t n = 16;
  dgauss::SubspaceSpec spec{n, OrthonormalBasis(n), 400};
  CoinOracle coin(16);
  auto g = conditional_gap_estimate(coin, spec, random_unit(n, 17), 100000, 18);
  EXPECT_LE(std::abs(g.delta), 3 * g.standard_error);
}

TEST(ConditionalGap, Guards) {
  const std::size_t n = 16;
  dgauss::SubspaceSpec spec{n, OrthonormalBasis(n), 400};
  sketch::ConstantOracle zero(false);
  EXPECT_EQ(code_of([&] { conditional_gap_estimate(zero, spec, random_unit(n, 1), 2000, 1); }), ErrorCode::NoPositives);
  EXPECT_EQ(code_of([&] { conditional_gap_estimate(zero, spec, random_unit(n, 1), 999, 1); }), ErrorCode::BadParams);
}

TEST(Invariant, DistanceToRowspan) {
  lattice::IntMatrix A(2, 4);
  A(0, 0) = 1;
  A(1, 1) = 2;
  sketch::IntegerSketch sk(A, sketch::SketchSpec{});
  AttackState st(4, 2, 0);
  EXPECT_EQ(invariant_diagnostic(st, sk).distance, 0.0);
  Vec v(4);
  v << 0.6, 0.8, 0, 0;
  st.V.append(v);
  EXPECT_NEAR(invariant_diagnostic(st, sk).distance, 0.0, 1e-12);
  AttackState st2(4, 2, 0);
  const double theta = 0.2;
  Vec w(4);
  w << std::cos(theta), 0, std::sin(theta), 0;
  st2.V.append(w);
  auto rep = invariant_diagnostic(st2, sk);
  EXPECT_NEAR(rep.distance, std::sin(theta), 1e-12);
  EXPECT_EQ(rep.dim, 1u);
}

TEST(Subspaces, MarginalTvdGrowsWithSubspaceDistance) {
  const std::size_t n = 16;
  const double s2 = 1e4;
  const std::size_t N = 200000;
  Vec probe = Vec::Zero(n);
  probe[0] = probe[1] = 1 / std::sqrt(2.0);
  auto marginal = [&](const Vec& dir, std::uint64_t seed) {
    OrthonormalBasis V(n);
    V.append(dir);
    dgauss::SubspaceSampler smp(dgauss::SubspaceSpec{n, V, s2});
    Rng rng(seed);
    Mat out(static_cast<Eigen::Index>(N), 1);
    IntVector x;
    Vec scratch;
    for (std::size_t i = 0; i < N; ++i) {
      smp.sample(rng, x, scratch);
      out(static_cast<Eigen::Index>(i), 0) = probe.dot(numerics::to_vec(x));
    }
    return out;
  };
  const Mat base = marginal(Vec::Unit(n, 0), 19);
  std::vector<double> tvd;
  for (double d : {0.0, 0.01, 0.1}) {
    const double th = std::asin(d);
    Vec w = Vec::Zero(n);
    w[0] = std::cos(th);
    w[1] = std::sin(th);
    tvd.push_back(stats::empirical_tvd(base, marginal(w, 20), {0, 0, 0}).value);
  }
  EXPECT_LE(tvd[0], 0.03);
  EXPECT_GE(tvd[2], tvd[1]);
  EXPECT_GT(tvd[2], tvd[0]);
}

TEST(Serialization, CertificateRoundTripAndCsv) {
  const std::size_t n = 8;
  FailureCertificate c;
  c.V = OrthonormalBasis(n);
  c.V.append(random_unit(n, 21));
  c.sigma2 = 123.5;
  c.side = Side::Low;
  c.rate = 0.25;
  nlohmann::json j = c;
  FailureCertificate back = j.get<FailureCertificate>();
  EXPECT_EQ(back.side, Side::Low);
  EXPECT_DOUBLE_EQ(back.sigma2, 123.5);
  EXPECT_LE((back.V.matrix() - c.V.matrix()).cwiseAbs().maxCoeff(), 1e-15);

  AttackState st(n, 1, 7);
  st.transcript.push_back({1, 2.0, 0.5, 10, 3.0, true});
  st.transcript.push_back({1, 4.0, 0.0, 0, std::nullopt, false});
  std::ostringstream os;
  append_summary_csv(os, "r0", st);
  EXPECT_EQ(summary_csv_header(), "run_id,seed,round,sigma2,rate,m_prime,score,accepted");
  EXPECT_EQ(os.str(), "r0,7,1,2,0.5,10,3,1\nr0,7,1,4,0,0,,0\n");
}
