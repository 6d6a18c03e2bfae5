#pragma once

// The acceptance battery: fourteen end-to-end checks at fixed desk-scale
// parameters, shared by the acceptance test binary and `suite acceptance`.
// Each check reports pass/fail, a one-line detail and a JSON record; the
// thresholds below are the acceptance thresholds and are not configurable.

#include <chrono>
#include <cmath>
#include <algorithm>
#include <functional>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsketch/attack.hpp"
#include "advsketch/dgauss.hpp"
#include "advsketch/harddist.hpp"
#include "advsketch/lattice.hpp"
#include "advsketch/sketch.hpp"
#include "advsketch/stats.hpp"

namespace advsketch::acceptance {

struct Options {
  std::uint64_t seed = 20240601;
  std::size_t threads = 1;
  std::set<int> only;  // empty: all
};

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  nlohmann::json data;
};

inline void to_json(nlohmann::json& j, const CriterionResult& r) {
  j = {{"id", r.id}, {"title", r.title}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds},
       {"data", r.data}};
}

namespace detail {

using numerics::Mat;
using numerics::OrthonormalBasis;
using numerics::Vec;
using IntVector = std::vector<std::int64_t>;
using Clock = std::chrono::steady_clock;

inline CriterionResult result(int id, std::string title) {
  CriterionResult r;
  r.id = id;
  r.title = std::move(title);
  return r;
}

inline double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class... T>
std::string cat(const T&... xs) {
  std::ostringstream os;
  os.precision(4);
  (os << ... << xs);
  return os.str();
}

inline lattice::IntMatrix random_int_matrix(std::size_t r, std::size_t n, std::int64_t M, Rng& rng) {
  lattice::IntMatrix A(r, n);
  for (auto& v : A.data) v = uniform_int(rng, -M, M);
  A.bound = M;
  return A;
}

inline sketch::BuiltSketch projection_sketch(std::uint64_t seed) {
  sketch::SketchSpec spec;
  spec.family = sketch::Family::ProjectionThreshold;
  spec.n = 128;
  spec.r = 8;
  spec.seed = seed;
  spec.params.gap = sketch::GapNorm{8.0, 0.0};  // alpha from the sketch's kernel lattice
  return sketch::build_sketch(spec);
}

inline attack::AttackConfig attack_config(const sketch::GapNorm& gap, std::size_t threads) {
  attack::AttackConfig c;
  c.gap = gap;
  c.m = 2000;
  c.grid = attack::GridKind::Geometric;
  c.grid_points = 16;
  c.threads = threads;
  return c;
}

// ---------------------------------------------------------------------------

inline CriterionResult attack_end_to_end(const Options& o) {
  auto res = result(1, "attack end-to-end vs projection-threshold sketch (n=128, r=8, B=8, m=2000)");
  std::size_t ok = 0;
  double slowest = 0.0;
  for (std::uint64_t run = 0; run < 10; ++run) {
    const auto t0 = Clock::now();
    const auto built = projection_sketch(derive_seed(o.seed, "c1/sketch", run));
    const auto gap = built.sketch->spec().params.gap;
    sketch::SketchOracle oracle(built);
    const auto cfg = attack_config(gap, o.threads);
    const auto out = attack::run_attack(oracle, 128, 8, cfg, derive_seed(o.seed, "c1/attack", run));
    nlohmann::json rec = {{"run", run}, {"alpha", gap.alpha}, {"rounds", out.state.t - 1}};
    std::size_t exploits = 0;
    if (out.certificate) {
      rec["certificate"] = {{"sigma2_over_alpha", out.certificate->sigma2 / gap.alpha},
                            {"side", attack::to_string(out.certificate->side)},
                            {"rate", out.certificate->rate},
                            {"round", out.certificate->round}};
      try {
        exploits = attack::verify_certificate(oracle, *out.certificate, gap, cfg.verification_trials,
                                              derive_seed(o.seed, "c1/verify", run), 1)
                       .exploit_count;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoExploitFound) throw;
      }
    }
    const double secs = since(t0);
    slowest = std::max(slowest, secs);
    rec["exploits"] = exploits;
    rec["seconds"] = secs;
    res.data["runs"].push_back(rec);
    ok += exploits >= 1 && secs <= 300.0;
  }
  res.passed = ok >= 8;
  res.detail = cat(ok, "/10 runs certified with >= 1 exploit; slowest run ", slowest, " s");
  return res;
}

inline CriterionResult ground_truth_control(const Options& o) {
  auto res = result(2, "negative control: 100 attacks on the exact oracle give no verified certificate");
  const std::size_t n = 128;
  const sketch::GapNorm gap{8.0, dgauss::alpha_floor(n)};
  sketch::GroundTruthOracle truth(gap, n);
  const auto cfg = attack_config(gap, o.threads);
  std::size_t certs = 0, verified = 0;
  for (std::uint64_t run = 0; run < 100; ++run) {
    const auto out = attack::run_attack(truth, n, 8, cfg, derive_seed(o.seed, "c2/attack", run));
    if (!out.certificate) continue;
    ++certs;
    try {
      attack::verify_certificate(truth, *out.certificate, gap, cfg.verification_trials,
                                 derive_seed(o.seed, "c2/verify", run), 1);
      ++verified;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoExploitFound) throw;
    }
  }
  res.passed = verified == 0;
  res.detail = cat(certs, " certificates, ", verified, " verified, over 100 runs");
  res.data = {{"certificates", certs}, {"verified", verified}};
  return res;
}

inline CriterionResult siegel(const Options& o) {
  auto res = result(3, "short kernel vectors within (nM)^(r/(n-r)) on 1000 instances");
  Rng rng = make_rng(o.seed, "c3");
  std::size_t violations = 0, done = 0;
  double worst = 0.0;
  const auto t0 = Clock::now();
  while (done < 1000) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 24));
    const auto r = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(n / 2)));
    const auto A = random_int_matrix(r, n, uniform_int(rng, 1, 100), rng);
    if (A.max_abs() == 0) continue;
    const auto s = lattice::short_kernel_vector(A, done);
    const double bound = lattice::siegel_bound(n, r, A.max_abs());
    const bool bad = lattice::is_zero(s.x) || !lattice::is_zero(lattice::mat_vec(A, s.x)) ||
                     static_cast<double>(s.linf) > bound * (1.0 + 1e-12);
    violations += bad;
    worst = std::max(worst, static_cast<double>(s.linf) / bound);
    ++done;
  }
  const double secs = since(t0);
  res.passed = violations == 0 && secs <= 60.0;
  res.detail = cat(violations, " violations; max linf/bound ", worst, "; ", secs, " s");
  res.data = {{"violations", violations}, {"max_ratio", worst}, {"seconds", secs}};
  return res;
}

inline CriterionResult preprocessing(const Options& o) {
  auto res = result(4, "pre-processing: certified kernel length <= sqrt(32) * 50 for 3 x 32 sketches");
  Rng rng = make_rng(o.seed, "c4");
  const double bound = std::sqrt(32.0) * 50.0;
  std::size_t ok = 0;
  std::vector<double> failures;
  for (int t = 0; t < 100; ++t) {
    const auto A = random_int_matrix(3, 32, 50, rng);
    try {
      const auto p = lattice::preprocess_sketch(A);
      if (p.certified_length <= bound) ++ok;
      else failures.push_back(p.certified_length);
    } catch (const LengthBoundError& e) {
      failures.push_back(e.best_length());
    }
  }
  res.passed = ok >= 95;
  res.detail = cat(ok, "/100 within ", bound, failures.empty() ? "" : cat("; failing lengths recorded (", failures.size(), ")"));
  res.data = {{"within", ok}, {"failing_lengths", failures}};
  return res;
}

inline CriterionResult pmf_ratio(const Options&) {
  auto res = result(5, "pmf ratio at n=10, C=2, sigma2=1e4 over |z| <= 3 sigma");
  const auto a = stats::pmf_ratio_check(1e4, 10, 2.0), b = stats::pmf_ratio_check(1e4, 10, 2.0);
  const bool det = a.max_dev_1d == b.max_dev_1d && a.max_dev == b.max_dev;
  res.passed = det && a.z_max == 300 && a.max_dev_1d <= 0.01;
  res.detail = cat("max |ratio - 1| = ", a.max_dev_1d, " (bound 0.01), n-dim ", a.max_dev, det ? "; deterministic" : "; NOT deterministic");
  res.data = a;
  return res;
}

inline CriterionResult normalization(const Options&) {
  auto res = result(6, "normalizer Z(s2) in [max(sqrt(2 pi s2), 1), sqrt(2 pi s2) + 1]");
  res.passed = true;
  std::ostringstream os;
  for (double s2 : {0.5, 1.0, 4.0, 100.0, 1e6}) {
    const double Z = dgauss::normalizer_1d(s2), g = std::sqrt(2.0 * std::numbers::pi * s2);
    const bool ok = Z >= std::max(g, 1.0) && Z <= g + 1.0;
    res.passed = res.passed && ok;
    res.data.push_back({{"sigma2", s2}, {"Z", Z}, {"lower", std::max(g, 1.0)}, {"upper", g + 1.0}, {"ok", ok}});
    os << "Z(" << s2 << ")-sqrt=" << Z - g << (ok ? " " : "! ");
  }
  res.detail = os.str();
  return res;
}

inline CriterionResult cell_lemma(const Options& o) {
  auto res = result(7, "cell lemma r=2, n=8, sigma2=1e8: TVD <= 0.05 (image and rounding)");
  Rng rng = make_rng(o.seed, "c7");
  lattice::IntMatrix A;
  do {
    A = random_int_matrix(2, 8, 3, rng);
  } while (lattice::rank({lattice::to_big(A.row(0)), lattice::to_big(A.row(1))}) < 2);
  const auto rep = stats::cell_lemma_check(A, 1e8 * Mat::Identity(8, 8), 100000, derive_seed(o.seed, "c7/check"));
  res.passed = rep.tvd && rep.rounding_tvd && rep.tvd->value <= 0.05 && rep.rounding_tvd->value <= 0.05;
  res.detail = cat("TVD ", rep.tvd ? rep.tvd->value : -1.0, ", rounding TVD ", rep.rounding_tvd ? rep.rounding_tvd->value : -1.0);
  res.data = rep;
  return res;
}

inline CriterionResult subspace_covariance(const Options& o) {
  auto res = result(8, "subspace Gaussian second moments (n=16, dim V=2, sigma2=1e4)");
  const std::size_t n = 16, S = 100000;
  const double s2 = 1e4;
  Rng rng = make_rng(o.seed, "c8");
  Mat raw(16, 3);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = std_normal(rng);
  const Mat Q = Eigen::HouseholderQR<Mat>(raw).householderQ() * Mat::Identity(16, 3);
  OrthonormalBasis V = OrthonormalBasis::from_columns(Q.leftCols(2));
  const Vec w_perp = Q.col(2);
  dgauss::SubspaceSampler smp(dgauss::SubspaceSpec{n, V, s2});
  Vec m = Vec::Zero(3);
  IntVector x;
  Vec scratch;
  for (std::size_t i = 0; i < S; ++i) {
    smp.sample(rng, x, scratch);
    const Vec xv = numerics::to_vec(x);
    const Vec p = Q.transpose() * xv;
    m += p.cwiseAbs2();
  }
  m /= static_cast<double>(S);
  const double r0 = m[0] / (s2 / 4), r1 = m[1] / (s2 / 4), r2 = m[2] / s2;
  res.passed = std::abs(r0 - 1) <= 0.05 && std::abs(r1 - 1) <= 0.05 && std::abs(r2 - 1) <= 0.05;
  res.detail = cat("ratios to target: in V ", r0, ", ", r1, "; off V ", r2);
  res.data = {{"in_V", {r0, r1}}, {"off_V", r2}};
  return res;
}

inline CriterionResult conditional_gap(const Options& o) {
  auto res = result(9, "conditional gap: sketch row beats a direction orthogonal to the rowspan (m=1e5)");
  const auto built = projection_sketch(derive_seed(o.seed, "c1/sketch", 0));
  const auto gap = built.sketch->spec().params.gap;
  sketch::SketchOracle oracle(built);
  const std::size_t n = 128;
  const auto cfg = attack_config(gap, o.threads);
  const auto grid = attack::make_grid(cfg, n);
  // Positive rate along the grid with V empty; pick the one nearest 1/2.
  double best_s2 = grid.front(), best_rate = -1.0;
  for (double s2 : grid) {
    dgauss::SubspaceSampler smp(dgauss::SubspaceSpec{n, OrthonormalBasis(n), s2});
    Rng rng = make_rng(o.seed, "c9/rate", static_cast<std::uint64_t>(s2));
    std::size_t pos = 0;
    for (int i = 0; i < 4000; ++i) pos += oracle.answer(smp(rng));
    const double rate = static_cast<double>(pos) / 4000.0;
    if (best_rate < 0 || std::abs(rate - 0.5) < std::abs(best_rate - 0.5)) best_s2 = s2, best_rate = rate;
  }
  const Vec row = built.sketch->Q().row(0).transpose();
  Rng rng = make_rng(o.seed, "c9/perp");
  Vec u(static_cast<Eigen::Index>(n));
  for (auto& v : u) v = std_normal(rng);
  const Mat& Q = built.sketch->Q();
  u -= Q.transpose() * (Q * u);
  u.normalize();
  const dgauss::SubspaceSpec spec{n, OrthonormalBasis(n), best_s2};
  const auto g_row = attack::conditional_gap_estimate(oracle, spec, row, 100000, derive_seed(o.seed, "c9/row"));
  const auto g_perp = attack::conditional_gap_estimate(oracle, spec, u, 100000, derive_seed(o.seed, "c9/u"));
  const double se = std::hypot(g_row.standard_error, g_perp.standard_error);
  const double z = (g_row.delta - g_perp.delta) / se;
  const bool in_band = g_row.positive_rate >= 0.1 && g_row.positive_rate <= 0.9;
  res.passed = in_band && z >= 3.0;
  res.detail = cat("sigma2/alpha ", best_s2 / gap.alpha, ", rate ", g_row.positive_rate, ", delta(row) ", g_row.delta / best_s2,
                   " s2, delta(perp) ", g_perp.delta / best_s2, " s2, separation ", z, " SE");
  res.data = {{"sigma2", best_s2},         {"rate", g_row.positive_rate}, {"delta_row", g_row.delta},
              {"se_row", g_row.standard_error}, {"delta_perp", g_perp.delta}, {"se_perp", g_perp.standard_error},
              {"z", z}};
  return res;
}

inline CriterionResult planted_recovery(const Options& o) {
  auto res = result(10, "planted direction recovery (n=64, ~5000 positives)");
  const std::size_t n = 64;
  std::size_t ok = 0;
  for (std::uint64_t run = 0; run < 10; ++run) {
    attack::AttackConfig c;
    c.gap = sketch::GapNorm{8.0, dgauss::alpha_floor(n)};
    c.m = 10000;  // the oracle splits at the median, so about 5000 positives
    c.threads = o.threads;
    const double s0 = 3.0 * c.gap.alpha;
    c.grid = attack::GridKind::Explicit;
    c.explicit_grid = {s0};
    Rng rng = make_rng(o.seed, "c10/u", run);
    Vec u(static_cast<Eigen::Index>(n));
    for (auto& v : u) v = std_normal(rng);
    u.normalize();
    sketch::PlantedDirectionOracle oracle(u, 0.454936423 * s0);  // median of chi^2_1
    attack::AttackState st(n, 8, derive_seed(o.seed, "c10/attack", run));
    const auto ro = attack::round_step(st, oracle, c);
    const double cosine = ro.kind == attack::RoundOutcome::Direction ? std::abs(ro.direction.dot(u)) : 0.0;
    ok += cosine >= 0.9;
    res.data.push_back({{"run", run}, {"cosine", cosine}, {"positives", st.transcript.front().m_prime}});
  }
  res.passed = ok >= 9;
  res.detail = cat(ok, "/10 runs with |<v, u>| >= 0.9");
  return res;
}

inline CriterionResult gap_events(const Options& o) {
  auto res = result(11, "hard-distribution gap events, 100 pairs per family");
  const auto t0 = Clock::now();
  bool all = true;
  std::ostringstream os;
  for (auto k : harddist::kAllKinds) {
    const auto h = harddist::prepare(harddist::defaults(k), derive_seed(o.seed, "c11/setup", static_cast<std::uint64_t>(k)), o.threads);
    const auto b = harddist::verify_pairs(h, 100, derive_seed(o.seed, "c11/pairs", static_cast<std::uint64_t>(k)), o.threads);
    all = all && b.both >= 95;
    os << harddist::to_string(k) << " " << b.both << " ";
    nlohmann::json rec = b;
    rec["family"] = harddist::to_string(k);
    rec["calibration"] = h.cal;
    res.data["families"].push_back(rec);
  }
  const double secs = since(t0);
  res.passed = all && secs <= 600.0;
  res.detail = cat(os.str(), "(of 100); ", secs, " s");
  return res;
}

inline CriterionResult singular_band(const Options& o) {
  auto res = result(12, "singular values of 400 x 100 discrete Gaussian matrices in N[sqrt m -+ 3 sqrt n]");
  std::size_t ok = 0;
  double smax = 0.0, smin = 1e300;
  for (std::uint64_t t = 0; t < 100; ++t) {
    Rng rng = make_rng(o.seed, "c12", t);
    const auto b = harddist::singular_band_trial(400, 100, 1e4, rng);
    ok += b.within;
    smax = std::max(smax, b.smax);
    smin = std::min(smin, b.smin);
  }
  res.passed = ok >= 95;
  res.detail = cat(ok, "/100 within; extreme s/N observed [", smin, ", ", smax, "] vs [-10, 50]");
  res.data = {{"within", ok}, {"smin", smin}, {"smax", smax}};
  return res;
}

inline CriterionResult mgf(const Options& o) {
  auto res = result(13, "E exp(a x y / s2) <= 1.02 / sqrt(1 - a^2), s2=1e4, 1e6 samples");
  res.passed = true;
  std::ostringstream os;
  for (double a : {0.0, 0.5}) {
    const auto e = harddist::mgf_xy(a, 1e4, 1000000, derive_seed(o.seed, "c13", a == 0.0 ? 0 : 1), o.threads);
    const double bound = 1.02 / std::sqrt(1.0 - a * a);
    res.passed = res.passed && e.mean <= bound;
    os << "a=" << a << ": " << e.mean << " (bound " << bound << ") ";
    res.data.push_back({{"a", a}, {"mean", e.mean}, {"se", e.se}, {"bound", bound}});
  }
  res.detail = os.str();
  return res;
}

inline CriterionResult sketched_tvd(const Options& o) {
  auto res = result(14, "sketched indistinguishability, opnorm n=8, d=1, 1e5 trials");
  auto f = harddist::defaults(harddist::Kind::OpnormAlpha);
  f.n = 8;
  f.spikes = {std::pow(1.0 / 64.0, 0.25)};  // ||s||^4 d = 1/64
  const auto small = harddist::prepare(f, derive_seed(o.seed, "c14/small"), o.threads);
  const auto ts = harddist::sketched_indistinguishability(small, 1, 100000, derive_seed(o.seed, "c14/tvd-small"), o.threads);
  f.spikes = {10.0 / std::sqrt(8.0)};
  const auto big = harddist::prepare(f, derive_seed(o.seed, "c14/big"), o.threads);
  const auto tb = harddist::sketched_indistinguishability(big, 1, 100000, derive_seed(o.seed, "c14/tvd-big"), o.threads);
  res.passed = ts.value <= 0.15 && tb.value >= 0.5;
  res.detail = cat("small spike TVD ", ts.value, " +- ", ts.halfwidth, " (<= 0.15); large spike ", tb.value, " +- ",
                   tb.halfwidth, " (>= 0.5)");
  res.data = {{"small", ts}, {"large", tb}};
  return res;
}

}  // namespace detail

inline std::vector<std::function<CriterionResult(const Options&)>> battery() {
  using namespace detail;
  return {attack_end_to_end, ground_truth_control, siegel,       preprocessing, pmf_ratio,    normalization, cell_lemma,
          subspace_covariance, conditional_gap,   planted_recovery, gap_events,  singular_band, mgf,         sketched_tvd};
}

// Runs the selected criteria, printing one PASS/FAIL line per criterion as it
// finishes. An exception inside a criterion counts as a failure.
inline std::vector<CriterionResult> run(const Options& o, std::ostream& log) {
  std::vector<CriterionResult> out;
  int id = 0;
  for (const auto& check : battery()) {
    ++id;
    if (!o.only.empty() && !o.only.count(id)) continue;
    const auto t0 = detail::Clock::now();
    CriterionResult r;
    try {
      r = check(o);
    } catch (const std::exception& e) {
      r.id = id;
      r.title = "criterion " + std::to_string(id);
      r.passed = false;
      r.detail = std::string("error: ") + e.what();
    }
    r.seconds = detail::since(t0);
    log << (r.passed ? "[PASS] " : "[FAIL] ") << r.id << ". " << r.title << " -- " << r.detail << " ("
        << detail::cat(r.seconds) << " s)" << std::endl;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace advsketch::acceptance
