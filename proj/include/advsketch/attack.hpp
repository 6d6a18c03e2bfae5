#pragma once

// Adaptive rowspace-learning attack on a GapNorm oracle.
//
// Each round sweeps the variance grid in ascending order, drawing m discrete
// Gaussian queries from D(V_t-perp, s2) per grid point. A grid point whose
// positive rate contradicts correctness yields a failure certificate; otherwise
// the positives' top right singular vector is the candidate direction, and the
// first candidate whose second moment clears 5 s2 / 4 + slack joins V.
//
// The engine only ever calls GapNormOracle::answer. White-box access to the
// sketch appears solely in invariant_diagnostic.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advsketch/dgauss.hpp"
#include "advsketch/error.hpp"
#include "advsketch/numerics.hpp"
#include "advsketch/parallel.hpp"
#include "advsketch/rng.hpp"
#include "advsketch/sketch.hpp"

namespace advsketch::attack {

using numerics::Mat;
using numerics::OrthonormalBasis;
using numerics::Vec;
using sketch::GapNorm;
using sketch::GapNormOracle;
using sketch::IntVector;

enum class GridKind { Geometric, Fine, Explicit };
enum class SlackKind { Relative, Absolute };  // s2 / (14 B r) or 1 / (14 B r)

inline constexpr std::size_t kFineGridCap = 100000;

struct AttackConfig {
  GapNorm gap;
  std::size_t m = 2000;
  GridKind grid = GridKind::Geometric;
  std::size_t grid_points = 16;
  std::vector<double> explicit_grid;
  double positive_floor = -1.0;  // < 0: m / (100 B^2 n)
  SlackKind slack = SlackKind::Relative;
  double zeta = -1.0;            // < 0: max(grid zeta, 5 / sqrt(m))
  std::size_t round_cap = 0;     // 0: r_budget + 1
  std::size_t verification_trials = 10000;
  std::size_t threads = 1;
  std::size_t chunk = 250;       // queries per RNG stream; fixes the transcript independent of threads
};

inline double fine_zeta(double B, std::size_t n) {
  const double bn = B * static_cast<double>(n);
  return 1.0 / (20.0 * bn * bn * std::log(bn));
}

inline double effective_zeta(const AttackConfig& c, std::size_t n) {
  if (c.zeta >= 0.0) return c.zeta;
  return std::max(fine_zeta(c.gap.B, n), 5.0 / std::sqrt(static_cast<double>(c.m)));
}

inline double positive_floor(const AttackConfig& c, std::size_t n) {
  if (c.positive_floor >= 0.0) return c.positive_floor;
  return static_cast<double>(c.m) / (100.0 * c.gap.B * c.gap.B * static_cast<double>(n));
}

inline double slack(const AttackConfig& c, std::size_t r, double s2) {
  const double base = 1.0 / (14.0 * c.gap.B * static_cast<double>(std::max<std::size_t>(r, 1)));
  return c.slack == SlackKind::Relative ? s2 * base : base;
}

inline std::vector<double> make_grid(const AttackConfig& c, std::size_t n) {
  const double lo = c.gap.alpha, hi = c.gap.alpha * c.gap.B;
  std::vector<double> g;
  switch (c.grid) {
    case GridKind::Geometric: {
      require(c.grid_points >= 2, ErrorCode::BadParams, "geometric grid needs at least 2 points");
      for (std::size_t k = 0; k < c.grid_points; ++k)
        g.push_back(lo * std::pow(c.gap.B, static_cast<double>(k) / static_cast<double>(c.grid_points - 1)));
      g.back() = hi;
      break;
    }
    case GridKind::Fine: {
      const double z = fine_zeta(c.gap.B, n);
      const double k0 = std::ceil(lo / z), k1 = std::floor(hi / z);
      const double count = k1 - k0 + 1;
      if (!(count <= static_cast<double>(kFineGridCap)))
        fail(ErrorCode::BadParams, "fine grid has " + std::to_string(count) + " points (cap " +
                                       std::to_string(kFineGridCap) + ")");
      for (double k = k0; k <= k1; k += 1.0) g.push_back(k * z);
      break;
    }
    case GridKind::Explicit:
      g = c.explicit_grid;
      std::sort(g.begin(), g.end());
      for (double s : g)
        require(s >= lo * (1 - 1e-12) && s <= hi * (1 + 1e-12), ErrorCode::BadParams, "grid point outside [alpha, alpha B]");
      break;
  }
  require(!g.empty(), ErrorCode::BadParams, "empty grid");
  return g;
}

inline void validate(const AttackConfig& c, std::size_t n) {
  require(c.m >= 100, ErrorCode::BadParams, "m must be at least 100");
  require(c.gap.B >= 8.0, ErrorCode::BadParams, "B must be at least 8");
  require(c.chunk >= 1, ErrorCode::BadParams, "chunk must be positive");
  if (c.gap.alpha < dgauss::alpha_floor(n))
    fail(ErrorCode::VarianceTooSmall,
         "alpha " + std::to_string(c.gap.alpha) + " below smoothing floor " + std::to_string(dgauss::alpha_floor(n)));
  make_grid(c, n);
}

enum class Side { High, Low };

inline std::string to_string(Side s) { return s == Side::High ? "high" : "low"; }

struct FailureCertificate {
  OrthonormalBasis V;
  double sigma2 = 0.0;
  Side side = Side::High;
  double rate = 0.0;
  std::size_t samples = 0;
  double zeta = 0.0;
  std::size_t round = 0;
};

struct GridRecord {
  std::size_t round = 0;
  double sigma2 = 0.0;
  double rate = 0.0;
  std::size_t m_prime = 0;
  std::optional<double> score;
  bool accepted = false;
};

struct AttackState {
  std::size_t n = 0;
  std::size_t r_budget = 0;
  std::uint64_t seed = 0;
  std::size_t t = 1;  // next round to run
  OrthonormalBasis V;
  std::vector<GridRecord> transcript;
  std::vector<double> accepted_scores;
  std::uint64_t queries = 0;

  AttackState(std::size_t n_, std::size_t r, std::uint64_t s) : n(n_), r_budget(r), seed(s), V(n_) {}
};

struct RoundOutcome {
  enum Kind { Certificate, Direction, NoProgress } kind = NoProgress;
  std::optional<FailureCertificate> certificate;
  Vec direction;  // accepted v_t (unit, orthogonal to the previous V)
};

struct GridPointResult {
  std::size_t positives = 0;
  Mat positive_rows;  // m' x n
};

// Draws m queries at (V, s2) and asks the oracle about each one.
inline GridPointResult query_grid_point(const GapNormOracle& oracle, const OrthonormalBasis& V, double s2,
                                        const AttackConfig& c, std::uint64_t stream_seed) {
  const std::size_t n = V.ambient_dim();
  const dgauss::SubspaceSampler smp(dgauss::SubspaceSpec{n, V, s2});
  const std::size_t chunks = (c.m + c.chunk - 1) / c.chunk;
  std::vector<std::vector<IntVector>> pos(chunks);
  parallel_for(chunks, oracle.concurrent_safe() ? c.threads : 1, [&](std::size_t k) {
    Rng rng = make_rng(stream_seed, "attack/chunk", k);
    IntVector x;
    Vec scratch;
    const std::size_t end = std::min(c.m, (k + 1) * c.chunk);
    for (std::size_t i = k * c.chunk; i < end; ++i) {
      smp.sample(rng, x, scratch);
      if (oracle.answer(x)) pos[k].push_back(x);
    }
  });
  GridPointResult out;
  for (const auto& p : pos) out.positives += p.size();
  out.positive_rows.resize(static_cast<Eigen::Index>(out.positives), static_cast<Eigen::Index>(n));
  Eigen::Index row = 0;
  for (const auto& p : pos)
    for (const auto& x : p) out.positive_rows.row(row++) = numerics::to_vec(x).transpose();
  return out;
}

// One round of the sweep; updates state (V, transcript, t).
inline RoundOutcome round_step(AttackState& st, const GapNormOracle& oracle, const AttackConfig& c) {
  const std::vector<double> grid = make_grid(c, st.n);
  const double zeta = effective_zeta(c, st.n);
  const double floor = positive_floor(c, st.n);
  const double B = c.gap.B, alpha = c.gap.alpha;
  RoundOutcome out;
  std::optional<Vec> chosen;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double s2 = grid[k];
    const std::uint64_t stream = derive_seed(st.seed, "attack/grid", st.t * 1000003ULL + k);
    GridPointResult g = query_grid_point(oracle, st.V, s2, c, stream);
    st.queries += c.m;
    GridRecord rec;
    rec.round = st.t;
    rec.sigma2 = s2;
    rec.m_prime = g.positives;
    rec.rate = static_cast<double>(g.positives) / static_cast<double>(c.m);
    const bool high = s2 >= alpha * B / 2 && rec.rate <= 1.0 - zeta;
    const bool low = s2 <= 2 * alpha && rec.rate >= zeta;
    if (high || low) {
      st.transcript.push_back(rec);
      FailureCertificate cert{st.V, s2, high ? Side::High : Side::Low, rec.rate, c.m, zeta, st.t};
      out.kind = RoundOutcome::Certificate;
      out.certificate = std::move(cert);
      return out;
    }
    // Once a direction is chosen later candidates cannot matter; skip their SVDs.
    if (!chosen && static_cast<double>(g.positives) >= floor && g.positives > 0) {
      const numerics::TopSingular top = numerics::top_right_singular_vector(g.positive_rows);
      const double z = top.value * top.value / static_cast<double>(g.positives);
      rec.score = z;
      if (z >= s2 + s2 / 4 + slack(c, st.r_budget, s2)) {
        rec.accepted = true;
        chosen = top.v;
        st.accepted_scores.push_back(z);
      }
    }
    st.transcript.push_back(rec);
  }
  ++st.t;
  if (!chosen) return out;
  try {
    // Standard Gram-Schmidt residual against the learned basis.
    Vec v = numerics::gram_schmidt_residual(*chosen, st.V);
    st.V.append(v);
    out.kind = RoundOutcome::Direction;
    out.direction = std::move(v);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateResidual) throw;
  }
  return out;
}

struct AttackOutcome {
  std::optional<FailureCertificate> certificate;  // empty: exhausted
  AttackState state;
};

inline std::size_t round_cap(const AttackConfig& c, std::size_t r_budget) {
  return c.round_cap ? c.round_cap : r_budget + 1;
}

inline AttackOutcome run_attack(const GapNormOracle& oracle, std::size_t n, std::size_t r_budget, const AttackConfig& c,
                                std::uint64_t seed) {
  validate(c, n);
  AttackOutcome out{std::nullopt, AttackState(n, r_budget, seed)};
  const std::size_t cap = round_cap(c, r_budget);
  while (out.state.t <= cap) {
    RoundOutcome ro = round_step(out.state, oracle, c);
    if (ro.kind == RoundOutcome::Certificate) {
      out.certificate = std::move(ro.certificate);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verification

struct Exploit {
  IntVector x;
  double norm_sq = 0.0;
  bool answer = false;
  bool wrong = false;
};

struct Verification {
  double failure_rate = 0.0;
  std::size_t trials = 0;
  std::size_t exploit_count = 0;
  std::vector<Exploit> exploits;  // the first `keep` of them
  double high_threshold = 0.0;    // alpha B (n - d) / 3
  double low_threshold = 0.0;     // 3 alpha (n - d)
};

inline bool is_wrong(bool answer, double norm_sq, double high_threshold, double low_threshold) {
  return (!answer && norm_sq > high_threshold) || (answer && norm_sq < low_threshold);
}

// Samples fresh queries at the certificate and keeps the misanswered ones.
// Throws NoExploitFound when none turn up.
inline Verification verify_certificate(const GapNormOracle& oracle, const FailureCertificate& cert, const GapNorm& gap,
                                       std::size_t trials, std::uint64_t seed, std::size_t keep = 100) {
  const std::size_t n = cert.V.ambient_dim();
  const double nd = static_cast<double>(n - cert.V.size());
  Verification v;
  v.trials = trials;
  v.high_threshold = gap.alpha * gap.B * nd / 3.0;
  v.low_threshold = 3.0 * gap.alpha * nd;
  const dgauss::SubspaceSampler smp(dgauss::SubspaceSpec{n, cert.V, cert.sigma2});
  Rng rng = make_rng(seed, "attack/verify");
  IntVector x;
  Vec scratch;
  for (std::size_t i = 0; i < trials; ++i) {
    smp.sample(rng, x, scratch);
    double s = 0.0;
    for (auto e : x) s += static_cast<double>(e) * static_cast<double>(e);
    // Only the side the certificate claims counts as an exploit.
    const bool a = oracle.answer(x);
    const bool wrong = cert.side == Side::High ? (!a && s > v.high_threshold) : (a && s < v.low_threshold);
    if (!wrong) continue;
    ++v.exploit_count;
    if (v.exploits.size() < keep) v.exploits.push_back({x, s, a, is_wrong(a, s, v.high_threshold, v.low_threshold)});
  }
  v.failure_rate = trials ? static_cast<double>(v.exploit_count) / static_cast<double>(trials) : 0.0;
  if (v.exploit_count == 0)
    fail(ErrorCode::NoExploitFound, "no exploit in " + std::to_string(trials) + " trials at sigma2 " +
                                        std::to_string(cert.sigma2) + " (" + to_string(cert.side) + " side)");
  return v;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct ConditionalGap {
  double delta = 0.0;
  double standard_error = 0.0;
  double positive_rate = 0.0;
  std::size_t samples = 0;
};

// E[<u,x>^2 | f(x) = 1] - E[<u,x>^2] over m draws from spec.
inline ConditionalGap conditional_gap_estimate(const GapNormOracle& oracle, const dgauss::SubspaceSpec& spec,
                                               const Vec& u, std::size_t m, std::uint64_t seed) {
  require(m >= 1000, ErrorCode::BadParams, "m must be at least 1000");
  require(static_cast<std::size_t>(u.size()) == spec.n, ErrorCode::DimensionMismatch, "direction length");
  require(std::abs(u.norm() - 1.0) <= 1e-9, ErrorCode::BadParams, "direction must be unit");
  const dgauss::SubspaceSampler smp(spec);
  Rng rng = make_rng(seed, "attack/conditional-gap");
  IntVector x;
  Vec scratch;
  double sp = 0, sp2 = 0, sn = 0, sn2 = 0;
  std::size_t np = 0;
  for (std::size_t i = 0; i < m; ++i) {
    smp.sample(rng, x, scratch);
    double d = 0.0;
    for (std::size_t j = 0; j < spec.n; ++j) d += u[static_cast<Eigen::Index>(j)] * static_cast<double>(x[j]);
    const double q = d * d;
    if (oracle.answer(x)) {
      ++np;
      sp += q;
      sp2 += q * q;
    } else {
      sn += q;
      sn2 += q * q;
    }
  }
  if (np == 0) fail(ErrorCode::NoPositives, "oracle never answered 1 in " + std::to_string(m) + " queries");
  const std::size_t nn = m - np;
  const double M = static_cast<double>(m);
  ConditionalGap g;
  g.samples = m;
  g.positive_rate = static_cast<double>(np) / M;
  const double mp = sp / static_cast<double>(np);
  g.delta = mp - (sp + sn) / M;
  // Delta = (1 - p)(mean_P - mean_N); p treated as fixed.
  const double vp = np > 1 ? (sp2 - sp * mp) / static_cast<double>(np - 1) : 0.0;
  double var = vp / static_cast<double>(np);
  if (nn > 1) {
    const double mn = sn / static_cast<double>(nn);
    var += (sn2 - sn * mn) / static_cast<double>(nn - 1) / static_cast<double>(nn);
  }
  g.standard_error = (1.0 - g.positive_rate) * std::sqrt(std::max(0.0, var));
  return g;
}

struct InvariantReport {
  std::size_t t = 0;
  std::size_t dim = 0;
  double distance = 0.0;
};

// White-box: distance from V_t to the closest same-dimension subspace of rowspan(A).
inline InvariantReport invariant_diagnostic(const AttackState& st, const sketch::IntegerSketch& truth) {
  InvariantReport rep{st.t, st.V.size(), 0.0};
  if (st.V.empty()) return rep;
  const Mat U = truth.Q().transpose();
  const Mat& V = st.V.matrix();
  const Mat W = V.cols() <= U.cols() ? numerics::closest_subspace(V, U) : U;
  rep.distance = numerics::projector_distance(V, W);
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const GridRecord& r) {
  j = {{"round", r.round}, {"sigma2", r.sigma2}, {"rate", r.rate}, {"m_prime", r.m_prime}, {"accepted", r.accepted}};
  j["score"] = r.score ? nlohmann::json(*r.score) : nlohmann::json(nullptr);
}

inline nlohmann::json basis_json(const OrthonormalBasis& V) {
  nlohmann::json cols = nlohmann::json::array();
  for (std::size_t i = 0; i < V.size(); ++i) {
    const Vec v = V.vector(i);
    cols.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  }
  return {{"n", V.ambient_dim()}, {"vectors", cols}};
}

inline OrthonormalBasis basis_from_json(const nlohmann::json& j) {
  OrthonormalBasis V(j.at("n").get<std::size_t>());
  for (const auto& c : j.at("vectors")) {
    const auto v = c.get<std::vector<double>>();
    V.append(numerics::to_vec(v).normalized());
  }
  return V;
}

inline void to_json(nlohmann::json& j, const FailureCertificate& c) {
  j = {{"V", basis_json(c.V)}, {"sigma2", c.sigma2}, {"side", to_string(c.side)}, {"rate", c.rate},
       {"samples", c.samples}, {"zeta", c.zeta},       {"round", c.round}};
}

inline void from_json(const nlohmann::json& j, FailureCertificate& c) {
  c.V = basis_from_json(j.at("V"));
  c.sigma2 = j.at("sigma2").get<double>();
  const std::string side = j.at("side").get<std::string>();
  require(side == "high" || side == "low", ErrorCode::BadConfig, "certificate side must be high or low");
  c.side = side == "high" ? Side::High : Side::Low;
  c.rate = j.value("rate", 0.0);
  c.samples = j.value("samples", std::size_t{0});
  c.zeta = j.value("zeta", 0.0);
  c.round = j.value("round", std::size_t{0});
}

inline void to_json(nlohmann::json& j, const Exploit& e) {
  j = {{"x", e.x}, {"norm_sq", e.norm_sq}, {"answer", e.answer}, {"wrong", e.wrong}};
}

inline void to_json(nlohmann::json& j, const Verification& v) {
  j = {{"failure_rate", v.failure_rate}, {"trials", v.trials},   {"exploit_count", v.exploit_count},
       {"exploits", v.exploits},         {"high_threshold", v.high_threshold}, {"low_threshold", v.low_threshold}};
}

inline void write_transcript_jsonl(const std::string& path, const AttackState& st) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open " + path);
  for (const auto& r : st.transcript) f << nlohmann::json(r).dump() << '\n';
}

inline std::string summary_csv_header() { return "run_id,seed,round,sigma2,rate,m_prime,score,accepted"; }

inline void append_summary_csv(std::ostream& os, const std::string& run_id, const AttackState& st) {
  for (const auto& r : st.transcript) {
    os << run_id << ',' << st.seed << ',' << r.round << ',' << r.sigma2 << ',' << r.rate << ',' << r.m_prime << ',';
    if (r.score) os << *r.score;
    os << ',' << (r.accepted ? 1 : 0) << '\n';
  }
}

}  // namespace advsketch::attack
