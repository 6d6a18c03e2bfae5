// advsketch: experiment runner.
//
//   attack run|verify      sketch build|info      harddist gen|gap|tvd
//   stats check <name>     suite acceptance
//
// Settings come from (highest first) command-line flags, ADVSKETCH_OUT /
// ADVSKETCH_THREADS, the --config file, then defaults. The merged config is
// schema-checked before anything runs and written back as config.json, so
// rerunning with it reproduces the outputs.
//
// Exit codes: 0 success, 2 a check ran but missed its threshold, 1 errors.
//
// Seeds: every stream is derive_seed(root, label, index) with labels
// "cli/sketch", "cli/attack", "cli/verify" (index = run), "cli/harddist/setup",
// "cli/harddist/instances", "cli/harddist/pairs", "cli/harddist/tvd",
// "cli/stats".

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "advsketch/acceptance.hpp"
#include "advsketch/attack.hpp"
#include "advsketch/dgauss.hpp"
#include "advsketch/harddist.hpp"
#include "advsketch/lattice.hpp"
#include "advsketch/sketch.hpp"
#include "advsketch/stats.hpp"
#include "config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advsketch;

namespace {

constexpr int kThresholdFailure = 2;
constexpr std::uint64_t kDefaultSeed = 20240601;

struct Common {
  std::optional<std::string> config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON experiment config");
  app->add_option("--seed", c.seed, "root seed");
  app->add_option("--out", c.out, "output directory (env ADVSKETCH_OUT)");
  app->add_option("--threads", c.threads, "worker threads (env ADVSKETCH_THREADS)");
}

template <class T>
void set_if(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

// Settings after merging every source; cfg is the validated config as written back.
struct Run {
  json cfg;
  std::uint64_t seed = kDefaultSeed;
  std::size_t threads = 1;
  fs::path out;
};

Run resolve(const Common& c, const std::function<void(json&)>& overrides) {
  Run r;
  r.cfg = c.config ? cli::load(*c.config) : json::object();
  cli::validate(r.cfg);  // paths in errors refer to the file as written
  overrides(r.cfg);
  if (c.seed) r.cfg["seed"] = *c.seed;
  if (const char* t = std::getenv("ADVSKETCH_THREADS")) r.cfg["threads"] = std::stoll(t);
  if (c.threads) r.cfg["threads"] = *c.threads;
  if (const char* o = std::getenv("ADVSKETCH_OUT")) r.cfg["out"] = o;
  if (c.out) r.cfg["out"] = *c.out;
  if (!r.cfg.contains("seed")) r.cfg["seed"] = kDefaultSeed;
  cli::validate(r.cfg);
  r.seed = r.cfg["seed"].get<std::uint64_t>();
  r.threads = r.cfg.value("threads", std::size_t{1});
  r.out = r.cfg.value("out", std::string("out"));
  r.cfg.erase("threads");  // not part of the result; outputs do not depend on it
  fs::create_directories(r.out);
  return r;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p);
  if (!f) fail(ErrorCode::Io, "cannot write " + p.string());
  f << j.dump(2) << '\n';
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  if (!f) fail(ErrorCode::Io, "cannot write " + p.string());
  f << s;
}

std::string run_id(std::size_t k) {
  char b[16];
  std::snprintf(b, sizeof b, "run-%03zu", k);
  return b;
}

// ---------------------------------------------------------------------------
// attack

struct AttackFlags {
  std::optional<std::string> oracle, family, alpha, grid;
  std::optional<std::size_t> n, r, m, runs, points, trials, keep;
  std::optional<double> B;
};

void attack_overrides(json& cfg, const AttackFlags& f) {
  json& a = cfg["attack"];
  if (a.is_null()) a = json::object();
  set_if(a, "oracle", f.oracle);
  set_if(a, "family", f.family);
  set_if(a, "n", f.n);
  set_if(a, "r", f.r);
  set_if(a, "m", f.m);
  set_if(a, "B", f.B);
  set_if(a, "runs", f.runs);
  set_if(a, "verification_trials", f.trials);
  set_if(a, "keep_exploits", f.keep);
  if (f.alpha) a["alpha"] = *f.alpha == "auto" ? json("auto") : json(std::stod(*f.alpha));
  if (f.grid) a["grid"]["kind"] = *f.grid;
  if (f.points) a["grid"]["points"] = *f.points;
}

// Fills in every default so the written config is explicit.
void complete_attack(json& a) {
  a.emplace("oracle", "sketch");
  a.emplace("family", "projection-threshold");
  a.emplace("B", 8.0);
  a.emplace("alpha", "auto");
  a.emplace("m", 2000);
  a.emplace("runs", 1);
  a.emplace("verification_trials", 10000);
  a.emplace("keep_exploits", 20);
  a.emplace("round_cap", 0);
  a.emplace("grid", json::object());
  a["grid"].emplace("kind", "geometric");
  a["grid"].emplace("points", 16);
  a.emplace("sketch_params", json::object());
}

sketch::SketchSpec sketch_spec(const json& a, std::uint64_t seed) {
  json s = {{"family", a["family"]}, {"n", a["n"]}, {"r", a["r"]}, {"seed", seed}, {"params", a["sketch_params"]}};
  s["params"]["B"] = a["B"];
  s["params"]["alpha"] = a["alpha"].is_string() ? 0.0 : a["alpha"].get<double>();
  return s.get<sketch::SketchSpec>();
}

attack::AttackConfig attack_config(const json& a, const sketch::GapNorm& gap, std::size_t threads) {
  attack::AttackConfig c;
  c.gap = gap;
  c.m = a["m"];
  const std::string kind = a["grid"]["kind"];
  c.grid = kind == "fine" ? attack::GridKind::Fine : kind == "explicit" ? attack::GridKind::Explicit : attack::GridKind::Geometric;
  c.grid_points = a["grid"]["points"];
  if (a["grid"].contains("values"))
    for (double v : a["grid"]["values"]) c.explicit_grid.push_back(v * gap.alpha);  // values are in units of alpha
  c.round_cap = a["round_cap"];
  c.verification_trials = a["verification_trials"];
  c.threads = threads;
  return c;
}

// The oracle a certificate entry was produced against.
struct OracleHolder {
  std::optional<sketch::BuiltSketch> built;
  std::unique_ptr<sketch::GapNormOracle> oracle;
  sketch::GapNorm gap;
};

OracleHolder make_oracle(const std::string& kind, const sketch::SketchSpec& spec) {
  OracleHolder h;
  if (kind == "ground-truth") {
    h.gap = spec.params.gap;
    if (h.gap.alpha <= 0.0) h.gap.alpha = dgauss::alpha_floor(spec.n);
    h.oracle = std::make_unique<sketch::GroundTruthOracle>(h.gap, spec.n);
  } else {
    h.built = sketch::build_sketch(spec);
    h.gap = h.built->sketch->spec().params.gap;
    h.oracle = std::make_unique<sketch::SketchOracle>(*h.built);
  }
  return h;
}

int attack_run(const Common& com, const AttackFlags& fl) {
  Run run = resolve(com, [&](json& c) { attack_overrides(c, fl); });
  json& a = run.cfg["attack"];
  if (!a.contains("n") || !a.contains("r")) fail(ErrorCode::BadConfig, "$.attack: n and r are required");
  complete_attack(a);
  cli::validate(run.cfg);
  write_json(run.out / "config.json", run.cfg);

  std::ofstream transcript(run.out / "transcript.jsonl"), summary(run.out / "summary.csv");
  summary << attack::summary_csv_header() << '\n';
  json certs = json::array(), exploits = json::array();
  std::ostringstream report;
  const std::size_t n = a["n"], r = a["r"];
  for (std::size_t k = 0; k < a["runs"].get<std::size_t>(); ++k) {
    const std::string id = run_id(k);
    const auto holder = make_oracle(a["oracle"], sketch_spec(a, derive_seed(run.seed, "cli/sketch", k)));
    const auto cfg = attack_config(a, holder.gap, run.threads);
    const auto out = attack::run_attack(*holder.oracle, n, r, cfg, derive_seed(run.seed, "cli/attack", k));
    for (const auto& rec : out.state.transcript) {
      json line = rec;
      line["run_id"] = id;
      transcript << line.dump() << '\n';
    }
    attack::append_summary_csv(summary, id, out.state);

    json entry = {{"run_id", id}, {"oracle", a["oracle"]}, {"gap", {{"B", holder.gap.B}, {"alpha", holder.gap.alpha}}},
                  {"attack_seed", out.state.seed}, {"queries", out.state.queries}};
    if (holder.built) entry["sketch"] = holder.built->sketch->spec();
    else {
      entry["sketch"] = sketch_spec(a, 0);
      entry["sketch"]["params"]["alpha"] = holder.gap.alpha;
    }
    entry["certificate"] = out.certificate ? json(*out.certificate) : json(nullptr);
    certs.push_back(entry);

    report << id << ": " << out.state.transcript.size() << " grid records, " << out.state.queries << " queries, ";
    json ex = {{"run_id", id}};
    if (out.certificate) {
      report << "certificate at sigma2/alpha " << out.certificate->sigma2 / holder.gap.alpha << " (" << attack::to_string(out.certificate->side)
             << ", rate " << out.certificate->rate << ", dim V " << out.certificate->V.size() << ")";
      try {
        const auto v = attack::verify_certificate(*holder.oracle, *out.certificate, holder.gap, cfg.verification_trials,
                                                  derive_seed(run.seed, "cli/verify", k), a["keep_exploits"]);
        ex["verification"] = v;
        report << ", " << v.exploit_count << "/" << v.trials << " exploits\n";
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoExploitFound) throw;
        ex["verification"] = nullptr;
        ex["error"] = e.what();
        report << ", no exploit found\n";
      }
    } else {
      report << "no certificate\n";
    }
    exploits.push_back(ex);
  }
  write_json(run.out / "certificate.json", certs);
  write_json(run.out / "exploits.json", exploits);
  write_text(run.out / "report.txt", report.str());
  std::cout << report.str();
  return 0;
}

int attack_verify(const Common& com, const std::string& cert_path, std::optional<std::size_t> trials, std::size_t keep) {
  Run run = resolve(com, [](json&) {});
  json certs = cli::load(cert_path);
  if (certs.is_object()) certs = json::array({certs});
  json exploits = json::array();
  bool all = true;
  for (std::size_t k = 0; k < certs.size(); ++k) {
    const json& e = certs[k];
    const std::string where = cert_path + "[" + std::to_string(k) + "]";
    if (!e.contains("certificate") || !e.contains("sketch")) fail(ErrorCode::BadConfig, where + ": missing certificate or sketch");
    if (e["certificate"].is_null()) continue;
    const auto cert = e["certificate"].get<attack::FailureCertificate>();
    const auto holder = make_oracle(e.value("oracle", "sketch"), e["sketch"].get<sketch::SketchSpec>());
    json ex = {{"run_id", e.value("run_id", run_id(k))}};
    try {
      const auto v = attack::verify_certificate(*holder.oracle, cert, holder.gap, trials.value_or(10000),
                                                derive_seed(run.seed, "cli/verify", k), keep);
      ex["verification"] = v;
      std::cout << ex["run_id"].get<std::string>() << ": " << v.exploit_count << "/" << v.trials << " exploits\n";
    } catch (const Error& err) {
      if (err.code() != ErrorCode::NoExploitFound) throw;
      all = false;
      ex["verification"] = nullptr;
      ex["error"] = err.what();
      std::cout << ex["run_id"].get<std::string>() << ": no exploit found\n";
    }
    exploits.push_back(ex);
  }
  write_json(run.out / "exploits.json", exploits);
  return all ? 0 : kThresholdFailure;
}

// ---------------------------------------------------------------------------
// sketch

double certified_length(const lattice::IntMatrix& A) {
  if (4 * A.rows <= A.cols) return lattice::preprocess_sketch(A).certified_length;
  return lattice::reduce_basis(lattice::integer_kernel_basis(A)).max_length();
}

int sketch_build(const Common& com, const AttackFlags& fl) {
  Run run = resolve(com, [&](json& c) { attack_overrides(c, fl); });
  json& a = run.cfg["attack"];
  if (!a.contains("n") || !a.contains("r")) fail(ErrorCode::BadConfig, "$.attack: n and r are required");
  complete_attack(a);
  write_json(run.out / "config.json", run.cfg);
  const auto built = sketch::build_sketch(sketch_spec(a, derive_seed(run.seed, "cli/sketch", 0)));
  json j = *built.sketch;
  if (built.calibration) j["calibration"] = *built.calibration;
  j["estimator"] = built.estimator->describe();
  write_json(run.out / "sketch.json", j);
  std::cout << "wrote " << (run.out / "sketch.json").string() << " (alpha " << built.sketch->spec().params.gap.alpha << ")\n";
  return 0;
}

int sketch_info(const std::string& path) {
  const json j = cli::load(path);
  const auto spec = j.get<sketch::SketchSpec>();
  const auto A = j.at("matrix").get<lattice::IntMatrix>();
  if (A.rows != spec.r || A.cols != spec.n) fail(ErrorCode::BadConfig, path + ": $.matrix does not match n, r");
  const double len = certified_length(A);
  json info = {{"family", to_string(spec.family)},
               {"n", spec.n},
               {"r", spec.r},
               {"seed", spec.seed},
               {"max_abs_entry", A.max_abs()},
               {"alpha", spec.params.gap.alpha},
               {"B", spec.params.gap.B},
               {"alpha_floor", dgauss::alpha_floor(spec.n)},
               {"certified_kernel_length", len},
               {"auto_alpha", sketch::auto_alpha(A)},
               {"midpoint", spec.params.gap.midpoint(spec.n)}};
  std::cout << info.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// harddist

struct HardFlags {
  std::optional<std::string> family, side;
  std::optional<std::size_t> n, count, dim, trials;
  std::optional<double> eps, N;
};

harddist::HardSetup hard_setup(Run& run, const HardFlags& fl) {
  json& h = run.cfg["harddist"];
  h.emplace("params", json::object());
  const auto kind = harddist::kind_from_string(h["family"]);
  json family = harddist::defaults(kind);
  family.update(h["params"]);
  if (fl.n) family["n"] = *fl.n;
  if (fl.eps) family["eps"] = *fl.eps;
  if (fl.N) family["N"] = *fl.N;
  h["params"] = family;
  h["params"].erase("family");
  cli::validate(run.cfg);
  write_json(run.out / "config.json", run.cfg);
  auto setup = harddist::prepare(family.get<harddist::HardFamily>(), derive_seed(run.seed, "cli/harddist/setup"), run.threads);
  write_json(run.out / "calibration.json", setup.cal);
  for (const auto& w : setup.cal.warnings) std::cerr << "warning: " << w << '\n';
  return setup;
}

Run hard_resolve(const Common& com, const HardFlags& fl) {
  return resolve(com, [&](json& c) {
    json& h = c["harddist"];
    if (h.is_null()) h = json::object();
    set_if(h, "family", fl.family);
    set_if(h, "side", fl.side);
    set_if(h, "count", fl.count);
    set_if(h, "sketch_dim", fl.dim);
    set_if(h, "trials", fl.trials);
    if (!h.contains("family")) fail(ErrorCode::BadConfig, "$.harddist: missing required field 'family'");
  });
}

int harddist_gen(const Common& com, const HardFlags& fl) {
  Run run = hard_resolve(com, fl);
  const auto setup = hard_setup(run, fl);
  const json& h = run.cfg["harddist"];
  const std::string side = h.value("side", "both");
  const std::size_t count = h.value("count", std::size_t{10});
  std::ofstream f(run.out / "instances.jsonl");
  const std::uint64_t s = derive_seed(run.seed, "cli/harddist/instances");
  std::size_t held = 0, total = 0;
  for (std::size_t i = 0; i < count; ++i)
    for (auto sd : {harddist::Side::D1, harddist::Side::D2}) {
      if (side != "both" && side != harddist::to_string(sd)) continue;
      const auto inst = harddist::gen_hard_instance(setup, sd, s, i);
      json line = inst;
      line["gap_event"] = harddist::verify_gap_event(setup, inst);
      held += line["gap_event"]["event_holds"].get<bool>();
      ++total;
      f << line.dump() << '\n';
    }
  std::cout << total << " instances, gap event holds for " << held << '\n';
  return 0;
}

int harddist_gap(const Common& com, const HardFlags& fl) {
  Run run = hard_resolve(com, fl);
  const auto setup = hard_setup(run, fl);
  const std::size_t count = run.cfg["harddist"].value("count", std::size_t{100});
  const auto b = harddist::verify_pairs(setup, count, derive_seed(run.seed, "cli/harddist/pairs"), run.threads);
  json j = b;
  j["required"] = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(count)));
  write_json(run.out / "gap.json", j);
  std::cout << harddist::to_string(setup.family.kind) << ": D1 " << b.d1_holds << ", D2 " << b.d2_holds << ", both " << b.both
            << " of " << count << '\n';
  return b.both >= j["required"].get<std::size_t>() ? 0 : kThresholdFailure;
}

int harddist_tvd(const Common& com, const HardFlags& fl) {
  Run run = hard_resolve(com, fl);
  const auto setup = hard_setup(run, fl);
  const json& h = run.cfg["harddist"];
  const auto t = harddist::sketched_indistinguishability(setup, h.value("sketch_dim", std::size_t{1}),
                                                          h.value("trials", std::size_t{100000}),
                                                          derive_seed(run.seed, "cli/harddist/tvd"), run.threads);
  write_json(run.out / "tvd.json", t);
  std::cout << "TVD " << t.value << " +- " << t.halfwidth << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// stats

struct StatsFlags {
  std::string check;
  std::optional<std::size_t> n, r, trials, z_max;
  std::optional<std::int64_t> M;
  std::optional<double> C;
  std::vector<double> sigma2;
};

int stats_check(const Common& com, const StatsFlags& fl) {
  Run run = resolve(com, [&](json& c) {
    json& s = c["stats"];
    if (s.is_null()) s = json::object();
    if (!fl.check.empty()) s["check"] = fl.check;
    set_if(s, "n", fl.n);
    set_if(s, "r", fl.r);
    set_if(s, "trials", fl.trials);
    set_if(s, "z_max", fl.z_max);
    set_if(s, "M", fl.M);
    set_if(s, "C", fl.C);
    if (fl.sigma2.size() == 1) s["sigma2"] = fl.sigma2.front();
    else if (!fl.sigma2.empty()) s["sigma2"] = fl.sigma2;
    if (!s.contains("check")) fail(ErrorCode::BadConfig, "$.stats: missing required field 'check'");
  });
  json& s = run.cfg["stats"];
  const std::string check = s["check"];
  const auto scalar = [&](double d) { return s.contains("sigma2") ? (s["sigma2"].is_array() ? s["sigma2"][0].get<double>() : s["sigma2"].get<double>()) : d; };
  json rep;
  bool passed = false;
  if (check == "pmf-ratio") {
    s.emplace("n", 10), s.emplace("C", 2.0), s["sigma2"] = scalar(1e4);
    const auto p = stats::pmf_ratio_check(s["sigma2"], s["n"], s["C"], s.value("z_max", std::int64_t{-1}));
    rep = p;
    passed = p.passed;
    std::cout << "pmf ratio: max deviation " << p.max_dev << " (per coordinate " << p.max_dev_1d << "), bound " << p.bound << '\n';
  } else if (check == "normalizer") {
    if (!s.contains("sigma2")) s["sigma2"] = {0.5, 1.0, 4.0, 100.0, 1e6};
    if (!s["sigma2"].is_array()) s["sigma2"] = json::array({s["sigma2"]});
    passed = true;
    for (double v : s["sigma2"]) {
      const double Z = dgauss::normalizer_1d(v), g = std::sqrt(2.0 * std::numbers::pi * v);
      const bool ok = Z >= std::max(g, 1.0) && Z <= g + 1.0;
      passed = passed && ok;
      rep["values"].push_back({{"sigma2", v}, {"Z", Z}, {"lower", std::max(g, 1.0)}, {"upper", g + 1.0}, {"ok", ok}});
      std::cout << "Z(" << v << ") = " << Z << (ok ? "" : "  OUT OF BOUNDS") << '\n';
    }
    rep["passed"] = passed;
  } else {
    s.emplace("r", 2), s.emplace("n", 8), s.emplace("M", 3), s.emplace("trials", 100000), s["sigma2"] = scalar(1e8);
    const std::size_t r = s["r"], n = s["n"];
    const std::int64_t M = s["M"];
    if (r >= n) fail(ErrorCode::BadConfig, "$.stats.r: must be below n");
    Rng rng = make_rng(run.seed, "cli/stats");
    lattice::IntMatrix A;
    do {
      A = lattice::IntMatrix(r, n);
      for (auto& v : A.data) v = uniform_int(rng, -M, M);
      A.bound = M;
    } while (A.max_abs() == 0 || [&] {
      std::vector<lattice::BigVec> rows;
      for (std::size_t i = 0; i < r; ++i) rows.push_back(lattice::to_big(A.row(i)));
      return lattice::rank(rows) < r;
    }());
    const auto c = stats::cell_lemma_check(A, s["sigma2"].get<double>() * numerics::Mat::Identity(n, n), s["trials"],
                                           derive_seed(run.seed, "cli/stats", 1));
    rep = c;
    rep["A"] = A;
    passed = c.passed;
    std::cout << "cell lemma: " << (c.tvd ? "TVD " + std::to_string(c.tvd->value) : "energy test")
              << (c.rounding_tvd ? ", rounding TVD " + std::to_string(c.rounding_tvd->value) : "") << ", threshold "
              << c.threshold << '\n';
  }
  write_json(run.out / "config.json", run.cfg);
  write_json(run.out / (check + ".json"), rep);
  std::cout << (passed ? "PASS" : "FAIL") << '\n';
  return passed ? 0 : kThresholdFailure;
}

// ---------------------------------------------------------------------------
// suite

int suite_acceptance(const Common& com, const std::vector<int>& only) {
  Run run = resolve(com, [&](json& c) {
    if (!only.empty()) c["suite"]["only"] = only;
  });
  acceptance::Options o;
  o.seed = run.seed;
  o.threads = run.threads;
  if (run.cfg.contains("suite"))
    for (int id : run.cfg["suite"].value("only", std::vector<int>{})) o.only.insert(id);
  write_json(run.out / "config.json", run.cfg);
  std::ostringstream log;
  struct Tee : std::streambuf {
    std::streambuf *a, *b;
    int overflow(int c) override { return a->sputc(static_cast<char>(c)) == EOF || b->sputc(static_cast<char>(c)) == EOF ? EOF : c; }
  } tee;
  tee.a = std::cout.rdbuf();
  tee.b = log.rdbuf();
  std::ostream both(&tee);
  const auto results = acceptance::run(o, both);
  std::size_t passed = 0;
  for (const auto& r : results) passed += r.passed;
  both << passed << "/" << results.size() << " criteria passed" << std::endl;
  write_json(run.out / "acceptance.json", results);
  write_text(run.out / "report.txt", log.str());
  return passed == results.size() ? 0 : kThresholdFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advsketch: adaptive attacks on integer linear sketches, hard distributions and statistical checks"};
  app.require_subcommand(1);
  Common com;

  auto* attack = app.add_subcommand("attack", "adaptive attack on a gap-norm oracle")->require_subcommand(1);
  AttackFlags af;
  auto* arun = attack->add_subcommand("run", "run the attack and verify any certificate");
  add_common(arun, com);
  arun->add_option("--oracle", af.oracle, "sketch | ground-truth");
  arun->add_option("--family", af.family, "sketch family");
  arun->add_option("--n", af.n);
  arun->add_option("--r", af.r);
  arun->add_option("--B", af.B);
  arun->add_option("--alpha", af.alpha, "auto or a number");
  arun->add_option("--m", af.m, "queries per grid point");
  arun->add_option("--grid", af.grid, "geometric | fine | explicit");
  arun->add_option("--grid-points", af.points);
  arun->add_option("--runs", af.runs);
  arun->add_option("--trials", af.trials, "verification trials");
  arun->add_option("--keep", af.keep, "exploits kept per run");

  auto* averify = attack->add_subcommand("verify", "re-verify certificates from certificate.json");
  add_common(averify, com);
  std::string cert_path;
  std::optional<std::size_t> vtrials;
  std::size_t vkeep = 20;
  averify->add_option("--certificate", cert_path, "certificate.json from attack run")->required();
  averify->add_option("--trials", vtrials);
  averify->add_option("--keep", vkeep);

  auto* sk = app.add_subcommand("sketch", "integer sketches")->require_subcommand(1);
  auto* sbuild = sk->add_subcommand("build", "build a sketch (uses the attack block of the config)");
  add_common(sbuild, com);
  sbuild->add_option("--family", af.family);
  sbuild->add_option("--n", af.n);
  sbuild->add_option("--r", af.r);
  sbuild->add_option("--B", af.B);
  sbuild->add_option("--alpha", af.alpha);
  auto* sinfo = sk->add_subcommand("info", "summarize a sketch.json");
  std::string sketch_path;
  sinfo->add_option("sketch", sketch_path, "sketch.json")->required();

  auto* hd = app.add_subcommand("harddist", "hard input distributions")->require_subcommand(1);
  HardFlags hf;
  const auto hard_opts = [&](CLI::App* c) {
    add_common(c, com);
    c->add_option("--family", hf.family);
    c->add_option("--n", hf.n);
    c->add_option("--eps", hf.eps);
    c->add_option("--N", hf.N);
    c->add_option("--count", hf.count);
  };
  auto* hgen = hd->add_subcommand("gen", "draw instances (instances.jsonl)");
  hard_opts(hgen);
  hgen->add_option("--side", hf.side, "D1 | D2 | both");
  auto* hgap = hd->add_subcommand("gap", "check the gap event on D1/D2 pairs");
  hard_opts(hgap);
  auto* htvd = hd->add_subcommand("tvd", "TVD of sketched D1 vs D2");
  hard_opts(htvd);
  htvd->add_option("--dim", hf.dim, "sketch dimension (1-3)");
  htvd->add_option("--trials", hf.trials);

  auto* st = app.add_subcommand("stats", "statistical checks")->require_subcommand(1);
  StatsFlags sf;
  auto* scheck = st->add_subcommand("check", "pmf-ratio | normalizer | cell-lemma");
  add_common(scheck, com);
  scheck->add_option("check", sf.check);
  scheck->add_option("--n", sf.n);
  scheck->add_option("--r", sf.r);
  scheck->add_option("--C", sf.C);
  scheck->add_option("--sigma2", sf.sigma2);
  scheck->add_option("--z-max", sf.z_max);
  scheck->add_option("--M", sf.M);
  scheck->add_option("--trials", sf.trials);

  auto* suite = app.add_subcommand("suite", "batteries")->require_subcommand(1);
  auto* sacc = suite->add_subcommand("acceptance", "run the acceptance battery");
  add_common(sacc, com);
  std::vector<int> only;
  sacc->add_option("--only", only, "criterion numbers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (arun->parsed()) return attack_run(com, af);
    if (averify->parsed()) return attack_verify(com, cert_path, vtrials, vkeep);
    if (sbuild->parsed()) return sketch_build(com, af);
    if (sinfo->parsed()) return sketch_info(sketch_path);
    if (hgen->parsed()) return harddist_gen(com, hf);
    if (hgap->parsed()) return harddist_gap(com, hf);
    if (htvd->parsed()) return harddist_tvd(com, hf);
    if (scheck->parsed()) return stats_check(com, sf);
    if (sacc->parsed()) return suite_acceptance(com, only);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
