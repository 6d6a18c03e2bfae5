#pragma once

// Exact integer lattice machinery for sketch matrices A in Z^{r x n}:
// kernel lattices L^perp(A) = {x in Z^n : Ax = 0}, LLL reduction, short
// kernel vectors within the Siegel bound, the sketch preprocessing step, and
// rounding onto the column lattice A Z^n.
//
// All certification paths use GMP integers; floating point appears only in
// the rounding geometry of CellRounder (dimension r).

#include <gmpxx.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "advsketch/error.hpp"
#include "advsketch/rng.hpp"

namespace advsketch::lattice {

using BigInt = mpz_class;
using BigVec = std::vector<BigInt>;

// ---------------------------------------------------------------------------
// Integer matrices

struct IntMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int64_t> data;  // row-major
  std::int64_t bound = 0;          // declared entry bound M

  IntMatrix() = default;
  IntMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}

  static IntMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rs) {
    IntMatrix m(rs.size(), rs.empty() ? 0 : rs.front().size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      require(rs[i].size() == m.cols, ErrorCode::DimensionMismatch, "ragged rows");
      std::copy(rs[i].begin(), rs[i].end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
    }
    m.bound = m.max_abs();
    return m;
  }

  std::int64_t& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  std::int64_t operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::vector<std::int64_t> row(std::size_t i) const {
    return {data.begin() + static_cast<std::ptrdiff_t>(i * cols),
            data.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols)};
  }

  std::int64_t max_abs() const {
    std::int64_t m = 0;
    for (auto v : data) m = std::max<std::int64_t>(m, v < 0 ? -v : v);
    return m;
  }

  // Bound used in length guarantees: the declared M if set, else max |entry|.
  std::int64_t effective_bound() const { return bound > 0 ? std::max(bound, max_abs()) : max_abs(); }

  Eigen::MatrixXd to_real() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>((*this)(i, j));
    return m;
  }

  std::vector<std::vector<std::int64_t>> to_rows() const {
    std::vector<std::vector<std::int64_t>> out;
    for (std::size_t i = 0; i < rows; ++i) out.push_back(row(i));
    return out;
  }
};

inline void to_json(nlohmann::json& j, const IntMatrix& m) { j = m.to_rows(); }
inline void from_json(const nlohmann::json& j, IntMatrix& m) {
  m = IntMatrix::from_rows(j.get<std::vector<std::vector<std::int64_t>>>());
}

// ---------------------------------------------------------------------------
// Big-integer vector helpers

inline BigVec to_big(const std::vector<std::int64_t>& v) {
  BigVec out;
  out.reserve(v.size());
  for (auto x : v) out.emplace_back(static_cast<long>(x));
  return out;
}

inline BigInt dot(const BigVec& a, const BigVec& b) {
  BigInt s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline BigInt sq_norm(const BigVec& a) { return dot(a, a); }

inline double norm(const BigVec& a) { return std::sqrt(sq_norm(a).get_d()); }

inline BigInt linf(const BigVec& a) {
  BigInt m = 0;
  for (const auto& x : a) {
    BigInt t = abs(x);
    if (t > m) m = t;
  }
  return m;
}

inline bool is_zero(const BigVec& a) {
  return std::all_of(a.begin(), a.end(), [](const BigInt& x) { return x == 0; });
}

inline void axpy(BigVec& y, const BigInt& q, const BigVec& x) {  // y -= q x
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= q * x[i];
}

// Nearest integer to a/b (b > 0), ties away from zero are irrelevant here.
inline BigInt round_div(const BigInt& a, const BigInt& b) {
  BigInt num = 2 * a + b;
  BigInt den = 2 * b;
  BigInt q;
  mpz_fdiv_q(q.get_mpz_t(), num.get_mpz_t(), den.get_mpz_t());
  return q;
}

inline BigVec mat_vec(const IntMatrix& A, const BigVec& x) {
  BigVec y(A.rows, 0);
  for (std::size_t i = 0; i < A.rows; ++i)
    for (std::size_t j = 0; j < A.cols; ++j)
      if (A(i, j) != 0) y[i] += BigInt(static_cast<long>(A(i, j))) * x[j];
  return y;
}

inline std::vector<std::int64_t> to_int64(const BigVec& v) {
  std::vector<std::int64_t> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    require(x.fits_slong_p(), ErrorCode::BadParams, "integer exceeds 64 bits");
    out.push_back(x.get_si());
  }
  return out;
}

inline std::vector<double> to_double(const BigVec& v) {
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(x.get_d());
  return out;
}

// Rank by fraction-free (Bareiss) elimination.
inline std::size_t rank(std::vector<BigVec> m) {
  if (m.empty()) return 0;
  const std::size_t rows = m.size(), cols = m.front().size();
  std::size_t r = 0;
  BigInt prev = 1;
  for (std::size_t c = 0; c < cols && r < rows; ++c) {
    std::size_t p = r;
    while (p < rows && m[p][c] == 0) ++p;
    if (p == rows) continue;
    std::swap(m[p], m[r]);
    for (std::size_t i = r + 1; i < rows; ++i) {
      for (std::size_t j = c + 1; j < cols; ++j) {
        m[i][j] = (m[r][c] * m[i][j] - m[i][c] * m[r][j]);
        mpz_divexact(m[i][j].get_mpz_t(), m[i][j].get_mpz_t(), prev.get_mpz_t());
      }
      m[i][c] = 0;
    }
    prev = m[r][c];
    ++r;
  }
  return r;
}

// Canonical row Hermite normal form of the lattice generated by the rows.
// Two generating sets span the same lattice iff their HNFs are equal.
// If `transform` is given it receives U with U * rows == [H; 0].
inline std::vector<BigVec> row_hnf(std::vector<BigVec> m, std::vector<BigVec>* transform = nullptr) {
  const std::size_t k = m.size();
  if (k == 0) return {};
  const std::size_t n = m.front().size();
  std::vector<BigVec> U;
  if (transform) {
    U.assign(k, BigVec(k, 0));
    for (std::size_t i = 0; i < k; ++i) U[i][i] = 1;
  }
  auto sub = [&](std::size_t i, const BigInt& q, std::size_t p) {
    axpy(m[i], q, m[p]);
    if (transform) axpy(U[i], q, U[p]);
  };
  std::size_t r = 0;
  for (std::size_t c = 0; c < n && r < k; ++c) {
    for (;;) {
      std::size_t piv = k;
      for (std::size_t i = r; i < k; ++i)
        if (m[i][c] != 0 && (piv == k || abs(m[i][c]) < abs(m[piv][c]))) piv = i;
      if (piv == k) break;
      std::swap(m[piv], m[r]);
      if (transform) std::swap(U[piv], U[r]);
      bool clean = true;
      for (std::size_t i = r + 1; i < k; ++i) {
        if (m[i][c] == 0) continue;
        BigInt q;
        mpz_fdiv_q(q.get_mpz_t(), m[i][c].get_mpz_t(), m[r][c].get_mpz_t());
        sub(i, q, r);
        if (m[i][c] != 0) clean = false;
      }
      if (clean) break;
    }
    if (m[r][c] == 0) continue;
    if (m[r][c] < 0) {
      for (auto& x : m[r]) x = -x;
      if (transform)
        for (auto& x : U[r]) x = -x;
    }
    for (std::size_t i = 0; i < r; ++i) {
      BigInt q;
      mpz_fdiv_q(q.get_mpz_t(), m[i][c].get_mpz_t(), m[r][c].get_mpz_t());
      if (q != 0) sub(i, q, r);
    }
    ++r;
  }
  m.resize(r);
  if (transform) *transform = std::move(U);
  return m;
}

inline bool same_lattice(const std::vector<BigVec>& a, const std::vector<BigVec>& b) {
  return row_hnf(a) == row_hnf(b);
}

// ---------------------------------------------------------------------------
// Kernel lattices

struct KernelBasis {
  std::size_t n = 0;
  std::vector<BigVec> vectors;

  std::size_t size() const { return vectors.size(); }
  std::vector<double> lengths() const {
    std::vector<double> out;
    for (const auto& v : vectors) out.push_back(norm(v));
    return out;
  }
  double max_length() const {
    double m = 0.0;
    for (const auto& v : vectors) m = std::max(m, norm(v));
    return m;
  }
  // Exact check: every vector is in ker(A) and the set is independent.
  bool certify(const IntMatrix& A) const {
    for (const auto& v : vectors)
      if (v.size() != A.cols || !is_zero(mat_vec(A, v))) return false;
    return rank(vectors) == vectors.size();
  }
};

inline void to_json(nlohmann::json& j, const KernelBasis& k) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& v : k.vectors) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& x : v) {
      if (x.fits_slong_p())
        row.push_back(x.get_si());
      else
        row.push_back(x.get_str());
    }
    rows.push_back(row);
  }
  j = {{"n", k.n}, {"vectors", rows}};
}

// Basis of L^perp(A) from unimodular column reduction A U = [H | 0]: the
// trailing columns of U are a lattice basis of the integer kernel.
inline KernelBasis integer_kernel_basis(const IntMatrix& A) {
  const std::size_t r = A.rows, n = A.cols;
  require(n > 0, ErrorCode::DimensionMismatch, "matrix has no columns");
  std::vector<BigVec> W(r, BigVec(n));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) W[i][j] = static_cast<long>(A(i, j));
  std::vector<BigVec> U(n, BigVec(n, 0));  // U[j] is column j
  for (std::size_t j = 0; j < n; ++j) U[j][j] = 1;

  auto col_sub = [&](std::size_t dst, const BigInt& q, std::size_t src, std::size_t from_row) {
    for (std::size_t i = from_row; i < r; ++i) W[i][dst] -= q * W[i][src];
    axpy(U[dst], q, U[src]);
  };
  auto col_swap = [&](std::size_t a, std::size_t b, std::size_t from_row) {
    if (a == b) return;
    for (std::size_t i = from_row; i < r; ++i) std::swap(W[i][a], W[i][b]);
    std::swap(U[a], U[b]);
  };

  std::size_t pc = 0;
  for (std::size_t i = 0; i < r && pc < n; ++i) {
    for (;;) {
      std::size_t piv = n;
      for (std::size_t j = pc; j < n; ++j)
        if (W[i][j] != 0 && (piv == n || abs(W[i][j]) < abs(W[i][piv]))) piv = j;
      if (piv == n) break;
      col_swap(piv, pc, i);
      bool clean = true;
      for (std::size_t j = pc + 1; j < n; ++j) {
        if (W[i][j] == 0) continue;
        col_sub(j, round_div(W[i][j] * sgn(W[i][pc]), abs(W[i][pc])), pc, i);
        if (W[i][j] != 0) clean = false;
      }
      if (clean) {
        ++pc;
        break;
      }
    }
  }
  if (pc == n) fail(ErrorCode::FullRank, "kernel is trivial");
  KernelBasis k;
  k.n = n;
  for (std::size_t j = pc; j < n; ++j) k.vectors.push_back(U[j]);
  return k;
}

// ---------------------------------------------------------------------------
// LLL (integral variant: all Gram-Schmidt data kept as exact integers
// d_i and lambda_{ij} = d_j mu_{ij}). delta = p/q.

struct LllOptions {
  long delta_num = 99;
  long delta_den = 100;
};

inline void lll_reduce(std::vector<BigVec>& b, const LllOptions& opt = {}, std::vector<BigVec>* transform = nullptr) {
  const std::size_t K = b.size();
  if (K == 0) return;
  if (transform) {
    transform->assign(K, BigVec(K, 0));
    for (std::size_t i = 0; i < K; ++i) (*transform)[i][i] = 1;
  }
  // 1-indexed storage to follow the usual presentation.
  std::vector<BigInt> d(K + 1);
  std::vector<std::vector<BigInt>> lam(K + 1, std::vector<BigInt>(K + 1));
  auto B = [&](std::size_t i) -> BigVec& { return b[i - 1]; };
  const BigInt p = opt.delta_num, q = opt.delta_den;

  auto red = [&](std::size_t k, std::size_t l) {
    BigInt two_abs = 2 * abs(lam[k][l]);
    if (two_abs <= d[l]) return;
    BigInt qq = round_div(lam[k][l], d[l]);
    axpy(B(k), qq, B(l));
    if (transform) axpy((*transform)[k - 1], qq, (*transform)[l - 1]);
    lam[k][l] -= qq * d[l];
    for (std::size_t i = 1; i < l; ++i) lam[k][i] -= qq * lam[l][i];
  };

  std::size_t kmax = 1;
  auto swapk = [&](std::size_t k) {
    std::swap(B(k), B(k - 1));
    if (transform) std::swap((*transform)[k - 1], (*transform)[k - 2]);
    for (std::size_t j = 1; j + 2 <= k; ++j) std::swap(lam[k][j], lam[k - 1][j]);
    const BigInt l = lam[k][k - 1];
    BigInt Bv = (d[k - 2] * d[k] + l * l);
    mpz_divexact(Bv.get_mpz_t(), Bv.get_mpz_t(), d[k - 1].get_mpz_t());
    for (std::size_t i = k + 1; i <= kmax; ++i) {
      const BigInt t = lam[i][k];
      BigInt a = d[k] * lam[i][k - 1] - l * t;
      mpz_divexact(a.get_mpz_t(), a.get_mpz_t(), d[k - 1].get_mpz_t());
      lam[i][k] = a;
      BigInt c = Bv * t + l * lam[i][k];
      mpz_divexact(c.get_mpz_t(), c.get_mpz_t(), d[k].get_mpz_t());
      lam[i][k - 1] = c;
    }
    d[k - 1] = Bv;
  };

  d[0] = 1;
  d[1] = sq_norm(B(1));
  if (d[1] == 0) fail(ErrorCode::DependentInput, "zero vector in basis");
  std::size_t k = 2;
  while (k <= K) {
    if (k > kmax) {
      kmax = k;
      for (std::size_t j = 1; j <= k; ++j) {
        BigInt u = dot(B(k), B(j));
        for (std::size_t i = 1; i < j; ++i) {
          u = d[i] * u - lam[k][i] * lam[j][i];
          mpz_divexact(u.get_mpz_t(), u.get_mpz_t(), d[i - 1].get_mpz_t());
        }
        if (j < k)
          lam[k][j] = u;
        else {
          d[k] = u;
          if (u == 0) fail(ErrorCode::DependentInput, "basis vectors are linearly dependent");
        }
      }
    }
    red(k, k - 1);
    if (q * d[k] * d[k - 2] < p * d[k - 1] * d[k - 1] - q * lam[k][k - 1] * lam[k][k - 1]) {
      swapk(k);
      k = std::max<std::size_t>(2, k - 1);
      continue;
    }
    for (std::size_t l = k - 1; l-- > 1;) red(k, l);
    ++k;
  }
}

// LLL with delta = 0.99, output sorted by Euclidean norm (ties: lexicographic
// on the vector for determinism). The lattice is unchanged.
inline std::vector<BigVec> reduce_basis(std::vector<BigVec> b) {
  if (b.empty()) return b;
  lll_reduce(b);
  std::stable_sort(b.begin(), b.end(), [](const BigVec& x, const BigVec& y) { return sq_norm(x) < sq_norm(y); });
  return b;
}

inline KernelBasis reduce_basis(KernelBasis k) {
  k.vectors = reduce_basis(std::move(k.vectors));
  return k;
}

// ---------------------------------------------------------------------------
// Short kernel vectors

// (nM)^{r/(n-r)}: some nonzero x in ker(A) has |x_i| at most this.
inline double siegel_bound(std::size_t n, std::size_t r, std::int64_t M) {
  require(n > r, ErrorCode::FullRank, "need n > r");
  return std::pow(static_cast<double>(n) * static_cast<double>(std::max<std::int64_t>(M, 1)),
                  static_cast<double>(r) / static_cast<double>(n - r));
}

struct ShortVector {
  BigVec x;
  std::int64_t linf = 0;
  double bound = 0.0;
  std::string method;  // "lll" or "pigeonhole"
};

namespace detail {

// Constructive pigeonhole: draw y in {0..B}^n until two draws share A y;
// their difference is a kernel vector with entries in [-B, B].
inline std::optional<BigVec> pigeonhole_search(const IntMatrix& A, std::int64_t B, std::uint64_t seed,
                                               std::size_t budget) {
  if (B < 1) return std::nullopt;
  const std::size_t r = A.rows, n = A.cols;
  Rng rng(seed);
  std::unordered_map<std::uint64_t, std::size_t> seen;
  std::vector<std::int64_t> ys;  // stored draws, n per entry
  std::vector<std::int64_t> y(n), img(r);
  seen.reserve(budget);
  for (std::size_t s = 0; s < budget; ++s) {
    for (auto& v : y) v = uniform_int(rng, 0, B);
    std::uint64_t h = 0x12345;
    for (std::size_t i = 0; i < r; ++i) {
      __int128 acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += static_cast<__int128>(A(i, j)) * y[j];
      img[i] = static_cast<std::int64_t>(acc);
      h = splitmix64(h ^ static_cast<std::uint64_t>(img[i]));
    }
    auto it = seen.find(h);
    if (it != seen.end()) {
      const std::int64_t* z = ys.data() + it->second * n;
      BigVec diff(n);
      bool nonzero = false;
      for (std::size_t j = 0; j < n; ++j) {
        diff[j] = static_cast<long>(y[j] - z[j]);
        nonzero = nonzero || y[j] != z[j];
      }
      if (nonzero && is_zero(mat_vec(A, diff))) return diff;
      continue;
    }
    seen.emplace(h, ys.size() / n);
    ys.insert(ys.end(), y.begin(), y.end());
  }
  return std::nullopt;
}

}  // namespace detail

// Nonzero kernel vector with small l-infinity norm. LLL candidates (basis
// vectors and pairwise sums/differences) are tried first; if none meets the
// Siegel bound a pigeonhole search over {0..B}^n is run. M is max |entry|.
inline ShortVector short_kernel_vector(const IntMatrix& A, std::uint64_t seed = 1) {
  KernelBasis kb = reduce_basis(integer_kernel_basis(A));
  ShortVector out;
  out.bound = siegel_bound(A.cols, A.rows, A.max_abs());
  BigInt best_inf = -1;
  auto consider = [&](const BigVec& v) {
    if (is_zero(v)) return;
    BigInt li = linf(v);
    if (best_inf < 0 || li < best_inf || (li == best_inf && sq_norm(v) < sq_norm(out.x))) {
      best_inf = li;
      out.x = v;
    }
  };
  const auto& b = kb.vectors;
  for (const auto& v : b) consider(v);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = i + 1; j < b.size(); ++j) {
      BigVec s = b[i], t = b[i];
      for (std::size_t c = 0; c < s.size(); ++c) {
        s[c] += b[j][c];
        t[c] -= b[j][c];
      }
      consider(s);
      consider(t);
    }
  out.method = "lll";
  // Tolerance guards against pow() rounding when the bound is an integer.
  const double tol = 1e-9 * std::max(1.0, out.bound);
  if (best_inf.get_d() > out.bound + tol) {
    const auto B = static_cast<std::int64_t>(std::floor(out.bound + tol));
    if (auto hit = detail::pigeonhole_search(A, B, seed, 4'000'000)) {
      out.x = *hit;
      best_inf = linf(out.x);
      out.method = "pigeonhole";
    }
  }
  out.linf = best_inf.get_si();
  if (best_inf.get_d() > out.bound + tol)
    fail(ErrorCode::BoundViolated, "best l-inf " + best_inf.get_str() + " above " + std::to_string(out.bound));
  return out;
}

// ---------------------------------------------------------------------------
// Sketch preprocessing

struct PreprocessOptions {
  double length_bound = 0.0;  // 0: sqrt(n) * M
};

struct Preprocessed {
  IntMatrix A_prime;      // rows of A followed by any added rows
  KernelBasis kernel;     // basis of L^perp(A_prime), sorted by length
  std::size_t rows_added = 0;
  double length_bound = 0.0;
  double certified_length = 0.0;  // max length in `kernel`
  std::int64_t added_entry_bound = 0;
};

// Produces A' (at most 4r rows, containing A) whose kernel lattice has a
// basis of at least n - 4r vectors of length <= sqrt(n) M. When the reduced
// kernel basis of A already meets the bound, A' = A. Otherwise the n - 4r
// shortest reduced vectors are kept and A is extended by an integer basis of
// the part of ker(A) orthogonal to them.
inline Preprocessed preprocess_sketch(const IntMatrix& A, const PreprocessOptions& opt = {}) {
  const std::size_t r = A.rows, n = A.cols;
  require(4 * r <= n, ErrorCode::TooManyRows, "need r <= n/4");
  Preprocessed out;
  out.length_bound = opt.length_bound > 0.0
                         ? opt.length_bound
                         : std::sqrt(static_cast<double>(n)) * static_cast<double>(A.effective_bound());
  KernelBasis kb = reduce_basis(integer_kernel_basis(A));
  const double tol = 1e-9 * out.length_bound;
  if (kb.max_length() <= out.length_bound + tol) {
    out.A_prime = A;
    out.kernel = std::move(kb);
    out.certified_length = out.kernel.max_length();
    return out;
  }
  const std::size_t keep = n - 4 * r;
  if (keep > kb.size() || (keep > 0 && norm(kb.vectors[keep - 1]) > out.length_bound + tol)) {
    const double best = keep > 0 && keep <= kb.size() ? norm(kb.vectors[keep - 1]) : kb.max_length();
    throw LengthBoundError("kept kernel vectors exceed the length bound", best, out.length_bound);
  }
  KernelBasis kept;
  kept.n = n;
  kept.vectors.assign(kb.vectors.begin(), kb.vectors.begin() + static_cast<std::ptrdiff_t>(keep));

  // Rows spanning ker(A) intersected with span(kept)^perp.
  IntMatrix stacked(r + keep, n);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) stacked(i, j) = A(i, j);
  for (std::size_t i = 0; i < keep; ++i) {
    auto row = to_int64(kept.vectors[i]);
    for (std::size_t j = 0; j < n; ++j) stacked(r + i, j) = row[j];
  }
  std::vector<BigVec> extra;
  {
    std::vector<BigVec> rows;
    for (std::size_t i = 0; i < stacked.rows; ++i) rows.push_back(to_big(stacked.row(i)));
    if (rank(rows) < n) extra = reduce_basis(integer_kernel_basis(stacked).vectors);
  }
  out.rows_added = extra.size();
  require(r + extra.size() <= 4 * r, ErrorCode::BadParams, "preprocessing added too many rows");
  out.A_prime = IntMatrix(r + extra.size(), n);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out.A_prime(i, j) = A(i, j);
  for (std::size_t i = 0; i < extra.size(); ++i) {
    auto row = to_int64(extra[i]);
    for (std::size_t j = 0; j < n; ++j) {
      out.A_prime(r + i, j) = row[j];
      out.added_entry_bound = std::max<std::int64_t>(out.added_entry_bound, std::abs(row[j]));
    }
  }
  out.A_prime.bound = out.A_prime.max_abs();
  out.kernel = std::move(kept);
  out.certified_length = out.kernel.max_length();
  require(out.kernel.certify(out.A_prime), ErrorCode::BadParams, "kernel certificate failed");
  return out;
}

// ---------------------------------------------------------------------------
// Column lattice A Z^n in R^r (optionally mapped by a real r x r transform T,
// e.g. the change of basis to orthonormal rows).

struct RoundResult {
  std::vector<std::int64_t> coeffs;  // over the reduced basis
  std::vector<std::int64_t> z;       // generator coefficients, point = T A z
  Eigen::VectorXd point;
  bool exact = true;
};

class CellRounder {
 public:
  explicit CellRounder(const IntMatrix& A, const Eigen::MatrixXd& T = Eigen::MatrixXd())
      : r_(A.rows), n_(A.cols) {
    require(r_ > 0 && n_ > 0, ErrorCode::DegenerateLattice, "empty matrix");
    // Row HNF of A^T gives a basis of the column lattice plus generator
    // coefficients for each basis vector.
    std::vector<BigVec> cols(n_, BigVec(r_));
    for (std::size_t j = 0; j < n_; ++j)
      for (std::size_t i = 0; i < r_; ++i) cols[j][i] = static_cast<long>(A(i, j));
    std::vector<BigVec> U;
    std::vector<BigVec> H = row_hnf(cols, &U);
    if (H.size() < r_) fail(ErrorCode::DegenerateLattice, "column lattice is not full rank");
    std::vector<BigVec> Hred = H, Ul;
    lll_reduce(Hred, {}, &Ul);
    int_basis_.resize(r_);
    gen_coeffs_.assign(r_, BigVec(n_, 0));
    for (std::size_t k = 0; k < r_; ++k) {
      int_basis_[k] = Hred[k];
      for (std::size_t t = 0; t < r_; ++t)
        if (Ul[k][t] != 0) axpy(gen_coeffs_[k], -Ul[k][t], U[t]);
    }
    Eigen::MatrixXd Bint(static_cast<Eigen::Index>(r_), static_cast<Eigen::Index>(r_));
    for (std::size_t k = 0; k < r_; ++k)
      for (std::size_t i = 0; i < r_; ++i) Bint(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = Hred[k][i].get_d();
    T_ = T.size() == 0 ? Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(r_), static_cast<Eigen::Index>(r_)) : T;
    require(T_.rows() == static_cast<Eigen::Index>(r_) && T_.cols() == static_cast<Eigen::Index>(r_),
            ErrorCode::DimensionMismatch, "transform must be r x r");
    basis_ = T_ * Bint;
    real_lll();
    for (std::size_t i = 0; i < r_; ++i) {
      std::int64_t g = 0;
      for (std::size_t j = 0; j < n_; ++j) g = std::gcd(g, A(i, j));
      unit_.push_back(g);
    }
    gso();
    inv_ = basis_.inverse();
  }

  std::size_t dim() const { return r_; }
  // Columns are the reduced basis vectors.
  const Eigen::MatrixXd& basis() const { return basis_; }
  // Per-axis unit distances gcd(row_i(A)) of the untransformed lattice.
  const std::vector<std::int64_t>& unit_distances() const { return unit_; }

  // Nearest lattice point. Exact enumeration for r <= 4, otherwise Babai's
  // nearest plane refined over +-1 moves on each coordinate.
  RoundResult round(const Eigen::VectorXd& y) const {
    require(y.size() == static_cast<Eigen::Index>(r_), ErrorCode::DimensionMismatch, "target length");
    std::vector<std::int64_t> c = babai(y);
    double best = (point_of(c) - y).squaredNorm();
    RoundResult out;
    if (r_ <= 4) {
      std::vector<std::int64_t> cur(r_);
      enumerate(y, static_cast<int>(r_) - 1, cur, c, best, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r_)));
    } else {
      out.exact = false;
      for (std::size_t i = 0; i < r_; ++i)
        for (int s : {-1, 1}) {
          auto t = c;
          t[i] += s;
          double dd = (point_of(t) - y).squaredNorm();
          if (dd < best) {
            best = dd;
            c = t;
          }
        }
    }
    out.coeffs = c;
    out.point = point_of(c);
    out.z = generator_coeffs(c);
    return out;
  }

  // Canonical point of the fundamental cell {B u : u in [0,1)^r} containing y.
  RoundResult cell_of(const Eigen::VectorXd& y) const {
    Eigen::VectorXd u = inv_ * y;
    RoundResult out;
    out.coeffs.resize(r_);
    for (std::size_t i = 0; i < r_; ++i) out.coeffs[i] = static_cast<std::int64_t>(std::floor(u[static_cast<Eigen::Index>(i)]));
    out.point = point_of(out.coeffs);
    out.z = generator_coeffs(out.coeffs);
    return out;
  }

  Eigen::VectorXd point_of(const std::vector<std::int64_t>& c) const {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r_));
    for (std::size_t i = 0; i < r_; ++i) p += static_cast<double>(c[i]) * basis_.col(static_cast<Eigen::Index>(i));
    return p;
  }

  std::vector<std::int64_t> generator_coeffs(const std::vector<std::int64_t>& c) const {
    BigVec z(n_, 0);
    for (std::size_t k = 0; k < r_; ++k)
      if (c[k] != 0) axpy(z, -BigInt(static_cast<long>(c[k])), gen_coeffs_[k]);
    return to_int64(z);
  }

 private:
  void real_lll() {
    // Small-dimension floating LLL in the transformed geometry; the integer
    // generator coefficients follow every basis operation.
    const std::size_t r = r_;
    auto gs = [&](Eigen::MatrixXd& Bs, Eigen::MatrixXd& mu) {
      Bs = basis_;
      mu = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(r); ++i)
        for (Eigen::Index j = 0; j < i; ++j) {
          mu(i, j) = basis_.col(i).dot(Bs.col(j)) / Bs.col(j).squaredNorm();
          Bs.col(i) -= mu(i, j) * Bs.col(j);
        }
    };
    Eigen::MatrixXd Bs, mu;
    std::size_t k = 1;
    int guard = 0;
    while (k < r && guard++ < 100000) {
      gs(Bs, mu);
      for (std::size_t j = k; j-- > 0;) {
        double q = std::round(mu(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
        if (q != 0.0) {
          basis_.col(static_cast<Eigen::Index>(k)) -= q * basis_.col(static_cast<Eigen::Index>(j));
          axpy(gen_coeffs_[k], BigInt(static_cast<long>(q)), gen_coeffs_[j]);
          axpy(int_basis_[k], BigInt(static_cast<long>(q)), int_basis_[j]);
          gs(Bs, mu);
        }
      }
      const auto K = static_cast<Eigen::Index>(k);
      if (Bs.col(K).squaredNorm() < (0.99 - mu(K, K - 1) * mu(K, K - 1)) * Bs.col(K - 1).squaredNorm()) {
        basis_.col(K).swap(basis_.col(K - 1));
        std::swap(gen_coeffs_[k], gen_coeffs_[k - 1]);
        std::swap(int_basis_[k], int_basis_[k - 1]);
        k = std::max<std::size_t>(1, k - 1);
      } else {
        ++k;
      }
    }
  }

  void gso() {
    const auto r = static_cast<Eigen::Index>(r_);
    bstar_ = basis_;
    mu_ = Eigen::MatrixXd::Identity(r, r);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < i; ++j) {
        mu_(i, j) = basis_.col(i).dot(bstar_.col(j)) / bstar_.col(j).squaredNorm();
        bstar_.col(i) -= mu_(i, j) * bstar_.col(j);
      }
  }

  std::vector<std::int64_t> babai(const Eigen::VectorXd& y) const {
    Eigen::VectorXd t = y;
    std::vector<std::int64_t> c(r_);
    for (std::size_t i = r_; i-- > 0;) {
      const auto I = static_cast<Eigen::Index>(i);
      double ci = std::round(t.dot(bstar_.col(I)) / bstar_.col(I).squaredNorm());
      c[i] = static_cast<std::int64_t>(ci);
      t -= ci * basis_.col(I);
    }
    return c;
  }

  // Schnorr-Euchner style depth-first search over coefficient level i, with
  // `acc` the partial point from levels above.
  void enumerate(const Eigen::VectorXd& y, int i, std::vector<std::int64_t>& cur, std::vector<std::int64_t>& best_c,
                 double& best, const Eigen::VectorXd& acc) const {
    if (i < 0) {
      double dd = (acc - y).squaredNorm();
      if (dd < best - 1e-12 * std::max(1.0, best)) {
        best = dd;
        best_c = cur;
      }
      return;
    }
    const auto I = static_cast<Eigen::Index>(i);
    const double bn = bstar_.col(I).squaredNorm();
    // Distance contributed by levels >= i depends on the projection onto b*_i..b*_{r-1}.
    Eigen::VectorXd diff = y - acc;
    const double center = diff.dot(bstar_.col(I)) / bn;
    // Partial distance of levels above: components of (acc - y) along b*_j, j > i.
    double above = 0.0;
    for (Eigen::Index j = I + 1; j < static_cast<Eigen::Index>(r_); ++j) {
      double pj = diff.dot(bstar_.col(j));
      above += pj * pj / bstar_.col(j).squaredNorm();
    }
    const double room = best - above;
    if (room < 0) return;
    const double span = std::sqrt(room / bn);
    const auto lo = static_cast<std::int64_t>(std::ceil(center - span - 1e-9));
    const auto hi = static_cast<std::int64_t>(std::floor(center + span + 1e-9));
    for (std::int64_t c = lo; c <= hi; ++c) {
      cur[static_cast<std::size_t>(i)] = c;
      enumerate(y, i - 1, cur, best_c, best, acc + static_cast<double>(c) * basis_.col(I));
    }
  }

  std::size_t r_, n_;
  std::vector<BigVec> int_basis_;
  std::vector<BigVec> gen_coeffs_;  // basis_k = T A gen_coeffs_k
  Eigen::MatrixXd T_, basis_, bstar_, mu_, inv_;
  std::vector<std::int64_t> unit_;
};

// Uniform point of the fundamental parallelepiped {B u : u in [0,1)^r}.
template <class G>
Eigen::VectorXd fundamental_cell_uniform(const CellRounder& cr, G& rng) {
  Eigen::VectorXd u(static_cast<Eigen::Index>(cr.dim()));
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = uniform01(rng);
  return cr.basis() * u;
}

}  // namespace advsketch::lattice
