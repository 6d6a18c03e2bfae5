#include <gtest/gtest.h>

#include "advsketch/numerics.hpp"

using namespace advsketch;
using namespace advsketch::numerics;

namespace {

Mat random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = std_normal(rng);
  return m;
}

// Oracle: orthonormal basis from Householder QR of random columns.
OrthonormalBasis qr_basis(Eigen::Index n, Eigen::Index k, std::uint64_t seed) {
  Mat X = random_matrix(n, k, seed);
  Eigen::HouseholderQR<Mat> qr(X);
  Mat Q = qr.householderQ() * Mat::Identity(n, k);
  return OrthonormalBasis::from_columns(Q);
}

}  // namespace

TEST(GramSchmidt, UnitResidualAgainstAxis) {
  OrthonormalBasis b(2);
  b.append(Vec::Unit(2, 0));
  Vec v(2);
  v << 1, 1;
  Vec r = gram_schmidt_residual(v, b);
  EXPECT_NEAR(r[0], 0.0, 1e-15);
  EXPECT_NEAR(r[1], 1.0, 1e-15);
}

TEST(GramSchmidt, VectorInsideSpanIsDegenerate) {
  OrthonormalBasis b(2);
  b.append(Vec::Unit(2, 0));
  Vec v(2);
  v << 2, 0;
  try {
    gram_schmidt_residual(v, b);
    FAIL() << "expected DegenerateResidual";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateResidual);
  }
}

TEST(GramSchmidt, MatchesQrOracleResidual) {
  const Eigen::Index n = 8;
  OrthonormalBasis b = qr_basis(n, 3, 11);
  Vec v = random_matrix(n, 1, 12).col(0);
  Vec got = gram_schmidt_residual(v, b);
  // Oracle: Householder QR of [basis | v]; the fourth Q column spans the residual.
  Mat X(n, 4);
  X << b.matrix(), v;
  Eigen::HouseholderQR<Mat> qr(X);
  Mat Q = qr.householderQ() * Mat::Identity(n, 4);
  Vec want = Q.col(3);
  if (want.dot(got) < 0) want = -want;
  EXPECT_LE((got - want).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(GramSchmidt, PythagoreanIdentityProperty) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Eigen::Index n = 4 + static_cast<Eigen::Index>(s % 9);
    OrthonormalBasis b = qr_basis(n, static_cast<Eigen::Index>(s % 3) + 1, 100 + s);
    Vec v = random_matrix(n, 1, 200 + s).col(0);
    Vec r = gram_schmidt_residual(v, b);
    EXPECT_NEAR(r.norm(), 1.0, 1e-12);
    EXPECT_LE((b.matrix().transpose() * r).cwiseAbs().maxCoeff(), 1e-12);
    const double parallel = b.project(v).squaredNorm();
    const double perp = b.project_complement(v).squaredNorm();
    EXPECT_NEAR(v.squaredNorm(), parallel + perp, 1e-12 * v.squaredNorm());
  }
}

TEST(TopSingular, DiagonalMatrix) {
  Mat M = Mat::Zero(2, 2);
  M(0, 0) = 3;
  M(1, 1) = 1;
  auto t = top_right_singular_vector(M);
  EXPECT_NEAR(std::abs(t.v[0]), 1.0, 1e-10);
  EXPECT_NEAR(t.value, 3.0, 1e-10);
}

TEST(TopSingular, RankOneMatrix) {
  Mat M(3, 3);
  M << 1, 1, 1, 1, 1, 1, 1, 1, 1;
  auto t = top_right_singular_vector(M);
  EXPECT_NEAR(std::abs(t.v.dot(Vec::Ones(3) / std::sqrt(3.0))), 1.0, 1e-10);
}

TEST(TopSingular, AgreesWithJacobiSvd) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Mat M = random_matrix(5, 3, 300 + s);
    auto t = top_right_singular_vector(M);
    Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullV);
    Vec want = svd.matrixV().col(0);
    EXPECT_GE(std::abs(t.v.dot(want)), 1.0 - 1e-8) << "seed " << s;
    EXPECT_NEAR(t.value, svd.singularValues()[0], 1e-8 * svd.singularValues()[0]);
  }
}

TEST(TopSingular, TallRandomAgainstJacobi) {
  Mat M = random_matrix(400, 32, 77);
  M.col(5) *= 3.0;  // make the top direction well separated
  auto t = top_right_singular_vector(M);
  Eigen::JacobiSVD<Mat> svd(M, Eigen::ComputeFullV);
  EXPECT_GE(std::abs(t.v.dot(svd.matrixV().col(0))), 1.0 - 1e-8);
}

TEST(Orthonormalize, HadamardRows) {
  Mat A(2, 2);
  A << 1, 1, 1, -1;
  auto o = orthonormalize_rows(A);
  EXPECT_NEAR(o.Q(0, 0), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(o.Q(1, 1), -1 / std::sqrt(2.0), 1e-15);
}

TEST(Orthonormalize, DiagonalGivesIdentity) {
  Mat A = Mat::Zero(2, 2);
  A(0, 0) = 2;
  A(1, 1) = 3;
  auto o = orthonormalize_rows(A);
  EXPECT_LE((o.Q - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Orthonormalize, RankDeficientThrows) {
  Mat A(2, 3);
  A << 1, 2, 3, 2, 4, 6;
  try {
    orthonormalize_rows(A);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RankDeficient);
  }
}

TEST(Orthonormalize, RowSpaceAndChangeOfBasis) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Mat A = random_matrix(6, 40, 500 + s).array().round();
    auto o = orthonormalize_rows(A);
    EXPECT_LE((o.Q * o.Q.transpose() - Mat::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((o.R * A - o.Q).cwiseAbs().maxCoeff(), 1e-9);
    // Oracle projector from the pseudo-inverse of A.
    Mat P = A.transpose() * (A * A.transpose()).inverse() * A;
    EXPECT_LE((o.Q.transpose() * o.Q - P).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Orthonormalize, IdempotentUpToSigns) {
  Mat A = random_matrix(5, 12, 9);
  auto o1 = orthonormalize_rows(A);
  auto o2 = orthonormalize_rows(o1.Q);
  for (Eigen::Index i = 0; i < 5; ++i)
    EXPECT_NEAR(std::abs(o1.Q.row(i).dot(o2.Q.row(i))), 1.0, 1e-12);
}

TEST(Subspace, ProjectorDistanceIsSineOfAngle) {
  const double theta = 0.3;
  Mat V(3, 1), W(3, 1);
  V << 1, 0, 0;
  W << std::cos(theta), std::sin(theta), 0;
  EXPECT_NEAR(projector_distance(V, W), std::sin(theta), 1e-12);
  EXPECT_NEAR(projector_distance(V, V), 0.0, 1e-12);
}

TEST(Subspace, ClosestSubspaceRecoversContainedVector) {
  Mat U(4, 2);
  U << 1, 0, 0, 1, 0, 0, 0, 0;
  Mat V(4, 1);
  V << 0.6, 0.0, 0.8, 0.0;
  Mat W = closest_subspace(V, U);
  EXPECT_NEAR(std::abs(W(0, 0)), 1.0, 1e-12);
  EXPECT_NEAR(projector_distance(V, W), 0.8, 1e-12);
}
