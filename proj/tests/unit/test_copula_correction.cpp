#include "cinla/copula_correction.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace cinla;

namespace {

Matrix brute_force_q_fixed(const Matrix& q, const std::vector<std::size_t>& J) {
  const Matrix S = q.inverse();
  Matrix sj(J.size(), J.size());
  for (std::size_t a = 0; a < J.size(); ++a)
    for (std::size_t b = 0; b < J.size(); ++b)
      sj(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          S(static_cast<Eigen::Index>(J[a]), static_cast<Eigen::Index>(J[b]));
  return sj.inverse();
}

}  // namespace

TEST_CASE("fixed effect precision") {
  SUBCASE("diagonal") {
    Vector d(4);
    d << 2.0, 0.5, 3.0, 7.0;
    const auto ga = test::approx_from_precision(d.asDiagonal().toDenseMatrix(), Vector::Zero(4));
    const std::vector<std::size_t> J{1, 3};
    const Matrix q = fixed_effect_precision(ga, J);
    CHECK(q(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(q(1, 1) == doctest::Approx(7.0).epsilon(1e-14));
    CHECK(std::abs(q(0, 1)) < 1e-14);
  }
  SUBCASE("random 8x8 against the dense two-inversion definition") {
    std::mt19937_64 rng(8);
    const Matrix q = test::random_spd(8, rng);
    const std::vector<std::size_t> J{1, 3};
    const auto ga = test::approx_from_precision(q, Vector::Zero(8));
    CHECK((fixed_effect_precision(ga, J) - brute_force_q_fixed(q, J)).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("full index set returns Q") {
    std::mt19937_64 rng(9);
    const Matrix q = test::random_spd(5, rng);
    const auto ga = test::approx_from_precision(q, Vector::Zero(5));
    const std::vector<std::size_t> J{0, 1, 2, 3, 4};
    CHECK((fixed_effect_precision(ga, J) - q).cwiseAbs().maxCoeff() < 1e-10 * q.cwiseAbs().maxCoeff());
  }
  SUBCASE("empty or out-of-range index sets fail") {
    const auto ga = test::approx_from_precision(Matrix::Identity(3, 3), Vector::Zero(3));
    CHECK_THROWS_AS(fixed_effect_precision(ga, std::vector<std::size_t>{}), ModelError);
    CHECK_THROWS_AS(fixed_effect_precision(ga, std::vector<std::size_t>{5}), ModelError);
  }
  SUBCASE("collinear fixed effects are reported") {
    // Sigma with two identical rows in J
    Matrix B(4, 4);
    B << 1, 0, 0, 0, 1, 1e-9, 0, 0, 0.3, 0.2, 1, 0, 0.1, 0.5, 0.2, 1;
    const Matrix sigma = B * B.transpose() + 1e-30 * Matrix::Identity(4, 4);
    GaussianApprox ga = test::approx_from_precision(Matrix::Identity(4, 4), Vector::Zero(4));
    // replace the factorisation by one of sigma^{-1} through its inverse directly
    ga.chol.compute(sigma.inverse());
    if (ga.chol.info() == Eigen::Success) {
      CHECK_THROWS_AS(fixed_effect_precision(ga, std::vector<std::size_t>{0, 1}), ModelError);
    }
  }
}

TEST_CASE("mean-only correction") {
  Vector mu(1), mt(1);
  mu << 0.5;
  mt << 0.0;
  Matrix q(1, 1);
  q << 2.0;
  CHECK(correction_mean_only(mu, mt, q) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(correction_mean_only(mu, mu, q) == 0.0);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  const Matrix Q = test::random_spd(4, rng);
  Vector a(4), b(4);
  for (int k = 0; k < 4; ++k) a[k] = nd(rng), b[k] = nd(rng);
  Eigen::PermutationMatrix<4> perm;
  perm.indices() << 2, 0, 3, 1;
  const double c = correction_mean_only(a, b, Q);
  CHECK(c >= 0.0);
  CHECK(correction_mean_only(perm * a, perm * b, perm * Q * perm.transpose()) == doctest::Approx(c).epsilon(1e-13));
}

TEST_CASE("soft threshold") {
  CHECK(soft_threshold(0.0, 4, 10.0) == 0.0);
  CHECK(soft_threshold(1.0, 4, 10.0) == doctest::Approx(0.999792).epsilon(1e-6));
  CHECK(std::abs(soft_threshold(1.0, 4, 10.0) - 0.999792) < 1e-6);
  CHECK(soft_threshold(1e6, 4, 10.0) <= 40.0);
  CHECK(soft_threshold(1e3, 4, 10.0) < 40.0);
  CHECK(soft_threshold(-3.0, 2, 10.0) == doctest::Approx(-soft_threshold(3.0, 2, 10.0)));
  const double h = 1e-6;
  CHECK(std::abs((soft_threshold(h, 3, 10.0) - soft_threshold(-h, 3, 10.0)) / (2 * h) - 1.0) < 1e-6);
  // f(t) = 2 / (1 + exp(-2t)) - 1
  for (double c : {0.3, 5.0, 25.0}) {
    const double u = 30.0;
    CHECK(soft_threshold(c, 3, 10.0) == doctest::Approx(u * (2.0 / (1.0 + std::exp(-2.0 * c / u)) - 1.0)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(soft_threshold(1.0, 2, 0.0), ModelError);
}

namespace {

std::vector<SkewNormalMarginal> marginals_for(const Vector& mu, const Vector& mt, const Vector& sd, const Vector& skew) {
  std::vector<SkewNormalMarginal> out;
  for (Eigen::Index k = 0; k < mu.size(); ++k)
    out.push_back(skew_normal_from_moments(static_cast<std::size_t>(k), mu[k], mt[k], sd[k], skew[k]));
  return out;
}

}  // namespace

TEST_CASE("skew correction without skewness equals the mean-only correction") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> un(0.2, 2.0);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rep % 5;
    const Matrix Q = test::random_spd(n, rng);
    Vector mu(n), mt(n), sd(n);
    for (std::size_t k = 0; k < n; ++k) mu[k] = nd(rng), mt[k] = mu[k] + 0.5 * nd(rng), sd[k] = un(rng);
    const auto res = correction_skew(marginals_for(mu, mt, sd, Vector::Zero(n)), Q);
    CHECK(std::abs(res.raw - correction_mean_only(mu, mt, Q)) < 1e-8);
  }
  // zero displacement and no skewness
  const Vector mu = Vector::Constant(3, 0.4);
  std::mt19937_64 r2(1);
  CHECK(std::abs(correction_skew(marginals_for(mu, mu, Vector::Ones(3), Vector::Zero(3)), test::random_spd(3, r2)).raw) < 1e-12);
}

TEST_CASE("one-dimensional skew correction recovers the exact density ratio") {
  // If the conditional of x is exactly the skew normal, log pi_G(mu) - log pi(mu)
  // is the exact change of the log posterior.
  for (double g : {-0.8, -0.2, 0.4, 0.9}) {
    const double mu = 0.3, mt = -0.1, sd = 0.7;
    const auto m = skew_normal_from_moments(0, mu, mt, sd, g);
    Matrix q(1, 1);
    q << 1.0 / (sd * sd);
    const double exact = normal_logpdf(0.0) - std::log(sd) - m.logpdf(mu);
    const auto res = correction_skew({m}, q);
    CHECK(res.raw == doctest::Approx(exact).epsilon(1e-10));
  }
}

TEST_CASE("compute_correction respects mode and bound") {
  std::mt19937_64 rng(6);
  const Matrix q = test::random_spd(6, rng);
  Vector mean = Vector::Zero(6);
  const auto ga = test::approx_from_precision(q, mean);
  const std::vector<std::size_t> J{0, 2};
  Vector mu(2), mt(2), sd(2), sk(2);
  mu << 0.0, 0.0;
  mt << 3.0, -2.0;
  sd << ga.marginal_sd[0], ga.marginal_sd[2];
  sk << 0.5, -0.3;
  const auto ms = marginals_for(mu, mt, sd, sk);

  const auto none = compute_correction(ga, ms, J, {CorrectionMode::None, 10.0});
  CHECK(none.thresholded == 0.0);
  CHECK(none.u == 20.0);
  const auto mean_only = compute_correction(ga, ms, J, {CorrectionMode::MeanOnly, 10.0});
  const Matrix qj = fixed_effect_precision(ga, J);
  CHECK(mean_only.raw == doctest::Approx(correction_mean_only(mu, mt, qj)).epsilon(1e-13));
  CHECK(mean_only.thresholded == doctest::Approx(soft_threshold(mean_only.raw, 2, 10.0)));
  CHECK(std::abs(mean_only.thresholded) < mean_only.u);
  double total = 0;
  for (double c : mean_only.per_effect) total += c;
  CHECK(total == doctest::Approx(mean_only.raw).epsilon(1e-12));
  const auto tight = compute_correction(ga, ms, J, {CorrectionMode::MeanOnly, 0.01});
  CHECK(std::abs(tight.thresholded) < tight.u);
  CHECK(tight.u == doctest::Approx(0.02));
  const auto skew = compute_correction(ga, ms, J, {CorrectionMode::MeanAndSkew, 10.0});
  CHECK(std::abs(skew.thresholded) < skew.u);
  CHECK(std::isfinite(skew.raw));
  CHECK(correction_from_name(correction_name(CorrectionMode::MeanAndSkew)) == CorrectionMode::MeanAndSkew);
  CHECK_THROWS_AS(correction_from_name("median"), ModelError);
}

TEST_CASE("extreme displacement clamps the probability") {
  const auto m = skew_normal_from_moments(0, 40.0, 0.0, 1.0, 0.0);
  Matrix q(1, 1);
  q << 1.0;
  const auto res = correction_skew({m}, q);
  CHECK(res.clamped);
  CHECK(std::isfinite(res.raw));
}
