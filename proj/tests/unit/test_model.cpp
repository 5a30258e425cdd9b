#include "cinla/model.hpp"
#include "cinla/simulate.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace cinla;

TEST_CASE("ar1 unit precision inverts the correlation matrix") {
  for (std::size_t n : {1u, 2u, 3u, 7u}) {
    for (double rho : {-0.8, 0.0, 0.5, 0.95}) {
      Matrix corr(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              std::pow(rho, std::abs(static_cast<double>(i) - static_cast<double>(j)));
      const Matrix q = ar1_unit_precision(n, rho);
      CHECK((q - corr.inverse()).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("prior precision log determinant matches a dense factorisation") {
  ModelSpec s;
  s.blocks = {{FixedEffects{2}, 0}, {IidNormal{3, 0}, 0}, {BivariateIid{2, 1, 2, 3}, 0}, {AR1{4, 4, 5}, 0}};
  s.n_hyper = 6;
  s.fixed_prior = {GaussianPrior{0, 2.0}, GaussianPrior{1, 0.5}};
  s.design = {{{0, 1.0}}};
  s.finalize();
  const HyperParams theta{0.3, -0.2, 0.7, 1.1, -0.4, 0.9};
  const auto prior = build_prior_precision(s, theta);
  Eigen::LDLT<Matrix> ldlt(prior.Q);
  const double dense = ldlt.vectorD().array().log().sum();
  CHECK(prior.log_det == doctest::Approx(dense).epsilon(1e-12));

  // the bivariate block is the inverse of its covariance
  const Eigen::Matrix2d cov = bivariate_covariance(-0.2, 0.7, 1.1);
  const Matrix w = prior.Q.block(5, 5, 2, 2);
  CHECK((w * cov - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
  // AR1 marginal precision is kappa
  const Matrix ar = prior.Q.block(9, 9, 4, 4);
  CHECK(1.0 / ar.inverse()(0, 0) == doctest::Approx(std::exp(-0.4)).epsilon(1e-12));
}

TEST_CASE("latent prior matches the dense multivariate normal density") {
  auto s = test::random_intercept(3, Family::BernoulliLogit, 2.0);
  s.fixed_prior[0].mean = 0.4;
  const auto prior = build_prior_precision(s, HyperParams{0.6});
  Vector x(4);
  x << 1.0, -0.3, 0.2, 0.5;
  const Matrix cov = prior.Q.inverse();
  Vector m = Vector::Zero(4);
  m[0] = 0.4;
  const Vector d = x - m;
  const double dense = -2.0 * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(cov.determinant()) -
                       0.5 * d.dot(cov.inverse() * d);
  CHECK(log_latent_prior(s, prior, x) == doctest::Approx(dense).epsilon(1e-12));
}

TEST_CASE("likelihood derivatives agree with finite differences") {
  struct Case {
    LikelihoodFamily fam;
    double y;
    int m;
  };
  const Case cases[] = {{{Family::BernoulliLogit, 1.0}, 1.0, 1},
                        {{Family::BernoulliLogit, 1.0}, 0.0, 1},
                        {{Family::BinomialLogit, 1.0}, 3.0, 5},
                        {{Family::PoissonLog, 1.0}, 4.0, 1},
                        {{Family::GaussianIdentity, 2.5}, 0.7, 1}};
  for (const auto& c : cases) {
    for (double eta : {-3.0, -0.4, 0.0, 1.3, 2.5}) {
      const double h = 1e-5;
      const auto t = loglik_terms(c.fam, eta, c.y, c.m);
      const auto up = loglik_terms(c.fam, eta + h, c.y, c.m);
      const auto dn = loglik_terms(c.fam, eta - h, c.y, c.m);
      CHECK(t.d1 == doctest::Approx((up.value - dn.value) / (2 * h)).epsilon(1e-7));
      CHECK(t.d2 == doctest::Approx((up.d1 - dn.d1) / (2 * h)).epsilon(1e-7));
      CHECK(t.d3 == doctest::Approx((up.d2 - dn.d2) / (2 * h)).epsilon(1e-6).scale(1e-3));
      CHECK(loglik_value(c.fam, eta, c.y, c.m) == doctest::Approx(t.value).epsilon(1e-14));
    }
  }
  // binomial probabilities sum to one
  double total = 0;
  for (int y = 0; y <= 6; ++y) total += std::exp(loglik_value({Family::BinomialLogit, 1.0}, 0.3, y, 6));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("gamma prior on the log precision") {
  const HyperPrior g = GammaOnPrecision{1.0, 1.0, 0};
  CHECK(log_prior_single(g, HyperParams{0.0}) == doctest::Approx(-1.0).epsilon(1e-14));

  const GammaOnPrecision g2{0.5, 0.0164, 0};
  const auto dens = [&](double t) { return std::exp(log_prior_single(g2, HyperParams{t})); };
  CHECK(test::simpson(dens, -40.0, 12.0, 20000) == doctest::Approx(1.0).epsilon(1e-8));
  const double mean_tau = test::simpson([&](double t) { return std::exp(t) * dens(t); }, -40.0, 12.0, 20000);
  CHECK(mean_tau == doctest::Approx(0.5 / 0.0164).epsilon(1e-7));
}

TEST_CASE("wishart prior integrates to one over the internal scale") {
  const WishartOnPrecision2x2 w{3.0, 0.17, 0.025, 0, 1, 2};
  const int n = 120;
  const double a0 = -16, b0 = 7, a1 = -16, b1 = 9, a2 = -30, b2 = 30;
  auto weight = [](int k, int n) { return (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0); };
  double mass = 0.0, mean_prec0 = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t0 = a0 + (b0 - a0) * i / n;
    for (int j = 0; j <= n; ++j) {
      const double t1 = a1 + (b1 - a1) * j / n;
      for (int k = 0; k <= n; ++k) {
        const double t2 = a2 + (b2 - a2) * k / n;
        const double p = std::exp(log_prior_single(w, HyperParams{t0, t1, t2})) * weight(i, n) * weight(j, n) * weight(k, n);
        mass += p;
        mean_prec0 += p * std::exp(t0);
      }
    }
  }
  const double cell = (b0 - a0) * (b1 - a1) * (b2 - a2) / (27.0 * n * n * n);
  CHECK(mass * cell == doctest::Approx(1.0).epsilon(2e-4));
  // 1 / Sigma_00 ~ Gamma((r - 1) / 2, R_00 / 2)
  CHECK(mean_prec0 / mass == doctest::Approx(2.0 / 0.17).epsilon(1e-3));
}

TEST_CASE("validation rejects inconsistent models") {
  auto s = test::random_intercept(4, Family::BernoulliLogit);
  CHECK_NOTHROW(s.validate());

  auto bad = s;
  bad.fixed_prior.clear();
  CHECK_THROWS_AS(bad.validate(), ModelError);

  bad = s;
  bad.design[0].push_back({17, 1.0});
  CHECK_THROWS_AS(bad.validate(), ModelError);

  bad = s;
  bad.hyper_priors.push_back(WishartOnPrecision2x2{});
  CHECK_THROWS_AS(bad.validate(), ModelError);

  bad = s;
  bad.fixed_index_set = {0, 1};
  CHECK_THROWS_AS(bad.validate(), ModelError);

  CHECK_THROWS_AS(check_observation({Family::BernoulliLogit, 1.0}, 2.0, 1), ModelError);
  CHECK_THROWS_AS(check_observation({Family::PoissonLog, 1.0}, 1.5, 1), ModelError);
  CHECK_THROWS_AS(check_observation({Family::BinomialLogit, 1.0}, 3.0, 2), ModelError);
  CHECK_THROWS_AS(build_prior_precision(s, HyperParams{0.0, 1.0}), ModelError);
}

TEST_CASE("fixed index set includes length-one random effects") {
  std::vector<LatentBlock> blocks = {{FixedEffects{2}, 0}, {IidNormal{5, 0}, 2}, {IidNormal{1, 1}, 7}};
  CHECK(derive_fixed_index_set(blocks) == std::vector<std::size_t>{0, 1, 7});
}

TEST_CASE("simulated poisson counts at a very negative intercept are mostly zero") {
  auto s = test::random_intercept(300, Family::PoissonLog);
  TrueValues truth{Vector::Constant(1, -3.0), HyperParams{0.0}};
  const auto data = simulate_dataset(s, truth, 5);
  int zeros = 0;
  for (Eigen::Index j = 0; j < data.y.size(); ++j) zeros += data.y[j] == 0.0;
  CHECK(zeros > 240);
  // same seed, same data
  CHECK(simulate_dataset(s, truth, 5).y == data.y);
}

TEST_CASE("simulated random effects follow their precision") {
  auto s = test::random_intercept(20000, Family::BernoulliLogit);
  TrueValues truth{Vector::Constant(1, 0.0), HyperParams{std::log(4.0)}};
  const auto data = simulate_dataset(s, truth, 9);
  const Vector u = data.latent.tail(20000);
  CHECK(u.squaredNorm() / 20000.0 == doctest::Approx(0.25).epsilon(0.03));
}
