#include "cinla/skew_normal.hpp"

#include "cinla/model.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace cinla {

namespace {

constexpr double kInvPi = std::numbers::inv_pi;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
constexpr std::array<double, 8> kXgk = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                                        0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                                        0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                                        0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                                        0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                                        0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                                        0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                                       0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
void gk15(const F& f, double a, double b, double& result, double& error) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double rk = fc * kWgk[7];
  double rg = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = h * kXgk[static_cast<std::size_t>(j)];
    const double s = f(c - dx) + f(c + dx);
    rk += kWgk[static_cast<std::size_t>(j)] * s;
    if (j % 2 == 1) rg += kWg[static_cast<std::size_t>(j / 2)] * s;
  }
  result = rk * h;
  error = std::abs((rk - rg) * h);
}

/// Globally adaptive Gauss-Kronrod: repeatedly bisects the interval with
/// the largest error estimate. Integrand assumed positive; targets absolute
/// 1e-12 and relative 1e-14, stopping at roundoff level or 400 intervals.
/// `layer` is the width of a boundary layer at b that the first pieces must
/// resolve (0 for none); without it a narrow dip can go unseen.
template <class F>
double integrate_positive(const F& f, double a, double b, double layer = 0.0) {
  struct Piece {
    double a, b, r, e;
  };
  std::vector<Piece> pieces;
  std::vector<double> cuts{a};
  if (layer > 0) {
    std::vector<double> inner;
    for (double w = layer; w < b - a && inner.size() < 12; w *= 4.0) inner.push_back(b - w);
    cuts.insert(cuts.end(), inner.rbegin(), inner.rend());
  }
  cuts.push_back(b);
  double total = 0.0;
  double err = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    Piece piece{cuts[k], cuts[k + 1], 0.0, 0.0};
    gk15(f, piece.a, piece.b, piece.r, piece.e);
    pieces.push_back(piece);
    total += piece.r;
    err += piece.e;
  }
  while (pieces.size() < 400) {
    const double tol = std::max(std::min(1e-12, 1e-14 * std::abs(total)), 50.0 * std::numeric_limits<double>::epsilon() * std::abs(total));
    if (err <= tol || err < std::numeric_limits<double>::min()) break;
    auto worst = std::max_element(pieces.begin(), pieces.end(), [](const Piece& x, const Piece& y) { return x.e < y.e; });
    const Piece p = *worst;
    const double m = 0.5 * (p.a + p.b);
    if (!(m > p.a && m < p.b)) break;
    Piece left{p.a, m, 0.0, 0.0};
    Piece right{m, p.b, 0.0, 0.0};
    gk15(f, left.a, left.b, left.r, left.e);
    gk15(f, right.a, right.b, right.r, right.e);
    *worst = left;
    pieces.push_back(right);
    total = 0.0;
    err = 0.0;
    for (const auto& q : pieces) {
      total += q.r;
      err += q.e;
    }
  }
  return total;
}

/// P(X <= z) for X ~ SN(alpha) and z <= 0, written as
///   (1/pi) * int_{atan(alpha)}^{pi/2} exp(-z^2 / (2 cos^2 t)) dt,
/// which equals Phi(z) - 2 T(z, alpha) without the cancellation in the tail.
double sn_lower_tail(double z, double alpha) {
  const double lo = std::atan(alpha);
  const double hi = 0.5 * std::numbers::pi;
  if (z == 0.0) return kInvPi * (hi - lo);
  const double h2 = 0.5 * z * z;
  return kInvPi * integrate_positive(
                      [h2](double t) {
                        const double c = std::cos(t);
                        return c <= 0 ? 0.0 : std::exp(-h2 / (c * c));
                      },
                      lo, hi, std::abs(z));
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 * 0.5); }

double normal_logpdf(double z) { return -kHalfLog2Pi - 0.5 * z * z; }

double normal_logcdf(double z) {
  if (z > -30.0) return std::log(normal_cdf(z));
  // asymptotic Mills-ratio expansion
  const double z2 = z * z;
  return -0.5 * z2 - std::log(-z) - kHalfLog2Pi + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2));
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ModelError("normal_quantile: probability outside (0, 1)");
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double owens_t(double h, double a) {
  if (a == 0.0) return 0.0;
  if (a < 0.0) return -owens_t(h, -a);
  const double h2 = 0.5 * h * h;
  const double upper = std::atan(a);
  if (h == 0.0) return 0.5 * kInvPi * upper;
  return 0.5 * kInvPi * integrate_positive(
                            [h2](double t) {
                              const double c = std::cos(t);
                              return std::exp(-h2 / (c * c));
                            },
                            0.0, upper, std::abs(h));
}

double sn_cdf(double z, double alpha) {
  if (std::isnan(z) || std::isnan(alpha)) return std::numeric_limits<double>::quiet_NaN();
  if (alpha == 0.0) return normal_cdf(z);
  if (z == -std::numeric_limits<double>::infinity()) return 0.0;
  if (z == std::numeric_limits<double>::infinity()) return 1.0;
  if (z <= 0.0) return sn_lower_tail(z, alpha);
  return 1.0 - sn_lower_tail(-z, -alpha);
}

double sn_logpdf(double z, double alpha) { return std::numbers::ln2 + normal_logpdf(z) + normal_logcdf(alpha * z); }

double sn_quantile(double p, double alpha) {
  if (!(p > 0.0 && p < 1.0)) throw ModelError("sn_quantile: probability outside (0, 1)");
  if (alpha == 0.0) return normal_quantile(p);

  // Newton on log F in the lower half and on log(1 - F) in the upper half,
  // using 1 - F(q; alpha) = F(-q; -alpha); both are smooth in the tails
  const bool lower = p <= 0.5;
  const double target = lower ? std::log(p) : std::log1p(-p);
  auto tail = [&](double q) { return lower ? sn_cdf(q, alpha) : sn_cdf(-q, -alpha); };
  // residual > 0 means q is too far right
  auto residual = [&](double q) {
    const double t = tail(q);
    const double r = t > 0 ? std::log(t) - target : -std::numeric_limits<double>::infinity();
    return lower ? r : -r;
  };

  double q = sn_mean(alpha) + std::sqrt(sn_variance(alpha)) * normal_quantile(p);
  double lo = q - 1.0;
  double hi = q + 1.0;
  for (double step = 1.0; residual(lo) > 0; step *= 2.0) lo -= step;
  for (double step = 1.0; residual(hi) < 0; step *= 2.0) hi += step;
  q = std::clamp(q, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double t = tail(q);
    const double r = residual(q);
    if (r == 0.0) return q;
    if (r < 0.0) lo = q;
    else hi = q;
    double next = 0.5 * (lo + hi);
    if (t > 0 && std::isfinite(r)) {
      const double slope = std::exp(sn_logpdf(q, alpha) - std::log(t));  // d residual / dq
      if (slope > 0 && std::isfinite(slope)) {
        const double cand = q - r / slope;
        if (cand > lo && cand < hi) next = cand;
      }
    }
    if (std::abs(next - q) <= 1e-15 * (1.0 + std::abs(q)) || hi - lo <= 4e-16 * (1.0 + std::abs(q))) return next;
    q = next;
  }
  return q;
}

double sn_mean(double alpha) {
  const double delta = alpha / std::sqrt(1.0 + alpha * alpha);
  return delta * std::sqrt(2.0 * kInvPi);
}

double sn_variance(double alpha) {
  const double b = sn_mean(alpha);
  return 1.0 - b * b;
}

double sn_skewness(double alpha) {
  const double b = sn_mean(alpha);
  return 0.5 * (4.0 - std::numbers::pi) * b * b * b / std::pow(1.0 - b * b, 1.5);
}

double sn_max_skewness() {
  const double b2 = 2.0 * kInvPi;
  return 0.5 * (4.0 - std::numbers::pi) * std::pow(b2, 1.5) / std::pow(1.0 - b2, 1.5);
}

double sn_shape_from_skewness(double gamma) {
  if (!(std::abs(gamma) < sn_max_skewness())) throw ModelError("skewness outside the attainable skew-normal range");
  if (gamma == 0.0) return 0.0;
  // r = b / sqrt(1 - b^2)
  const double r = std::cbrt(2.0 * gamma / (4.0 - std::numbers::pi));
  const double b = r / std::sqrt(1.0 + r * r);
  const double delta = b * std::sqrt(0.5 * std::numbers::pi);
  return delta / std::sqrt(1.0 - delta * delta);
}

StandardizedSkewNormal::StandardizedSkewNormal(double alpha) : alpha_(alpha) {
  scale_ = 1.0 / std::sqrt(sn_variance(alpha));
  location_ = -scale_ * sn_mean(alpha);
}

double StandardizedSkewNormal::cdf(double z) const { return sn_cdf((z - location_) / scale_, alpha_); }

double StandardizedSkewNormal::logpdf(double z) const {
  return sn_logpdf((z - location_) / scale_, alpha_) - std::log(scale_);
}

double StandardizedSkewNormal::quantile(double p) const { return location_ + scale_ * sn_quantile(p, alpha_); }

}  // namespace cinla
