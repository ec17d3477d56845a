#include "etbert/specfun.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace etbert {

namespace {

constexpr double kMachEps = 2.220446049250313e-16;

// lower regularized incomplete gamma by power series, for x < a + 1
double igam_series(double a, double x) {
  if (x <= 0.0) return 0.0;
  double ax = a * std::log(x) - x - std::lgamma(a);
  if (ax < -709.0) return 0.0;
  ax = std::exp(ax);
  double r = a, c = 1.0, ans = 1.0;
  do {
    r += 1.0;
    c *= x / r;
    ans += c;
  } while (c / ans > kMachEps);
  return ans * ax / a;
}

}  // namespace

double igamc(double a, double x) {
  if (x <= 0.0 || a <= 0.0) return 1.0;
  if (x < 1.0 || x < a + 1.0) return 1.0 - igam_series(a, x);

  double ax = a * std::log(x) - x - std::lgamma(a);
  if (ax < -709.0) return 0.0;
  ax = std::exp(ax);

  // continued fraction (modified Lentz)
  const double big = 4.503599627370496e15;
  const double biginv = 2.22044604925031308085e-16;
  double y = 1.0 - a, z = x + y + 1.0, c = 0.0;
  double pkm2 = 1.0, qkm2 = x, pkm1 = x + 1.0, qkm1 = z * x;
  double ans = pkm1 / qkm1, t;
  do {
    c += 1.0;
    y += 1.0;
    z += 2.0;
    double yc = y * c;
    double pk = pkm1 * z - pkm2 * yc;
    double qk = qkm1 * z - qkm2 * yc;
    if (qk != 0.0) {
      double r = pk / qk;
      t = std::fabs((ans - r) / r);
      ans = r;
    } else {
      t = 1.0;
    }
    pkm2 = pkm1;
    pkm1 = pk;
    qkm2 = qkm1;
    qkm1 = qk;
    if (std::fabs(pk) > big) {
      pkm2 *= biginv;
      pkm1 *= biginv;
      qkm2 *= biginv;
      qkm1 *= biginv;
    }
  } while (t > kMachEps);
  return ans * ax;
}

double erfc_q(double x) {
  if (x < 0.0) return 2.0 - erfc_q(-x);
  return igamc(0.5, x * x);
}

double normal_cdf(double x) { return 0.5 * erfc_q(-x / std::sqrt(2.0)); }

double kolmogorov_q(double lambda) {
  if (lambda <= 1e-8) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 100000; j++) {
    double term = std::exp(-2.0 * double(j) * double(j) * lambda * lambda);
    sum += (j % 2 == 1) ? term : -term;
    if (term < 1e-14 && j > 3) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

double ks_uniform_pvalue(const double* samples, unsigned long count) {
  if (count == 0) return 1.0;
  std::vector<double> s(samples, samples + count);
  std::sort(s.begin(), s.end());
  double n = double(count), d = 0.0;
  for (unsigned long i = 0; i < count; i++) {
    d = std::max(d, double(i + 1) / n - s[i]);
    d = std::max(d, s[i] - double(i) / n);
  }
  double sq = std::sqrt(n);
  return kolmogorov_q(d * (sq + 0.12 + 0.11 / sq));
}

}  // namespace etbert
