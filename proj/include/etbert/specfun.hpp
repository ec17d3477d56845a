#pragma once

namespace etbert {

// Regularized upper incomplete gamma Q(a, x); series + continued fraction.
double igamc(double a, double x);

// Complement of the error function, computed through igamc.
double erfc_q(double x);

// Standard normal CDF.
double normal_cdf(double x);

// Kolmogorov distribution tail Q(lambda) = 2 sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
double kolmogorov_q(double lambda);

// One-sample Kolmogorov-Smirnov p-value against Uniform(0,1).
double ks_uniform_pvalue(const double* samples, unsigned long count);

}  // namespace etbert
