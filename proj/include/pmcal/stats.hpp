#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace pmcal {

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow for large |z|.
inline double log_sigmoid(double z) {
    if (z >= 0.0) return -std::log1p(std::exp(-z));
    return z - std::log1p(std::exp(z));
}

double mean(std::span<const double> xs);
double variance(std::span<const double> xs);  // sample variance, n-1
double median(std::vector<double> xs);        // takes a copy, sorts

// Empirical quantile with linear interpolation between order statistics
// (the common "type 7" definition). q in [0,1]; xs need not be sorted.
double quantile(std::vector<double> xs, double q);
// Same on pre-sorted data, no copy.
double quantile_sorted(std::span<const double> sorted, double q);

// Regularized incomplete beta I_x(a, b), continued fraction (Lentz).
double reg_inc_beta(double a, double b, double x);

// Upper tail of the F(df1, df2) distribution at f >= 0.
double f_upper_tail(double df1, double df2, double f);

// Standard normal CDF and inverse CDF (Wichura AS241, double precision).
double normal_cdf(double z);
double normal_quantile(double p);

// Shortest deterministic decimal form that round-trips a double.
std::string fmt_double(double x);

}  // namespace pmcal
