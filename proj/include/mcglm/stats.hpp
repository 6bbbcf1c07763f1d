#pragma once

#include <functional>
#include <vector>

namespace mcglm::stats {

double chi_square_cdf(double x, double df);
double chi_square_sf(double x, double df);  // upper tail, p-value of a chi-square statistic

double normal_quantile(double p);
double normal_cdf(double x);

// Two-sided interval multiplier, e.g. 1.959964 for level 0.95.
double normal_interval_z(double level);

// sup_x |F_n(x) - F(x)| for the empirical CDF of `sample`.
double ks_distance(std::vector<double> sample, const std::function<double(double)>& cdf);

}  // namespace mcglm::stats
