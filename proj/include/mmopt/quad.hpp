#pragma once

#include <array>
#include <functional>
#include <vector>

namespace mmopt {

// Nodes/weights of the 64-point Gauss-Legendre rule on [-1,1].
const std::array<double, 64>& gauss_legendre64_nodes();
const std::array<double, 64>& gauss_legendre64_weights();

// 64-point Gauss-Legendre on [a,b].
double gauss_legendre64(const std::function<double(double)>& f, double a, double b);

// Backward cumulative integral I[k] = \int_{t_k}^{T} w dt from grid samples:
// composite Simpson on node pairs, trapezoid on the final odd interval.
std::vector<double> simpson_backward_cumulative(const std::vector<double>& w, double h);

// Forward cumulative integral R[k] = \int_0^{t_k} r dt with Simpson per cell;
// rmid[k] holds r at the midpoint of cell k (size = nodes-1).
std::vector<double> simpson_forward_cumulative(const std::vector<double>& r,
                                               const std::vector<double>& rmid, double h);

// Deterministic pairwise sum: result depends only on element order.
double pairwise_sum(const double* x, std::size_t n);
double pairwise_sum(const std::vector<double>& x);

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

// Sample mean and standard error (std / sqrt(n)) via pairwise reductions.
MeanSe mean_se(const std::vector<double>& x);

}  // namespace mmopt
