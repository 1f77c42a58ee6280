#include "mmopt/quad.hpp"

#include <cmath>
#include <mutex>

#include "mmopt/errors.hpp"

namespace mmopt {

namespace {

struct Gl64 {
    std::array<double, 64> x{};
    std::array<double, 64> w{};
};

// Newton iteration on P_64 roots, seeded with the Chebyshev approximation.
Gl64 compute_gl64() {
    Gl64 g;
    const int n = 64;
    for (int i = 0; i < n / 2; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double p0 = 0, p1 = 0;
        for (int it = 0; it < 100; ++it) {
            p0 = 1.0;
            p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
            }
            const double dp = n * (x * p0 - p1) / (x * x - 1.0);
            const double dx = p0 / dp;
            x -= dx;
            if (std::fabs(dx) < 1e-16) break;
        }
        p0 = 1.0;
        p1 = 0.0;
        for (int j = 0; j < n; ++j) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
        }
        const double dp = n * (x * p0 - p1) / (x * x - 1.0);
        g.x[i] = -x;
        g.x[n - 1 - i] = x;
        g.w[i] = g.w[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return g;
}

const Gl64& gl64() {
    static const Gl64 g = compute_gl64();
    return g;
}

}  // namespace

const std::array<double, 64>& gauss_legendre64_nodes() { return gl64().x; }
const std::array<double, 64>& gauss_legendre64_weights() { return gl64().w; }

double gauss_legendre64(const std::function<double(double)>& f, double a, double b) {
    const auto& g = gl64();
    const double c = 0.5 * (a + b), r = 0.5 * (b - a);
    double acc[64];
    for (int i = 0; i < 64; ++i) acc[i] = g.w[i] * f(c + r * g.x[i]);
    return r * pairwise_sum(acc, 64);
}

std::vector<double> simpson_backward_cumulative(const std::vector<double>& w, double h) {
    const std::size_t m = w.size();
    if (m < 2) throw NumericalError("simpson_backward_cumulative: too few samples");
    std::vector<double> out(m, 0.0);
    out[m - 1] = 0.0;
    out[m - 2] = 0.5 * h * (w[m - 2] + w[m - 1]);
    for (std::size_t k = m - 2; k-- > 0;)
        out[k] = out[k + 2] + h / 3.0 * (w[k] + 4.0 * w[k + 1] + w[k + 2]);
    return out;
}

std::vector<double> simpson_forward_cumulative(const std::vector<double>& r,
                                               const std::vector<double>& rmid, double h) {
    const std::size_t m = r.size();
    if (rmid.size() + 1 != m) throw NumericalError("simpson_forward_cumulative: size mismatch");
    std::vector<double> out(m, 0.0);
    for (std::size_t k = 0; k + 1 < m; ++k)
        out[k + 1] = out[k] + h / 6.0 * (r[k] + 4.0 * rmid[k] + r[k + 1]);
    return out;
}

double pairwise_sum(const double* x, std::size_t n) {
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = x[0];
        for (std::size_t i = 1; i < n; ++i) s += x[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

MeanSe mean_se(const std::vector<double>& x) {
    MeanSe r;
    r.n = x.size();
    if (r.n == 0) return r;
    r.mean = pairwise_sum(x) / static_cast<double>(r.n);
    if (r.n < 2) return r;
    std::vector<double> sq(r.n);
    for (std::size_t i = 0; i < r.n; ++i) {
        const double d = x[i] - r.mean;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(r.n - 1);
    r.se = std::sqrt(var / static_cast<double>(r.n));
    return r;
}

}  // namespace mmopt
