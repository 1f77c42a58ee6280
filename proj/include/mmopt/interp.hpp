#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mmopt/errors.hpp"
#include "mmopt/grid.hpp"

namespace mmopt {

// Cubic Hermite evaluation on one cell given endpoint values and slopes.
template <class V>
V hermite_cell(double theta, double h, const V& y0, const V& y1, const V& d0, const V& d1) {
    const double t2 = theta * theta, t3 = t2 * theta;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + theta;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;
    return h00 * y0 + (h10 * h) * d0 + h01 * y1 + (h11 * h) * d1;
}

// Grid-sampled path with node derivatives taken from the generating ODE, so
// the dense output is 4th-order accurate between nodes.
template <class V>
class HermitePath {
  public:
    HermitePath() = default;
    HermitePath(TimeGrid grid, std::vector<V> values, std::vector<V> derivs)
        : grid_(grid), values_(std::move(values)), derivs_(std::move(derivs)) {
        if (values_.size() != static_cast<std::size_t>(grid_.nodes()) ||
            derivs_.size() != values_.size())
            throw NumericalError("HermitePath: size mismatch with grid");
    }

    const TimeGrid& grid() const { return grid_; }
    const V& node(int k) const { return values_[static_cast<std::size_t>(k)]; }
    const V& deriv(int k) const { return derivs_[static_cast<std::size_t>(k)]; }
    const std::vector<V>& nodes() const { return values_; }

    V at(double t) const {
        const double slack = 1e-12 * (1.0 + std::fabs(grid_.horizon()));
        if (t < grid_.start() - slack || t > grid_.horizon() + slack)
            throw NumericalError("path evaluated outside its time grid");
        const int k = grid_.cell_of(t);
        // node queries return node values exactly
        if (t == grid_.node(k)) return values_[static_cast<std::size_t>(k)];
        if (t >= grid_.node(k + 1)) return values_[static_cast<std::size_t>(k) + 1];
        const double theta = (t - grid_.node(k)) / grid_.h();
        return hermite_cell(theta, grid_.h(), values_[k], values_[k + 1], derivs_[k],
                            derivs_[k + 1]);
    }

  private:
    TimeGrid grid_;
    std::vector<V> values_;
    std::vector<V> derivs_;
};

using ScalarPath = HermitePath<double>;
using VectorPath = HermitePath<Eigen::VectorXd>;
using MatrixPath = HermitePath<Eigen::MatrixXd>;

}  // namespace mmopt
