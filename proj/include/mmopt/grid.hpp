#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mmopt/errors.hpp"

namespace mmopt {

// Uniform time grid on [start, horizon] shared by solvers and simulation.
// Solver sub-problems re-anchored at a grid node reuse the same step size.
class TimeGrid {
  public:
    TimeGrid() = default;
    TimeGrid(double horizon, int steps) : TimeGrid(0.0, horizon, steps) {}
    TimeGrid(double start, double horizon, int steps)
        : start_(start), horizon_(horizon), steps_(steps) {
        if (!(horizon > start)) throw ConfigError("grid horizon must exceed its start");
        if (steps < 1) throw ConfigError("grid needs at least 1 step");
        h_ = (horizon_ - start_) / steps_;
    }

    double start() const { return start_; }
    double horizon() const { return horizon_; }
    int steps() const { return steps_; }
    int nodes() const { return steps_ + 1; }
    double h() const { return h_; }
    double node(int k) const { return (k == steps_) ? horizon_ : start_ + k * h_; }

    // Index of the cell containing t, clamped to [0, steps-1].
    int cell_of(double t) const {
        int k = static_cast<int>(std::floor((t - start_) / h_));
        if (k < 0) k = 0;
        if (k >= steps_) k = steps_ - 1;
        return k;
    }

    // Sub-grid from node k to the horizon (same step size).
    TimeGrid tail_from(int k) const {
        if (k < 0 || k >= steps_) throw NumericalError("tail_from: node outside grid");
        return TimeGrid(node(k), horizon_, steps_ - k);
    }

    std::vector<double> node_values() const {
        std::vector<double> v(static_cast<std::size_t>(nodes()));
        for (int k = 0; k < nodes(); ++k) v[static_cast<std::size_t>(k)] = node(k);
        return v;
    }

  private:
    double start_ = 0.0;
    double horizon_ = 1.0;
    int steps_ = 2000;
    double h_ = 5e-4;
};

}  // namespace mmopt
