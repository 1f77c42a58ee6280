#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mmopt/errors.hpp"

namespace mmopt {

// Closed registry of coefficient functional forms of (t, x), where x is the
// market factor state. Every form carries analytic first and second factor
// derivatives so the expansion never differentiates numerically.
//
//   constant          v
//   piecewise_const   right-continuous step function of t
//   softplus_affine   floor + log(1+exp(a + b.x))   (smooth positive clamp)
//   exp_affine        exp(a + b.x)                  (exponential of an OU factor)
//   vol_spread        a_hat * |sigma_S|, resolved to a constant at build time
class ScalarForm {
  public:
    enum class Kind { Constant, PiecewiseConstTime, SoftplusAffine, ExpAffine, VolSpread };

    static ScalarForm constant(double v);
    static ScalarForm piecewise_const(std::vector<double> times, std::vector<double> values);
    static ScalarForm softplus_affine(double floor, double a, Eigen::VectorXd b);
    static ScalarForm exp_affine(double a, Eigen::VectorXd b);
    static ScalarForm vol_spread(double a_hat);

    Kind kind() const { return kind_; }
    bool time_only() const;
    bool depends_on_time() const;
    int factor_dim() const;  // 0 when time_only

    double value(double t, const Eigen::VectorXd& x) const;
    Eigen::VectorXd grad_x(double t, const Eigen::VectorXd& x) const;
    Eigen::MatrixXd hess_x(double t, const Eigen::VectorXd& x) const;

    // Exact range on [t0,t1]; only defined for time-only forms.
    double max_on(double t0, double t1) const;
    double min_on(double t0, double t1) const;

    double a_hat() const { return a_hat_; }
    void resolve_vol_spread(double sigma_abs);  // turns vol_spread into its constant value

    std::string describe() const;

  private:
    Kind kind_ = Kind::Constant;
    double c0_ = 0.0;                 // constant value / floor / a
    double c1_ = 0.0;                 // affine intercept a (softplus)
    Eigen::VectorXd b_;               // factor loading
    std::vector<double> times_;       // piecewise breakpoints
    std::vector<double> values_;      // piecewise values (times_.size()+1)
    double a_hat_ = 0.0;
    bool resolved_ = true;
};

// Drift component mu_i(t,x) of the factor SDE: a + b.x (constant when b = 0).
struct AffineDrift {
    double a = 0.0;
    Eigen::VectorXd b;
    double value(const Eigen::VectorXd& x) const { return a + (b.size() ? b.dot(x) : 0.0); }
};

}  // namespace mmopt
