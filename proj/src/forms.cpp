#include "mmopt/forms.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mmopt {

namespace {

double softplus(double z) { return (z > 30.0) ? z : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

ScalarForm ScalarForm::constant(double v) {
    ScalarForm f;
    f.kind_ = Kind::Constant;
    f.c0_ = v;
    return f;
}

ScalarForm ScalarForm::piecewise_const(std::vector<double> times, std::vector<double> values) {
    if (values.size() != times.size() + 1)
        throw ConfigError("piecewise_const: need one more value than breakpoints");
    if (!std::is_sorted(times.begin(), times.end()))
        throw ConfigError("piecewise_const: breakpoints must be sorted");
    ScalarForm f;
    f.kind_ = Kind::PiecewiseConstTime;
    f.times_ = std::move(times);
    f.values_ = std::move(values);
    return f;
}

ScalarForm ScalarForm::softplus_affine(double floor, double a, Eigen::VectorXd b) {
    ScalarForm f;
    f.kind_ = Kind::SoftplusAffine;
    f.c0_ = floor;
    f.c1_ = a;
    f.b_ = std::move(b);
    return f;
}

ScalarForm ScalarForm::exp_affine(double a, Eigen::VectorXd b) {
    ScalarForm f;
    f.kind_ = Kind::ExpAffine;
    f.c1_ = a;
    f.b_ = std::move(b);
    return f;
}

ScalarForm ScalarForm::vol_spread(double a_hat) {
    ScalarForm f;
    f.kind_ = Kind::VolSpread;
    f.a_hat_ = a_hat;
    f.resolved_ = false;
    return f;
}

bool ScalarForm::time_only() const {
    switch (kind_) {
        case Kind::Constant:
        case Kind::PiecewiseConstTime:
        case Kind::VolSpread:
            return true;
        case Kind::SoftplusAffine:
        case Kind::ExpAffine:
            return b_.size() == 0 || b_.isZero(0.0);
    }
    return true;
}

bool ScalarForm::depends_on_time() const { return kind_ == Kind::PiecewiseConstTime; }

int ScalarForm::factor_dim() const { return time_only() ? 0 : static_cast<int>(b_.size()); }

double ScalarForm::value(double t, const Eigen::VectorXd& x) const {
    switch (kind_) {
        case Kind::Constant:
            return c0_;
        case Kind::VolSpread:
            if (!resolved_) throw ConfigError("vol_spread form used before build_model");
            return c0_;
        case Kind::PiecewiseConstTime: {
            const auto it = std::upper_bound(times_.begin(), times_.end(), t);
            return values_[static_cast<std::size_t>(it - times_.begin())];
        }
        case Kind::SoftplusAffine:
            return c0_ + softplus(c1_ + (b_.size() ? b_.dot(x) : 0.0));
        case Kind::ExpAffine:
            return std::exp(c1_ + (b_.size() ? b_.dot(x) : 0.0));
    }
    return 0.0;
}

Eigen::VectorXd ScalarForm::grad_x(double t, const Eigen::VectorXd& x) const {
    (void)t;
    switch (kind_) {
        case Kind::SoftplusAffine: {
            if (b_.size() == 0) return Eigen::VectorXd::Zero(x.size());
            const double z = c1_ + b_.dot(x);
            return sigmoid(z) * b_;
        }
        case Kind::ExpAffine: {
            if (b_.size() == 0) return Eigen::VectorXd::Zero(x.size());
            return std::exp(c1_ + b_.dot(x)) * b_;
        }
        default:
            return Eigen::VectorXd::Zero(x.size());
    }
}

Eigen::MatrixXd ScalarForm::hess_x(double t, const Eigen::VectorXd& x) const {
    (void)t;
    switch (kind_) {
        case Kind::SoftplusAffine: {
            if (b_.size() == 0) return Eigen::MatrixXd::Zero(x.size(), x.size());
            const double s = sigmoid(c1_ + b_.dot(x));
            return (s * (1.0 - s)) * (b_ * b_.transpose());
        }
        case Kind::ExpAffine: {
            if (b_.size() == 0) return Eigen::MatrixXd::Zero(x.size(), x.size());
            return std::exp(c1_ + b_.dot(x)) * (b_ * b_.transpose());
        }
        default:
            return Eigen::MatrixXd::Zero(x.size(), x.size());
    }
}

double ScalarForm::max_on(double t0, double t1) const {
    if (!time_only()) throw NumericalError("max_on requires a time-only form");
    if (kind_ != Kind::PiecewiseConstTime) return value(t0, Eigen::VectorXd());
    double m = value(t0, Eigen::VectorXd());
    for (std::size_t j = 0; j < times_.size(); ++j)
        if (times_[j] > t0 && times_[j] <= t1) m = std::max(m, values_[j + 1]);
    return m;
}

double ScalarForm::min_on(double t0, double t1) const {
    if (!time_only()) throw NumericalError("min_on requires a time-only form");
    if (kind_ != Kind::PiecewiseConstTime) return value(t0, Eigen::VectorXd());
    double m = value(t0, Eigen::VectorXd());
    for (std::size_t j = 0; j < times_.size(); ++j)
        if (times_[j] > t0 && times_[j] <= t1) m = std::min(m, values_[j + 1]);
    return m;
}

void ScalarForm::resolve_vol_spread(double sigma_abs) {
    if (kind_ != Kind::VolSpread) return;
    c0_ = a_hat_ * std::fabs(sigma_abs);
    resolved_ = true;
}

std::string ScalarForm::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case Kind::Constant:
            os << "constant(" << c0_ << ")";
            break;
        case Kind::PiecewiseConstTime:
            os << "piecewise_const(" << values_.size() << " segments)";
            break;
        case Kind::SoftplusAffine:
            os << "softplus_affine(floor=" << c0_ << ")";
            break;
        case Kind::ExpAffine:
            os << "exp_affine(a=" << c1_ << ")";
            break;
        case Kind::VolSpread:
            os << "vol_spread(a_hat=" << a_hat_ << ")";
            break;
    }
    return os.str();
}

}  // namespace mmopt
