#ifndef LPGFLOW_GRADCHECK_HPP
#define LPGFLOW_GRADCHECK_HPP

#include <cmath>
#include <functional>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace lpgflow {

// Central-difference audit of an analytic gradient.
//
// value(x) evaluates the objective; gradient(x) returns the analytic gradient
// (normally collected from backward()). Probe points are snapped onto the
// 32-bit float grid before evaluation and the quotient uses the realized
// spacing, since model parameters are stored as float and the nominal step
// would otherwise be silently misstated by the narrowing.

struct GradCheckReport {
    double max_err       = 0.0;  // max over coords of |analytic-central|/(|central|+1e-8)
    int64_t worst_index  = -1;
    double worst_analytic = 0.0;
    double worst_central  = 0.0;
};

inline GradCheckReport grad_check_report(
    const std::function<double(const std::vector<double>&)>& value,
    const std::function<std::vector<double>(const std::vector<double>&)>& gradient,
    const std::vector<double>& point, double step) {
    LPG_REQUIRE(step > 0.0, "grad_check: step must be positive");
    LPG_REQUIRE(!point.empty(), "grad_check: empty point");

    std::vector<double> analytic = gradient(point);
    LPG_REQUIRE(analytic.size() == point.size(), "grad_check: gradient size mismatch");

    GradCheckReport rep;
    std::vector<double> x = point;
    for (size_t i = 0; i < point.size(); i++) {
        const double wp = double(float(point[i] + step));
        const double wm = double(float(point[i] - step));
        LPG_REQUIRE(wp > wm, "grad_check: step vanishes at float precision");
        x[i]            = wp;
        const double lp = value(x);
        x[i]            = wm;
        const double lm = value(x);
        x[i]            = point[i];
        if (!std::isfinite(lp) || !std::isfinite(lm) || !std::isfinite(analytic[i])) {
            throw NumericFault("grad_check: non-finite value at probe point");
        }
        const double central = (lp - lm) / (wp - wm);
        const double err = std::fabs(analytic[i] - central) / (std::fabs(central) + 1e-8);
        if (err > rep.max_err) {
            rep.max_err       = err;
            rep.worst_index   = int64_t(i);
            rep.worst_analytic = analytic[i];
            rep.worst_central  = central;
        }
    }
    return rep;
}

inline double grad_check(
    const std::function<double(const std::vector<double>&)>& value,
    const std::function<std::vector<double>(const std::vector<double>&)>& gradient,
    const std::vector<double>& point, double step) {
    return grad_check_report(value, gradient, point, step).max_err;
}

// Adapter for a loss defined through the tensor engine over a set of leaf
// parameters. The flattened probe vector is scattered into the params (in the
// given order), the graph is rebuilt by loss_fn, and gradients come from one
// backward pass. Restores the original parameter values on destruction.
class TensorGradProblem {
public:
    TensorGradProblem(std::function<Tensor()> loss_fn, std::vector<Tensor> params)
        : loss_fn_(std::move(loss_fn)), params_(std::move(params)) {
        for (auto& p : params_) {
            LPG_REQUIRE(p.requires_grad(), "grad problem: param does not require grad");
            saved_.insert(saved_.end(), p.data().begin(), p.data().end());
        }
    }

    ~TensorGradProblem() { scatter(saved_double()); }

    std::vector<double> point() const { return saved_double(); }

    std::function<double(const std::vector<double>&)> value_fn() {
        return [this](const std::vector<double>& x) {
            scatter(x);
            return double(loss_fn_().item());
        };
    }

    std::function<std::vector<double>(const std::vector<double>&)> gradient_fn() {
        return [this](const std::vector<double>& x) {
            scatter(x);
            for (auto& p : params_) p.node()->zero_grad();
            Tensor loss = loss_fn_();
            loss.backward();
            std::vector<double> g;
            for (auto& p : params_) {
                p.node()->ensure_grad();
                for (float v : p.node()->grad) g.push_back(double(v));
            }
            return g;
        };
    }

private:
    std::vector<double> saved_double() const {
        return std::vector<double>(saved_.begin(), saved_.end());
    }

    void scatter(const std::vector<double>& x) {
        size_t off = 0;
        for (auto& p : params_) {
            for (auto& w : p.data()) w = float(x[off++]);
        }
        LPG_REQUIRE(off == x.size(), "grad problem: point size mismatch");
    }

    std::function<Tensor()> loss_fn_;
    std::vector<Tensor> params_;
    std::vector<float> saved_;
};

}  // namespace lpgflow

#endif  // LPGFLOW_GRADCHECK_HPP
