#ifndef LPGFLOW_FLOW_HPP
#define LPGFLOW_FLOW_HPP

// Rectified flow over stitched canvases: straight-line interpolation
// z_t = (1-t)*z0 + t*eps, velocity target (eps - z0), uniform schedules,
// and Euler integration of the reverse ODE.

#include <cstdint>
#include <functional>
#include <vector>

#include "lpgflow/image.hpp"
#include "lpgflow/ops.hpp"

namespace lpgflow {

struct FlowSample {
    std::vector<float> z_t;
    std::vector<float> eps;
    std::vector<float> z0;
    float t = 0.0f;
};

inline FlowSample interpolate(const std::vector<float>& z0, const std::vector<float>& eps,
                              float t) {
    LPG_REQUIRE(z0.size() == eps.size(), "interpolate: shape mismatch");
    LPG_REQUIRE(t >= 0.0f && t <= 1.0f, "interpolate: t outside [0,1]");
    FlowSample s;
    s.t   = t;
    s.z0  = z0;
    s.eps = eps;
    s.z_t.resize(z0.size());
    for (size_t i = 0; i < z0.size(); i++) s.z_t[i] = (1.0f - t) * z0[i] + t * eps[i];
    return s;
}

// mean squared error against the constant velocity target (eps - z0)
inline double rf_loss(const std::vector<float>& v_pred, const std::vector<float>& z0,
                      const std::vector<float>& eps) {
    LPG_REQUIRE(v_pred.size() == z0.size() && z0.size() == eps.size(),
                "rf_loss: shape mismatch");
    LPG_REQUIRE(!v_pred.empty(), "rf_loss: empty input");
    double acc = 0.0;
    for (size_t i = 0; i < v_pred.size(); i++) {
        // difference in 32-bit so a predictor that reproduces the float
        // target exactly scores exactly zero
        const double d = double(v_pred[i] - (eps[i] - z0[i]));
        acc += d * d;
    }
    return acc / double(v_pred.size());
}

// graph-building form: scalar MSE between prediction and a fixed target
inline Tensor rf_loss_graph(const Tensor& v_pred, const Tensor& target) {
    LPG_REQUIRE(v_pred.rows() == target.rows() && v_pred.cols() == target.cols(),
                "rf_loss: shape mismatch");
    Tensor diff = sub(v_pred, target);
    return mean_all(mul(diff, diff));
}

// N+1 knots from exactly 1 down to exactly 0, uniform spacing
inline std::vector<float> make_schedule(int n) {
    LPG_REQUIRE(n >= 1, "schedule: need at least one step");
    std::vector<float> t(size_t(n) + 1);
    for (int i = n; i >= 0; i--) t[size_t(n) - i] = float(i) / float(n);
    return t;
}

using VelocityFn = std::function<std::vector<float>(const std::vector<float>& z, float t,
                                                    int step_index)>;
using StepCallback = std::function<void(int step_index, float t, const std::vector<float>& z)>;

// Euler reverse ODE: z_{t_{i-1}} = z_{t_i} + (t_{i-1} - t_i) * v(z, t_i).
// on_step (optional) fires after each update with the new state.
inline std::vector<float> euler_sample(const VelocityFn& velocity, std::vector<float> z,
                                       const std::vector<float>& schedule,
                                       const StepCallback& on_step = nullptr) {
    LPG_REQUIRE(schedule.size() >= 2, "euler: schedule needs at least two knots");
    for (size_t i = 0; i + 1 < schedule.size(); i++)
        LPG_REQUIRE(schedule[i] > schedule[i + 1], "euler: schedule must strictly decrease");
    for (size_t i = 0; i + 1 < schedule.size(); i++) {
        const float t_cur  = schedule[i];
        const float t_next = schedule[i + 1];
        const std::vector<float> v = velocity(z, t_cur, int(i));
        LPG_REQUIRE(v.size() == z.size(), "euler: velocity shape mismatch");
        const float dt = t_next - t_cur;
        for (size_t j = 0; j < z.size(); j++) {
            z[j] += dt * v[j];
            if (!is_finite(z[j]))
                throw NumericFault("euler: non-finite state", int64_t(i));
        }
        if (on_step) on_step(int(i), t_next, z);
    }
    return z;
}

// pin conditioning pixels: out = z where mask is 1, original elsewhere
inline Canvas recompose(const Canvas& z, const Canvas& original, const GrayMap& mask) {
    LPG_REQUIRE(z.h == original.h && z.w == original.w, "recompose: canvas shape mismatch");
    LPG_REQUIRE(mask.h == z.h && mask.w == z.w, "recompose: mask shape mismatch");
    Canvas out = original;
    for (int y = 0; y < z.h; y++)
        for (int x = 0; x < z.w; x++)
            if (mask.at(y, x) != 0.0f)
                for (int c = 0; c < 3; c++) out.at(y, x, c) = z.at(y, x, c);
    return out;
}

// ------------------------------------------------- model-space conversion

// canvases live in [0,1]; the flow runs on 2x-1 in [-1,1]
inline std::vector<float> to_model_space(const Canvas& c) {
    std::vector<float> v(c.px.size());
    for (size_t i = 0; i < v.size(); i++) v[i] = 2.0f * c.px[i] - 1.0f;
    return v;
}

inline Canvas from_model_space(const std::vector<float>& v, int h, int w) {
    LPG_REQUIRE(v.size() == size_t(h) * w * 3, "from_model_space: size mismatch");
    Canvas c = make_canvas(h, w);
    for (size_t i = 0; i < v.size(); i++) c.px[i] = clamp01((v[i] + 1.0f) * 0.5f);
    return c;
}

inline Canvas vec_to_canvas(const std::vector<float>& v, int h, int w) {
    LPG_REQUIRE(v.size() == size_t(h) * w * 3, "vec_to_canvas: size mismatch");
    Canvas c = make_canvas(h, w);
    c.px     = v;
    return c;
}

}  // namespace lpgflow

#endif
