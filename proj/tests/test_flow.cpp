#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lpgflow/flow.hpp"
#include "lpgflow/rng.hpp"

using namespace lpgflow;

namespace {

std::vector<float> random_vec(size_t n, uint64_t seed, const char* tag) {
    RngStream rng(seed, tag);
    std::vector<float> v(n);
    for (auto& x : v) x = rng.next_normal();
    return v;
}

}  // namespace

TEST_CASE("interpolation hits both endpoints and the midpoint") {
    const std::vector<float> z0 = random_vec(64, 1, "z0");
    const std::vector<float> eps = random_vec(64, 1, "eps");

    FlowSample at0 = interpolate(z0, eps, 0.0f);
    REQUIRE(at0.z_t == z0);
    FlowSample at1 = interpolate(z0, eps, 1.0f);
    REQUIRE(at1.z_t == eps);

    FlowSample mid = interpolate(z0, eps, 0.5f);
    for (size_t i = 0; i < z0.size(); i++)
        REQUIRE(mid.z_t[i] == 0.5f * z0[i] + 0.5f * eps[i]);

    REQUIRE_THROWS_AS(interpolate(z0, random_vec(8, 2, "short"), 0.5f), ContractViolation);
    REQUIRE_THROWS_AS(interpolate(z0, eps, -0.1f), ContractViolation);
    REQUIRE_THROWS_AS(interpolate(z0, eps, 1.5f), ContractViolation);
}

TEST_CASE("flow loss matches hand values and a double oracle") {
    // prediction equal to the target gives zero loss
    const std::vector<float> z0{1.0f, 2.0f};
    const std::vector<float> eps{3.0f, 0.0f};
    const std::vector<float> exact{2.0f, -2.0f};
    REQUIRE(rf_loss(exact, z0, eps) == 0.0);

    // off by (1, -1): mean of squares is 1
    REQUIRE(rf_loss({3.0f, -3.0f}, z0, eps) == 1.0);

    const size_t n = 300;
    const std::vector<float> rz0 = random_vec(n, 3, "z0");
    const std::vector<float> reps = random_vec(n, 3, "eps");
    const std::vector<float> pred = random_vec(n, 3, "pred");
    double want = 0.0;
    for (size_t i = 0; i < n; i++) {
        const float t = reps[i] - rz0[i];
        const double d = double(pred[i]) - double(t);
        want += d * d;
    }
    want /= double(n);
    REQUIRE_THAT(rf_loss(pred, rz0, reps), Catch::Matchers::WithinRel(want, 1e-5));

    REQUIRE_THROWS_AS(rf_loss({}, {}, {}), ContractViolation);
}

TEST_CASE("graph loss agrees with the plain loss and differentiates") {
    const std::vector<float> z0 = random_vec(24, 4, "z0");
    const std::vector<float> eps = random_vec(24, 4, "eps");
    const std::vector<float> pv = random_vec(24, 4, "pred");

    std::vector<float> tv(24);
    for (size_t i = 0; i < 24; i++) tv[i] = eps[i] - z0[i];
    Tensor pred   = Tensor::from_vec(pv, 4, 6, true);
    Tensor target = Tensor::from_vec(tv, 4, 6);
    Tensor loss   = rf_loss_graph(pred, target);
    REQUIRE_THAT(double(loss.item()), Catch::Matchers::WithinRel(rf_loss(pv, z0, eps), 1e-5));

    loss.backward();
    for (int i = 0; i < 4; i++)
        for (int j = 0; j < 6; j++) {
            const double want = 2.0 / 24.0 * (double(pred.at(i, j)) - double(target.at(i, j)));
            REQUIRE_THAT(double(pred.ptr()->grad[size_t(i) * 6 + j]),
                         Catch::Matchers::WithinAbs(want, 1e-6));
        }
}

TEST_CASE("schedules run from one to zero with uniform spacing") {
    REQUIRE(make_schedule(1) == std::vector<float>{1.0f, 0.0f});
    REQUIRE(make_schedule(4) ==
            std::vector<float>{1.0f, 0.75f, 0.5f, 0.25f, 0.0f});

    const auto s = make_schedule(50);
    REQUIRE(s.size() == 51);
    REQUIRE(s.front() == 1.0f);
    REQUIRE(s.back() == 0.0f);
    for (size_t i = 0; i + 1 < s.size(); i++) {
        REQUIRE(s[i] > s[i + 1]);
        REQUIRE_THAT(double(s[i] - s[i + 1]), Catch::Matchers::WithinAbs(0.02, 1e-6));
    }
    REQUIRE_THROWS_AS(make_schedule(0), ContractViolation);
}

TEST_CASE("euler recovers the endpoint exactly under the straight-line oracle") {
    // with v = eps - z0 constant, every step count lands on z0 up to roundoff
    const std::vector<float> z0 = random_vec(128, 5, "z0");
    const std::vector<float> eps = random_vec(128, 5, "eps");
    VelocityFn oracle = [&](const std::vector<float>&, float, int) {
        std::vector<float> v(z0.size());
        for (size_t i = 0; i < v.size(); i++) v[i] = eps[i] - z0[i];
        return v;
    };
    for (int n : {1, 5, 50}) {
        const auto out = euler_sample(oracle, eps, make_schedule(n));
        double max_err = 0.0;
        for (size_t i = 0; i < out.size(); i++)
            max_err = std::max(max_err, std::fabs(double(out[i]) - double(z0[i])));
        INFO("steps " << n);
        REQUIRE(max_err <= 1e-5);
        REQUIRE(rf_loss(oracle(out, 0.0f, 0), z0, eps) == 0.0);
    }
}

TEST_CASE("euler converges on a time-dependent field") {
    // v(z,t) = 2t*c integrates to z(0) = z(1) - c
    const std::vector<float> c = random_vec(32, 6, "field");
    std::vector<float> z1(c.size(), 0.5f);
    VelocityFn field = [&](const std::vector<float>&, float t, int) {
        std::vector<float> v(c.size());
        for (size_t i = 0; i < v.size(); i++) v[i] = 2.0f * t * c[i];
        return v;
    };
    const auto out = euler_sample(field, z1, make_schedule(1000));
    double err2 = 0.0, norm2 = 0.0;
    for (size_t i = 0; i < c.size(); i++) {
        const double want = 0.5 - double(c[i]);
        err2 += (double(out[i]) - want) * (double(out[i]) - want);
        norm2 += double(c[i]) * double(c[i]);
    }
    REQUIRE(std::sqrt(err2) <= 1e-3 * std::sqrt(norm2));
}

TEST_CASE("euler reports the failing step on a numeric blowup") {
    VelocityFn explode = [](const std::vector<float>& z, float, int step) {
        std::vector<float> v(z.size(), step >= 3 ? std::numeric_limits<float>::infinity()
                                                 : 0.0f);
        return v;
    };
    std::vector<float> z(4, 1.0f);
    try {
        euler_sample(explode, z, make_schedule(10));
        FAIL("expected NumericFault");
    } catch (const NumericFault& e) {
        REQUIRE(e.step == 3);
    }

    VelocityFn fine = [](const std::vector<float>& z, float, int) {
        return std::vector<float>(z.size(), 0.0f);
    };
    REQUIRE_THROWS_AS(euler_sample(fine, z, {0.5f, 0.5f}), ContractViolation);
    REQUIRE_THROWS_AS(euler_sample(fine, z, {1.0f}), ContractViolation);
    VelocityFn wrong_shape = [](const std::vector<float>&, float, int) {
        return std::vector<float>(2, 0.0f);
    };
    REQUIRE_THROWS_AS(euler_sample(wrong_shape, z, make_schedule(2)), ContractViolation);
}

TEST_CASE("euler step callback sees every intermediate state") {
    VelocityFn drift = [](const std::vector<float>& z, float, int) {
        return std::vector<float>(z.size(), 1.0f);
    };
    std::vector<int> steps;
    std::vector<float> ts;
    euler_sample(drift, std::vector<float>(2, 0.0f), make_schedule(4),
                 [&](int i, float t, const std::vector<float>& z) {
                     steps.push_back(i);
                     ts.push_back(t);
                     REQUIRE(z.size() == 2);
                 });
    REQUIRE(steps == std::vector<int>{0, 1, 2, 3});
    REQUIRE(ts == std::vector<float>{0.75f, 0.5f, 0.25f, 0.0f});
}

TEST_CASE("recompose pins the conditioning pixels") {
    Canvas gen = make_canvas(4, 6);
    Canvas orig = make_canvas(4, 6);
    for (size_t i = 0; i < gen.px.size(); i++) {
        gen.px[i]  = 0.9f;
        orig.px[i] = 0.1f;
    }
    GrayMap mask = make_gray(4, 6);
    for (int y = 0; y < 4; y++)
        for (int x = 3; x < 6; x++) mask.at(y, x) = 1.0f;

    Canvas out = recompose(gen, orig, mask);
    for (int y = 0; y < 4; y++)
        for (int x = 0; x < 6; x++)
            for (int c = 0; c < 3; c++)
                REQUIRE(out.at(y, x, c) == (x >= 3 ? 0.9f : 0.1f));

    REQUIRE_THROWS_AS(recompose(gen, make_canvas(4, 4), mask), ContractViolation);
    REQUIRE_THROWS_AS(recompose(gen, orig, make_gray(2, 6)), ContractViolation);
}

TEST_CASE("model-space mapping round-trips and clamps") {
    Canvas c = make_canvas(3, 5);
    RngStream rng(7, "round");
    for (auto& v : c.px) v = rng.next_float();

    const auto v = to_model_space(c);
    for (size_t i = 0; i < v.size(); i++)
        REQUIRE_THAT(double(v[i]), Catch::Matchers::WithinAbs(2.0 * c.px[i] - 1.0, 1e-7));
    Canvas back = from_model_space(v, 3, 5);
    for (size_t i = 0; i < v.size(); i++)
        REQUIRE_THAT(double(back.px[i]), Catch::Matchers::WithinAbs(double(c.px[i]), 1e-7));

    Canvas clamped = from_model_space(std::vector<float>(45, 3.0f), 3, 5);
    for (float p : clamped.px) REQUIRE(p == 1.0f);
    Canvas low = from_model_space(std::vector<float>(45, -3.0f), 3, 5);
    for (float p : low.px) REQUIRE(p == 0.0f);

    REQUIRE_THROWS_AS(from_model_space(v, 3, 4), ContractViolation);
    REQUIRE(vec_to_canvas(v, 3, 5).px == v);
}
