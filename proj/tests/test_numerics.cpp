#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lpgflow/gradcheck.hpp"
#include "lpgflow/ops.hpp"
#include "lpgflow/optim.hpp"
#include "lpgflow/rng.hpp"
#include "lpgflow/tensor.hpp"

using namespace lpgflow;

// ---------------------------------------------------------------------------
// rng

TEST_CASE("rng streams replay bit-identically") {
    RngStream a(42, "noise");
    RngStream b(42, "noise");
    for (int i = 0; i < 1000; i++) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("rng streams with different tags or seeds differ") {
    RngStream a(42, "noise"), b(42, "batch"), c(43, "noise");
    int same_ab = 0, same_ac = 0;
    for (int i = 0; i < 64; i++) {
        uint64_t va = a.next_u64();
        if (va == b.next_u64()) same_ab++;
        if (va == c.next_u64()) same_ac++;
    }
    REQUIRE(same_ab == 0);
    REQUIRE(same_ac == 0);
}

TEST_CASE("rng uniform range and integer bounds") {
    RngStream r(7, "u");
    for (int i = 0; i < 10000; i++) {
        float f = r.next_float();
        REQUIRE(f >= 0.0f);
        REQUIRE(f < 1.0f);
    }
    int lo_seen = 0, hi_seen = 0;
    for (int i = 0; i < 10000; i++) {
        int64_t v = r.next_int(-3, 5);
        REQUIRE(v >= -3);
        REQUIRE(v <= 5);
        if (v == -3) lo_seen++;
        if (v == 5) hi_seen++;
    }
    REQUIRE(lo_seen > 0);
    REQUIRE(hi_seen > 0);
    REQUIRE_THROWS_AS(r.next_int(2, 1), ContractViolation);
}

TEST_CASE("rng normal has sane first two moments") {
    RngStream r(11, "normal");
    const int n = 40000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; i++) {
        double v = r.next_normal();
        sum += v;
        sq += v * v;
    }
    double mean = sum / n;
    double var  = sq / n - mean * mean;
    REQUIRE(std::fabs(mean) < 0.03);
    REQUIRE(std::fabs(var - 1.0) < 0.05);
}

// ---------------------------------------------------------------------------
// backward

TEST_CASE("backward of x*x at x=3 gives 6") {
    Tensor x    = Tensor::scalar(3.0f, true);
    Tensor loss = mul(x, x);
    loss.backward();
    REQUIRE(x.grad()[0] == 6.0f);
}

TEST_CASE("backward of sum gives all-ones") {
    RngStream r(1, "t");
    Tensor x    = Tensor::randn(3, 5, r, 1.0f, true);
    Tensor loss = sum_all(x);
    loss.backward();
    for (float g : x.grad()) REQUIRE(g == 1.0f);
}

TEST_CASE("backward accumulates across calls without reset") {
    Tensor x = Tensor::scalar(2.0f, true);
    Tensor l1 = mul(x, x);
    l1.backward();
    REQUIRE(x.grad()[0] == 4.0f);
    Tensor l2 = mul(x, x);
    l2.backward();
    REQUIRE(x.grad()[0] == 8.0f);
}

TEST_CASE("backward on non-scalar loss is a contract violation") {
    RngStream r(1, "t");
    Tensor x = Tensor::randn(2, 2, r, 1.0f, true);
    Tensor y = mul(x, x);
    REQUIRE_THROWS_AS(y.backward(), ContractViolation);
}

TEST_CASE("backward is linear over summed losses") {
    RngStream r(5, "t");
    Tensor x = Tensor::randn(4, 4, r, 1.0f, true);
    Tensor w = Tensor::randn(4, 4, r, 1.0f, false);

    Tensor la = mean_all(mul(x, w));
    Tensor lb = mean_all(mul(mul(x, x), w));

    x.node()->zero_grad();
    add(la, lb).backward();
    std::vector<float> g_joint = x.grad();

    x.node()->zero_grad();
    mean_all(mul(x, w)).backward();
    std::vector<float> ga = x.grad();
    x.node()->zero_grad();
    mean_all(mul(mul(x, x), w)).backward();
    std::vector<float> gb = x.grad();

    for (size_t i = 0; i < g_joint.size(); i++)
        REQUIRE_THAT(g_joint[i], Catch::Matchers::WithinAbs(ga[i] + gb[i], 1e-6));
}

// ---------------------------------------------------------------------------
// finite-difference oracle over each primitive

namespace {

// builds the loss through `body` applied to fixed inputs plus the params under
// test, then audits every param coordinate against central differences; `body`
// must reference only tensors that stay fixed across calls. Error is measured
// as the l2 ratio ||analytic - central|| / ||central|| plus a per-coordinate
// check normalized by max(1, |central|), which tolerates float32 evaluation
// noise on near-zero coordinates without hiding a wrong formula.
void check_primitive(const char* what, std::function<Tensor()> body,
                     std::vector<Tensor> params, double step = 3e-3,
                     double tol = 1e-3) {
    INFO(what);
    TensorGradProblem prob(std::move(body), std::move(params));
    auto value    = prob.value_fn();
    auto point    = prob.point();
    auto analytic = prob.gradient_fn()(point);

    std::vector<double> x = point;
    double num = 0.0, den = 0.0, worst = 0.0;
    for (size_t i = 0; i < point.size(); i++) {
        const double wp = double(float(point[i] + step));
        const double wm = double(float(point[i] - step));
        x[i]            = wp;
        const double lp = value(x);
        x[i]            = wm;
        const double lm = value(x);
        x[i]            = point[i];
        const double central = (lp - lm) / (wp - wm);
        const double d       = analytic[i] - central;
        num += d * d;
        den += central * central;
        worst = std::max(worst, std::fabs(d) / std::max(1.0, std::fabs(central)));
    }
    const double l2_ratio = std::sqrt(num) / (std::sqrt(den) + 1e-12);
    INFO("l2 ratio " << l2_ratio << " worst coord " << worst);
    REQUIRE(l2_ratio <= tol);
    REQUIRE(worst <= tol);
}

}  // namespace

TEST_CASE("every primitive matches central finite differences") {
    RngStream r(123, "prim");
    RngStream rw(9, "weights");
    // fixed random weighting makes output grads non-uniform
    auto wmean = [](const Tensor& y, Tensor w) { return mean_all(mul(y, w)); };

    {
        Tensor a = Tensor::randn(3, 4, r, 1.0f, true);
        Tensor b = Tensor::randn(3, 4, r, 1.0f, true);
        Tensor w = Tensor::randn(3, 4, rw);
        check_primitive("add", [=] { return wmean(add(a, b), w); }, {a, b});
        check_primitive("sub", [=] { return wmean(sub(a, b), w); }, {a, b});
        check_primitive("mul", [=] { return wmean(mul(a, b), w); }, {a, b});
    }
    {
        Tensor a = Tensor::randn(2, 6, r, 1.0f, true);
        Tensor w = Tensor::randn(2, 6, rw);
        check_primitive("scale+add_const",
                        [=] { return wmean(add_const(scale(a, 1.7f), 0.3f), w); }, {a});
    }
    {
        Tensor a = Tensor::randn(3, 5, r, 1.0f, true);
        Tensor b = Tensor::randn(5, 4, r, 1.0f, true);
        Tensor w = Tensor::randn(3, 4, rw);
        check_primitive("matmul", [=] { return wmean(matmul(a, b), w); }, {a, b});
    }
    {
        Tensor a = Tensor::randn(3, 5, r, 1.0f, true);
        Tensor b = Tensor::randn(4, 5, r, 1.0f, true);
        Tensor w = Tensor::randn(3, 4, rw);
        check_primitive("matmul_nt", [=] { return wmean(matmul_nt(a, b), w); }, {a, b});
    }
    {
        Tensor x = Tensor::randn(4, 6, r, 1.0f, true);
        Tensor v = Tensor::randn(1, 6, r, 1.0f, true);
        Tensor w = Tensor::randn(4, 6, rw);
        check_primitive("add_rowvec", [=] { return wmean(add_rowvec(x, v), w); },
                        {x, v});
        check_primitive("mul_rowvec", [=] { return wmean(mul_rowvec(x, v), w); },
                        {x, v});
    }
    {
        Tensor x = Tensor::randn(3, 7, r, 1.0f, true);
        Tensor w = Tensor::randn(3, 7, rw);
        check_primitive("silu", [=] { return wmean(silu(x), w); }, {x});
        check_primitive("gelu", [=] { return wmean(gelu(x), w); }, {x});
    }
    {
        Tensor x = Tensor::randn(3, 6, r, 1.0f, true);
        Tensor w = Tensor::randn(3, 6, rw);
        check_primitive("softmax_rows", [=] { return wmean(softmax_rows(x), w); }, {x});
    }
    {
        Tensor x = Tensor::randn(3, 8, r, 1.0f, true);
        Tensor w = Tensor::randn(3, 8, rw);
        check_primitive("layernorm_rows", [=] { return wmean(layernorm_rows(x), w); },
                        {x});
    }
    {
        Tensor x = Tensor::randn(6, 4, r, 1.0f, true);
        Tensor w = Tensor::randn(3, 4, rw);
        check_primitive("slice_rows", [=] { return wmean(slice_rows(x, 1, 4), w); },
                        {x});
    }
    {
        Tensor a = Tensor::randn(2, 4, r, 1.0f, true);
        Tensor b = Tensor::randn(3, 4, r, 1.0f, true);
        Tensor w = Tensor::randn(5, 4, rw);
        check_primitive("concat_rows", [=] { return wmean(concat_rows({a, b}), w); },
                        {a, b});
    }
    {
        Tensor table         = Tensor::randn(5, 4, r, 1.0f, true);
        std::vector<int> ids = {3, 0, 3, 2};
        Tensor w             = Tensor::randn(4, 4, rw);
        check_primitive("embedding", [=] { return wmean(embedding(table, ids), w); },
                        {table});
    }
    {
        Tensor x = Tensor::randn(3, 5, r, 1.0f, true);
        check_primitive("mean_all", [=] { return mean_all(x); }, {x});
        check_primitive("sum_all", [=] { return sum_all(x); }, {x});
    }
    {
        const int T = 4, heads = 2, hd = 8;
        Tensor x = Tensor::randn(T, heads * hd, r, 1.0f, true);
        std::vector<float> angles(size_t(T) * hd / 2);
        RngStream ra(24, "angles");
        for (auto& a : angles) a = ra.uniform(-3.0f, 3.0f);
        Tensor w = Tensor::randn(T, heads * hd, rw);
        check_primitive("rope", [=] { return wmean(rope(x, angles, heads), w); }, {x});
    }
    {
        const int T = 5, heads = 2, hd = 6;
        Tensor q = Tensor::randn(T, heads * hd, r, 0.7f, true);
        Tensor k = Tensor::randn(T, heads * hd, r, 0.7f, true);
        Tensor v = Tensor::randn(T, heads * hd, r, 0.7f, true);
        Tensor w = Tensor::randn(T, heads * hd, rw);
        check_primitive("attention",
                        [=] { return wmean(attention(q, k, v, heads), w); }, {q, k, v});
    }
}

TEST_CASE("three-layer mlp gradients match central differences at step 1e-3") {
    RngStream r(77, "mlp");
    Tensor x  = Tensor::randn(4, 6, r, 1.0f);
    Tensor w1 = Tensor::randn(6, 8, r, 0.7f, true);
    Tensor b1 = Tensor::randn(1, 8, r, 0.3f, true);
    Tensor w2 = Tensor::randn(8, 8, r, 0.7f, true);
    Tensor b2 = Tensor::randn(1, 8, r, 0.3f, true);
    Tensor w3 = Tensor::randn(8, 3, r, 0.7f, true);
    Tensor b3 = Tensor::randn(1, 3, r, 0.3f, true);
    std::vector<Tensor> params = {w1, b1, w2, b2, w3, b3};

    // independent double-precision mirror of the network, evaluated at a
    // flattened parameter vector in the same order as `params`
    auto oracle = [&](const std::vector<double>& p) {
        auto take = [&](size_t& off, int rows, int cols) {
            std::vector<double> m(p.begin() + off, p.begin() + off + size_t(rows) * cols);
            off += size_t(rows) * cols;
            return m;
        };
        size_t off = 0;
        auto v1 = take(off, 6, 8), c1 = take(off, 1, 8);
        auto v2 = take(off, 8, 8), c2 = take(off, 1, 8);
        auto v3 = take(off, 8, 3), c3 = take(off, 1, 3);

        auto lin = [](const std::vector<double>& in, int M, int K,
                      const std::vector<double>& w, const std::vector<double>& b, int N) {
            std::vector<double> out(size_t(M) * N, 0.0);
            for (int i = 0; i < M; i++)
                for (int k = 0; k < K; k++)
                    for (int j = 0; j < N; j++)
                        out[size_t(i) * N + j] += in[size_t(i) * K + k] * w[size_t(k) * N + j];
            for (int i = 0; i < M; i++)
                for (int j = 0; j < N; j++) out[size_t(i) * N + j] += b[j];
            return out;
        };
        std::vector<double> in(x.data().begin(), x.data().end());
        auto h1 = lin(in, 4, 6, v1, c1, 8);
        for (auto& v : h1) v = v / (1.0 + std::exp(-v));
        auto h2 = lin(h1, 4, 8, v2, c2, 8);
        for (auto& v : h2) {
            const double t = std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v));
            v              = 0.5 * v * (1.0 + t);
        }
        auto h3    = lin(h2, 4, 8, v3, c3, 3);
        double acc = 0.0;
        for (double v : h3) acc += v * v;
        return acc / double(h3.size());
    };

    auto loss = [&] {
        Tensor h1 = silu(add_rowvec(matmul(x, w1), b1));
        Tensor h2 = gelu(add_rowvec(matmul(h1, w2), b2));
        Tensor h3 = add_rowvec(matmul(h2, w3), b3);
        return mean_all(mul(h3, h3));
    };
    TensorGradProblem prob(loss, params);
    GradCheckReport rep =
        grad_check_report(oracle, prob.gradient_fn(), prob.point(), 1e-3);
    INFO("worst index " << rep.worst_index << " analytic " << rep.worst_analytic
                        << " central " << rep.worst_central);
    REQUIRE(rep.max_err <= 1e-3);
}

// ---------------------------------------------------------------------------
// forward-value oracles

TEST_CASE("attention forward matches a double-precision oracle") {
    RngStream r(31, "attn");
    const int T = 6, heads = 2, hd = 4, HD = heads * hd;
    Tensor q = Tensor::randn(T, HD, r);
    Tensor k = Tensor::randn(T, HD, r);
    Tensor v = Tensor::randn(T, HD, r);
    Tensor out = attention(q, k, v, heads);

    const double sc = 1.0 / std::sqrt(double(hd));
    for (int h = 0; h < heads; h++) {
        for (int i = 0; i < T; i++) {
            std::vector<double> logits(T);
            for (int j = 0; j < T; j++) {
                double acc = 0.0;
                for (int c = 0; c < hd; c++)
                    acc += double(q.at(i, h * hd + c)) * double(k.at(j, h * hd + c));
                logits[j] = acc * sc;
            }
            double mx = *std::max_element(logits.begin(), logits.end());
            double z  = 0.0;
            for (double& l : logits) {
                l = std::exp(l - mx);
                z += l;
            }
            for (int c = 0; c < hd; c++) {
                double acc = 0.0;
                for (int j = 0; j < T; j++)
                    acc += logits[j] / z * double(v.at(j, h * hd + c));
                REQUIRE_THAT(out.at(i, h * hd + c), Catch::Matchers::WithinAbs(acc, 1e-5));
            }
        }
    }
}

TEST_CASE("softmax rows sum to one and layernorm standardizes rows") {
    RngStream r(32, "n");
    Tensor x = Tensor::randn(5, 9, r, 2.0f);
    Tensor s = softmax_rows(x);
    Tensor l = layernorm_rows(x);
    for (int i = 0; i < 5; i++) {
        double rowsum = 0.0, mean = 0.0, var = 0.0;
        for (int j = 0; j < 9; j++) {
            rowsum += s.at(i, j);
            mean += l.at(i, j);
        }
        mean /= 9;
        for (int j = 0; j < 9; j++) var += (l.at(i, j) - mean) * (l.at(i, j) - mean);
        var /= 9;
        REQUIRE_THAT(rowsum, Catch::Matchers::WithinAbs(1.0, 1e-5));
        REQUIRE_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-5));
        REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-3));
    }
}

TEST_CASE("rope preserves norms and zero angles are identity") {
    RngStream r(33, "rope");
    const int T = 3, heads = 2, hd = 8;
    Tensor x = Tensor::randn(T, heads * hd, r);

    std::vector<float> zero(size_t(T) * hd / 2, 0.0f);
    Tensor same = rope(x, zero, heads);
    for (int64_t i = 0; i < x.numel(); i++) REQUIRE(same.data()[i] == x.data()[i]);

    std::vector<float> angles(size_t(T) * hd / 2);
    RngStream ra(34, "a");
    for (auto& a : angles) a = ra.uniform(-2.0f, 2.0f);
    Tensor rot = rope(x, angles, heads);
    for (int t = 0; t < T; t++) {
        double n0 = 0.0, n1 = 0.0;
        for (int c = 0; c < heads * hd; c++) {
            n0 += double(x.at(t, c)) * x.at(t, c);
            n1 += double(rot.at(t, c)) * rot.at(t, c);
        }
        REQUIRE_THAT(n1, Catch::Matchers::WithinRel(n0, 1e-5));
    }
}

// ---------------------------------------------------------------------------
// adamw

TEST_CASE("adamw zero grads and zero weight decay leave params unchanged") {
    Tensor w = Tensor::from_vec({1.0f, -2.0f, 0.5f}, 1, 3, true);
    AdamWConfig cfg;
    cfg.lr           = 0.1f;
    cfg.weight_decay = 0.0f;
    AdamW opt({w}, cfg);
    w.grad();  // allocate, stays zero
    opt.step();
    REQUIRE(w.data() == std::vector<float>{1.0f, -2.0f, 0.5f});
    REQUIRE(opt.step_count() == 1);
}

TEST_CASE("adamw first bias-corrected step moves w=1 to about 0.9") {
    Tensor w = Tensor::scalar(1.0f, true);
    AdamWConfig cfg;
    cfg.lr           = 0.1f;
    cfg.weight_decay = 0.0f;
    AdamW opt({w}, cfg);
    w.grad()[0] = 1.0f;
    opt.step();
    REQUIRE_THAT(w.data()[0], Catch::Matchers::WithinAbs(0.9, 1e-6));
}

TEST_CASE("adamw decoupled weight decay shrinks by lr*wd with zero grad") {
    Tensor w = Tensor::scalar(2.0f, true);
    AdamWConfig cfg;
    cfg.lr           = 0.1f;
    cfg.weight_decay = 0.1f;
    AdamW opt({w}, cfg);
    w.grad();
    opt.step();
    REQUIRE_THAT(w.data()[0], Catch::Matchers::WithinAbs(2.0 * (1.0 - 0.01), 1e-7));
}

TEST_CASE("adamw rejects non-finite gradients without touching state") {
    Tensor w = Tensor::from_vec({1.0f, 1.0f}, 1, 2, true);
    AdamW opt({w}, AdamWConfig{});
    w.grad()[0] = 1.0f;
    w.grad()[1] = std::nanf("");
    REQUIRE_THROWS_AS(opt.step(), NumericFault);
    REQUIRE(w.data() == std::vector<float>{1.0f, 1.0f});
    REQUIRE(opt.step_count() == 0);
}

TEST_CASE("adamw updates are bit-deterministic") {
    auto run = [] {
        RngStream r(3, "w");
        Tensor w = Tensor::randn(4, 4, r, 1.0f, true);
        AdamW opt({w}, AdamWConfig{.lr = 0.01f});
        RngStream g(4, "g");
        for (int s = 0; s < 20; s++) {
            opt.zero_grad();
            for (auto& gv : w.grad()) gv = g.next_normal();
            opt.step();
        }
        return w.data();
    };
    REQUIRE(run() == run());
}

// ---------------------------------------------------------------------------
// grad_check

TEST_CASE("grad_check on x squared at 3 with step 1e-4 is within 1e-6") {
    auto value = [](const std::vector<double>& x) { return x[0] * x[0]; };
    auto gradient = [](const std::vector<double>& x) {
        Tensor t    = Tensor::scalar(float(x[0]), true);
        Tensor loss = mul(t, t);
        loss.backward();
        return std::vector<double>{double(t.grad()[0])};
    };
    double err = grad_check(value, gradient, {3.0}, 1e-4);
    REQUIRE(err <= 1e-6);
}

TEST_CASE("grad_check on a constant reports zero error") {
    auto value    = [](const std::vector<double>&) { return 4.25; };
    auto gradient = [](const std::vector<double>& x) {
        return std::vector<double>(x.size(), 0.0);
    };
    REQUIRE(grad_check(value, gradient, {0.3, -1.0}, 1e-3) == 0.0);
}

TEST_CASE("grad_check raises a numeric fault on non-finite values") {
    auto value = [](const std::vector<double>& x) {
        return x[0] > 1.0 ? std::numeric_limits<double>::infinity() : x[0];
    };
    auto gradient = [](const std::vector<double>&) { return std::vector<double>{1.0}; };
    REQUIRE_THROWS_AS(grad_check(value, gradient, {1.0}, 1e-3), NumericFault);
}
