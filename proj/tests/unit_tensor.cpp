#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cepa/rng.hpp"
#include "cepa/tensor.hpp"
#include "oracles.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

using namespace cepa;
using oracle::dvec;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    std::vector<float> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return Tensor::from_data(std::move(shape), std::move(v), false);
}

// Keep sampled coordinates away from kinks (relu at 0, clip at bounds,
// maxpool ties) so the finite difference is valid.
Tensor rand_tensor_away_from(Shape shape, Rng& rng, const std::vector<float>& kinks, float margin = 0.05f) {
    std::vector<float> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) {
        for (;;) {
            const float c = static_cast<float>(rng.uniform(-1.0, 1.0));
            bool ok = true;
            for (float k : kinks) ok = ok && std::abs(c - k) > margin;
            if (ok) {
                x = c;
                break;
            }
        }
    }
    return Tensor::from_data(std::move(shape), std::move(v), false);
}

// analytic gradient from the engine for loss = sum(w . op(x)), probed against
// a double-precision finite difference of the same composite
void check_grad(const char* what,
                const Tensor& x0,
                const std::function<Tensor(const Tensor&)>& op,
                const std::function<dvec(const dvec&)>& ref_op,
                Rng& rng) {
    Tensor x = x0.clone();
    x.set_requires_grad(true);
    Tensor y = op(x);
    std::vector<float> wdata(static_cast<std::size_t>(y.size()));
    for (auto& v : wdata) v = static_cast<float>(rng.uniform(0.25, 1.0));
    Tensor w = Tensor::from_data(y.shape(), wdata);
    Tensor loss = sum(mul(y, w));
    backward(loss);

    auto scalarize = [&](const dvec& xin) {
        dvec yv = ref_op(xin);
        double acc = 0.0;
        for (std::size_t i = 0; i < yv.size(); ++i) acc += yv[i] * wdata[i];
        return acc;
    };
    dvec fd = oracle::fd_gradient(scalarize, oracle::to_double(x.vec()));
    const double err = oracle::max_rel_err(x.grad(), fd);
    INFO(std::string(what) << " max rel err " << err);
    CHECK(err < 1e-4);
}

}  // namespace

TEST_CASE("relu definition") {
    Tensor x = Tensor::from_data({3}, {-1.0f, 0.0f, 2.0f});
    Tensor y = relu(x);
    CHECK(y.vec() == std::vector<float>{0.0f, 0.0f, 2.0f});
}

TEST_CASE("matmul identity") {
    Rng rng(7);
    Tensor a = rand_tensor({3, 3}, rng);
    std::vector<float> eye(9, 0.0f);
    eye[0] = eye[4] = eye[8] = 1.0f;
    Tensor i3 = Tensor::from_data({3, 3}, eye);
    Tensor y = matmul(i3, a);
    for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(a.data()[i]).epsilon(1e-6));
}

TEST_CASE("conv2d all-ones 5x5 by 3x3 gives all nines") {
    Tensor x = Tensor::full({1, 1, 5, 5}, 1.0f);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor y = conv2d(x, k, 0);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    // cross-check against the direct-summation oracle
    dvec ref = oracle::conv2d(dvec(25, 1.0), 1, 1, 5, 5, dvec(9, 1.0), 1, 3, 3, 0);
    for (int i = 0; i < 9; ++i) {
        CHECK(y.data()[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]));
        CHECK(y.data()[i] == doctest::Approx(9.0f));
    }
}

TEST_CASE("backward of sum of squares") {
    Tensor x = Tensor::from_data({3}, {1.0f, 2.0f, 3.0f}, true);
    Tensor loss = sum(square(x));
    backward(loss);
    auto g = x.grad();
    CHECK(g[0] == doctest::Approx(2.0f));
    CHECK(g[1] == doctest::Approx(4.0f));
    CHECK(g[2] == doctest::Approx(6.0f));
}

TEST_CASE("softmax-cross-entropy gradient at uniform logits") {
    // softmax([0,0]) = [0.5, 0.5]; grad = softmax - onehot(0) = [-0.5, 0.5]
    Tensor logits = Tensor::from_data({1, 2}, {0.0f, 0.0f}, true);
    Tensor loss = softmax_cross_entropy(logits, {0});
    CHECK(loss.item() == doctest::Approx(std::log(2.0)));
    backward(loss);
    auto g = logits.grad();
    CHECK(g[0] == doctest::Approx(-0.5f));
    CHECK(g[1] == doctest::Approx(0.5f));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    Tensor y = square(x);
    CHECK_THROWS_AS(backward(y), ShapeError);
}

TEST_CASE("shape mismatch diagnostics name the op and shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("finite-difference gradient check per primitive") {
    Rng rng(12345);
    const int points = 10;

    for (int trial = 0; trial < points; ++trial) {
        // add (same shape; second operand varied)
        {
            Tensor b = rand_tensor({4, 3}, rng);
            dvec bd = oracle::to_double(b.vec());
            check_grad("add", rand_tensor({4, 3}, rng),
                       [&](const Tensor& x) { return add(x, b); },
                       [&](const dvec& x) {
                           dvec y = x;
                           for (std::size_t i = 0; i < y.size(); ++i) y[i] += bd[i];
                           return y;
                       },
                       rng);
        }
        // add with row-bias broadcast, gradient of the bias
        {
            Tensor a = rand_tensor({4, 3}, rng);
            dvec ad = oracle::to_double(a.vec());
            check_grad("add_row_bias", rand_tensor({3}, rng),
                       [&](const Tensor& x) { return add(a, x); },
                       [&](const dvec& x) {
                           dvec y = ad;
                           for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i % 3];
                           return y;
                       },
                       rng);
        }
        // add with channel-bias broadcast
        {
            Tensor a = rand_tensor({2, 3, 2, 2}, rng);
            dvec ad = oracle::to_double(a.vec());
            check_grad("add_channel_bias", rand_tensor({3}, rng),
                       [&](const Tensor& x) { return add(a, x); },
                       [&](const dvec& x) {
                           dvec y = ad;
                           for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[(i / 4) % 3];
                           return y;
                       },
                       rng);
        }
        // sub
        {
            Tensor b = rand_tensor({5}, rng);
            dvec bd = oracle::to_double(b.vec());
            check_grad("sub", rand_tensor({5}, rng),
                       [&](const Tensor& x) { return sub(x, b); },
                       [&](const dvec& x) {
                           dvec y = x;
                           for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bd[i];
                           return y;
                       },
                       rng);
        }
        // mul
        {
            Tensor b = rand_tensor({6}, rng);
            dvec bd = oracle::to_double(b.vec());
            check_grad("mul", rand_tensor({6}, rng),
                       [&](const Tensor& x) { return mul(x, b); },
                       [&](const dvec& x) {
                           dvec y = x;
                           for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bd[i];
                           return y;
                       },
                       rng);
        }
        // scalar_mul
        check_grad("scalar_mul", rand_tensor({7}, rng),
                   [](const Tensor& x) { return scalar_mul(x, 2.5f); },
                   [](const dvec& x) {
                       dvec y = x;
                       for (auto& v : y) v *= 2.5;
                       return y;
                   },
                   rng);
        // relu, away from the kink
        check_grad("relu", rand_tensor_away_from({8}, rng, {0.0f}),
                   [](const Tensor& x) { return relu(x); },
                   [](const dvec& x) {
                       dvec y = x;
                       for (auto& v : y) v = v > 0.0 ? v : 0.0;
                       return y;
                   },
                   rng);
        // square
        check_grad("square", rand_tensor({6}, rng),
                   [](const Tensor& x) { return square(x); },
                   [](const dvec& x) {
                       dvec y = x;
                       for (auto& v : y) v *= v;
                       return y;
                   },
                   rng);
        // clip, away from both bounds
        check_grad("clip", rand_tensor_away_from({8}, rng, {-0.5f, 0.5f}),
                   [](const Tensor& x) { return clip(x, -0.5f, 0.5f); },
                   [](const dvec& x) {
                       dvec y = x;
                       for (auto& v : y) v = std::min(std::max(v, -0.5), 0.5);
                       return y;
                   },
                   rng);
        // matmul, both operands
        {
            Tensor b = rand_tensor({3, 4}, rng);
            dvec bd = oracle::to_double(b.vec());
            check_grad("matmul_lhs", rand_tensor({2, 3}, rng),
                       [&](const Tensor& x) { return matmul(x, b); },
                       [&](const dvec& x) { return oracle::matmul(x, bd, 2, 3, 4); },
                       rng);
            Tensor a = rand_tensor({2, 3}, rng);
            dvec ad = oracle::to_double(a.vec());
            check_grad("matmul_rhs", rand_tensor({3, 4}, rng),
                       [&](const Tensor& x) { return matmul(a, x); },
                       [&](const dvec& x) { return oracle::matmul(ad, x, 2, 3, 4); },
                       rng);
        }
        // conv2d: input grad (pad 0) and kernel grad (pad 1)
        {
            Tensor k = rand_tensor({2, 2, 3, 3}, rng);
            dvec kd = oracle::to_double(k.vec());
            check_grad("conv2d_input", rand_tensor({2, 2, 5, 5}, rng),
                       [&](const Tensor& x) { return conv2d(x, k, 0); },
                       [&](const dvec& x) { return oracle::conv2d(x, 2, 2, 5, 5, kd, 2, 3, 3, 0); },
                       rng);
            Tensor x0 = rand_tensor({1, 2, 4, 4}, rng);
            dvec xd = oracle::to_double(x0.vec());
            check_grad("conv2d_kernel", rand_tensor({3, 2, 3, 3}, rng),
                       [&](const Tensor& w) { return conv2d(x0, w, 1); },
                       [&](const dvec& w) { return oracle::conv2d(xd, 1, 2, 4, 4, w, 3, 3, 3, 1); },
                       rng);
        }
        // maxpool2: resample until window entries are well separated
        {
            Tensor x;
            for (;;) {
                x = rand_tensor({1, 2, 4, 4}, rng);
                bool ok = true;
                for (int p = 0; p < 2 && ok; ++p)
                    for (int r = 0; r < 2 && ok; ++r)
                        for (int q = 0; q < 2 && ok; ++q) {
                            float vals[4];
                            for (int di = 0; di < 2; ++di)
                                for (int dj = 0; dj < 2; ++dj)
                                    vals[di * 2 + dj] = x.data()[p * 16 + (2 * r + di) * 4 + 2 * q + dj];
                            for (int i = 0; i < 4; ++i)
                                for (int j = i + 1; j < 4; ++j)
                                    ok = ok && std::abs(vals[i] - vals[j]) > 0.05f;
                        }
                if (ok) break;
            }
            check_grad("maxpool2", x,
                       [](const Tensor& t) { return maxpool2(t); },
                       [](const dvec& t) { return oracle::maxpool2(t, 1, 2, 4, 4); },
                       rng);
        }
        // reshape
        check_grad("reshape", rand_tensor({2, 6}, rng),
                   [](const Tensor& x) { return reshape(x, {3, 4}); },
                   [](const dvec& x) { return x; },
                   rng);
        // softmax
        check_grad("softmax", rand_tensor({2, 4}, rng),
                   [](const Tensor& x) { return softmax(x); },
                   [](const dvec& x) {
                       dvec y;
                       for (int i = 0; i < 2; ++i) {
                           dvec r(x.begin() + i * 4, x.begin() + (i + 1) * 4);
                           dvec s = oracle::softmax_row(r);
                           y.insert(y.end(), s.begin(), s.end());
                       }
                       return y;
                   },
                   rng);
        // scalar-output ops: direct FD against the double path
        {
            auto check_scalar = [&](const char* what, const Tensor& x0,
                                    const std::function<Tensor(const Tensor&)>& op,
                                    const std::function<double(const dvec&)>& ref) {
                Tensor x = x0.clone();
                x.set_requires_grad(true);
                Tensor loss = op(x);
                backward(loss);
                dvec fd = oracle::fd_gradient(ref, oracle::to_double(x.vec()));
                const double err = oracle::max_rel_err(x.grad(), fd);
                INFO(std::string(what) << " max rel err " << err);
                CHECK(err < 1e-4);
            };
            check_scalar("sum", rand_tensor({9}, rng),
                         [](const Tensor& x) { return sum(x); },
                         [](const dvec& x) {
                             double a = 0.0;
                             for (double v : x) a += v;
                             return a;
                         });
            check_scalar("mean", rand_tensor({9}, rng),
                         [](const Tensor& x) { return mean(x); },
                         [](const dvec& x) {
                             double a = 0.0;
                             for (double v : x) a += v;
                             return a / static_cast<double>(x.size());
                         });
            check_scalar("l2_norm", rand_tensor({9}, rng, 0.2f, 1.0f),
                         [](const Tensor& x) { return l2_norm(x); },
                         [](const dvec& x) { return oracle::l2_norm(x); });
            Tensor logits = rand_tensor({3, 5}, rng);
            std::vector<int> labels = {rng.uniform_int(5), rng.uniform_int(5), rng.uniform_int(5)};
            check_scalar("softmax_cross_entropy", logits,
                         [&](const Tensor& x) { return softmax_cross_entropy(x, labels); },
                         [&](const dvec& x) { return oracle::softmax_ce(x, 3, 5, labels); });
        }
    }
}

TEST_CASE("clip output range and gradient masking") {
    Rng rng(99);
    Tensor x = rand_tensor({64}, rng, -2.0f, 2.0f);
    x.set_requires_grad(true);
    Tensor y = clip(x, 0.0f, 1.0f);
    for (std::int64_t i = 0; i < y.size(); ++i) {
        CHECK(y.data()[i] >= 0.0f);
        CHECK(y.data()[i] <= 1.0f);
    }
    backward(sum(y));
    auto g = x.grad();
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const float v = x.data()[i];
        if (v > 0.0f && v < 1.0f)
            CHECK(g[static_cast<std::size_t>(i)] == 1.0f);
        else
            CHECK(g[static_cast<std::size_t>(i)] == 0.0f);
    }
}

TEST_CASE("maxpool tie routes gradient to the first index") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {0.5f, 0.5f, 0.5f, 0.5f}, true);
    Tensor y = maxpool2(x);
    CHECK(y.item() == 0.5f);
    backward(sum(y));
    auto g = x.grad();
    CHECK(g[0] == 1.0f);
    CHECK(g[1] == 0.0f);
    CHECK(g[2] == 0.0f);
    CHECK(g[3] == 0.0f);
}

TEST_CASE("grads of unreachable tensors stay zero") {
    Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    Tensor unused = Tensor::from_data({2}, {3.0f, 4.0f}, true);
    backward(sum(square(x)));
    auto g = unused.grad();
    CHECK(g[0] == 0.0f);
    CHECK(g[1] == 0.0f);
}

TEST_CASE("forward determinism") {
    Rng rng(5);
    Tensor x = rand_tensor({2, 3, 6, 6}, rng);
    Tensor k = rand_tensor({4, 3, 3, 3}, rng);
    Tensor y1 = conv2d(x, k, 1);
    Tensor y2 = conv2d(x, k, 1);
    CHECK(y1.vec() == y2.vec());
}

TEST_CASE("seeded rng streams") {
    Rng a(0), b(0), c(1);
    std::vector<double> sa, sb, sc;
    for (int i = 0; i < 100; ++i) {
        sa.push_back(a.uniform());
        sb.push_back(b.uniform());
        sc.push_back(c.uniform());
    }
    CHECK(sa == sb);
    CHECK(sa != sc);
}

TEST_CASE("rng uniform mean statistic") {
    Rng rng(0);
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) acc += rng.uniform();
    const double m = acc / n;
    CHECK(m > 0.49);
    CHECK(m < 0.51);
}

TEST_CASE("rng normal moments and shuffle determinism") {
    Rng rng(42);
    double acc = 0.0, acc2 = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        acc += v;
        acc2 += v * v;
    }
    CHECK(std::abs(acc / n) < 0.02);
    CHECK(std::abs(acc2 / n - 1.0) < 0.03);

    std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7}, v2 = v1;
    Rng r1(9), r2(9);
    r1.shuffle(v1);
    r2.shuffle(v2);
    CHECK(v1 == v2);
}
