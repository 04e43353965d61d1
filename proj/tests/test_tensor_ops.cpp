#include <doctest.h>

#include <cmath>

#include "calclab/ops.hpp"
#include "calclab/rng.hpp"
#include "calclab/tensor.hpp"

using namespace calclab;

namespace {

// independent triple-loop product, the reference for matmul
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    Tensor c = Tensor::zeros({a.dim(0), b.dim(1)});
    for (std::int64_t i = 0; i < a.dim(0); ++i) {
        for (std::int64_t j = 0; j < b.dim(1); ++j) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < a.dim(1); ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    }
    return c;
}

}  // namespace

TEST_CASE("matmul identity cases") {
    Rng rng(42);
    Tensor b = Tensor::randn({3, 3}, rng, 1.0);
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    Tensor out = matmul(eye, b);
    for (std::int64_t i = 0; i < 9; ++i) CHECK(out.at(i) == doctest::Approx(b.at(i)).epsilon(0));

    Tensor m = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    Tensor id2 = Tensor::from_values({2, 2}, {1, 0, 0, 1});
    Tensor same = matmul(m, id2);
    CHECK(same.at(0, 0) == 1.0);
    CHECK(same.at(0, 1) == 2.0);
    CHECK(same.at(1, 0) == 3.0);
    CHECK(same.at(1, 1) == 4.0);
}

TEST_CASE("matmul matches the triple-loop reference") {
    Rng rng(7);
    Tensor a = Tensor::randn({4, 5}, rng, 1.0);
    Tensor b = Tensor::randn({5, 3}, rng, 1.0);
    Tensor fast = matmul(a, b);
    Tensor slow = naive_matmul(a, b);
    for (std::int64_t i = 0; i < fast.numel(); ++i) {
        CHECK(std::abs(fast.at(i) - slow.at(i)) < 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), shape_error);
    try {
        matmul(a, b);
    } catch (const shape_error& e) {
        CHECK(std::string(e.what()).find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("matmul_nt equals matmul with an explicit transpose") {
    Rng rng(9);
    Tensor a = Tensor::randn({4, 6}, rng, 1.0);
    Tensor b = Tensor::randn({5, 6}, rng, 1.0);
    Tensor bt = Tensor::zeros({6, 5});
    for (std::int64_t i = 0; i < 5; ++i) {
        for (std::int64_t j = 0; j < 6; ++j) bt.at(j, i) = b.at(i, j);
    }
    Tensor x = matmul_nt(a, b);
    Tensor y = matmul(a, bt);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.at(i) == doctest::Approx(y.at(i)).epsilon(1e-15));
}

TEST_CASE("softmax symmetry and stabilization") {
    Tensor two = softmax_lastdim(Tensor::from_values({2}, {0.0, 0.0}));
    CHECK(two.at(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(two.at(1) == doctest::Approx(0.5).epsilon(1e-12));

    Tensor large = softmax_lastdim(Tensor::from_values({3}, {1000.0, 1000.0, 1000.0}));
    for (int i = 0; i < 3; ++i) {
        CHECK(std::isfinite(large.at(i)));
        CHECK(large.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax([1,2,3]) matches the high-precision oracle") {
    // frozen from a 40-digit arbitrary-precision evaluation
    const double expected[3] = {0.090030573170380458, 0.24472847105479765, 0.66524095577482189};
    Tensor out = softmax_lastdim(Tensor::from_values({3}, {1.0, 2.0, 3.0}));
    for (int i = 0; i < 3; ++i) CHECK(out.at(i) == doctest::Approx(expected[i]).epsilon(1e-14));
}

TEST_CASE("softmax rejects NaN input") {
    CHECK_THROWS_AS(softmax_lastdim(Tensor::from_values({2}, {0.0, std::nan("")})), numeric_error);
}

TEST_CASE("softmax rows always sum to one") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::int64_t rows = 1 + static_cast<std::int64_t>(rng.below(6));
        const std::int64_t cols = 1 + static_cast<std::int64_t>(rng.below(12));
        Tensor x = Tensor::randn({rows, cols}, rng, 5.0);
        Tensor y = softmax_lastdim(x);
        for (std::int64_t r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) {
                CHECK(y.at(r, j) >= 0.0);
                sum += y.at(r, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("causal softmax rows are distributions over the lower triangle") {
    Rng rng(13);
    Tensor scores = Tensor::randn({6, 6}, rng, 3.0);
    Tensor y = causal_softmax(scores);
    for (std::int64_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < 6; ++j) {
            if (j > i) CHECK(y.at(i, j) == 0.0);
            sum += y.at(i, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
}

TEST_CASE("layernorm fixed points and moments") {
    const double eps = 1e-5;
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});

    SUBCASE("constant slice maps to bias") {
        Tensor x = Tensor::full({1, 4}, 3.25);
        Tensor b2 = Tensor::from_values({4}, {0.5, -0.5, 1.0, 0.0});
        Tensor y = layernorm(x, gain, b2, eps);
        for (int j = 0; j < 4; ++j) CHECK(y.at(0, j) == doctest::Approx(b2.at(j)).epsilon(1e-12));
    }

    SUBCASE("already-normalized slice is a fixed point") {
        // zero mean, unit variance exactly
        Tensor x = Tensor::from_values({1, 4}, {1.0, -1.0, 1.0, -1.0});
        Tensor y = layernorm(x, gain, bias, eps);
        for (int j = 0; j < 4; ++j) CHECK(y.at(0, j) == doctest::Approx(x.at(0, j)).epsilon(1e-5));
    }

    SUBCASE("random slices have zero mean and unit variance") {
        Rng rng(17);
        Tensor x = Tensor::randn({3, 16}, rng, 2.5);
        Tensor y = layernorm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}), eps);
        for (std::int64_t r = 0; r < 3; ++r) {
            double mean = 0.0, var = 0.0;
            for (std::int64_t j = 0; j < 16; ++j) mean += y.at(r, j);
            mean /= 16.0;
            for (std::int64_t j = 0; j < 16; ++j) var += (y.at(r, j) - mean) * (y.at(r, j) - mean);
            var /= 16.0;
            CHECK(std::abs(mean) < 1e-6);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
        }
    }
}

TEST_CASE("cross entropy limit, uniform, and oracle cases") {
    SUBCASE("dominant logit drives the loss to zero") {
        Tensor logits = Tensor::from_values({4}, {50.0, 0.0, 0.0, 0.0});
        CHECK(cross_entropy(logits, 0).item() < 1e-12);
    }
    SUBCASE("uniform logits over V=4 give ln 4") {
        Tensor logits = Tensor::full({4}, 0.7);
        CHECK(cross_entropy(logits, 2).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("matches the high-precision oracle") {
        // frozen from a 40-digit arbitrary-precision evaluation of -log softmax
        Tensor logits = Tensor::from_values({8}, {0.1, -1.2, 2.3, 0.7, -0.4, 1.5, -2.1, 0.9});
        CHECK(cross_entropy(logits, 3).item() == doctest::Approx(2.3506166373592451).epsilon(1e-14));
    }
    SUBCASE("out-of-range target") {
        CHECK_THROWS_AS(cross_entropy(Tensor::zeros({4}), 4), data_error);
        CHECK_THROWS_AS(cross_entropy(Tensor::zeros({4}), -1), data_error);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("loss = mean of elements gives uniform grads") {
        Tape tape;
        Tensor x = Tensor::from_values({3}, {1.0, 2.0, 3.0}, true);
        // sum via matmul with ones
        Tensor xm = Tensor::from_values({1, 3}, {1.0, 2.0, 3.0}, true);
        Tensor ones = Tensor::full({3, 1}, 1.0);
        Tensor s = matmul(xm, ones, &tape);
        Tensor loss = select_row(s, 0, &tape);
        CHECK(loss.numel() == 1);
        tape.backward(loss);
        for (int i = 0; i < 3; ++i) CHECK(xm.grad()[static_cast<std::size_t>(i)] == doctest::Approx(1.0));
        CHECK_FALSE(x.has_grad());  // x never participated
    }

    SUBCASE("backward on a non-scalar is a contract error") {
        Tape tape;
        Tensor x = Tensor::zeros({2, 2}, true);
        CHECK_THROWS_AS(tape.backward(x), numeric_error);
    }

    SUBCASE("tensors the loss does not depend on get no grad") {
        Tape tape;
        Tensor a = Tensor::from_values({1, 2}, {1.0, 2.0}, true);
        Tensor b = Tensor::from_values({1, 2}, {5.0, 5.0}, true);
        Tensor w = Tensor::full({2, 1}, 1.0);
        Tensor loss = select_row(matmul(a, w, &tape), 0, &tape);
        tape.backward(loss);
        CHECK(a.has_grad());
        CHECK_FALSE(b.has_grad());
    }
}

TEST_CASE("single-op gradients match central finite differences") {
    Rng rng(23);
    const double h = 1e-6;
    auto fd_check = [&](auto make_loss, Tensor& param) {
        Tape tape;
        Tensor loss = make_loss(&tape);
        tape.backward(loss);
        std::vector<double> analytic(param.grad().begin(), param.grad().end());
        for (std::int64_t i = 0; i < param.numel(); ++i) {
            const double keep = param.at(i);
            param.at(i) = keep + h;
            const double up = make_loss(nullptr).item();
            param.at(i) = keep - h;
            const double dn = make_loss(nullptr).item();
            param.at(i) = keep;
            const double fd = (up - dn) / (2 * h);
            CHECK(std::abs(analytic[static_cast<std::size_t>(i)] - fd) / std::max(1e-8, std::abs(fd)) < 1e-4);
        }
    };

    SUBCASE("layernorm + gelu + matmul chain") {
        Tensor x = Tensor::randn({2, 6}, rng, 1.0, true);
        Tensor gain = Tensor::randn({6}, rng, 0.3, true);
        Tensor bias = Tensor::randn({6}, rng, 0.3, true);
        Tensor w = Tensor::randn({6, 5}, rng, 0.5, true);
        auto make_loss = [&](Tape* tape) {
            Tensor y = matmul(gelu(layernorm(x, gain, bias, 1e-5, tape), tape), w, tape);
            return cross_entropy(select_row(y, 1, tape), 2, tape);
        };
        fd_check(make_loss, x);
        fd_check(make_loss, gain);
        fd_check(make_loss, w);
    }

    SUBCASE("attention-shaped chain with causal softmax") {
        Tensor q = Tensor::randn({4, 3}, rng, 1.0, true);
        Tensor k = Tensor::randn({4, 3}, rng, 1.0, true);
        Tensor v = Tensor::randn({4, 3}, rng, 1.0, true);
        auto make_loss = [&](Tape* tape) {
            Tensor pattern = causal_softmax(scale(matmul_nt(q, k, tape), 0.57, tape), tape);
            Tensor out = matmul(pattern, v, tape);
            return cross_entropy(select_row(out, 3, tape), 0, tape);
        };
        fd_check(make_loss, q);
        fd_check(make_loss, k);
        fd_check(make_loss, v);
    }

    SUBCASE("silu and bias") {
        Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
        Tensor b = Tensor::randn({4}, rng, 1.0, true);
        auto make_loss = [&](Tape* tape) {
            Tensor y = silu(add_bias(x, b, tape), tape);
            return cross_entropy(select_row(y, 0, tape), 1, tape);
        };
        fd_check(make_loss, x);
        fd_check(make_loss, b);
    }
}

TEST_CASE("forward determinism is bit-exact") {
    Rng rng1(99), rng2(99);
    Tensor a1 = Tensor::randn({8, 8}, rng1, 1.0);
    Tensor a2 = Tensor::randn({8, 8}, rng2, 1.0);
    Tensor y1 = softmax_lastdim(matmul(a1, a1));
    Tensor y2 = softmax_lastdim(matmul(a2, a2));
    for (std::int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.at(i) == y2.at(i));
}
