#include <doctest.h>

#include <cmath>
#include <vector>

#include "lore/grad_check.hpp"
#include "lore/tensor.hpp"
#include "test_util.hpp"

using namespace lore;
using lore_test::as_tensor;
using lore_test::bitwise_equal;

namespace {

// Gradcheck driver: builds x from a seed, runs `f` on both scalar backends.
template <typename F>
double seeded_grad_check(F&& f, Shape shape, uint64_t seed, double eps = 1e-3,
                         float stddev = 1.0f) {
    Rng rng(seed);
    Tensor<float> x0 = Tensor<float>::randn(shape, rng, stddev);
    return grad_check(std::forward<F>(f), x0, eps);
}

// Scalarize an op output against a fixed random probe so full Jacobians are
// exercised through a single backward pass.
template <typename S>
Tensor<S> probe_dot(Tape<S>& tape, const Tensor<S>& y, const std::vector<float>& w) {
    Tensor<S> wt = as_tensor<S>(y.shape(), w);
    return sum(tape, mul(tape, y, wt));
}

}  // namespace

TEST_CASE("add/sub/mul forward basics") {
    Tape<float> t;
    auto a = Tensor<float>::from({2}, {1, 2});
    auto b = Tensor<float>::from({2}, {3, 4});
    auto s = add(t, a, b);
    CHECK(s.values()[0] == 4.0f);
    CHECK(s.values()[1] == 6.0f);
    auto d = sub(t, b, a);
    CHECK(d.values()[0] == 2.0f);
    auto m = mul(t, a, b);
    CHECK(m.values()[1] == 8.0f);
}

TEST_CASE("mul by zeros gives zeros with zero gradient") {
    Tape<float> t;
    auto x = Tensor<float>::from({3}, {1.5f, -2.0f, 0.25f}, true);
    auto z = Tensor<float>::zeros({3});
    auto y = mul(t, x, z);
    for (float v : y.values()) CHECK(v == 0.0f);
    auto loss = sum(t, y);
    t.backward(loss);
    REQUIRE(x.has_grad());
    for (float g : x.grad()) CHECK(g == 0.0f);
}

TEST_CASE("broadcast add over trailing dims") {
    Tape<float> t;
    auto a = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    auto b = Tensor<float>::from({3}, {10, 20, 30}, true);
    auto y = add(t, a, b);
    CHECK(y.values()[0] == 11.0f);
    CHECK(y.values()[5] == 36.0f);
    auto loss = sum(t, y);
    t.backward(loss);
    for (float g : b.grad()) CHECK(g == 2.0f);  // two rows fold into b
}

TEST_CASE("shape mismatch is rejected") {
    Tape<float> t;
    auto a = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor<float>::from({2}, {1, 2});
    CHECK_THROWS_AS((void)add(t, a, b), std::invalid_argument);
    auto c = Tensor<float>::from({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS((void)matmul(t, a, a), std::invalid_argument);
    CHECK_NOTHROW((void)matmul(t, a, c));
}

TEST_CASE("non-finite results are a checked error") {
    Tape<float> t;
    auto big = Tensor<float>::from({2}, {1e30f, 1e30f});
    CHECK_THROWS_AS((void)mul(t, big, big), numeric_error);
    auto neg = Tensor<float>::from({1}, {-1.0f});
    CHECK_THROWS_AS((void)lore::sqrt(t, neg), numeric_error);
    CHECK_THROWS_AS((void)lore::exp(t, Tensor<float>::from({1}, {200.0f})), numeric_error);
}

TEST_CASE("matmul forward: identity and 2x2 example") {
    Tape<float> t;
    auto eye = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
    auto b = Tensor<float>::from({2, 2}, {5, 6, 7, 8});
    CHECK(bitwise_equal(matmul(t, eye, b), b));

    auto a = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
    auto v = Tensor<float>::from({2, 1}, {5, 6});
    auto y = matmul(t, a, v);
    CHECK(y.values()[0] == 17.0f);
    CHECK(y.values()[1] == 39.0f);
}

TEST_CASE("softmax forward: symmetry and single element") {
    Tape<float> t;
    auto u = softmax_lastdim(t, Tensor<float>::zeros({4}));
    for (float v : u.values()) CHECK(v == doctest::Approx(0.25f).epsilon(1e-7));
    auto one = softmax_lastdim(t, Tensor<float>::from({1}, {123.0f}));
    CHECK(one.values()[0] == 1.0f);
    CHECK_THROWS_AS((void)softmax_lastdim(t, Tensor<float>::from({1}, {1.0f / 0.0f})),
                    numeric_error);
}

TEST_CASE("softmax rows sum to one on random input") {
    Rng rng(5);
    Tape<float> t;
    auto x = Tensor<float>::randn({16, 9}, rng, 3.0f);
    auto y = softmax_lastdim(t, x);
    auto v = y.values();
    for (int r = 0; r < 16; ++r) {
        double s = 0;
        for (int i = 0; i < 9; ++i) s += v[r * 9 + i];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("layernorm forward identities") {
    Tape<float> t;
    auto gamma = Tensor<float>::full({4}, 1.0f);
    auto beta = Tensor<float>::zeros({4});
    auto constant_row = Tensor<float>::full({1, 4}, 3.25f);
    auto y = layernorm(t, constant_row, gamma, beta, 1e-5f);
    for (float v : y.values()) CHECK(std::abs(v) < 1e-6f);

    Rng rng(8);
    auto x = Tensor<float>::randn({3, 4}, rng);
    auto beta2 = Tensor<float>::from({4}, {1, 2, 3, 4});
    auto y2 = layernorm(t, x, gamma, beta2, 1e-5f);
    auto v = y2.values();
    for (int r = 0; r < 3; ++r) {
        double m = 0;
        for (int i = 0; i < 4; ++i) m += v[r * 4 + i];
        CHECK(std::abs(m / 4.0 - 2.5) < 1e-5);  // beta mean
    }
    CHECK_THROWS_AS((void)layernorm(t, x, gamma, beta, 0.0f), std::invalid_argument);
}

TEST_CASE("backward: sum of squares gives 2x") {
    Tape<float> t;
    auto x = Tensor<float>::from({3}, {1, 2, -3}, true);
    auto loss = sum(t, mul(t, x, x));
    t.backward(loss);
    auto g = x.grad();
    CHECK(g[0] == 2.0f);
    CHECK(g[1] == 4.0f);
    CHECK(g[2] == -6.0f);
}

TEST_CASE("backward requires a scalar root and an unspent tape") {
    Tape<float> t;
    auto x = Tensor<float>::from({2}, {1, 2}, true);
    auto y = mul(t, x, x);
    CHECK_THROWS_AS(t.backward(y), std::invalid_argument);
    auto loss = sum(t, y);
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), std::logic_error);
    t.reset();
}

TEST_CASE("detached subgraph receives no gradient") {
    Tape<float> t;
    auto x = Tensor<float>::from({2}, {1, 2}, true);
    auto y = mul(t, x, x);
    auto stopped = y.detach();
    auto z = mul(t, stopped, stopped);
    auto loss = sum(t, z);
    CHECK(loss.requires_grad() == false);
    // x is not an ancestor of loss; backward on a grad-free root is an error
    CHECK_THROWS_AS(t.backward(loss), std::invalid_argument);
    CHECK(!x.has_grad());

    // mixing detached and live paths: only the live path contributes
    Tape<float> t2;
    auto a = Tensor<float>::from({2}, {3, 4}, true);
    auto live = mul(t2, a, a);
    auto frozen = live.detach();
    auto out = sum(t2, add(t2, live, frozen));
    t2.backward(out);
    CHECK(a.grad()[0] == 6.0f);  // only d(live)/da
    CHECK(a.grad()[1] == 8.0f);
}

TEST_CASE("bit-exact determinism of an op pipeline") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tape<float> t;
        auto a = Tensor<float>::randn({24, 24}, rng);
        auto b = Tensor<float>::randn({24, 24}, rng);
        auto y = softmax_lastdim(t, matmul(t, gelu(t, a), b));
        auto s = silu(t, mul(t, y, y));
        return std::vector<float>(s.values().begin(), s.values().end());
    };
    auto r1 = run(99), r2 = run(99);
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(float)) == 0);
}

TEST_CASE("grad_check: sum is exact to fd noise") {
    auto f = [](auto& tape, const auto& x) { return sum(tape, x); };
    CHECK(seeded_grad_check(f, {5}, 1) < 1e-9);
}

TEST_CASE("grad_check: sum of squares at [1,2]") {
    auto x = Tensor<float>::from({2}, {1, 2});
    auto f = [](auto& tape, const auto& x) { return sum(tape, mul(tape, x, x)); };
    CHECK(grad_check(f, x, 1e-3) < 1e-6);
}

TEST_CASE("grad_check rejects a non-deterministic function") {
    int calls = 0;
    auto f = [&calls](auto& tape, const auto& x) {
        using S = std::decay_t<decltype(x.values()[0])>;
        ++calls;
        return scale(tape, sum(tape, x), S(1) + S(calls % 7) * S(0.125));
    };
    auto x = Tensor<float>::from({3}, {1, 2, 3});
    CHECK_THROWS_AS((void)grad_check(f, x, 1e-3), numeric_error);
}

// --- per-op gradient sweeps (100 seeds each, fd oracle in f64) -------------

TEST_CASE("gradients: elementwise suite over 100 seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto unary = [&](auto op, float stddev = 1.0f) {
            Rng wr(seed * 31 + 7);
            std::vector<float> w = lore_test::randn_vec(8, wr);
            auto f = [&](auto& tape, const auto& x) {
                return probe_dot(tape, op(tape, x), w);
            };
            return seeded_grad_check(f, {8}, seed, 1e-3, stddev);
        };
        CHECK(unary([](auto& t, const auto& x) { return gelu(t, x); }) <= 1e-4);
        CHECK(unary([](auto& t, const auto& x) { return silu(t, x); }) <= 1e-4);
        CHECK(unary([](auto& t, const auto& x) { return lore::exp(t, x); }) <= 1e-4);
        CHECK(unary([](auto& t, const auto& x) {
                  using S = std::decay_t<decltype(x.values()[0])>;
                  return scale(t, x, S(1.7));
              }) <= 1e-4);
        CHECK(unary([](auto& t, const auto& x) {
                  using S = std::decay_t<decltype(x.values()[0])>;
                  return add_const(t, x, S(0.3));
              }) <= 1e-4);

        // sqrt needs positive input: shift well away from zero
        {
            Rng rng(seed + 500);
            std::vector<float> xv(8);
            for (auto& v : xv) v = 0.5f + 2.0f * rng.uniform_f();
            Rng wr(seed * 31 + 8);
            std::vector<float> w = lore_test::randn_vec(8, wr);
            auto f = [&](auto& tape, const auto& x) {
                return probe_dot(tape, lore::sqrt(tape, x), w);
            };
            CHECK(grad_check(f, Tensor<float>::from({8}, xv), 1e-3) <= 1e-4);
        }

        // binary ops
        {
            Rng rng(seed + 900);
            std::vector<float> bv = lore_test::randn_vec(8, rng);
            std::vector<float> w = lore_test::randn_vec(8, rng);
            auto fa = [&](auto& tape, const auto& x) {
                using S = std::decay_t<decltype(x.values()[0])>;
                Tensor<S> b = as_tensor<S>({8}, bv);
                return probe_dot(tape, mul(tape, x, b), w);
            };
            CHECK(seeded_grad_check(fa, {8}, seed) <= 1e-4);
            auto fs = [&](auto& tape, const auto& x) {
                using S = std::decay_t<decltype(x.values()[0])>;
                Tensor<S> b = as_tensor<S>({8}, bv);
                return probe_dot(tape, sub(tape, x, b), w);
            };
            CHECK(seeded_grad_check(fs, {8}, seed) <= 1e-4);
        }
    }
}

TEST_CASE("gradients: clamp away from its kinks") {
    // clamp is not differentiable at lo/hi; keep samples clear of both.
    const float lo = -0.7f, hi = 0.9f;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 2000);
        std::vector<float> xv(8);
        for (auto& v : xv) {
            v = 4.0f * rng.uniform_f() - 2.0f;
            if (std::abs(v - lo) < 0.02f) v += 0.05f;
            if (std::abs(v - hi) < 0.02f) v += 0.05f;
        }
        std::vector<float> w = lore_test::randn_vec(8, rng);
        auto f = [&](auto& tape, const auto& x) {
            using S = std::decay_t<decltype(x.values()[0])>;
            return probe_dot(tape, clamp(tape, x, S(lo), S(hi)), w);
        };
        CHECK(grad_check(f, Tensor<float>::from({8}, xv), 1e-3) <= 1e-4);
    }
}

TEST_CASE("gradients: matmul both factors over 100 seeds") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 3000);
        std::vector<float> bv = lore_test::randn_vec(5 * 3, rng);
        std::vector<float> av = lore_test::randn_vec(4 * 5, rng);
        std::vector<float> w = lore_test::randn_vec(4 * 3, rng);
        auto fa = [&](auto& tape, const auto& x) {
            using S = std::decay_t<decltype(x.values()[0])>;
            auto a2 = reshape(tape, x, {4, 5});
            Tensor<S> b = as_tensor<S>({5, 3}, bv);
            return probe_dot(tape, matmul(tape, a2, b), w);
        };
        CHECK(seeded_grad_check(fa, {20}, seed) <= 1e-4);
        auto fb = [&](auto& tape, const auto& x) {
            using S = std::decay_t<decltype(x.values()[0])>;
            auto b2 = reshape(tape, x, {5, 3});
            Tensor<S> a = as_tensor<S>({4, 5}, av);
            return probe_dot(tape, matmul(tape, a, b2), w);
        };
        CHECK(seeded_grad_check(fb, {15}, seed) <= 1e-4);
    }
}

TEST_CASE("gradients: softmax jacobian at random 6-vector") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 4000);
        std::vector<float> w = lore_test::randn_vec(6, rng);
        auto f = [&](auto& tape, const auto& x) {
            return probe_dot(tape, softmax_lastdim(tape, x), w);
        };
        CHECK(seeded_grad_check(f, {6}, seed) <= 1e-4);
    }
}

TEST_CASE("gradients: layernorm wrt input, gamma, beta") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 5000);
        std::vector<float> gv = lore_test::randn_vec(8, rng);
        std::vector<float> bv = lore_test::randn_vec(8, rng);
        std::vector<float> xv = lore_test::randn_vec(24, rng);
        std::vector<float> w = lore_test::randn_vec(24, rng);
        auto fx = [&](auto& tape, const auto& x) {
            using S = std::decay_t<decltype(x.values()[0])>;
            auto x2 = reshape(tape, x, {3, 8});
            return probe_dot(tape, layernorm(tape, x2, as_tensor<S>({8}, gv),
                                             as_tensor<S>({8}, bv), S(1e-5)),
                             w);
        };
        CHECK(seeded_grad_check(fx, {24}, seed) <= 1e-4);
        auto fg = [&](auto& tape, const auto& g) {
            using S = std::decay_t<decltype(g.values()[0])>;
            return probe_dot(tape, layernorm(tape, as_tensor<S>({3, 8}, xv), g,
                                             as_tensor<S>({8}, bv), S(1e-5)),
                             w);
        };
        CHECK(grad_check(fg, Tensor<float>::from({8}, gv), 1e-3) <= 1e-4);
        auto fb = [&](auto& tape, const auto& b) {
            using S = std::decay_t<decltype(b.values()[0])>;
            return probe_dot(tape, layernorm(tape, as_tensor<S>({3, 8}, xv),
                                             as_tensor<S>({8}, gv), b, S(1e-5)),
                             w);
        };
        CHECK(grad_check(fb, Tensor<float>::from({8}, bv), 1e-3) <= 1e-4);
    }
}

TEST_CASE("gradients: shape/structure ops") {
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 6000);
        std::vector<float> w6 = lore_test::randn_vec(6, rng);
        std::vector<float> w12 = lore_test::randn_vec(12, rng);
        std::vector<float> other = lore_test::randn_vec(6, rng);

        auto f_slice = [&](auto& tape, const auto& x) {
            auto m = reshape(tape, x, {4, 3});
            return probe_dot(tape, slice_rows(tape, m, 1, 2), w6);
        };
        CHECK(seeded_grad_check(f_slice, {12}, seed) <= 1e-4);

        auto f_slice_c = [&](auto& tape, const auto& x) {
            auto m = reshape(tape, x, {3, 4});
            return probe_dot(tape, slice_cols(tape, m, 1, 2), w6);
        };
        CHECK(seeded_grad_check(f_slice_c, {12}, seed) <= 1e-4);

        auto f_concat = [&](auto& tape, const auto& x) {
            using S = std::decay_t<decltype(x.values()[0])>;
            auto m = reshape(tape, x, {2, 3});
            Tensor<S> o = as_tensor<S>({2, 3}, other);
            return probe_dot(tape, concat_rows(tape, {m, o}), w12);
        };
        CHECK(seeded_grad_check(f_concat, {6}, seed) <= 1e-4);

        auto f_concat_c = [&](auto& tape, const auto& x) {
            using S = std::decay_t<decltype(x.values()[0])>;
            auto m = reshape(tape, x, {2, 3});
            Tensor<S> o = as_tensor<S>({2, 3}, other);
            return probe_dot(tape, concat_cols(tape, {m, o}), w12);
        };
        CHECK(seeded_grad_check(f_concat_c, {6}, seed) <= 1e-4);

        auto f_transpose = [&](auto& tape, const auto& x) {
            auto m = reshape(tape, x, {3, 4});
            return probe_dot(tape, transpose(tape, m), w12);
        };
        CHECK(seeded_grad_check(f_transpose, {12}, seed) <= 1e-4);

        auto f_repeat = [&](auto& tape, const auto& x) {
            auto m = reshape(tape, x, {2, 3});
            return probe_dot(tape, repeat_rows(tape, m, 2), w12);
        };
        CHECK(seeded_grad_check(f_repeat, {6}, seed) <= 1e-4);

        auto f_tile = [&](auto& tape, const auto& x) {
            auto m = reshape(tape, x, {2, 3});
            return probe_dot(tape, tile_rows(tape, m, 2), w12);
        };
        CHECK(seeded_grad_check(f_tile, {6}, seed) <= 1e-4);

        auto f_mean = [&](auto& tape, const auto& x) { return mean(tape, x); };
        CHECK(seeded_grad_check(f_mean, {12}, seed) <= 1e-4);
    }
}

TEST_CASE("gradients: embedding scatter") {
    const std::vector<int> ids = {2, 0, 2, 1};
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 7000);
        std::vector<float> w = lore_test::randn_vec(ids.size() * 3, rng);
        auto f = [&](auto& tape, const auto& x) {
            auto table = reshape(tape, x, {4, 3});
            return probe_dot(tape, embedding(tape, table, std::span<const int>(ids)), w);
        };
        CHECK(seeded_grad_check(f, {12}, seed) <= 1e-4);
    }
}

TEST_CASE("gradients: masked_max routes to the argmax only") {
    std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 1};
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 8000);
        std::vector<float> xv = lore_test::randn_vec(6, rng);
        // keep a clear winner so the fd stencil cannot flip the argmax
        int best = 0;
        for (int i = 1; i < 6; ++i)
            if (mask[i] && xv[i] > xv[best]) best = i;
        xv[best] += 0.2f;
        auto f = [&](auto& tape, const auto& x) { return masked_max(tape, x, mask); };
        CHECK(grad_check(f, Tensor<float>::from({6}, xv), 1e-3) <= 1e-4);
    }
    Tape<float> t;
    CHECK_THROWS_AS(
        (void)masked_max(t, Tensor<float>::from({2}, {1, 2}), std::vector<uint8_t>{0, 0}),
        std::invalid_argument);
}

TEST_CASE("gradients: conv2d_replicate") {
    const std::vector<float> kernel = {0.0625f, 0.125f, 0.0625f, 0.125f, 0.25f,
                                       0.125f,  0.0625f, 0.125f, 0.0625f};
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed + 9000);
        std::vector<float> w = lore_test::randn_vec(36, rng);
        auto f = [&](auto& tape, const auto& x) {
            using S = std::decay_t<decltype(x.values()[0])>;
            auto m = reshape(tape, x, {6, 6});
            std::vector<S> ks(kernel.begin(), kernel.end());
            return probe_dot(tape, conv2d_replicate(tape, m, 3, ks), w);
        };
        CHECK(seeded_grad_check(f, {36}, seed) <= 1e-4);
    }
}

TEST_CASE("mix_rows forward and gradient") {
    std::vector<uint8_t> keep = {1, 0, 1, 0};
    Rng rng(42);
    std::vector<float> cachef = lore_test::randn_vec(12, rng);
    std::vector<float> w = lore_test::randn_vec(12, rng);
    auto f = [&](auto& tape, const auto& x) {
        using S = std::decay_t<decltype(x.values()[0])>;
        auto live = reshape(tape, x, {4, 3});
        std::vector<S> cache(cachef.begin(), cachef.end());
        return probe_dot(tape, mix_rows(tape, live, std::span<const S>(cache), keep), w);
    };
    CHECK(seeded_grad_check(f, {12}, 1) <= 1e-4);

    Tape<float> t;
    auto live = Tensor<float>::from({4, 3}, lore_test::randn_vec(12, rng));
    auto mixed = mix_rows(t, live, std::span<const float>(cachef), keep);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 3; ++c) {
            const float want = keep[r] ? live.values()[r * 3 + c] : cachef[r * 3 + c];
            CHECK(mixed.values()[r * 3 + c] == want);
        }
}
