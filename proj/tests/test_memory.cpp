#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"

#include "clipmem/grad_check.hpp"
#include "clipmem/memory.hpp"
#include "support.hpp"

using namespace clipmem;
using memory::Infusion;
using memory::MemoryVariant;
using numcore::Shape;
using numcore::Tensor;
using testsupport::max_abs_diff;
using testsupport::random_tensor;

namespace {

Tensor eye(std::size_t n) {
    auto t = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
    return t;
}

std::vector<Tensor> random_clips(std::size_t n, std::size_t k, std::size_t d, std::mt19937_64& g) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor({k, d}, g));
    return out;
}

// (1/N) sum_n (X_n Wk)^T (X_n Wv) with explicit loops.
std::vector<double> push_by_loops(const std::vector<Tensor>& xs, const Tensor& wk,
                                  const Tensor& wv) {
    const std::size_t k = xs[0].dim(0), d = wk.dim(0), r = wk.dim(1);
    std::vector<double> m(r * r, 0.0);
    for (const auto& x : xs) {
        for (std::size_t row = 0; row < k; ++row) {
            std::vector<double> key(r, 0.0), val(r, 0.0);
            for (std::size_t a = 0; a < r; ++a)
                for (std::size_t c = 0; c < d; ++c) {
                    key[a] += x.at(row, c) * wk.at(c, a);
                    val[a] += x.at(row, c) * wv.at(c, a);
                }
            for (std::size_t a = 0; a < r; ++a)
                for (std::size_t b = 0; b < r; ++b) m[a * r + b] += key[a] * val[b] / xs.size();
        }
    }
    return m;
}

memory::CMParams random_cm(MemoryVariant variant, Infusion infusion, std::size_t d, std::size_t r,
                           std::mt19937_64& g) {
    memory::CMParams p;
    p.variant = variant;
    p.infusion = infusion;
    p.channels = d;
    p.reduced = r;
    p.w_key = random_tensor({d, r}, g, -1, 1);
    p.w_value = random_tensor({d, r}, g, -1, 1);
    p.w_query = random_tensor({d, r}, g, -1, 1);
    p.w_in = random_tensor({d, r}, g, -1, 1);
    p.w_out = random_tensor({r, d}, g, -1, 1);
    return p;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("variant and infusion names") {
    CHECK(memory::parse_variant("associative") == MemoryVariant::associative);
    CHECK(memory::parse_variant("avgpool") == MemoryVariant::avgpool);
    CHECK(memory::parse_infusion("gating") == Infusion::gating);
    CHECK(memory::parse_infusion("residual") == Infusion::residual);
    CHECK(memory::to_string(MemoryVariant::avgpool) == "avgpool");
    CHECK(memory::to_string(Infusion::residual) == "residual");
    CHECK_THROWS(memory::parse_variant("softmax"));
    CHECK_THROWS(memory::parse_infusion("concat"));
}

TEST_CASE("init_cm shapes and zero output projection") {
    memory::Rng rng(1);
    const auto p = memory::init_cm(16, 4, MemoryVariant::associative, Infusion::gating, rng);
    CHECK(p.reduced == 4);
    CHECK(p.w_key.shape() == Shape{16, 4});
    CHECK(p.w_out.shape() == Shape{4, 16});
    for (double v : p.w_out.data()) CHECK(v == 0.0);
    std::vector<numcore::NamedTensor> names;
    memory::append_parameters(p, names);
    REQUIRE(names.size() == 4);
    CHECK(names[0].name == "cm.w_key");
    CHECK(names[3].name == "cm.w_out");

    const auto a = memory::init_cm(16, 4, MemoryVariant::avgpool, Infusion::gating, rng);
    names.clear();
    memory::append_parameters(a, names);
    REQUIRE(names.size() == 2);
    CHECK(names[0].name == "cm.w_in");
    CHECK_THROWS_AS(memory::init_cm(4, 8, MemoryVariant::associative, Infusion::gating, rng),
                    numcore::DimensionError);
}

TEST_CASE("push_associative examples") {
    const std::vector<Tensor> one{Tensor::matrix({{1, 2}})};
    const auto m1 = memory::push_associative(one, eye(2), eye(2));
    CHECK(std::vector<double>(m1.value.data().begin(), m1.value.data().end()) ==
          std::vector<double>{1, 2, 2, 4});

    const std::vector<Tensor> two{Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}})};
    const auto m2 = memory::push_associative(two, eye(2), eye(2));
    CHECK(std::vector<double>(m2.value.data().begin(), m2.value.data().end()) ==
          std::vector<double>{0.5, 0, 0, 0.5});

    std::mt19937_64 g(3);
    const std::vector<Tensor> zeros(3, Tensor::zeros({2, 4}));
    const auto m0 = memory::push_associative(zeros, random_tensor({4, 2}, g), random_tensor({4, 2}, g));
    for (double v : m0.value.data()) CHECK(v == 0.0);

    const auto xs = random_clips(4, 3, 5, g);
    const auto wk = random_tensor({5, 2}, g), wv = random_tensor({5, 2}, g);
    CHECK(max_abs_diff(memory::push_associative(xs, wk, wv).value.data(), push_by_loops(xs, wk, wv)) <=
          1e-12);

    const std::vector<Tensor> ragged{Tensor::zeros({2, 5}), Tensor::zeros({3, 5})};
    CHECK_THROWS_AS(memory::push_associative(ragged, wk, wv), numcore::DimensionError);
}

TEST_CASE("pop_associative examples") {
    std::mt19937_64 g(4);
    const auto x = random_tensor({3, 4}, g);
    const memory::GlobalMemory identity{MemoryVariant::associative, eye(4)};
    CHECK(max_abs_diff(memory::pop_associative(identity, x, eye(4)).value.data(), x.data()) <= 1e-15);

    const memory::GlobalMemory zero{MemoryVariant::associative, Tensor::zeros({2, 2})};
    const auto popped = memory::pop_associative(zero, x, random_tensor({4, 2}, g));
    for (double v : popped.value.data()) CHECK(v == 0.0);

    const auto xs = random_clips(5, 3, 4, g);
    const auto wq = random_tensor({4, 2}, g), wk = random_tensor({4, 2}, g),
               wv = random_tensor({4, 2}, g);
    const auto m = memory::push_associative(xs, wk, wv);
    for (std::size_t n = 0; n < xs.size(); ++n) {
        const auto pop = memory::pop_associative(m, xs[n], wq);
        CHECK(pop.value.shape() == Shape{3, 2});
        CHECK(max_abs_diff(pop.value.data(), memory::attention_oracle(xs, n, wq, wk, wv).value.data()) <=
              1e-9);
    }

    const memory::GlobalMemory pooled{MemoryVariant::avgpool, Tensor::zeros({1, 2})};
    CHECK_THROWS_AS(memory::pop_associative(pooled, x, wq), memory::VariantError);
    CHECK_THROWS_AS(memory::pop_avgpool(m), memory::VariantError);
}

TEST_CASE("push_avgpool examples") {
    std::mt19937_64 g(5);
    const auto x = random_tensor({1, 4}, g);
    const auto wi = random_tensor({4, 2}, g);
    const std::vector<Tensor> same(3, x);
    const auto pooled = memory::push_avgpool(same, wi);
    CHECK(pooled.value.shape() == Shape{1, 2});
    CHECK(max_abs_diff(pooled.value.data(), numcore::matmul(x, wi).data()) <= 1e-15);

    const auto xs = random_clips(4, 3, 4, g);
    const auto silent = memory::push_avgpool(xs, Tensor::zeros({4, 2}));
    for (double v : silent.value.data()) CHECK(v == 0.0);

    // Two-step: per-clip row means, then the mean over clips.
    std::vector<double> expected(2, 0.0);
    for (const auto& c : xs) {
        const auto proj = numcore::matmul(c, wi);
        for (std::size_t j = 0; j < 2; ++j) {
            double clip_mean = 0.0;
            for (std::size_t r = 0; r < 3; ++r) clip_mean += proj.at(r, j) / 3.0;
            expected[j] += clip_mean / 4.0;
        }
    }
    const auto m = memory::push_avgpool(xs, wi);
    CHECK(max_abs_diff(m.value.data(), expected) <= 1e-12);
    CHECK(max_abs_diff(memory::pop_avgpool(m).value.data(), m.value.data()) == 0.0);
}

TEST_CASE("infuse_gating examples") {
    std::mt19937_64 g(6);
    const auto x = random_tensor({3, 4}, g);
    const memory::ClipMemory mem{random_tensor({3, 2}, g)};
    const auto same = memory::infuse_gating(x, mem, Tensor::zeros({2, 4}));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same.at(i) == 1.5 * x.at(i));

    // GAP of [[1,0],[1,0]] is [1,0]; W_O maps it to the pre-activation [10,-10].
    const memory::ClipMemory unit{Tensor::matrix({{1, 0}, {1, 0}})};
    const auto w_out = Tensor::matrix({{10, -10}, {0, 0}});
    const auto out = memory::infuse_gating(Tensor::matrix({{1, -1}}), unit, w_out);
    CHECK(out.at(0) == doctest::Approx(1.0 + sigmoid(10.0)).epsilon(1e-15));
    CHECK(out.at(1) == doctest::Approx(-(1.0 + sigmoid(-10.0))).epsilon(1e-15));
    CHECK(out.at(0) == doctest::Approx(1.9999546).epsilon(1e-7));
    CHECK(out.at(1) == doctest::Approx(-1.0000454).epsilon(1e-7));
}

TEST_CASE("gating keeps signs and bounds for any input") {
    std::mt19937_64 g(7);
    for (int trial = 0; trial < 200; ++trial) {
        const auto x = random_tensor({2, 5}, g, -50, 50, false);
        const memory::ClipMemory mem{random_tensor({2, 3}, g, -50, 50, false)};
        const auto out = memory::infuse_gating(x, mem, random_tensor({3, 5}, g, -50, 50, false));
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double a = std::abs(x.at(i)), b = std::abs(out.at(i));
            CHECK(a <= b);
            CHECK(b <= 2.0 * a);
            CHECK((x.at(i) >= 0) == (out.at(i) >= 0));
        }
    }
}

TEST_CASE("infuse_residual examples") {
    std::mt19937_64 g(8);
    const auto x = random_tensor({3, 4}, g);
    const memory::ClipMemory mem{random_tensor({3, 2}, g)};
    CHECK(max_abs_diff(memory::infuse_residual(x, mem, Tensor::zeros({2, 4})).data(), x.data()) == 0.0);
    const memory::ClipMemory zero{Tensor::zeros({3, 2})};
    CHECK(max_abs_diff(memory::infuse_residual(x, zero, random_tensor({2, 4}, g)).data(), x.data()) ==
          0.0);

    const auto w_out = random_tensor({2, 4}, g);
    const auto out = memory::infuse_residual(x, mem, w_out);
    const auto delta = numcore::sub(out, x);
    CHECK(max_abs_diff(delta.data(), numcore::matmul(mem.value, w_out).data()) <= 1e-12);

    const memory::ClipMemory row{random_tensor({1, 2}, g)};
    const auto broadcast = memory::infuse_residual(x, row, w_out);
    const auto ctx = numcore::matmul(row.value, w_out);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(broadcast.at(r, c) == doctest::Approx(x.at(r, c) + ctx.at(0, c)));

    const memory::ClipMemory bad{random_tensor({2, 2}, g)};
    CHECK_THROWS_AS(memory::infuse_residual(x, bad, w_out), numcore::DimensionError);
}

TEST_CASE("attention_oracle examples") {
    std::mt19937_64 g(9);
    const auto wq = random_tensor({4, 3}, g), wk = random_tensor({4, 3}, g), wv = random_tensor({4, 3}, g);
    const std::vector<Tensor> single{random_tensor({2, 4}, g)};
    const auto self = memory::attention_oracle(single, 0, wq, wk, wv);
    const auto q = numcore::matmul(single[0], wq), k = numcore::matmul(single[0], wk),
               v = numcore::matmul(single[0], wv);
    const auto expected = numcore::matmul(numcore::matmul(q, numcore::transpose(k)), v);
    CHECK(max_abs_diff(self.value.data(), expected.data()) <= 1e-12);

    auto xs = random_clips(5, 2, 4, g);
    const auto before = memory::attention_oracle(xs, 0, wq, wk, wv);
    auto moved = xs;
    std::rotate(moved.begin(), moved.begin() + 2, moved.end());  // clip 0 moves to index 3
    CHECK(max_abs_diff(memory::attention_oracle(moved, 3, wq, wk, wv).value.data(),
                       before.value.data()) <= 1e-12);
    CHECK_THROWS_AS(memory::attention_oracle(xs, 5, wq, wk, wv), numcore::DimensionError);
}

TEST_CASE("oracle equivalence over random configurations") {
    std::mt19937_64 g(10);
    std::uniform_int_distribution<std::size_t> n_dist(1, 8), k_dist(1, 6), d_dist(1, 16), r_dist(1, 8);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = n_dist(g), k = k_dist(g), d = d_dist(g), r = r_dist(g);
        const auto xs = random_clips(n, k, d, g);
        const auto wq = random_tensor({d, r}, g), wk = random_tensor({d, r}, g),
                   wv = random_tensor({d, r}, g);
        const auto m = memory::push_associative(xs, wk, wv);
        for (std::size_t i = 0; i < n; ++i)
            worst = std::max(worst, max_abs_diff(memory::pop_associative(m, xs[i], wq).value.data(),
                                                 memory::attention_oracle(xs, i, wq, wk, wv).value.data()));
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("push is invariant to clip order") {
    std::mt19937_64 g(11);
    auto xs = random_clips(6, 3, 8, g);
    const auto wk = random_tensor({8, 2}, g), wv = random_tensor({8, 2}, g), wi = random_tensor({8, 2}, g);
    const auto a = memory::push_associative(xs, wk, wv);
    const auto p = memory::push_avgpool(xs, wi);
    std::shuffle(xs.begin(), xs.end(), g);
    CHECK(max_abs_diff(memory::push_associative(xs, wk, wv).value.data(), a.value.data()) <= 1e-12);
    CHECK(max_abs_diff(memory::push_avgpool(xs, wi).value.data(), p.value.data()) <= 1e-12);
}

TEST_CASE("memory size does not depend on N") {
    std::mt19937_64 g(12);
    const auto wk = random_tensor({8, 2}, g), wv = random_tensor({8, 2}, g), wi = random_tensor({8, 2}, g);
    for (std::size_t n = 1; n <= 64; ++n) {
        const auto xs = random_clips(n, 2, 8, g);
        CHECK(memory::push_associative(xs, wk, wv).value_count() == 4);
        CHECK(memory::push_avgpool(xs, wi).value_count() == 2);
    }
}

TEST_CASE("flops_cm") {
    CHECK(memory::flops_cm(1, 1, 1, 1) == 7);
    CHECK(memory::flops_cm(10, 2, 16, 4) == 10 * (3 * 2 * 16 * 4 + 2 * 16 + 2 * 16 + 4 * 16 + 2 * 16));
    for (std::uint64_t n = 1; n < 20; ++n)
        CHECK(memory::flops_cm(2 * n, 3, 8, 2) == 2 * memory::flops_cm(n, 3, 8, 2));
    // Doubling k leaves only the W_O term unchanged.
    const auto k1 = memory::flops_cm(4, 2, 8, 2), k2 = memory::flops_cm(4, 4, 8, 2);
    CHECK(k2 - 4 * 2 * 8 == 2 * (k1 - 4 * 2 * 8));

    std::mt19937_64 g(13);
    std::uniform_int_distribution<std::size_t> small(1, 6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = small(g), k = small(g), r = small(g), d = r * small(g);
        const auto p = random_cm(MemoryVariant::associative, Infusion::gating, d, r, g);
        const auto xs = random_clips(n, k, d, g);
        numcore::MacCounter counter;
        (void)memory::collaborate(xs, p);
        CHECK(counter.count() == memory::flops_cm(n, k, d, r));
    }
}

TEST_CASE("push-pop-infuse gradients for all four combinations") {
    std::mt19937_64 g(14);
    for (auto variant : {MemoryVariant::associative, MemoryVariant::avgpool}) {
        for (auto infusion : {Infusion::gating, Infusion::residual}) {
            auto p = random_cm(variant, infusion, 6, 3, g);
            auto xs = random_clips(3, 2, 6, g);
            const auto target = random_tensor({2, 6}, g, -1, 1, false);
            auto loss = [&] {
                const auto out = memory::collaborate(xs, p);
                Tensor acc = numcore::sum_all(numcore::mul(out[0], target));
                for (std::size_t i = 1; i < out.size(); ++i)
                    acc = numcore::add(acc, numcore::sum_all(numcore::sigmoid(out[i])));
                return acc;
            };
            std::vector<numcore::NamedTensor> params;
            memory::append_parameters(p, params);
            for (std::size_t i = 0; i < xs.size(); ++i) params.push_back({"x" + std::to_string(i), xs[i]});
            CAPTURE(memory::to_string(variant));
            CAPTURE(memory::to_string(infusion));
            CHECK(numcore::grad_check(loss, params).max_rel_diff <= 1e-7);
        }
    }
}
