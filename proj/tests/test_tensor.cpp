#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <numbers>

#include "dvlm/errors.hpp"
#include "dvlm/rng.hpp"
#include "dvlm/tensor.hpp"

using namespace dvlm;

namespace {

// Central-difference oracle: perturbs one leaf coordinate at a time and
// re-evaluates the loss. Stays independent of the autodiff path it checks.
std::vector<double> fd_grad(Tensor leaf, const std::function<double()>& eval, double h) {
    std::vector<double> g(leaf.numel());
    auto& data = leaf.mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
        double keep = data[i];
        data[i] = keep + h;
        double up = eval();
        data[i] = keep - h;
        double down = eval();
        data[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
    return m;
}

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad) {
    return Tensor::from_data(shape, rng.gaussian_vector(shape_numel(shape), 1.0), requires_grad);
}

}  // namespace

TEST_CASE("matmul identity and forced arithmetic") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = matmul(eye, a);
    CHECK(out.data() == a.data());

    Tensor row = Tensor::from_data({1, 2}, {1, 2});
    Tensor col = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(row, col).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul backward matches central differences") {
    Rng rng(42);
    Tensor a = random_tensor({3, 4}, rng, true);
    Tensor b = random_tensor({4, 2}, rng, true);
    Tensor loss = sum(matmul(a, b));
    backward(loss);

    auto eval = [&]() { return sum(matmul(a, b)).item(); };
    auto fda = fd_grad(a, eval, 1e-5);
    auto fdb = fd_grad(b, eval, 1e-5);
    CHECK(max_rel_err(a.grad(), fda) < 1e-6);
    CHECK(max_rel_err(b.grad(), fdb) < 1e-6);
}

TEST_CASE("softmax symmetry and overflow safety") {
    Tensor x = Tensor::zeros({4});
    Tensor s = softmax(x, 0);
    for (size_t i = 0; i < 4; ++i) CHECK(s.at1(i) == doctest::Approx(0.25).epsilon(1e-12));

    Tensor big = Tensor::from_data({2}, {1000.0, 1000.0});
    Tensor sb = softmax(big, 0);
    CHECK(sb.at1(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::isfinite(sb.at1(1)));
}

TEST_CASE("softmax matches extended-precision scalar oracle") {
    Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0});
    Tensor s = softmax(x, 0);
    long double mx = 3.0L;
    long double denom = 0.0L;
    for (double v : x.data()) denom += std::exp(static_cast<long double>(v) - mx);
    for (size_t i = 0; i < 3; ++i) {
        long double expect = std::exp(static_cast<long double>(x.data()[i]) - mx) / denom;
        CHECK(std::abs(s.at1(i) - static_cast<double>(expect)) < 1e-12);
    }
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    Rng rng(7);
    Tensor x = random_tensor({16, 33}, rng, false);
    Tensor s = softmax(x, 1);
    for (size_t r = 0; r < 16; ++r) {
        double total = 0.0;
        for (size_t c = 0; c < 33; ++c) total += s.at2(r, c);
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax axis out of range") {
    Tensor x = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(softmax(x, 2), IndexError);
}

TEST_CASE("softmax backward matches central differences") {
    Rng rng(11);
    Tensor x = random_tensor({3, 5}, rng, true);
    Tensor w = random_tensor({3, 5}, rng, false);
    auto make_loss = [&]() { return sum(mul(softmax(x, 1), w)); };
    backward(make_loss());
    auto fd = fd_grad(x, [&]() { return make_loss().item(); }, 1e-6);
    CHECK(max_rel_err(x.grad(), fd) < 1e-6);
}

TEST_CASE("masked softmax ignores masked entries bitwise") {
    Rng rng(13);
    Tensor x = random_tensor({2, 4}, rng, false);
    std::vector<uint8_t> allowed = {1, 1, 0, 0, 1, 1, 1, 0};
    Tensor s1 = masked_softmax_rows(x, allowed);
    // Change the masked entries; allowed outputs must be bit-identical.
    auto data = x.data();
    data[2] = 1e9;
    data[3] = -1e9;
    data[7] = 123.0;
    Tensor x2 = Tensor::from_data({2, 4}, data);
    Tensor s2 = masked_softmax_rows(x2, allowed);
    for (size_t i = 0; i < 8; ++i) {
        if (allowed[i]) {
            CHECK(s1.data()[i] == s2.data()[i]);
        } else {
            CHECK(s1.data()[i] == 0.0);
        }
    }
}

TEST_CASE("layer_norm trivial cases") {
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    Tensor x = Tensor::full({3}, 5.0);
    Tensor out = layer_norm(x, gamma, beta, 1e-5);
    for (size_t i = 0; i < 3; ++i) CHECK(std::abs(out.at1(i)) < 1e-9);

    Tensor gamma0 = Tensor::zeros({3});
    Tensor beta7 = Tensor::full({3}, 7.0);
    Tensor out2 = layer_norm(Tensor::from_data({3}, {1.0, -4.0, 2.5}), gamma0, beta7, 1e-5);
    for (size_t i = 0; i < 3; ++i) CHECK(out2.at1(i) == doctest::Approx(7.0));
}

TEST_CASE("layer_norm matches scalar oracle") {
    Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0});
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    double eps = 1e-5;
    Tensor out = layer_norm(x, gamma, beta, eps);
    double mean = (1.0 + 2.0 + 3.0) / 3.0;
    double var = ((1 - mean) * (1 - mean) + (2 - mean) * (2 - mean) + (3 - mean) * (3 - mean)) / 3.0;
    for (size_t i = 0; i < 3; ++i) {
        double expect = (x.data()[i] - mean) / std::sqrt(var + eps);
        CHECK(std::abs(out.at1(i) - expect) < 1e-10);
    }
}

TEST_CASE("layer_norm normalizes slices: mean 0, var 1") {
    Rng rng(3);
    Tensor x = random_tensor({5, 16}, rng, false);
    Tensor gamma = Tensor::full({16}, 1.0);
    Tensor beta = Tensor::zeros({16});
    Tensor out = layer_norm(x, gamma, beta, 1e-10);
    for (size_t r = 0; r < 5; ++r) {
        double mean = 0.0, var = 0.0;
        for (size_t c = 0; c < 16; ++c) mean += out.at2(r, c);
        mean /= 16.0;
        for (size_t c = 0; c < 16; ++c) var += (out.at2(r, c) - mean) * (out.at2(r, c) - mean);
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("layer_norm gamma/beta mismatch") {
    Tensor x = Tensor::zeros({4});
    CHECK_THROWS_AS(layer_norm(x, Tensor::zeros({3}), Tensor::zeros({4}), 1e-5), ShapeError);
}

TEST_CASE("layer_norm backward matches central differences") {
    Rng rng(5);
    Tensor x = random_tensor({4, 6}, rng, true);
    Tensor gamma = random_tensor({6}, rng, true);
    Tensor beta = random_tensor({6}, rng, true);
    Tensor w = random_tensor({4, 6}, rng, false);
    auto make_loss = [&]() { return sum(mul(layer_norm(x, gamma, beta, 1e-5), w)); };
    backward(make_loss());
    auto eval = [&]() { return make_loss().item(); };
    CHECK(max_rel_err(x.grad(), fd_grad(x, eval, 1e-6)) < 1e-6);
    CHECK(max_rel_err(gamma.grad(), fd_grad(gamma, eval, 1e-6)) < 1e-6);
    CHECK(max_rel_err(beta.grad(), fd_grad(beta, eval, 1e-6)) < 1e-6);
}

TEST_CASE("gelu fixed points and asymptote") {
    CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(std::abs(gelu(Tensor::scalar(100.0)).item() - 100.0) < 1e-6);
}

TEST_CASE("gelu matches the tanh-approximation scalar oracle at x=1") {
    long double x = 1.0L;
    long double k = std::sqrt(2.0L / std::numbers::pi_v<long double>);
    long double expect = 0.5L * x * (1.0L + std::tanh(k * (x + 0.044715L * x * x * x)));
    CHECK(std::abs(gelu(Tensor::scalar(1.0)).item() - static_cast<double>(expect)) < 1e-12);
}

TEST_CASE("gelu monotone on a grid from -1 onward") {
    double prev = gelu(Tensor::scalar(-1.0)).item();
    for (double x = -0.95; x < 6.0; x += 0.05) {
        double v = gelu(Tensor::scalar(x)).item();
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("gelu backward matches central differences") {
    Rng rng(17);
    Tensor x = random_tensor({32}, rng, true);
    auto make_loss = [&]() { return sum(gelu(x)); };
    backward(make_loss());
    CHECK(max_rel_err(x.grad(), fd_grad(x, [&]() { return make_loss().item(); }, 1e-6)) < 1e-6);
}

TEST_CASE("cross_entropy uniform logits give ln V") {
    Tensor logits = Tensor::zeros({1, 256});
    Tensor loss = cross_entropy(logits, {17}, -1);
    CHECK(loss.item() == doctest::Approx(std::log(256.0)).epsilon(1e-10));
    CHECK(loss.item() == doctest::Approx(5.5452).epsilon(1e-4));
}

TEST_CASE("cross_entropy one-hot limit") {
    std::vector<double> data(7, 0.0);
    data[3] = 1e9;
    Tensor logits = Tensor::from_data({1, 7}, data);
    CHECK(cross_entropy(logits, {3}, -1).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross_entropy matches scalar log-sum-exp oracle") {
    Rng rng(23);
    Tensor logits = random_tensor({4, 7}, rng, false);
    std::vector<int> targets = {1, -1, 6, 0};
    Tensor loss = cross_entropy(logits, targets, -1);

    long double total = 0.0L;
    size_t kept = 0;
    for (size_t r = 0; r < 4; ++r) {
        if (targets[r] == -1) continue;
        long double mx = logits.at2(r, 0);
        for (size_t c = 1; c < 7; ++c) mx = std::max(mx, static_cast<long double>(logits.at2(r, c)));
        long double sum = 0.0L;
        for (size_t c = 0; c < 7; ++c) sum += std::exp(static_cast<long double>(logits.at2(r, c)) - mx);
        total += mx + std::log(sum) - logits.at2(r, static_cast<size_t>(targets[r]));
        ++kept;
    }
    CHECK(std::abs(loss.item() - static_cast<double>(total / kept)) < 1e-10);
}

TEST_CASE("cross_entropy error paths") {
    Tensor logits = Tensor::zeros({2, 5});
    CHECK_THROWS_AS(cross_entropy(logits, {-1, -1}, -1), ContractError);
    CHECK_THROWS_AS(cross_entropy(logits, {0, 5}, -1), IndexError);
}

TEST_CASE("cross_entropy backward matches central differences") {
    Rng rng(29);
    Tensor logits = random_tensor({5, 9}, rng, true);
    std::vector<int> targets = {0, 4, -1, 8, 2};
    auto make_loss = [&]() { return cross_entropy(logits, targets, -1); };
    backward(make_loss());
    CHECK(max_rel_err(logits.grad(), fd_grad(logits, [&]() { return make_loss().item(); }, 1e-6)) <
          1e-6);
}

TEST_CASE("backward on sum gives all-ones") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward through x*x at x=3 gives 6") {
    Tensor x = Tensor::scalar(3.0, true);
    backward(mul(x, x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss") {
    Tensor x = Tensor::zeros({3}, true);
    CHECK_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("backward twice accumulates at the leaves") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor loss = mul(x, x);
    backward(loss);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("tensors without requires_grad never get grad buffers") {
    Tensor x = Tensor::scalar(2.0, false);
    Tensor y = Tensor::scalar(4.0, true);
    backward(mul(x, y));
    CHECK(!x.has_grad());
    CHECK(y.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("structural ops round gradients correctly") {
    Rng rng(31);
    Tensor a = random_tensor({4, 3}, rng, true);
    Tensor b = random_tensor({2, 3}, rng, true);
    Tensor v = random_tensor({3}, rng, true);
    auto make_loss = [&]() {
        Tensor cat = concat_rows({a, b});                   // 6x3
        Tensor shifted = add_rowvec(cat, v);                // 6x3
        Tensor left = slice_rows(shifted, 1, 5);            // 4x3
        Tensor t = transpose(left);                         // 3x4
        Tensor cols = slice_cols(t, 1, 3);                  // 3x2
        return sum(mul(cols, cols));
    };
    backward(make_loss());
    auto eval = [&]() { return make_loss().item(); };
    CHECK(max_rel_err(a.grad(), fd_grad(a, eval, 1e-6)) < 1e-6);
    CHECK(max_rel_err(b.grad(), fd_grad(b, eval, 1e-6)) < 1e-6);
    CHECK(max_rel_err(v.grad(), fd_grad(v, eval, 1e-6)) < 1e-6);
}

TEST_CASE("embedding gather accumulates into repeated rows") {
    Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
    Tensor out = embedding_rows(table, {2, 0, 2});
    backward(sum(out));
    CHECK(table.grad()[0] == 1.0);  // row 0 used once
    CHECK(table.grad()[4] == 2.0);  // row 2 used twice
    CHECK(table.grad()[2] == 0.0);  // row 1 unused
    CHECK_THROWS_AS(embedding_rows(table, {3}), IndexError);
}

TEST_CASE("concat_cols splits gradients by column blocks") {
    Rng rng(37);
    Tensor a = random_tensor({3, 2}, rng, true);
    Tensor b = random_tensor({3, 4}, rng, true);
    auto make_loss = [&]() {
        Tensor cat = concat_cols({a, b});
        return sum(mul(cat, cat));
    };
    backward(make_loss());
    auto eval = [&]() { return make_loss().item(); };
    CHECK(max_rel_err(a.grad(), fd_grad(a, eval, 1e-6)) < 1e-6);
    CHECK(max_rel_err(b.grad(), fd_grad(b, eval, 1e-6)) < 1e-6);
}

TEST_CASE("identical seeds give bitwise-identical outputs and gradients") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor a = random_tensor({6, 6}, rng, true);
        Tensor b = random_tensor({6, 6}, rng, false);
        Tensor loss = sum(mul(softmax(matmul(a, b), 1), b));
        backward(loss);
        return std::make_pair(loss.item(), a.grad());
    };
    auto [l1, g1] = run(99);
    auto [l2, g2] = run(99);
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}
