#include <doctest.h>

#include <cmath>
#include <limits>

#include "mcre/neural.hpp"
#include "mcre/rng.hpp"

using namespace mcre;

namespace {

double scalar_forward(const Mlp& net, const std::vector<double>& x) {
    return forward(net, x)[0];
}

}  // namespace

TEST_CASE("layout and zero network") {
    Rng rng = make_rng(41, 0);
    Mlp net = Mlp::make({3, 5, 2}, Mlp::Output::identity, 1.0, rng);
    CHECK(net.n_params() == 3 * 5 + 5 + 5 * 2 + 2);
    CHECK(net.params.size() == net.n_params());
    for (double& p : net.params) p = 0.0;
    const auto y = forward(net, {1.0, -2.0, 3.0});
    REQUIRE(y.size() == 2);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
}

TEST_CASE("single linear layer is a plain matrix product") {
    Rng rng = make_rng(42, 0);
    Mlp net = Mlp::make({2, 2}, Mlp::Output::identity, 1.0, rng);
    // W row-major then b: y_i = W[i][0] x0 + W[i][1] x1 + b_i
    net.params = {1.0, 2.0, -3.0, 0.5, 0.25, -0.75};
    const auto y = forward(net, {2.0, -1.0});
    CHECK(y[0] == doctest::Approx(1.0 * 2 + 2.0 * -1 + 0.25));
    CHECK(y[1] == doctest::Approx(-3.0 * 2 + 0.5 * -1 - 0.75));
}

TEST_CASE("hidden rectifier gates negative preactivations") {
    Rng rng = make_rng(43, 0);
    Mlp net = Mlp::make({1, 1, 1}, Mlp::Output::identity, 1.0, rng);
    // hidden: w=1, b=0; output: w=1, b=0  => y = max(x, 0)
    net.params = {1.0, 0.0, 1.0, 0.0};
    CHECK(scalar_forward(net, {2.0}) == doctest::Approx(2.0));
    CHECK(scalar_forward(net, {-2.0}) == doctest::Approx(0.0));
}

TEST_CASE("bounded output stays inside [-bound, bound]") {
    Rng rng = make_rng(44, 0);
    Mlp net = Mlp::make({2, 8, 1}, Mlp::Output::bounded, 0.7, rng);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (int t = 0; t < 200; ++t) {
        const double y = scalar_forward(net, {u(rng), u(rng)});
        CHECK(std::abs(y) <= 0.7);
    }
    // bound * tanh: a zero network outputs exactly 0
    for (double& p : net.params) p = 0.0;
    CHECK(scalar_forward(net, {3.0, -4.0}) == doctest::Approx(0.0));
}

TEST_CASE("backward matches finite differences") {
    Rng rng = make_rng(45, 0);
    const double h = 1e-6;
    for (const auto out : {Mlp::Output::identity, Mlp::Output::bounded}) {
        Mlp net = Mlp::make({3, 8, 8, 2}, out, 0.9, rng);
        const std::vector<double> x = {0.3, -1.1, 0.7};
        const std::vector<double> up = {0.8, -0.4};  // dL/dy
        const Gradients g = backward(net, x, up);
        REQUIRE(g.params.size() == net.n_params());
        REQUIRE(g.input.size() == 3);

        auto loss = [&](const Mlp& n, const std::vector<double>& in) {
            const auto y = forward(n, in);
            return up[0] * y[0] + up[1] * y[1];
        };
        std::uniform_int_distribution<std::size_t> pick(0, net.n_params() - 1);
        for (int t = 0; t < 25; ++t) {
            const std::size_t i = pick(rng);
            Mlp plus = net, minus = net;
            plus.params[i] += h;
            minus.params[i] -= h;
            const double fd = (loss(plus, x) - loss(minus, x)) / (2 * h);
            CHECK(g.params[i] ==
                  doctest::Approx(fd).epsilon(1e-5).scale(std::max(1.0, std::abs(fd))));
        }
        for (std::size_t i = 0; i < 3; ++i) {
            std::vector<double> xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fd = (loss(net, xp) - loss(net, xm)) / (2 * h);
            CHECK(g.input[i] ==
                  doctest::Approx(fd).epsilon(1e-5).scale(std::max(1.0, std::abs(fd))));
        }
    }
}

TEST_CASE("backward with zero upstream is zero") {
    Rng rng = make_rng(46, 0);
    Mlp net = Mlp::make({2, 4, 1}, Mlp::Output::identity, 1.0, rng);
    const Gradients g = backward(net, {1.0, 2.0}, {0.0});
    for (double v : g.params) CHECK(v == 0.0);
    for (double v : g.input) CHECK(v == 0.0);
}

TEST_CASE("linear-layer weight gradient is the outer product") {
    Rng rng = make_rng(47, 0);
    Mlp net = Mlp::make({2, 2}, Mlp::Output::identity, 1.0, rng);
    const std::vector<double> x = {1.5, -0.5};
    const std::vector<double> up = {2.0, -1.0};
    const Gradients g = backward(net, x, up);
    // dL/dW[i][j] = up_i * x_j, dL/db_i = up_i
    CHECK(g.params[0] == doctest::Approx(2.0 * 1.5));
    CHECK(g.params[1] == doctest::Approx(2.0 * -0.5));
    CHECK(g.params[2] == doctest::Approx(-1.0 * 1.5));
    CHECK(g.params[3] == doctest::Approx(-1.0 * -0.5));
    CHECK(g.params[4] == doctest::Approx(2.0));
    CHECK(g.params[5] == doctest::Approx(-1.0));
}

TEST_CASE("optimizer_step") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        std::vector<double> w = {1.0, -2.0};
        OptimState st = OptimState::make(2, 1e-2);
        optimizer_step(w, {0.0, 0.0}, st);
        CHECK(w[0] == 1.0);
        CHECK(w[1] == -2.0);
        CHECK(st.step == 1);
    }
    SUBCASE("moves against the gradient") {
        std::vector<double> w = {1.0};
        OptimState st = OptimState::make(1, 1e-2);
        optimizer_step(w, {5.0}, st);
        CHECK(w[0] < 1.0);
    }
    SUBCASE("drives a quadratic bowl to the origin") {
        std::vector<double> w = {3.0, -2.0};
        OptimState st = OptimState::make(2, 1e-2);
        for (int t = 0; t < 2000; ++t) optimizer_step(w, {2 * w[0], 2 * w[1]}, st);
        CHECK(std::abs(w[0]) < 1e-3);
        CHECK(std::abs(w[1]) < 1e-3);
    }
    SUBCASE("non-finite gradients raise TrainingDivergenceError") {
        std::vector<double> w = {1.0};
        OptimState st = OptimState::make(1);
        CHECK_THROWS_AS(
            optimizer_step(w, {std::numeric_limits<double>::quiet_NaN()}, st),
            TrainingDivergenceError);
    }
}

TEST_CASE("soft_update blends elementwise") {
    std::vector<double> target = {1.0, 2.0};
    const std::vector<double> online = {3.0, -2.0};
    std::vector<double> t0 = target;
    soft_update(t0, online, 0.0);
    CHECK(t0 == target);
    std::vector<double> t1 = target;
    soft_update(t1, online, 1.0);
    CHECK(t1 == online);
    std::vector<double> th = target;
    soft_update(th, online, 0.5);
    CHECK(th[0] == doctest::Approx(2.0));
    CHECK(th[1] == doctest::Approx(0.0));
    // repeated updates contract toward the online params at rate (1 - tau)
    std::vector<double> tr = {1.0};
    const std::vector<double> on = {0.0};
    soft_update(tr, on, 0.25);
    CHECK(tr[0] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("manifest round trip") {
    Rng rng = make_rng(48, 0);
    const Mlp net = Mlp::make({2, 16, 1}, Mlp::Output::bounded, 0.5, rng);
    const std::string man = mlp_manifest(net);
    const Mlp back = mlp_from_manifest(man, net.params);
    CHECK(back.layer_dims == net.layer_dims);
    CHECK(back.output == net.output);
    CHECK(back.bound == net.bound);
    CHECK(back.params == net.params);
    CHECK(mlp_manifest(back) == man);
    CHECK_THROWS_AS(mlp_from_manifest(man, std::vector<double>(3, 0.0)), MdpError);
}

TEST_CASE("little-endian f64 blob round trip") {
    const std::vector<double> v = {0.0, -1.5, 3.14159, 1e-300, -0.0};
    std::string blob;
    write_f64_le(blob, v);
    CHECK(blob.size() == v.size() * 8);
    const std::vector<double> back = read_f64_le(blob, 0, v.size());
    CHECK(back == v);
    CHECK_THROWS_AS(read_f64_le(blob, 0, v.size() + 1), MdpError);
}
