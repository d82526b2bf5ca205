#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

using namespace cpga;

namespace {

ParamSet small_mlp(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParamSet p;
    p.component = "mlp";
    const std::vector<int> widths{3, 5, 4, 2};
    append_mlp(p, "net", widths, rng);
    return p;
}

}  // namespace

TEST_CASE("append_mlp declares weight and bias per layer in order") {
    const ParamSet p = small_mlp(1);
    REQUIRE(p.names.size() == 6);
    CHECK(p.names[0] == "net.0.weight");
    CHECK(p.names[1] == "net.0.bias");
    CHECK(p.at("net.2.weight").rows() == 2);
    CHECK(p.at("net.2.weight").cols() == 4);
    CHECK(p.scalar_count() == 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
    CHECK(mlp_widths(p, 0, 3) == std::vector<int>{3, 5, 4, 2});
    CHECK_THROWS_AS(p.index_of("nope"), ContractError);
}

TEST_CASE("mlp backward matches central differences for every activation") {
    std::mt19937_64 rng(7);
    const Mat x = test::random_mat(4, 3, rng);
    const Mat w = test::random_mat(4, 2, rng);
    for (Activation hidden : {Activation::Tanh, Activation::Relu, Activation::Identity}) {
        const std::vector<Activation> acts{hidden, hidden, Activation::Identity};
        ParamSet p = small_mlp(11);
        auto loss = [&](const ParamSet& q) { return (mlp_forward(q, 0, acts, x, nullptr).array() * w.array()).sum(); };
        MlpCache cache;
        mlp_forward(p, 0, acts, x, &cache);
        Grads g = zero_grads(p);
        const Mat dx = mlp_backward(p, 0, acts, cache, w, &g);
        CHECK(test::param_gradient_error(p, loss, g) < 1e-6);
        auto fx = [&](const Vec& v) {
            return (mlp_forward(p, 0, acts, test::as_mat(v, 4, 3), nullptr).array() * w.array()).sum();
        };
        CHECK(test::relative_error(test::as_vec(dx), test::numeric_gradient(fx, test::as_vec(x))) < 1e-6);
    }
}

TEST_CASE("flatten and unflatten round trip") {
    ParamSet p = small_mlp(2);
    const Vec flat = flatten(p);
    ParamSet q = small_mlp(3);
    unflatten(flat, q);
    for (std::size_t i = 0; i < p.values.size(); ++i) CHECK(p.values[i] == q.values[i]);
    CHECK(p.hash() == q.hash());
    CHECK_THROWS_AS(unflatten(Vec::Zero(3), q), ShapeError);
}

TEST_CASE("hash changes with any single value") {
    ParamSet p = small_mlp(4);
    const auto h = p.hash();
    p.values[3](0, 1) = std::nextafter(p.values[3](0, 1), 10.0);
    CHECK(p.hash() != h);
}

TEST_CASE("sgd momentum update follows v = mu v + g, p -= lr v") {
    ParamSet p;
    p.component = "toy";
    p.add("w", Mat::Constant(1, 2, 1.0));
    Sgd opt(0.1, 0.9);
    const Grads g{Mat::Constant(1, 2, 2.0)};
    opt.step(p, g);
    CHECK(p.values[0](0, 0) == doctest::Approx(1.0 - 0.1 * 2.0));
    opt.step(p, g);
    CHECK(p.values[0](0, 0) == doctest::Approx(0.8 - 0.1 * (0.9 * 2.0 + 2.0)));
}

TEST_CASE("sgd refuses frozen parameters and bad settings") {
    ParamSet p = small_mlp(5);
    p.frozen = true;
    const auto h = p.hash();
    Sgd opt(0.1, 0.9);
    CHECK_THROWS_AS(opt.step(p, zero_grads(p)), ContractError);
    CHECK(p.hash() == h);
    CHECK_THROWS_AS(Sgd(0.0, 0.9), ConfigError);
    CHECK_THROWS_AS(Sgd(0.1, 1.0), ConfigError);
    CHECK_THROWS_AS(Sgd(0.1, 0.5, -1.0), ConfigError);
}
