#include <catch2/catch_amalgamated.hpp>

#include "mqrec/adamw.hpp"
#include "mqrec/grad.hpp"

using namespace mqrec;

TEST_CASE("adamw with zero gradient and zero decay is the identity") {
    AdamW opt({1e-2, 0.9, 0.999, 1e-8, 0.0});
    auto slot = opt.register_param(3);
    std::vector<double> p{1.0, -2.0, 0.5};
    const auto before = p;
    std::vector<double> g{0.0, 0.0, 0.0};
    for (int i = 0; i < 5; ++i) {
        opt.begin_step();
        opt.update(slot, p, g);
    }
    REQUIRE(p == before);
}

TEST_CASE("first step with beta1=beta2=0 moves by lr*sign(g)") {
    AdamW opt({0.1, 0.0, 0.0, 1e-15, 0.0});
    auto slot = opt.register_param(2);
    std::vector<double> p{1.0, 1.0};
    std::vector<double> g{0.3, -4.0};
    opt.begin_step();
    opt.update(slot, p, g);
    REQUIRE_THAT(p[0], Catch::Matchers::WithinAbs(1.0 - 0.1, 1e-9));
    REQUIRE_THAT(p[1], Catch::Matchers::WithinAbs(1.0 + 0.1, 1e-9));
}

TEST_CASE("decoupled decay scales parameters even with zero gradient") {
    AdamW opt({0.5, 0.9, 0.999, 1e-8, 0.01});
    auto slot = opt.register_param(1);
    std::vector<double> p{2.0};
    std::vector<double> g{0.0};
    opt.begin_step();
    opt.update(slot, p, g);
    REQUIRE_THAT(p[0], Catch::Matchers::WithinAbs(2.0 * (1.0 - 0.5 * 0.01), 1e-12));
}

TEST_CASE("adamw rejects mismatched shapes") {
    AdamW opt;
    auto slot = opt.register_param(2);
    std::vector<double> p{1.0, 2.0, 3.0};
    std::vector<double> g{0.0, 0.0, 0.0};
    opt.begin_step();
    CHECK_THROWS_AS(opt.update(slot, p, g), std::invalid_argument);
}

TEST_CASE("gradient routing") {
    std::vector<double> up{1.0, 2.0};
    auto sg = route_gradient(GradRoute::stop_gradient, up);
    REQUIRE(sg == std::vector<double>{0.0, 0.0});
    auto st = route_gradient(GradRoute::straight_through, up);
    REQUIRE(st == up);
    auto normal = route_gradient(GradRoute::normal, up);
    REQUIRE(normal == up);
}

TEST_CASE("finite difference utility on a quadratic") {
    std::vector<double> w{3.0};
    std::vector<double> analytic{6.0};
    auto f = [&]() { return w[0] * w[0]; };
    const double err = finite_difference_check(f, w, analytic, 1e-5);
    REQUIRE(err < 1e-8);
    REQUIRE_THAT(w[0], Catch::Matchers::WithinAbs(3.0, 0.0));  // restored in place

    CHECK_THROWS_AS(finite_difference_check(f, w, analytic, 0.0), std::invalid_argument);
}
