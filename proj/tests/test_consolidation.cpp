#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "consolidate/penalty.hpp"
#include "consolidate/rng.hpp"

using namespace ewc;

namespace {

Network tiny_net(std::uint64_t seed) {
    Network net({784}, {Dense{784, 2}, ReLU{}, Dense{2, 10}, SoftmaxOutput{}});
    net.seeded_init(seed);
    return net;
}

ImportanceMap random_map(const Network& net, std::uint64_t seed) {
    ImportanceMap map = ImportanceMap::zeros(net.param_count(), Method::FisherLabel);
    Rng rng(seed);
    for (double& v : map.omega) v = rng.uniform();
    map.n_samples_used = 1;
    return map;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("ewc_penalty_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("penalty value matches hand arithmetic on two parameters") {
    // Two weights, omega = [3, 2], w* = [1, -1], w = [1.5, -2].
    // original, lambda = 5:
    //   (5/2) * (3 * 0.25 + 2 * 1) = 2.5 * 2.75 = 6.875
    Network net({1}, {Dense{1, 1}, SoftmaxOutput{}});  // 2 params: w, b
    auto w = net.params();
    ImportanceMap map = ImportanceMap::zeros(2, Method::FisherLabel);
    map.omega[0] = 3.0;
    map.omega[1] = 2.0;
    w[0] = 1.0;
    w[1] = -1.0;
    ConsolidatedState orig = consolidate(net, map, {PenaltyKind::Original, 5.0, 0.1});
    ConsolidatedState stab = consolidate(net, map, {PenaltyKind::Stabilized, 5.0, 0.1});
    w[0] = 1.5;
    w[1] = -2.0;
    CHECK(penalty_value(orig, net.params()) == doctest::Approx(6.875));

    // stabilized with alpha = 0.1: effective omega = om / (0.1*5*om + 1)
    //   om0 -> 3/2.5 = 1.2, om1 -> 2/2 = 1
    //   (5/2) * (1.2 * 0.25 + 1 * 1) = 2.5 * 1.3 = 3.25
    CHECK(penalty_value(stab, net.params()) == doctest::Approx(3.25));

    // gradients by the same hand trace: lambda * eff_om * (w - w*)
    GradientVector g = penalty_gradient(orig, net.params());
    CHECK(g[0] == doctest::Approx(5.0 * 3.0 * 0.5));
    CHECK(g[1] == doctest::Approx(5.0 * 2.0 * -1.0));
    g = penalty_gradient(stab, net.params());
    CHECK(g[0] == doctest::Approx(5.0 * 1.2 * 0.5));
    CHECK(g[1] == doctest::Approx(5.0 * 1.0 * -1.0));
}

TEST_CASE("penalty gradient matches finite differences of penalty value") {
    for (PenaltyKind kind : {PenaltyKind::Original, PenaltyKind::Stabilized}) {
        CAPTURE(penalty_name(kind));
        Network net = tiny_net(11);
        ConsolidatedState state = consolidate(net, random_map(net, 5), {kind, 7.5, 0.02});
        // move off the anchor so the gradient is nonzero
        auto w = net.params();
        Rng rng(9);
        for (double& v : w) v += 0.2 * (rng.uniform() - 0.5);

        GradientVector g = penalty_gradient(state, net.params());
        const double h = 1e-6;
        for (std::size_t i : {std::size_t(0), std::size_t(100), net.param_count() - 1}) {
            const double saved = w[i];
            w[i] = saved + h;
            const double up = penalty_value(state, net.params());
            w[i] = saved - h;
            const double down = penalty_value(state, net.params());
            w[i] = saved;
            CHECK(g[i] == doctest::Approx((up - down) / (2.0 * h)).epsilon(1e-6));
        }
    }
}

TEST_CASE("stabilized SGD increment factor is bounded below 1 for any omega") {
    // The stabilized penalty's contribution to one SGD step scales (w - w*)
    // by alpha*lambda*om/(alpha*lambda*om + 1), which must stay in [0, 1).
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const double alpha = std::pow(10.0, -4.0 + 4.0 * rng.uniform());
        const double lambda = std::pow(10.0, -2.0 + 8.0 * rng.uniform());
        const double om = std::pow(10.0, -6.0 + 12.0 * rng.uniform());
        const double factor = 1.0 - step_factor(PenaltyKind::Stabilized, alpha, lambda, om);
        CHECK(factor >= 0.0);
        CHECK(factor < 1.0);
        // distance to the anchor never grows
        CHECK(std::abs(step_factor(PenaltyKind::Stabilized, alpha, lambda, om)) <= 1.0);
    }
}

TEST_CASE("stabilized factor agrees with the original one when alo is small") {
    // alpha*lambda*om/(alo+1) = alo - alo^2/(alo+1), so the gap to the
    // original increment alo is at most alo^2.
    Rng rng(23);
    for (int trial = 0; trial < 1000; ++trial) {
        const double alpha = 1e-3 * rng.uniform();
        const double lambda = 10.0 * rng.uniform();
        const double om = rng.uniform();
        const double alo = alpha * lambda * om;
        const double orig_inc = 1.0 - step_factor(PenaltyKind::Original, alpha, lambda, om);
        const double stab_inc = 1.0 - step_factor(PenaltyKind::Stabilized, alpha, lambda, om);
        CHECK(orig_inc == doctest::Approx(alo));
        CHECK(std::abs(stab_inc - alo) <= alo * alo + 1e-15);
    }
}

TEST_CASE("stabilized effective importance is monotone in omega") {
    const double alpha = 0.001, lambda = 40.0;
    double prev = -1.0;
    for (double om = 0.0; om <= 100.0; om += 0.5) {
        const double eff = om / (alpha * lambda * om + 1.0);
        CHECK(eff >= prev);
        prev = eff;
    }
}

TEST_CASE("explosion demo: original grows geometrically, stabilized decays") {
    // alpha*lambda*om = 2.5 -> original multiplies |w - w*| by 1.5 per step
    const double alpha = 0.5, lambda = 5.0, om = 1.0;
    ExplosionTrajectory orig = explosion_demo(alpha, lambda, om, 10, PenaltyKind::Original);
    REQUIRE(orig.distances.size() == 11);
    CHECK(orig.distances[0] == doctest::Approx(1.0));
    for (std::size_t s = 1; s < orig.distances.size(); ++s)
        CHECK(orig.distances[s] == doctest::Approx(std::pow(1.5, double(s))));

    ExplosionTrajectory stab = explosion_demo(alpha, lambda, om, 10, PenaltyKind::Stabilized);
    REQUIRE(stab.distances.size() == 11);
    for (std::size_t s = 1; s < stab.distances.size(); ++s)
        CHECK(stab.distances[s] == doctest::Approx(std::pow(1.0 / 3.5, double(s))));
}

TEST_CASE("explosion demo: alo = 1 kills the distance in one original step") {
    ExplosionTrajectory t = explosion_demo(1.0, 1.0, 1.0, 3, PenaltyKind::Original);
    REQUIRE(t.distances.size() == 4);
    CHECK(t.distances[0] == doctest::Approx(1.0));
    CHECK(t.distances[1] == 0.0);
    CHECK(t.distances[3] == 0.0);
}

TEST_CASE("explosion demo flags divergence instead of emitting non-finite values") {
    ExplosionTrajectory t = explosion_demo(10.0, 100.0, 1.0, 2000, PenaltyKind::Original);
    CHECK(t.diverged);
    for (double d : t.distances) CHECK(std::isfinite(d));
}

TEST_CASE("a consolidated toy network is pulled back toward its anchor") {
    // 2-parameter quadratic-only dynamics: plain SGD with just the penalty
    // gradient must shrink the distance to w* under both penalty kinds.
    for (PenaltyKind kind : {PenaltyKind::Original, PenaltyKind::Stabilized}) {
        CAPTURE(penalty_name(kind));
        Network net({1}, {Dense{1, 1}, SoftmaxOutput{}});
        auto w = net.params();
        w[0] = 0.3;
        w[1] = -0.7;
        ImportanceMap map = ImportanceMap::zeros(2, Method::FisherLabel);
        map.omega[0] = 2.0;
        map.omega[1] = 0.5;
        ConsolidatedState state = consolidate(net, map, {kind, 4.0, 0.05});
        w[0] += 1.0;
        w[1] -= 1.0;
        double prev_dist = std::hypot(w[0] - 0.3, w[1] + 0.7);
        for (int step = 0; step < 50; ++step) {
            GradientVector g = penalty_gradient(state, net.params());
            for (std::size_t i = 0; i < 2; ++i) w[i] -= 0.05 * g[i];
            const double dist = std::hypot(w[0] - 0.3, w[1] + 0.7);
            CHECK(dist <= prev_dist);
            prev_dist = dist;
        }
        CHECK(prev_dist < 0.05);
    }
}

TEST_CASE("lambda = 0 and kind = none are inert") {
    Network net = tiny_net(31);
    ConsolidatedState zero = consolidate(net, random_map(net, 3), {PenaltyKind::Original, 0.0, 0.1});
    ConsolidatedState none = consolidate(net, random_map(net, 3), {PenaltyKind::None, 40.0, 0.1});
    auto w = net.params();
    for (double& v : w) v += 0.1;
    CHECK(penalty_value(zero, net.params()) == 0.0);
    CHECK(penalty_value(none, net.params()) == 0.0);
    GradientVector g(net.param_count(), 0.25);
    add_penalty_gradient(zero, net.params(), g);
    add_penalty_gradient(none, net.params(), g);
    for (double v : g) CHECK(v == 0.25);
}

TEST_CASE("consolidate validates its inputs") {
    Network net = tiny_net(37);
    ImportanceMap bad = ImportanceMap::zeros(3, Method::FisherLabel);
    CHECK_THROWS_AS(consolidate(net, bad, {}), ShapeError);
    ImportanceMap ok = random_map(net, 1);
    CHECK_THROWS_AS(consolidate(net, ok, {PenaltyKind::Original, -1.0, 0.1}), EwcError);
    CHECK_THROWS_AS(consolidate(net, random_map(net, 1), {PenaltyKind::Stabilized, 1.0, 0.0}),
                    EwcError);
    CHECK_THROWS_AS(explosion_demo(0.0, 1.0, 1.0, 5, PenaltyKind::Original), EwcError);
}

TEST_CASE("penalty rejects misaligned parameter or gradient vectors") {
    Network net = tiny_net(41);
    ConsolidatedState state = consolidate(net, random_map(net, 2), {PenaltyKind::Original, 1.0, 0.1});
    std::vector<double> short_w(net.param_count() - 1, 0.0);
    CHECK_THROWS_AS(penalty_value(state, short_w), ShapeError);
    std::vector<double> short_g(net.param_count() - 1, 0.0);
    CHECK_THROWS_AS(add_penalty_gradient(state, net.params(), short_g), ShapeError);
}

TEST_CASE("consolidated state round-trips through disk") {
    TempDir dir;
    Network net = tiny_net(43);
    ConsolidatedState state =
        consolidate(net, random_map(net, 6), {PenaltyKind::Stabilized, 8.5, 0.001});
    save_consolidated(state, dir.path.string(), network_fingerprint(net));
    ConsolidatedState back = load_consolidated(dir.path.string());
    CHECK(back.config.kind == PenaltyKind::Stabilized);
    CHECK(back.config.lambda == 8.5);
    CHECK(back.config.alpha == 0.001);
    REQUIRE(back.w_star.size() == state.w_star.size());
    for (std::size_t i = 0; i < state.w_star.size(); ++i)
        CHECK(back.w_star[i] == state.w_star[i]);
    for (std::size_t i = 0; i < state.omega.omega.size(); ++i)
        CHECK(back.omega.omega[i] == state.omega.omega[i]);
}

TEST_CASE("penalty names round-trip and reject junk") {
    for (PenaltyKind k : {PenaltyKind::None, PenaltyKind::Original, PenaltyKind::Stabilized})
        CHECK(penalty_from_name(penalty_name(k)) == k);
    CHECK(penalty_from_name("ewc") == PenaltyKind::Original);
    CHECK_THROWS_AS(penalty_from_name("quadratic"), EwcError);
}
