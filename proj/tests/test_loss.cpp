#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "lipreg/loss.hpp"
#include "lipreg/rng.hpp"

using namespace lipreg;

namespace {

// Random [B x K] simplex rows via softmax of random logits.
Tensor random_class_probs(Rng& rng, std::size_t b, std::size_t k) {
    Tensor probs(b, k);
    for (std::size_t i = 0; i < b; ++i) {
        double mx = -1e300;
        std::vector<double> logits(k);
        for (auto& v : logits) {
            v = 2.0 * rng.normal();
            mx = std::max(mx, v);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            probs(i, j) = std::exp(logits[j] - mx);
            denom += probs(i, j);
        }
        for (std::size_t j = 0; j < k; ++j) probs(i, j) /= denom;
    }
    return probs;
}

}  // namespace

TEST_CASE("bce_loss analytic values") {
    CHECK(bce_loss({0.5}, {1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss({1.0}, {1}) == doctest::Approx(0.0).epsilon(1e-9));
    const double expect = -(std::log(0.9) + std::log(0.8)) / 2.0;
    CHECK(bce_loss({0.9, 0.2}, {1, 0}) == doctest::Approx(expect).epsilon(1e-15));
    CHECK(bce_loss({0.9, 0.2}, {1, 0}) == doctest::Approx(0.16425).epsilon(1e-4));
    CHECK_THROWS_AS(bce_loss({}, {}), ArgumentError);
    CHECK_THROWS_AS(bce_loss({0.5}, {1, 0}), ArgumentError);
}

TEST_CASE("bce_loss adds the l2 penalty over layer weights") {
    const Tensor w(1, 2, {3.0, 4.0});  // sum of squares 25
    CHECK(bce_loss({0.5}, {1}, 0.1, {&w}) ==
          doctest::Approx(std::log(2.0) + 2.5).epsilon(1e-12));
    CHECK(l2_penalty({&w}, 0.0) == 0.0);
}

TEST_CASE("ce_loss analytic values") {
    Tensor uniform(1, 5, {0.2, 0.2, 0.2, 0.2, 0.2});
    CHECK(ce_loss(uniform, {2}) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    Tensor onehot(1, 5, {0.0, 0.0, 1.0, 0.0, 0.0});
    CHECK(ce_loss(onehot, {3}) == doctest::Approx(0.0).epsilon(1e-15));

    Tensor p(1, 5, {0.1, 0.2, 0.3, 0.2, 0.2});
    CHECK(ce_loss(p, {4}) == doctest::Approx(-std::log(0.2)).epsilon(1e-12));

    CHECK_THROWS_AS(ce_loss(Tensor(0, 5), {}), ArgumentError);
    CHECK_THROWS_AS(ce_loss(p, {6}), ArgumentError);
    Tensor unnormalized(1, 5, {0.1, 0.2, 0.3, 0.2, 0.3});
    CHECK_THROWS_AS(ce_loss(unnormalized, {1}), ArgumentError);
}

TEST_CASE("aggregate_click_prob is the tail-mass ratio") {
    CHECK(aggregate_click_prob({0.1, 0.2, 0.3, 0.2, 0.2}, 3) ==
          doctest::Approx(0.4).epsilon(1e-15));
    CHECK(aggregate_click_prob({0.2, 0.2, 0.2, 0.1, 0.1}, 3) ==
          doctest::Approx(0.25).epsilon(1e-15));
    CHECK(aggregate_click_prob({0.0, 0.0, 0.0, 0.0, 1.0}, 3) == 1.0);
    CHECK_THROWS_AS(aggregate_click_prob({0.0, 0.0, 0.0, 0.0, 0.0}, 3), NumericError);
    CHECK_THROWS_AS(aggregate_click_prob({0.5, -0.1, 0.2, 0.2, 0.2}, 3), ArgumentError);
    CHECK_THROWS_AS(aggregate_click_prob({0.5, 0.5}, 2), ArgumentError);
    CHECK_THROWS_AS(aggregate_click_prob({0.5, 0.5}, 0), ArgumentError);
}

TEST_CASE("aggregate_click_prob complement and rescaling properties") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor probs = random_class_probs(rng, 1, 5);
        std::vector<double> p(probs.data());
        const double tail = aggregate_click_prob(p, 3);
        // complement: mass at or below the threshold
        double head = 0.0;
        for (int k = 0; k < 3; ++k) head += p[k];
        CHECK(std::fabs(tail + head - 1.0) < 1e-12);
        // positive rescaling leaves the ratio unchanged
        const double c = 0.01 + 10.0 * rng.uniform();
        std::vector<double> scaled = p;
        for (double& v : scaled) v *= c;
        CHECK(aggregate_click_prob(scaled, 3) == doctest::Approx(tail).epsilon(1e-12));
    }
}

TEST_CASE("combined_loss endpoints match the component losses") {
    Rng rng(32);
    LossConfig cfg;
    cfg.t_sh = 3;
    cfg.rating_classes = 5;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t B = 1 + rng.uniform_index(16);
        const Tensor probs = random_class_probs(rng, B, 5);
        std::vector<int> ratings(B), labels(B);
        std::vector<double> phat(B);
        for (std::size_t b = 0; b < B; ++b) {
            ratings[b] = 1 + static_cast<int>(rng.uniform_index(5));
            labels[b] = ratings[b] > 3 ? 1 : 0;
            std::vector<double> row(5);
            for (int k = 0; k < 5; ++k) row[k] = probs(b, k);
            phat[b] = aggregate_click_prob(row, 3);
        }
        cfg.lambda_r = 0.0;
        CHECK(std::fabs(combined_loss(probs, ratings, labels, cfg) -
                        bce_loss(phat, labels)) < 1e-12);
        cfg.lambda_r = 1.0;
        CHECK(std::fabs(combined_loss(probs, ratings, labels, cfg) -
                        ce_loss(probs, ratings)) < 1e-12);
        // interior blend is the convex combination, hence between the endpoints
        cfg.lambda_r = 0.35;
        const double mid = combined_loss(probs, ratings, labels, cfg);
        const double ce = ce_loss(probs, ratings);
        const double bce = bce_loss(phat, labels);
        CHECK(mid == doctest::Approx(0.35 * ce + 0.65 * bce).epsilon(1e-14));
        CHECK(mid >= std::min(ce, bce) - 1e-12);
        CHECK(mid <= std::max(ce, bce) + 1e-12);
    }
}

TEST_CASE("blend arithmetic at the recommended coefficient") {
    // CE = 1.0, BCE = 0.5, lambda_r = 0.7 -> 0.85
    CHECK(0.7 * 1.0 + (1.0 - 0.7) * 0.5 == doctest::Approx(0.85).epsilon(1e-15));
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    cfg.lambda_r = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg.lambda_r = 0.5;
    cfg.lambda_l2 = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg.lambda_l2 = 0.0;
    cfg.t_sh = 5;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("tape builders reproduce the plain loss values") {
    Rng rng(33);
    LossConfig cfg;
    cfg.lambda_r = 0.7;
    cfg.lambda_l2 = 0.01;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t B = 1 + rng.uniform_index(8);
        const Tensor probs = random_class_probs(rng, B, 5);
        const Tensor w(2, 3, {0.1, -0.4, 0.2, 0.3, -0.1, 0.5});
        std::vector<int> ratings(B), labels(B);
        std::vector<double> phat(B);
        for (std::size_t b = 0; b < B; ++b) {
            ratings[b] = 1 + static_cast<int>(rng.uniform_index(5));
            labels[b] = ratings[b] > 3 ? 1 : 0;
            std::vector<double> row(5);
            for (int k = 0; k < 5; ++k) row[k] = probs(b, k);
            phat[b] = aggregate_click_prob(row, 3);
        }
        Tape tape;
        const NodeId pn = tape.constant(probs);
        const NodeId wn = tape.parameter(w);
        CHECK(tape.value(build_ce(tape, pn, ratings))[0] ==
              doctest::Approx(ce_loss(probs, ratings)).epsilon(1e-12));
        const NodeId click = build_click_prob(tape, pn, cfg.t_sh);
        for (std::size_t b = 0; b < B; ++b) {
            CHECK(tape.value(click)(b, 0) == doctest::Approx(phat[b]).epsilon(1e-12));
        }
        CHECK(tape.value(build_bce(tape, click, labels, cfg.lambda_l2, {wn}))[0] ==
              doctest::Approx(bce_loss(phat, labels, cfg.lambda_l2, {&w})).epsilon(1e-12));
        CHECK(tape.value(build_combined(tape, pn, ratings, labels, cfg, {wn}))[0] ==
              doctest::Approx(combined_loss(probs, ratings, labels, cfg, {&w})).epsilon(1e-12));
    }
}

TEST_CASE("combined loss gradient through softmax passes finite differences") {
    Rng rng(34);
    for (std::uint64_t s = 0; s < 5; ++s) {
        Tensor logits(4, 5);
        for (double& v : logits.data()) v = rng.normal();
        std::vector<int> ratings(4), labels(4);
        for (int b = 0; b < 4; ++b) {
            ratings[b] = 1 + static_cast<int>(rng.uniform_index(5));
            labels[b] = ratings[b] > 3 ? 1 : 0;
        }
        LossConfig cfg;
        cfg.lambda_r = 0.7;
        auto graph = [&](Tape& tape, NodeId f) {
            return build_combined(tape, tape.softmax_rows(f, 1.0), ratings, labels, cfg, {});
        };
        Tape tape;
        const NodeId f = tape.parameter(logits);
        tape.backward(graph(tape, f));
        auto loss_fn = [&](const std::vector<Tensor>& ps) {
            Tape t2;
            const NodeId f2 = t2.parameter(ps[0]);
            return t2.value(graph(t2, f2))[0];
        };
        const auto report =
            lipreg::finite_diff_check(loss_fn, {logits}, {tape.grad(f)}, 1e-5, 1e-4);
        CAPTURE(report.max_rel_err);
        CHECK(report.pass);
    }
}
