#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <deque>
#include <random>

#include "kvlock/hallucination.hpp"
#include "kvlock/rng.hpp"

using namespace kvlock;

namespace {

Latent random_latent(int c, int t, int h, int w, uint64_t seed) {
    auto rng = stream_rng(seed, "lat");
    std::normal_distribution<double> dist(0.0, 1.0);
    Latent x(c, t, h, w);
    for (auto& v : x.v) v = dist(rng);
    return x;
}

// Two-pass reference: per-element sample variance over the stored window,
// averaged over the support.
double direct_variance(const std::deque<std::vector<double>>& window,
                       const std::vector<std::size_t>& support) {
    if (support.empty()) return 0.0;
    const double w = static_cast<double>(window.size());
    double acc = 0.0;
    for (std::size_t idx : support) {
        double mean = 0.0;
        for (const auto& vec : window) mean += vec[idx];
        mean /= w;
        double var = 0.0;
        for (const auto& vec : window) {
            const double d = vec[idx] - mean;
            var += d * d;
        }
        acc += var / (w - 1.0);
    }
    return acc / static_cast<double>(support.size());
}

} // namespace

TEST_CASE("masked_reduce basics") {
    const Latent x = random_latent(2, 2, 2, 2, 1);

    SUBCASE("all-ones mask flattens the batch mean") {
        const LatentMask ones(2, 2, 2, 1);
        const Latent batch[1] = {x};
        const auto out = masked_reduce(batch, ones);
        REQUIRE(out.size() == x.v.size());
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == x.v[i]);
    }
    SUBCASE("all-zero mask yields the zero vector") {
        const LatentMask zeros(2, 2, 2, 0);
        const Latent batch[1] = {x};
        for (double v : masked_reduce(batch, zeros)) CHECK(v == 0.0);
    }
    SUBCASE("opposite batch elements cancel") {
        Latent neg = x;
        for (auto& v : neg.v) v = -v;
        const LatentMask ones(2, 2, 2, 1);
        const Latent batch[2] = {x, neg};
        for (double v : masked_reduce(batch, ones)) CHECK(v == 0.0);
    }
    SUBCASE("mask is applied per spatial cell across channels") {
        LatentMask m(2, 2, 2, 0);
        m.at(1, 0, 1) = 1;
        const Latent batch[1] = {x};
        const auto out = masked_reduce(batch, m);
        for (int c = 0; c < 2; ++c) {
            CHECK(out[x.index(c, 1, 0, 1)] == x.at(c, 1, 0, 1));
            CHECK(out[x.index(c, 0, 0, 0)] == 0.0);
        }
    }
}

TEST_CASE("window variance fills, evicts, and matches the hand value") {
    SUBCASE("constant trajectory has zero variance") {
        TrajectoryWindow win(10, 3);
        const std::vector<double> v{0.5, -1.0, 2.0};
        for (int i = 0; i < 9; ++i) CHECK_FALSE(win.push(v).has_value());
        const auto s2 = win.push(v);
        REQUIRE(s2.has_value());
        CHECK(*s2 == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("alternating scalars give the W-1 sample variance") {
        TrajectoryWindow win(10, 1);
        std::optional<double> s2;
        for (int i = 0; i < 10; ++i) {
            const double x = i % 2 == 0 ? 1.0 : -1.0;
            s2 = win.push(std::vector<double>{x});
        }
        REQUIRE(s2.has_value());
        CHECK(*s2 == doctest::Approx(10.0 / 9.0).epsilon(1e-12));
    }
    SUBCASE("defined exactly when the window is full") {
        TrajectoryWindow win(10, 1);
        for (int i = 0; i < 9; ++i) {
            CHECK_FALSE(win.push(std::vector<double>{static_cast<double>(i)}).has_value());
            CHECK_FALSE(win.full());
        }
        CHECK(win.push(std::vector<double>{9.0}).has_value());
        CHECK(win.full());
    }
    SUBCASE("length mismatch is a structural error") {
        TrajectoryWindow win(4, 3);
        CHECK_THROWS_AS(win.push(std::vector<double>{1.0, 2.0}), ConfigError);
    }
}

TEST_CASE("incremental variance equals a direct recomputation") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> dist(0.0, 1.0);
    const std::size_t len = 24;
    std::vector<std::size_t> support{0, 3, 5, 11, 17, 23};

    TrajectoryWindow win(10, len, support);
    std::deque<std::vector<double>> shadow;
    for (int push = 0; push < 500; ++push) {
        std::vector<double> v(len);
        for (auto& x : v) x = dist(rng);
        shadow.push_back(v);
        if (shadow.size() > 10) shadow.pop_front();
        const auto got = win.push(v);
        if (shadow.size() == 10) {
            REQUIRE(got.has_value());
            CHECK(std::abs(*got - direct_variance(shadow, support)) <= 1e-10);
        } else {
            CHECK_FALSE(got.has_value());
        }
    }
}

TEST_CASE("scaling the window by two scales sigma2 by exactly four") {
    std::mt19937_64 rng(78);
    std::normal_distribution<double> dist(0.0, 1.0);
    TrajectoryWindow a(6, 8), b(6, 8);
    std::optional<double> sa, sb;
    for (int i = 0; i < 6; ++i) {
        std::vector<double> v(8), v2(8);
        for (std::size_t j = 0; j < 8; ++j) {
            v[j] = dist(rng);
            v2[j] = 2.0 * v[j];
        }
        sa = a.push(v);
        sb = b.push(v2);
    }
    REQUIRE(sa.has_value());
    REQUIRE(sb.has_value());
    CHECK(*sb == 4.0 * *sa);
}

TEST_CASE("support restriction ignores out-of-support churn") {
    TrajectoryWindow win(3, 4, std::vector<std::size_t>{1, 3});
    std::optional<double> s2;
    for (int i = 0; i < 5; ++i) {
        // Support entries constant, the rest wild.
        s2 = win.push(std::vector<double>{static_cast<double>(i * 100), 0.25,
                                          static_cast<double>(-i), -1.5});
    }
    REQUIRE(s2.has_value());
    CHECK(*s2 == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("fusion_rate follows the clamp formula") {
    DetectorConfig cfg;
    CHECK(fusion_rate(0.5 * cfg.tau, cfg, true) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(fusion_rate(3.0 * cfg.tau, cfg, true) == 1.0);
    CHECK(fusion_rate(std::nullopt, cfg, true) == 0.0);
    CHECK(fusion_rate(3.0 * cfg.tau, cfg, false) == 0.0);
    CHECK(fusion_rate(0.0, cfg, true) == 0.0);
}

TEST_CASE("flag law") {
    DetectorConfig cfg;
    CHECK(hallucination_flag(2.0 * cfg.tau, cfg, true));
    CHECK_FALSE(hallucination_flag(cfg.tau, cfg, true)); // strict inequality
    CHECK_FALSE(hallucination_flag(2.0 * cfg.tau, cfg, false));
    CHECK_FALSE(hallucination_flag(std::nullopt, cfg, true));
    CHECK_FALSE(hallucination_flag(0.5 * cfg.tau, cfg, true));
}

TEST_CASE("hal_metric population variance") {
    SUBCASE("constant trace is zero") {
        const std::vector<std::vector<double>> trace(5, std::vector<double>{1.25, -2.0});
        CHECK(hal_metric(trace) == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("two-element scalar trace {0, 2} scores one") {
        const std::vector<std::vector<double>> trace{{0.0}, {2.0}};
        CHECK(hal_metric(trace) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("short traces are rejected") {
        CHECK_THROWS_AS(hal_metric({{1.0}}), ConfigError);
    }
    SUBCASE("latent overload flattens") {
        std::vector<Latent> trace{Latent(1, 1, 1, 2, 0.0), Latent(1, 1, 1, 2, 2.0)};
        CHECK(hal_metric_latents(trace) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("mask_support broadcasts over channels") {
    LatentMask m(1, 2, 2, 0);
    m.at(0, 1, 0) = 1;
    const auto support = mask_support(m, 3);
    REQUIRE(support.size() == 3);
    CHECK(support[0] == 2);
    CHECK(support[1] == 6);
    CHECK(support[2] == 10);
}
