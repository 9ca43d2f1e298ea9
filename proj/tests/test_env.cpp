#include <cmath>
#include <vector>

#include "doctest.h"
#include "flowsync/env.hpp"
#include "flowsync/errors.hpp"
#include "flowsync/rng.hpp"

using namespace flowsync;

namespace {

Environment make_env(RewardMode mode, double ratio = 2.0) {
    FieldConfig fc;
    fc.lower_upper_ratio = ratio;
    SolverConfig sc;
    RewardConfig rc;
    rc.mode = mode;
    return Environment(fc, sc, rc);
}

Observation obs_with_rows(std::initializer_list<int> rows) {
    Observation o(kObservationSize, 0);
    for (int r : rows)
        for (int c = 0; c < kSensorCols; ++c) o[static_cast<size_t>(r) * kSensorCols + c] = 1;
    return o;
}

}  // namespace

TEST_CASE("sensors are placed uniformly on the default grid") {
    CHECK(sensor_cell(0, 0, 60, 24) == std::array<int, 2>{2, 2});
    CHECK(sensor_cell(7, 3, 60, 24) == std::array<int, 2>{30, 14});
    CHECK(sensor_cell(14, 5, 60, 24) == std::array<int, 2>{58, 22});
}

TEST_CASE("reset returns a zero observation and a fresh deterministic episode") {
    Environment env = make_env(RewardMode::R1_SymmetricRows);
    Observation o = env.reset(123);
    REQUIRE(o.size() == 90);
    for (uint8_t b : o) CHECK(b == 0);

    // Replaying the same seed and actions reproduces the trajectory exactly.
    Environment env2 = make_env(RewardMode::R1_SymmetricRows);
    env2.reset(123);
    Rng rng(9);
    std::vector<GateAction> actions;
    while (!env.done()) {
        auto a = static_cast<GateAction>(rng.uniform_int(0, 2));
        actions.push_back(a);
        env.step(a);
    }
    for (GateAction a : actions) {
        StepResult r = env2.step(a);
        (void)r;
    }
    CHECK(env2.done());
    CHECK(env.episode_score() == env2.episode_score());
    CHECK(env.flow_state().fill == env2.flow_state().fill);
}

TEST_CASE("different seeds produce different fields") {
    Environment env = make_env(RewardMode::R1_SymmetricRows);
    int differing = 0;
    for (uint64_t s = 0; s < 100; ++s) {
        env.reset(2 * s);
        Grid<double> a = env.field().k;
        env.reset(2 * s + 1);
        if (!(a == env.field().k)) ++differing;
    }
    CHECK(differing == 100);
}

TEST_CASE("termination requires every central-row sensor") {
    Observation o(kObservationSize, 0);
    CHECK_FALSE(termination_check(o));
    for (int c = 0; c < 6; ++c) o[7 * 6 + c] = 1;
    CHECK(termination_check(o));
    o[7 * 6 + 3] = 0;
    CHECK_FALSE(termination_check(o));
    Observation full(kObservationSize, 1);
    CHECK(termination_check(full));
}

TEST_CASE("centroid is the mean of active sensor coordinates") {
    CHECK(compute_centroid(obs_with_rows({0, 14})).c_y == doctest::Approx(7.0));
    CHECK(compute_centroid(obs_with_rows({0})).c_y == doctest::Approx(0.0));
    CHECK(compute_centroid(obs_with_rows({0})).c_x == doctest::Approx(2.5));

    Observation empty(kObservationSize, 0);
    CHECK_THROWS_AS(compute_centroid(empty), UsageError);

    // Brute-force oracle on random activation patterns.
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        Observation o(kObservationSize, 0);
        int n = 0;
        for (auto& b : o) b = rng.uniform() < 0.3 ? 1 : 0;
        double sr = 0, sc = 0;
        for (int i = 0; i < kObservationSize; ++i)
            if (o[static_cast<size_t>(i)]) {
                sr += i / 6;
                sc += i % 6;
                ++n;
            }
        if (n == 0) continue;
        Centroid c = compute_centroid(o);
        CHECK(c.c_y == doctest::Approx(sr / n).epsilon(1e-12));
        CHECK(c.c_x == doctest::Approx(sc / n).epsilon(1e-12));
    }
}

TEST_CASE("score formula covers the maximum, minimum, and penalty cases") {
    RewardConfig r1;
    CHECK(episode_score(7, r1, 7.0) == 1.0);
    CHECK(episode_score(0, r1, 7.0) == 0.0);
    RewardConfig r2 = r1;
    r2.mode = RewardMode::R2_SymmetricPlusCentroid;
    CHECK(episode_score(7, r2, 7.0) == 1.0);  // zero deviation, zero penalty
    CHECK(episode_score(7, r2, 8.4) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(episode_score(0, r2, 14.0) == 0.0);  // clamped at zero
}

TEST_CASE("a pair completing in one step earns one normalized reward unit") {
    FieldConfig fc;
    fc.log_sigma = 0.0;
    fc.racetrack_count = 0;
    fc.lower_upper_ratio = 1.0 + 1e-9;  // effectively symmetric halves
    SolverConfig sc;
    sc.substeps_per_action = 8;  // coarse steps so paired rows flip together
    RewardConfig rc;
    Environment env(fc, sc, rc);
    env.reset(0);
    bool saw_pair_step = false;
    while (!env.done()) {
        StepResult r = env.step(GateAction::Both);
        if (r.reward > 0.0) {
            saw_pair_step = true;
            const double units = r.reward * rc.pair_count;
            CHECK(units == doctest::Approx(std::round(units)).epsilon(1e-12));
        }
    }
    CHECK(saw_pair_step);
    CHECK(env.completed_pairs() == 7);
    CHECK(env.episode_score() == 1.0);
}

TEST_CASE("activating only the top half earns nothing") {
    Environment env = make_env(RewardMode::R1_SymmetricRows);
    env.reset(3);
    double total = 0.0;
    while (!env.done()) total += env.step(GateAction::TopOnly).reward;
    CHECK(total == 0.0);
    CHECK(env.completed_pairs() == 0);
    CHECK(env.episode_score() == 0.0);
}

TEST_CASE("top-only policy is penalised to zero under the centroid mode") {
    Environment env = make_env(RewardMode::R2_SymmetricPlusCentroid);
    env.reset(3);
    while (!env.done()) env.step(GateAction::TopOnly);
    CHECK(env.episode_score() == 0.0);
}

TEST_CASE("observations grow monotonically and scores stay in bounds") {
    for (RewardMode mode : {RewardMode::R1_SymmetricRows, RewardMode::R2_SymmetricPlusCentroid}) {
        Environment env = make_env(mode);
        for (uint64_t seed = 0; seed < 4; ++seed) {
            env.reset(seed);
            Rng rng(derive_seed(seed, 5));
            Observation prev(kObservationSize, 0);
            int raw_pairs = 0;
            while (!env.done()) {
                StepResult r = env.step(static_cast<GateAction>(rng.uniform_int(0, 2)));
                for (int i = 0; i < kObservationSize; ++i)
                    REQUIRE(r.obs[static_cast<size_t>(i)] >= prev[static_cast<size_t>(i)]);
                prev = r.obs;
                REQUIRE(r.info.step <= env.steps_taken());
            }
            raw_pairs = env.completed_pairs();
            REQUIRE(raw_pairs <= 7);
            REQUIRE(env.steps_taken() < 700);
            REQUIRE_FALSE(env.hit_step_cap());
            const double s = env.episode_score();
            REQUIRE(s >= 0.0);
            REQUIRE(s <= 1.0);
        }
    }
}

TEST_CASE("centroid penalty only lowers the score on identical trajectories") {
    for (uint64_t seed = 10; seed < 14; ++seed) {
        Environment r1 = make_env(RewardMode::R1_SymmetricRows);
        Environment r2 = make_env(RewardMode::R2_SymmetricPlusCentroid);
        r1.reset(seed);
        r2.reset(seed);
        Rng rng(derive_seed(seed, 6));
        while (!r1.done()) {
            auto a = static_cast<GateAction>(rng.uniform_int(0, 2));
            r1.step(a);
            r2.step(a);
        }
        CHECK(r2.done());
        CHECK(r2.episode_score() <= r1.episode_score());
    }
}

TEST_CASE("strict pair timing is a stricter rule than completion timing") {
    FieldConfig fc;
    SolverConfig sc;
    RewardConfig relaxed;
    RewardConfig strict;
    strict.strict_simultaneous = true;
    int relaxed_total = 0, strict_total = 0;
    for (uint64_t seed = 0; seed < 5; ++seed) {
        Environment er(fc, sc, relaxed);
        Environment es(fc, sc, strict);
        er.reset(seed);
        es.reset(seed);
        while (!er.done()) er.step(GateAction::Both);
        while (!es.done()) es.step(GateAction::Both);
        CHECK(es.completed_pairs() <= er.completed_pairs());
        relaxed_total += er.completed_pairs();
        strict_total += es.completed_pairs();
    }
    CHECK(relaxed_total > 0);
    CHECK(strict_total < relaxed_total);  // asymmetric halves rarely pair up in-step
}

TEST_CASE("stepping a finished episode is rejected") {
    Environment env = make_env(RewardMode::R1_SymmetricRows);
    CHECK_THROWS_AS(env.step(GateAction::Both), UsageError);  // before reset
    env.reset(1);
    while (!env.done()) env.step(GateAction::Both);
    CHECK_THROWS_AS(env.step(GateAction::Both), UsageError);
}

TEST_CASE("invalid reward configs are rejected with the offending field named") {
    RewardConfig rc;
    rc.alpha = 0.0;
    CHECK_THROWS_WITH_AS(validate(rc), doctest::Contains("alpha"), ConfigError);
    rc = RewardConfig{};
    rc.pair_count = 8;
    CHECK_THROWS_WITH_AS(validate(rc), doctest::Contains("pair_count"), ConfigError);
    rc = RewardConfig{};
    rc.step_cap = 0;
    CHECK_THROWS_WITH_AS(validate(rc), doctest::Contains("step_cap"), ConfigError);
}
