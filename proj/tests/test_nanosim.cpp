#include <doctest.h>

#include <cmath>
#include <set>

#include "flowloc/nanosim.hpp"
#include "flowloc/topology.hpp"
#include "helpers.hpp"

using namespace flowloc;
using namespace flowloc::sim;

TEST_CASE("harvest quantization: 2.52 pJ per 20 ms cycle") {
    EnergyConfig ec;
    CHECK(ec.energy_per_cycle_pj() == doctest::Approx(2.52).epsilon(1e-12));

    NanodeviceState s;
    // 19 ms: no whole cycle yet.
    NanodeviceState a = step_energy(s, ec, 0.019);
    CHECK(a.energy_pj == 0.0);
    CHECK_FALSE(a.active);
    // One more ms completes the cycle.
    NanodeviceState b = step_energy(a, ec, 0.001);
    CHECK(b.energy_pj == doctest::Approx(2.52));
}

TEST_CASE("activation after 4 cycles (80 ms) from empty") {
    EnergyConfig ec;
    NanodeviceState s;
    double t = 0.0;
    while (!s.active) {
        s = step_energy(s, ec, 0.001);
        t += 0.001;
        REQUIRE(t < 1.0);
    }
    CHECK(t == doctest::Approx(0.080).epsilon(1e-9));
    CHECK(s.energy_pj == doctest::Approx(4 * 2.52));
}

TEST_CASE("full charge from empty takes 318 cycles = 6.36 s") {
    EnergyConfig ec;
    NanodeviceState s;
    double t = 0.0;
    while (s.energy_pj < ec.e_max_pj) {
        s = step_energy(s, ec, 0.001);
        t += 0.001;
        REQUIRE(t < 60.0);
    }
    CHECK(t == doctest::Approx(318 * 0.020).epsilon(1e-9));
    CHECK(s.energy_pj == ec.e_max_pj);  // clamped, never above
}

TEST_CASE("energy never exceeds capacity and hysteresis holds") {
    EnergyConfig ec;
    NanodeviceState s;
    for (int i = 0; i < 20000; ++i) {
        s = step_energy(s, ec, 0.001);
        CHECK(s.energy_pj <= ec.e_max_pj);
        CHECK(s.energy_pj >= 0.0);
        if (s.active) CHECK(s.energy_pj >= ec.off_threshold_pj);
    }
    CHECK(s.active);
}

TEST_CASE("free-space path loss matches the closed form") {
    LinkConfig lc;
    CHECK(fspl_db(1.0, 1.0) == doctest::Approx(92.45).epsilon(1e-3));
    // received at 1 m: -20 - 92.45 = -112.45 < -110 -> out of range
    CHECK_FALSE(link_budget_ok(lc, 1.0));
    // at 0.1 m: FSPL 72.45, received -92.45 -> fine
    CHECK(link_budget_ok(lc, 0.1));
    LinkConfig heavy = lc;
    heavy.medium_attenuation_db_per_m = 1e9;
    CHECK_FALSE(link_budget_ok(heavy, 0.001));
}

TEST_CASE("max communication range defaults to 0.754 m") {
    LinkConfig lc;
    CHECK(max_comm_range(lc) == doctest::Approx(0.754).epsilon(1e-3));
    CHECK(link_budget_ok(lc, max_comm_range(lc) - 1e-6));
    CHECK_FALSE(link_budget_ok(lc, max_comm_range(lc) + 1e-3));
}

TEST_CASE("20 dB more sensitivity buys 10x range in the FSPL-only regime") {
    LinkConfig a;
    a.sensitivity_dbm = -100.0;
    LinkConfig b;
    b.sensitivity_dbm = -120.0;
    CHECK(max_comm_range(b) == doctest::Approx(10.0 * max_comm_range(a)).epsilon(1e-9));
}

TEST_CASE("transmit power pinned to sensitivity + FSPL(1 m) gives exactly 1 m") {
    LinkConfig lc;
    lc.p_tx_dbm = lc.sensitivity_dbm + fspl_db(1.0, lc.frequency_thz);
    CHECK(max_comm_range(lc) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("bisection handles medium attenuation") {
    LinkConfig lc;
    lc.medium_attenuation_db_per_m = 1000.0;
    const double r = max_comm_range(lc);
    CHECK(r < max_comm_range(LinkConfig{}));
    CHECK(link_budget_ok(lc, r - 1e-5));
    CHECK_FALSE(link_budget_ok(lc, r + 1e-5));
}

TEST_CASE("event detection is a closed ball") {
    CHECK(detect_event({0, 0, 0}, {0, 0, 0}, 0.01));
    CHECK(detect_event({0.01, 0, 0}, {0, 0, 0}, 0.01));       // boundary included
    CHECK_FALSE(detect_event({0.02, 0, 0}, {0, 0, 0}, 0.01)); // 2 cm vs 1 cm
}

TEST_CASE("zero duration produces no reports") {
    auto t = testutil::single_loop_12s();
    SimConfig sc;
    sc.n_devices = 1;
    sc.duration_s = 0.0;
    auto reports = simulate(t, sc, EnergyConfig{}, LinkConfig{}, event_at_centroid(t, 3));
    CHECK(reports.empty());
}

TEST_CASE("single-loop run: one report per 12 s loop, all flagged") {
    auto t = testutil::single_loop_12s();
    REQUIRE(topo::validate(t).ok);
    REQUIRE(topo::expected_loop_time(t) == doctest::Approx(12.0).epsilon(1e-12));

    SimConfig sc;
    sc.n_devices = 1;
    sc.seed = 5;
    EnergyConfig ec;
    ec.e_tx_pj = 0.0;  // effectively unlimited energy once active
    auto reports = simulate(t, sc, ec, LinkConfig{}, event_at_centroid(t, 3));

    CHECK(reports.size() == 99);  // re-entries at 12.1 s intervals over 1200 s
    for (const auto& r : reports) {
        CHECK(r.circulation_time_s == 12.0);  // exact: sum of per-leg times
        CHECK(r.event_bit);
    }
}

TEST_CASE("event two centimetres off the path is never detected") {
    auto t = testutil::single_loop_12s();
    SimConfig sc;
    sc.n_devices = 1;
    sc.seed = 5;
    EventSpec ev = event_at_centroid(t, 3);
    ev.position_m.y += 0.02;
    CHECK_FALSE(event_on_segment(t, ev));
    auto reports = simulate(t, sc, EnergyConfig{}, LinkConfig{}, ev);
    CHECK(reports.size() > 0);
    for (const auto& r : reports) CHECK_FALSE(r.event_bit);
}

TEST_CASE("devices with no harvest never activate, report or detect") {
    auto t = testutil::single_loop_12s();
    SimConfig sc;
    sc.n_devices = 4;
    EnergyConfig ec;
    ec.harvest_charge_pc = 0.0;
    auto reports = simulate(t, sc, ec, LinkConfig{}, event_at_centroid(t, 3));
    CHECK(reports.empty());
}

TEST_CASE("simulation is deterministic in the seed and thread count") {
    auto t = testutil::fast_branching();
    SimConfig sc;
    sc.n_devices = 8;
    sc.duration_s = 60.0;
    sc.seed = 99;
    auto a = simulate(t, sc, EnergyConfig{}, LinkConfig{}, event_at_centroid(t, 1), 1);
    auto b = simulate(t, sc, EnergyConfig{}, LinkConfig{}, event_at_centroid(t, 1), 2);
    REQUIRE(a.size() == b.size());
    CHECK(reports_to_jsonl(a) == reports_to_jsonl(b));

    sc.seed = 100;
    auto c = simulate(t, sc, EnergyConfig{}, LinkConfig{}, event_at_centroid(t, 1), 1);
    CHECK(reports_to_jsonl(a) != reports_to_jsonl(c));
}

TEST_CASE("mean circulation time over 1e5 loops matches the analytic value") {
    auto t = testutil::fast_branching();
    const double expected = topo::expected_loop_time(t);
    REQUIRE(expected == doctest::Approx(0.58).epsilon(1e-12));

    SimConfig sc;
    sc.n_devices = 64;
    sc.duration_s = 1200.0;
    sc.seed = 7;
    auto result = simulate_full(t, sc, EnergyConfig{}, LinkConfig{},
                                event_at_centroid(t, 1), 2);
    long loops = 0;
    double sum = 0.0;
    for (const auto& st : result.stats) {
        loops += st.loops_completed;
        sum += st.loop_time_sum_s;
    }
    REQUIRE(loops >= 100000);
    const double mean = sum / static_cast<double>(loops);
    CHECK(std::abs(mean - expected) / expected < 0.01);
}

TEST_CASE("reports arrive sorted by time then device and round-trip via jsonl") {
    auto t = testutil::fast_branching();
    SimConfig sc;
    sc.n_devices = 6;
    sc.duration_s = 30.0;
    sc.seed = 3;
    auto reports = simulate(t, sc, EnergyConfig{}, LinkConfig{}, event_at_centroid(t, 2), 2);
    REQUIRE(!reports.empty());
    for (std::size_t i = 1; i < reports.size(); ++i) {
        const bool ordered =
            reports[i - 1].report_time_s < reports[i].report_time_s ||
            (reports[i - 1].report_time_s == reports[i].report_time_s &&
             reports[i - 1].device_id < reports[i].device_id);
        CHECK(ordered);
    }
    auto back = reports_from_jsonl(reports_to_jsonl(reports));
    REQUIRE(back.size() == reports.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].device_id == reports[i].device_id);
        CHECK(back[i].circulation_time_s == doctest::Approx(reports[i].circulation_time_s));
        CHECK(back[i].event_bit == reports[i].event_bit);
    }
}

TEST_CASE("invalid inputs are rejected") {
    auto t = testutil::single_loop_12s();
    SimConfig sc;
    sc.n_devices = 0;
    CHECK_THROWS_AS(simulate(t, sc, EnergyConfig{}, LinkConfig{}, event_at_centroid(t, 3)),
                    std::invalid_argument);
    SimConfig ok;
    EnergyConfig bad;
    bad.on_threshold_pj = 0.0;  // violates on > off
    CHECK_THROWS_AS(simulate(t, ok, bad, LinkConfig{}, event_at_centroid(t, 3)),
                    std::invalid_argument);
}
