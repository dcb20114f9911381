#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowloc/geometry.hpp"
#include "flowloc/topology.hpp"

namespace flowloc::sim {

struct SimConfig {
    int n_devices = 64;
    double duration_s = 1200.0;
    double beacon_interval_s = 0.1;
    double sampling_rate_hz = 3.0;
    double event_detect_radius_m = 0.01;
    std::uint64_t seed = 0;
};

struct EnergyConfig {
    double v_g_volts = 0.42;
    double e_tx_pj = 1.0;
    double e_rx_pj = 0.0;
    double e_max_pj = 800.0;
    double on_threshold_pj = 10.0;
    double off_threshold_pj = 0.0;
    double harvest_cycle_s = 0.020;
    double harvest_charge_pc = 6.0;

    double energy_per_cycle_pj() const { return harvest_charge_pc * v_g_volts; }
};

struct LinkConfig {
    double p_tx_dbm = -20.0;
    double bandwidth_ghz = 10.0;
    double sensitivity_dbm = -110.0;
    double frequency_thz = 1.0;
    double medium_attenuation_db_per_m = 0.0;
};

struct NanodeviceState {
    int device_id = 0;
    int current_region = 0;
    double fraction_traversed = 0.0;  // progress through current_region, [0,1]
    double energy_pj = 0.0;
    bool active = false;
    double time_since_heart_s = 0.0;
    bool event_bit = false;
    // bookkeeping for quantized harvesting and loop accounting
    double harvest_accum_s = 0.0;
    double loop_time_s = 0.0;       // exact traversal-time sum since last heart exit
    double last_loop_time_s = 0.0;  // captured at the most recent heart entry
    bool has_completed_loop = false;
};

struct CirculationReport {
    int device_id = 0;
    double report_time_s = 0.0;
    double circulation_time_s = 0.0;
    bool event_bit = false;
};

struct EventSpec {
    int region_id = 0;
    Vec3 position_m{};
};

struct DeviceStats {
    int device_id = 0;
    long loops_completed = 0;
    double loop_time_sum_s = 0.0;  // sum of completed circulation times
    long reports_emitted = 0;
};

struct SimResult {
    std::vector<CirculationReport> reports;
    std::vector<DeviceStats> stats;
};

// Free-space path loss in dB at distance d (meters) and frequency f (THz).
double fspl_db(double distance_m, double frequency_thz);

// True iff the received power at this distance clears the sensitivity floor.
bool link_budget_ok(const LinkConfig& lc, double distance_m);

// Largest distance at which link_budget_ok holds (1e-6 m tolerance).
double max_comm_range(const LinkConfig& lc);

bool detect_event(const Vec3& pos_m, const Vec3& event_pos_m, double radius_m);

// True iff the event position lies on its named region's segment (1e-9 slack).
// simulate() itself accepts arbitrary positions so off-path events can be
// exercised; the CLI refuses events that fail this check.
bool event_on_segment(const topo::Topology& t, const EventSpec& event);

// Advances harvesting by dt and applies the on/off hysteresis. Harvest is
// quantized to whole cycles; partial cycle time carries over in the state.
NanodeviceState step_energy(const NanodeviceState& s, const EnergyConfig& ec, double dt_s);

// Event pinned to a region: at the segment centroid, or uniformly at random
// along the segment.
EventSpec event_at_centroid(const topo::Topology& t, int region_id);
EventSpec event_at_random(const topo::Topology& t, int region_id, std::uint64_t seed);

SimResult simulate_full(const topo::Topology& t, const SimConfig& sc, const EnergyConfig& ec,
                        const LinkConfig& lc, const EventSpec& event, int n_threads = 1);

std::vector<CirculationReport> simulate(const topo::Topology& t, const SimConfig& sc,
                                        const EnergyConfig& ec, const LinkConfig& lc,
                                        const EventSpec& event, int n_threads = 1);

std::string reports_to_jsonl(const std::vector<CirculationReport>& reports);
std::vector<CirculationReport> reports_from_jsonl(const std::string& text);

}  // namespace flowloc::sim
