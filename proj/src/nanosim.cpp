#include "flowloc/nanosim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "flowloc/rng.hpp"
#include "flowloc/util.hpp"

namespace flowloc::sim {

using nlohmann::json;

namespace {

constexpr double kSpeedOfLight = 299792458.0;
constexpr double kDt = 0.001;  // step size; beacon/sampling instants sit on this grid
constexpr double kTimeEps = 1e-9;

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double denom = ab.x * ab.x + ab.y * ab.y + ab.z * ab.z;
    double u = 0.0;
    if (denom > 0.0) {
        const Vec3 ap = p - a;
        u = (ap.x * ab.x + ap.y * ab.y + ap.z * ab.z) / denom;
        u = std::clamp(u, 0.0, 1.0);
    }
    return distance(p, a + ab * u);
}

}  // namespace

double fspl_db(double distance_m, double frequency_thz) {
    const double f_hz = frequency_thz * 1e12;
    return 20.0 * std::log10(4.0 * M_PI * distance_m * f_hz / kSpeedOfLight);
}

bool link_budget_ok(const LinkConfig& lc, double distance_m) {
    if (distance_m < 1e-12) return true;  // co-located; FSPL diverges to -inf
    const double received = lc.p_tx_dbm - fspl_db(distance_m, lc.frequency_thz) -
                            lc.medium_attenuation_db_per_m * distance_m;
    return received >= lc.sensitivity_dbm;
}

double max_comm_range(const LinkConfig& lc) {
    // FSPL-only: p_tx - K - 20log10(d) = sensitivity with K = FSPL at 1 m.
    const double k = fspl_db(1.0, lc.frequency_thz);
    const double free_space_d = std::pow(10.0, (lc.p_tx_dbm - lc.sensitivity_dbm - k) / 20.0);
    if (lc.medium_attenuation_db_per_m <= 0.0) return free_space_d;
    // Attenuation only shrinks the range; bisect on [0, free_space_d].
    double lo = 0.0, hi = free_space_d;
    while (hi - lo > 1e-6) {
        const double mid = 0.5 * (lo + hi);
        (link_budget_ok(lc, mid) ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

bool detect_event(const Vec3& pos_m, const Vec3& event_pos_m, double radius_m) {
    return distance(pos_m, event_pos_m) <= radius_m;  // closed ball
}

bool event_on_segment(const topo::Topology& t, const EventSpec& event) {
    const topo::Region& r = t.at(event.region_id);
    return point_segment_distance(event.position_m, r.entry_m, r.exit_m) <= 1e-9;
}

NanodeviceState step_energy(const NanodeviceState& s, const EnergyConfig& ec, double dt_s) {
    if (dt_s < 0.0) throw std::invalid_argument("step_energy: negative dt");
    NanodeviceState out = s;
    out.harvest_accum_s += dt_s;
    const double cycles_f = std::floor((out.harvest_accum_s + kTimeEps) / ec.harvest_cycle_s);
    if (cycles_f > 0.0) {
        out.energy_pj = std::min(out.energy_pj + cycles_f * ec.energy_per_cycle_pj(),
                                 ec.e_max_pj);
        out.harvest_accum_s -= cycles_f * ec.harvest_cycle_s;
        if (out.harvest_accum_s < 0.0) out.harvest_accum_s = 0.0;
    }
    if (!out.active && out.energy_pj >= ec.on_threshold_pj) out.active = true;
    if (out.active && out.energy_pj <= ec.off_threshold_pj) out.active = false;
    return out;
}

namespace {

EventSpec make_event(const topo::Topology& t, int region_id, double fraction) {
    const topo::Region& r = t.at(region_id);
    return EventSpec{region_id, lerp(r.entry_m, r.exit_m, fraction)};
}

}  // namespace

EventSpec event_at_centroid(const topo::Topology& t, int region_id) {
    return make_event(t, region_id, 0.5);
}

EventSpec event_at_random(const topo::Topology& t, int region_id, std::uint64_t seed) {
    rng::Stream rs(rng::derive_seed(seed, fnv1a64("event") ^ static_cast<std::uint64_t>(region_id)));
    return make_event(t, region_id, rs.uniform());
}

namespace {

struct DeviceTrace {
    std::vector<CirculationReport> reports;
    DeviceStats stats;
};

// Sample the successor region given the current one. Weights were validated
// to sum to 1, so the categorical draw is over the raw probabilities.
int next_region(const topo::Topology& t, const std::vector<std::vector<topo::Edge>>& out_edges,
                const std::vector<std::size_t>& row_of, int region_id, rng::Stream& rs) {
    const auto& edges = out_edges[row_of[region_id]];
    if (edges.size() == 1) return edges[0].to;
    double u = rs.uniform();
    for (const topo::Edge& e : edges) {
        if (u < e.p) return e.to;
        u -= e.p;
    }
    return edges.back().to;  // numerical slack lands on the last edge
}

DeviceTrace run_device(const topo::Topology& t, const SimConfig& sc, const EnergyConfig& ec,
                       const LinkConfig& lc, const EventSpec& event, int device_id,
                       const std::vector<std::vector<topo::Edge>>& out_edges,
                       const std::vector<std::size_t>& row_of) {
    DeviceTrace trace;
    trace.stats.device_id = device_id;

    rng::Stream rs(rng::derive_seed(rng::derive_seed(sc.seed, fnv1a64("device")),
                                    static_cast<std::uint64_t>(device_id)));

    NanodeviceState s;
    s.device_id = device_id;
    s.current_region = t.heart_id;

    const topo::Region* region = &t.at(s.current_region);
    double remaining_s = region->traversal_time_s();

    const long n_steps = static_cast<long>(std::llround(sc.duration_s / kDt));
    const long beacon_steps =
        std::max<long>(1, std::llround(sc.beacon_interval_s / kDt));
    const long sample_steps =
        std::max<long>(1, std::llround(1.0 / (sc.sampling_rate_hz * kDt)));

    for (long step = 1; step <= n_steps; ++step) {
        s = step_energy(s, ec, kDt);

        // Advance along the graph; a step may cross several short regions.
        double budget = kDt;
        while (remaining_s <= budget + kTimeEps) {
            budget -= remaining_s;
            if (budget < 0.0) budget = 0.0;
            const bool leaving_heart = (s.current_region == t.heart_id);
            const int nxt = next_region(t, out_edges, row_of, s.current_region, rs);
            if (leaving_heart) {
                s.loop_time_s = 0.0;  // circulation clock starts at heart exit
            } else {
                s.loop_time_s += region->traversal_time_s();
            }
            if (nxt == t.heart_id && !leaving_heart) {
                s.last_loop_time_s = s.loop_time_s;
                s.has_completed_loop = true;
                s.time_since_heart_s = 0.0;
                trace.stats.loops_completed += 1;
                trace.stats.loop_time_sum_s += s.last_loop_time_s;
            }
            s.current_region = nxt;
            region = &t.at(nxt);
            remaining_s = region->traversal_time_s();
        }
        remaining_s -= budget;
        s.fraction_traversed = 1.0 - remaining_s / region->traversal_time_s();
        if (s.current_region != t.heart_id)
            s.time_since_heart_s += kDt;
        else
            s.time_since_heart_s = 0.0;

        const Vec3 pos = lerp(region->entry_m, region->exit_m, s.fraction_traversed);

        if (s.active && step % sample_steps == 0 &&
            detect_event(pos, event.position_m, sc.event_detect_radius_m)) {
            s.event_bit = true;
        }

        if (s.active && s.has_completed_loop && step % beacon_steps == 0 &&
            link_budget_ok(lc, distance(pos, t.anchor_position_m))) {
            trace.reports.push_back(
                {device_id, step * kDt, s.last_loop_time_s, s.event_bit});
            trace.stats.reports_emitted += 1;
            s.event_bit = false;  // one detection per loop
            s.energy_pj = std::max(0.0, s.energy_pj - ec.e_tx_pj);
            if (s.active && s.energy_pj <= ec.off_threshold_pj) s.active = false;
        }
    }
    return trace;
}

void check_preconditions(const topo::Topology& t, const SimConfig& sc, const EnergyConfig& ec,
                         const LinkConfig& lc, const EventSpec& event) {
    const topo::ValidationReport rep = topo::validate(t);
    if (!rep.ok)
        throw std::invalid_argument("simulate: invalid topology: " + rep.violations.front());
    if (sc.n_devices < 1) throw std::invalid_argument("simulate: n_devices must be >= 1");
    if (sc.duration_s < 0.0 || sc.beacon_interval_s <= 0.0 || sc.sampling_rate_hz <= 0.0 ||
        sc.event_detect_radius_m <= 0.0)
        throw std::invalid_argument("simulate: non-positive timing configuration");
    if (!(ec.e_max_pj >= ec.on_threshold_pj && ec.on_threshold_pj > ec.off_threshold_pj &&
          ec.off_threshold_pj >= 0.0))
        throw std::invalid_argument("simulate: energy thresholds must satisfy "
                                    "e_max >= on > off >= 0");
    if (!(lc.frequency_thz > 0.0) || !(lc.sensitivity_dbm < lc.p_tx_dbm))
        throw std::invalid_argument("simulate: invalid link configuration");
    for (const topo::Region& r : t.regions)
        if (r.id < 0) throw std::invalid_argument("simulate: negative region id");
    t.at(event.region_id);  // event must name a real region
}

}  // namespace

SimResult simulate_full(const topo::Topology& t, const SimConfig& sc, const EnergyConfig& ec,
                        const LinkConfig& lc, const EventSpec& event, int n_threads) {
    check_preconditions(t, sc, ec, lc, event);

    // Row lookup + outgoing adjacency once, shared read-only by all workers.
    int max_id = 0;
    for (const topo::Region& r : t.regions) max_id = std::max(max_id, r.id);
    std::vector<std::size_t> row_of(static_cast<std::size_t>(max_id) + 1, 0);
    std::vector<std::vector<topo::Edge>> out_edges(t.regions.size());
    for (std::size_t i = 0; i < t.regions.size(); ++i) {
        row_of[t.regions[i].id] = i;
        for (const topo::Edge& e : t.edges)
            if (e.from == t.regions[i].id) out_edges[i].push_back(e);
    }

    std::vector<DeviceTrace> traces(sc.n_devices);
    parallel_for(static_cast<std::size_t>(sc.n_devices), n_threads, [&](std::size_t d) {
        traces[d] = run_device(t, sc, ec, lc, event, static_cast<int>(d), out_edges, row_of);
    });

    SimResult result;
    for (DeviceTrace& tr : traces) {
        result.stats.push_back(tr.stats);
        result.reports.insert(result.reports.end(), tr.reports.begin(), tr.reports.end());
    }
    std::stable_sort(result.reports.begin(), result.reports.end(),
                     [](const CirculationReport& a, const CirculationReport& b) {
                         if (a.report_time_s != b.report_time_s)
                             return a.report_time_s < b.report_time_s;
                         return a.device_id < b.device_id;
                     });
    return result;
}

std::vector<CirculationReport> simulate(const topo::Topology& t, const SimConfig& sc,
                                        const EnergyConfig& ec, const LinkConfig& lc,
                                        const EventSpec& event, int n_threads) {
    return simulate_full(t, sc, ec, lc, event, n_threads).reports;
}

std::string reports_to_jsonl(const std::vector<CirculationReport>& reports) {
    std::string out;
    for (const CirculationReport& r : reports) {
        json j;
        j["device_id"] = r.device_id;
        j["report_time_s"] = r.report_time_s;
        j["circulation_time_s"] = r.circulation_time_s;
        j["event_bit"] = r.event_bit ? 1 : 0;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<CirculationReport> reports_from_jsonl(const std::string& text) {
    std::vector<CirculationReport> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        CirculationReport r;
        r.device_id = j.at("device_id").get<int>();
        r.report_time_s = j.at("report_time_s").get<double>();
        r.circulation_time_s = j.at("circulation_time_s").get<double>();
        r.event_bit = j.at("event_bit").get<int>() != 0;
        out.push_back(r);
    }
    return out;
}

}  // namespace flowloc::sim
