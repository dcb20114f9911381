#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowloc/geometry.hpp"

namespace flowloc::topo {

enum class RegionKind { Aorta, Artery, Vein, Organ, Limb, Head, Heart };

const char* kind_name(RegionKind k);
RegionKind kind_from_name(const std::string& name);

// Characteristic flow speed per vessel kind, cm/s. Veins use the midpoint of
// their 2-4 cm/s range; the generator draws per-vein speeds instead.
double default_speed_cm_s(RegionKind k);

struct Region {
    int id = 0;
    std::string name;
    RegionKind kind = RegionKind::Organ;
    double length_cm = 0.0;   // traversal distance along the vessel
    double speed_cm_s = 0.0;  // characteristic flow speed
    Vec3 entry_m;
    Vec3 exit_m;

    Vec3 centroid_m() const { return midpoint(entry_m, exit_m); }
    double traversal_time_s() const { return (length_cm / speed_cm_s) * 1.0; }
};

struct Edge {
    int from = 0;
    int to = 0;
    double p = 0.0;
};

struct Topology {
    std::vector<Region> regions;
    std::vector<Edge> edges;
    int heart_id = 0;
    Vec3 anchor_position_m;

    const Region* find(int id) const;
    const Region& at(int id) const;  // throws on unknown id
    std::vector<Edge> outgoing(int id) const;
    void rebuild_index();

private:
    std::unordered_map<int, std::size_t> index_;
};

struct ValidationReport {
    bool ok = true;
    std::vector<std::string> violations;
};

class TopologyParseError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class TopologyValidationError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

ValidationReport validate(const Topology& t);

// Throws TopologyParseError on malformed input and TopologyValidationError
// (message lists every violation) when the parsed graph fails validate().
Topology load_topology(const std::string& path);
void save_topology(const Topology& t, const std::string& path);

std::string to_json_string(const Topology& t);
Topology from_json_string(const std::string& text);

// Hash of the canonical serialization; datasets record it so a model is never
// silently evaluated against a different anatomy.
std::string topology_hash(const Topology& t);

// Deterministic heart-rooted stand-in anatomy: an aorta fanning into chains of
// artery -> organ/limb/head -> vein, with mirrored left/right twins sharing
// lengths, speeds, and transition weights. n_regions = 94 is the bundled
// benchmark graph.
Topology default_topology(int n_regions, std::uint64_t seed);

// Mean first-return time to the heart, starting from heart exit: solves
// E[T_i] = t_i + sum_j p_ij E[T_j] with absorption on heart entry.
double expected_loop_time(const Topology& t);

Vec3 region_centroid(const Topology& t, int region_id);

}  // namespace flowloc::topo
