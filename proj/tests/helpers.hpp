#pragma once

// Shared fixture topologies for tests: small graphs with hand-computable
// circulation times.

#include <string>
#include <vector>

#include "flowloc/topology.hpp"

namespace testutil {

using flowloc::Vec3;
using flowloc::topo::Region;
using flowloc::topo::RegionKind;
using flowloc::topo::Topology;

inline Region make_region(int id, const std::string& name, RegionKind kind, double length_cm,
                          double speed_cm_s, Vec3 entry, Vec3 exit) {
    Region r;
    r.id = id;
    r.name = name;
    r.kind = kind;
    r.length_cm = length_cm;
    r.speed_cm_s = speed_cm_s;
    r.entry_m = entry;
    r.exit_m = exit;
    return r;
}

// Deterministic single loop with circulation time exactly 12 s
// (legs 1 + 1 + 5 + 5; the 0.1 s heart dwell is excluded).
// Geometry puts only the heart near the anchor: every other segment sits
// meters away, so with the default link budget (range 0.754 m) a device is
// heard exactly once per loop, at the beacon instant of heart entry.
inline Topology single_loop_12s() {
    Topology t;
    t.heart_id = 0;
    t.anchor_position_m = {0.01, 0.0, 0.0};
    t.regions.push_back(make_region(0, "heart", RegionKind::Heart, 2.0, 20.0,  // 0.1 s dwell
                                    {0.0, 0.0, 0.0}, {0.02, 0.0, 0.0}));
    t.regions.push_back(make_region(1, "aorta", RegionKind::Aorta, 10.0, 10.0,  // 1 s
                                    {2.0, 0.0, 0.0}, {2.1, 0.0, 0.0}));
    t.regions.push_back(make_region(2, "artery", RegionKind::Artery, 20.0, 20.0,  // 1 s
                                    {2.1, 0.0, 0.0}, {2.3, 0.0, 0.0}));
    t.regions.push_back(make_region(3, "organ", RegionKind::Organ, 5.0, 1.0,  // 5 s
                                    {2.3, 0.0, 0.0}, {2.35, 0.0, 0.0}));
    t.regions.push_back(make_region(4, "vein", RegionKind::Vein, 15.0, 3.0,  // 5 s
                                    {2.35, 0.0, 0.0}, {2.5, 0.0, 0.0}));
    t.edges.push_back({0, 1, 1.0});
    t.edges.push_back({1, 2, 1.0});
    t.edges.push_back({2, 3, 1.0});
    t.edges.push_back({3, 4, 1.0});
    t.edges.push_back({4, 0, 1.0});
    t.rebuild_index();
    return t;
}

// Two fast parallel branches off the heart: expected loop time
// 0.3·0.3 + 0.7·0.7 = 0.58 s. Cheap enough to rack up 1e5 loops quickly.
inline Topology fast_branching() {
    Topology t;
    t.heart_id = 0;
    t.anchor_position_m = {0.01, 0.0, 0.0};
    t.regions.push_back(make_region(0, "heart", RegionKind::Heart, 2.0, 20.0,
                                    {0.0, 0.0, 0.0}, {0.02, 0.0, 0.0}));
    t.regions.push_back(make_region(1, "short", RegionKind::Organ, 0.3, 1.0,  // 0.3 s
                                    {2.0, 0.0, 0.0}, {2.1, 0.0, 0.0}));
    t.regions.push_back(make_region(2, "long", RegionKind::Organ, 0.7, 1.0,  // 0.7 s
                                    {3.0, 0.0, 0.0}, {3.1, 0.0, 0.0}));
    t.edges.push_back({0, 1, 0.3});
    t.edges.push_back({0, 2, 0.7});
    t.edges.push_back({1, 0, 1.0});
    t.edges.push_back({2, 0, 1.0});
    t.rebuild_index();
    return t;
}

}  // namespace testutil
