#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowloc/geometry.hpp"
#include "flowloc/nanosim.hpp"
#include "flowloc/topology.hpp"

namespace flowloc::data {

// One classification sample: the unordered multiset of circulation times from
// devices that sensed the event, labeled by the event's region. Value order
// carries no meaning; every consumer must be permutation-invariant.
struct SampleSet {
    int label = 0;
    std::vector<double> values;
    Vec3 event_position_m{};
    std::vector<std::string> flags;  // e.g. "empty" when no device detected
    std::string placement;           // "centroid" or "random"
    std::uint64_t seed = 0;

    bool flagged(const std::string& f) const {
        for (const auto& x : flags)
            if (x == f) return true;
        return false;
    }
};

struct NormParams {
    double min_s = 0.0;
    double max_s = 1.0;
};

struct Dataset {
    std::vector<SampleSet> sets;
    std::optional<NormParams> norm;
    std::string topology_hash;
};

struct LabelSummary {
    int label = 0;
    std::size_t n_sets = 0;
    std::size_t n_values = 0;
};

struct DatasetFormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One event per region at its centroid, a full simulation each, values taken
// from event-flagged reports only.
Dataset build_training_set(const topo::Topology& t, const sim::SimConfig& sc,
                           const sim::EnergyConfig& ec, const sim::LinkConfig& lc,
                           std::uint64_t seed, int n_threads = 1);

// n_per_region sets per region with the event placed uniformly at random
// along the region's segment; the true position is recorded for point error.
Dataset build_test_set(const topo::Topology& t, const sim::SimConfig& sc,
                       const sim::EnergyConfig& ec, const sim::LinkConfig& lc,
                       int n_per_region, std::uint64_t seed, int n_threads = 1);

// Global min-max scaling to [0,1]. Throws std::domain_error when the dataset
// holds fewer than two distinct values.
std::pair<Dataset, NormParams> normalize(const Dataset& d);

// Applies previously fitted params; out-of-range values clamp to [0,1].
Dataset apply_norm(const Dataset& d, const NormParams& p);

double normalize_value(double v, const NormParams& p);    // clamped to [0,1]
double denormalize_value(double v, const NormParams& p);  // inverse map

// Stratified, deterministic train/val split. Per-label quotas are largest-
// remainder rounded so the train side totals round(ratio * n).
std::pair<Dataset, Dataset> split(const Dataset& d, double ratio, std::uint64_t seed);

// JSONL lines plus a sidecar manifest at <path>.manifest.json.
void serialize(const Dataset& d, const std::string& path);
Dataset deserialize(const std::string& path, std::vector<std::string>* warnings = nullptr,
                    const std::string& expected_topology_hash = "");

std::vector<LabelSummary> label_cardinalities(const Dataset& d);

}  // namespace flowloc::data
